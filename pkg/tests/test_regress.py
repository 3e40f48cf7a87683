import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nbl_forensics import ingest, regress
from nbl_forensics.errors import DegenerateError, SampleSizeError, SeparationError, SingularityError
from nbl_forensics.regress import Model, RegressionSpec


def frame(n=40, seed=0):
    rng = np.random.default_rng(seed)
    df = pd.DataFrame({
        "ind": rng.normal(50, 10, n),
        "ln_pop": rng.normal(15, 2, n),
        "days": rng.integers(10, 120, n).astype(float),
    })
    df["y"] = 3 - 0.2 * df["ind"] + 0.5 * df["ln_pop"] + 0.04 * df["days"] + rng.normal(0, 1, n)
    return df


def spec(**kw):
    base = dict(response="y", indicator="ind", scaling=frozenset())
    base.update(kw)
    return RegressionSpec(**base)


def normal_equations(df, cols, y):
    X = np.column_stack([np.ones(len(df))] + [df[c].to_numpy(float) for c in cols])
    yv = df[y].to_numpy(float)
    beta = np.linalg.solve(X.T @ X, X.T @ yv)
    resid = yv - X @ beta
    dof = len(yv) - X.shape[1]
    cov = resid @ resid / dof * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    r2 = 1 - resid @ resid / ((yv - yv.mean()) ** 2).sum()
    return beta, se, 1 - (1 - r2) * (len(yv) - 1) / dof


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 50), st.integers(0, 10_000))
def test_ols_matches_normal_equations(n, seed):
    df = frame(n, seed)
    res = regress.ols(spec(), df)
    beta, se, adj = normal_equations(df, ["ind", "ln_pop", "days"], "y")
    np.testing.assert_allclose(res.coefficients, beta, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(res.standard_errors, se, rtol=1e-8)
    assert res.adj_r_squared == pytest.approx(adj, abs=1e-9)
    # One-tailed p from the t distribution with n - 4 degrees of freedom.
    np.testing.assert_allclose(res.one_tailed_p, stats.t.sf(np.abs(beta / se), n - 4), rtol=1e-6)
    assert np.all((res.one_tailed_p > 0) & (res.one_tailed_p <= 0.5))


def test_residuals_orthogonal_to_design():
    df = frame(60)
    res = regress.ols(spec(), df)
    X = np.column_stack([np.ones(60), df[["ind", "ln_pop", "days"]].to_numpy()])
    scale = np.abs(X).sum(axis=0) * np.abs(res.residuals).max()
    assert np.all(np.abs(X.T @ res.residuals) / scale < 1e-8)


def test_scaling_is_cosmetic():
    df = frame(50)
    a = regress.ols(spec(), df)
    b = regress.ols(spec(scaling=frozenset({"ind", "days"})), df)
    assert b.coefficients[1] == pytest.approx(a.coefficients[1] * 100, rel=1e-12)
    np.testing.assert_allclose(b.t_stats, a.t_stats, rtol=0, atol=1e-10)
    np.testing.assert_allclose(b.one_tailed_p, a.one_tailed_p, rtol=0, atol=1e-10)
    assert abs(a.adj_r_squared - b.adj_r_squared) < 1e-10


def test_listwise_deletion_counts():
    df = frame(30)
    df.loc[[0, 3], "ind"] = np.nan
    df.loc[5, "y"] = np.nan
    res = regress.ols(spec(), df)
    assert res.n == 27 and res.dropped_rows == 3 and res.n + res.dropped_rows == len(df)


def test_response_equal_to_control_is_perfect():
    df = frame(20)
    df["y"] = df["ln_pop"]
    res = regress.ols(spec(), df)
    assert res.r_squared == pytest.approx(1.0)
    assert np.max(np.abs(res.residuals)) < 1e-10


def test_singular_design_names_column():
    df = frame(20)
    df["ind"] = 2 * df["ln_pop"]
    with pytest.raises(SingularityError) as exc:
        regress.ols(spec(), df)
    assert exc.value.columns == ("ln_pop",)


def test_too_few_rows():
    with pytest.raises(SampleSizeError):
        regress.ols(spec(), frame(4))


def test_logit_recovers_generating_model():
    rng = np.random.default_rng(42)
    n = 2000
    df = pd.DataFrame({"ind": rng.normal(0, 1, n), "ln_pop": rng.normal(0, 1, n), "days": rng.normal(0, 1, n)})
    true = np.array([-0.5, 1.0, -0.7, 0.3])
    eta = true[0] + df.to_numpy() @ true[1:]
    df["y"] = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    res = regress.logit(spec(model=Model.LOGIT), df)
    assert np.all(np.abs(res.coefficients - true) < 3 * res.standard_errors)
    X = np.column_stack([np.ones(n), df[["ind", "ln_pop", "days"]].to_numpy()])
    mu = 1 / (1 + np.exp(-(X @ res.coefficients)))
    assert np.max(np.abs(X.T @ (df["y"].to_numpy() - mu))) < 1e-6


def test_logit_degenerate_and_separated():
    df = frame(40)
    df["y"] = 0.0
    with pytest.raises(DegenerateError):
        regress.logit(spec(model="logit"), df)
    df["y"] = (df["ind"] > 50).astype(float)
    with pytest.raises(SeparationError):
        regress.logit(spec(model="logit"), df)


def test_pearson_matrix_properties():
    df = frame(40)
    cm = regress.pearson_matrix(df, ["y", "ind", "ln_pop"])
    assert np.allclose(np.diag(cm.r), 1.0)
    assert np.allclose(cm.r, cm.r.T, equal_nan=True)
    r, p = stats.pearsonr(df["y"], df["ind"])
    assert cm.value("y", "ind") == pytest.approx(r, abs=1e-12)
    assert cm.pvalue("y", "ind") == pytest.approx(p, rel=1e-8)
    df2 = df.assign(ind=df["ind"] * 7.5 + 3)
    assert regress.pearson_matrix(df2, ["y", "ind"]).value("y", "ind") == pytest.approx(r, abs=1e-12)


def test_pearson_constant_and_listwise():
    df = frame(20)
    df["c"] = 1.0
    cm = regress.pearson_matrix(df, ["y", "c"])
    assert math.isnan(cm.value("y", "c"))
    df.loc[0, "ind"] = np.nan
    assert regress.pearson_matrix(df, ["y", "ln_pop", "ind"]).n[0, 1] == 20
    assert regress.pearson_matrix(df, ["y", "ln_pop", "ind"], complete="listwise").n[0, 1] == 19


def test_descriptive_stats():
    df = pd.DataFrame({"chi_confirmed": [10.0, 30.0, 20.0], "x": [1.0, np.nan, np.nan]})
    rows = {r.column: r for r in regress.descriptive_stats(df)}
    assert rows["chi_confirmed"].mean == 20.0 and rows["chi_confirmed"].std == pytest.approx(10.0)
    assert rows["chi_confirmed"].stars["mean"] == "**" and rows["chi_confirmed"].stars["max"] == "***"
    assert rows["chi_confirmed"].share_rejected == pytest.approx(1 / 3)
    assert math.isnan(rows["x"].std)


def test_welch_hand_computed():
    a, b = [1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0]
    # s_a^2 = 5/3, s_b^2 = 4; se^2 = 5/12 + 4/3 = 21/12
    t = (2.5 - 4.0) / math.sqrt(21 / 12)
    df = (21 / 12) ** 2 / ((5 / 12) ** 2 / 3 + (4 / 3) ** 2 / 2)
    res = regress.mean_difference_test(a, b)
    assert res.t == pytest.approx(t, rel=1e-12)
    assert res.df == pytest.approx(df, rel=1e-12)
    assert res.p == pytest.approx(2 * stats.t.sf(abs(t), df), rel=1e-12)


def test_welch_identical_and_degenerate():
    res = regress.mean_difference_test([1, 2, 3], [1, 2, 3])
    assert res.t == 0 and res.p == pytest.approx(1.0)
    with pytest.raises(DegenerateError):
        regress.mean_difference_test([1, 1], [2, 2])
    with pytest.raises(SampleSizeError):
        regress.mean_difference_test([1], [2, 3])


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 80), st.integers(0, 1000))
def test_quartile_means_average_back(n, seed):
    rng = np.random.default_rng(seed)
    df = pd.DataFrame({"ind": rng.integers(0, 20, n).astype(float), "g": rng.normal(0, 1, n)})
    try:
        q = regress.quartile_contrast(df, "ind", "g")
    except DegenerateError:
        return
    weighted = sum(m * s for m, s in zip(q.means, q.sizes)) / sum(q.sizes)
    assert weighted == pytest.approx(df["g"].mean(), abs=1e-9)


def test_quartile_errors():
    df = pd.DataFrame({"ind": [1.0] * 10, "g": range(10)})
    with pytest.raises(DegenerateError):
        regress.quartile_contrast(df, "ind", "g")
    with pytest.raises(SampleSizeError):
        regress.quartile_contrast(df.head(5), "ind", "g")


def test_quartile_inclusive_lower_bound():
    df = pd.DataFrame({"ind": [1.0, 2, 3, 4, 5, 6, 7, 8], "g": range(8)})
    q = regress.quartile_contrast(df, "ind", "g", method="linear")
    # linear quartiles 2.75, 4.5, 6.25 -> sizes 2, 2, 2, 2
    assert q.sizes == (2, 2, 2, 2)
    # First cut point is 2.0; the three 2s go up by default, down with ties="lower".
    df = pd.DataFrame({"ind": [1.0, 1, 2, 2, 2, 3, 4, 5, 6, 7, 8, 9], "g": range(12)})
    assert regress.quartile_contrast(df, "ind", "g", method="linear").sizes == (2, 4, 3, 3)
    assert regress.quartile_contrast(df, "ind", "g", method="linear", ties="lower").sizes == (5, 1, 3, 3)


def test_condition_number():
    H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], dtype=float)
    assert regress.condition_number(H) == pytest.approx(1.0)
    x = np.random.default_rng(0).normal(size=(30, 2))
    assert regress.condition_number(np.column_stack([x, x[:, 0]])) == math.inf
    # Unit-free: rescaling a column leaves it unchanged.
    y = np.column_stack([x[:, 0] * 1000, x[:, 1]])
    assert regress.condition_number(y) == pytest.approx(regress.condition_number(x))


def test_regression_panel_on_appendix():
    df = ingest.appendix_frame()
    panel = regress.regression_panel(df, "ln_gdp", "deaths")
    assert [panel[k].n for k in "chi kuiper m d".split()] == [155] * 4
    assert panel["chi"].coefficients[1] == pytest.approx(-6.53, abs=0.01)


def test_logit_on_appendix_ln_gdp_negative():
    df = ingest.appendix_frame()
    res = regress.regression_panel(df, "ln_gdp", "confirmed", model="logit")["chi"]
    assert res.coefficients[1] < 0 and res.one_tailed_p[1] < 0.10
