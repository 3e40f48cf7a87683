"""Cross-sectional statistics relating digit nonconformance to indicators.

All fitters take a pandas DataFrame and named columns, apply listwise
deletion over the columns they use, and never impute.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DegenerateError, SampleSizeError, SeparationError, SingularityError
from .nbl_core import PUBLISHED_CRITICAL_VALUES, Statistic

__all__ = [
    "Model",
    "RegressionSpec",
    "RegressionResult",
    "CorrelationMatrix",
    "DescriptiveRow",
    "QuartileSummary",
    "TTestResult",
    "ols",
    "logit",
    "fit",
    "pearson_matrix",
    "descriptive_stats",
    "quartile_contrast",
    "mean_difference_test",
    "condition_number",
    "significance_stars",
    "regression_panel",
    "rejection_dummies",
    "DEFAULT_CONTROLS",
    "DEFAULT_SCALED",
    "GOF_COLUMNS",
]

DEFAULT_CONTROLS = ("ln_pop", "days")
DEFAULT_SCALED = frozenset({"eiu", "uhc", "days"})

# gof column name -> statistic, for flagging against critical values
GOF_COLUMNS = {
    f"{prefix}_{var}": stat
    for var in ("confirmed", "deaths")
    for prefix, stat in (
        ("chi", Statistic.CHI_SQUARED),
        ("kuiper", Statistic.KUIPER),
        ("m", Statistic.M_STAT),
        ("d", Statistic.D_STAT),
    )
}


def significance_stars(p: float) -> str:
    if p is None or not math.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


class Model(str, enum.Enum):
    OLS = "ols"
    LOGIT = "logit"


@dataclass(frozen=True)
class RegressionSpec:
    """One response regressed on one indicator plus fixed controls.

    ``days`` in ``controls`` is a placeholder resolved to ``days_column``
    (the nonzero-day count matching the response variable).
    """

    response: str
    indicator: str
    controls: tuple[str, ...] = DEFAULT_CONTROLS
    scaling: frozenset = DEFAULT_SCALED
    model: Model = Model.OLS
    days_column: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "scaling", frozenset(self.scaling))
        object.__setattr__(self, "model", Model(self.model))
        if self.indicator in self.controls:
            raise ValueError(f"indicator {self.indicator!r} duplicates a control")

    def resolved_controls(self) -> list[str]:
        if self.days_column is None:
            return list(self.controls)
        return [self.days_column if c == "days" else c for c in self.controls]

    @property
    def regressors(self) -> list[str]:
        return [self.indicator] + self.resolved_controls()

    def scale_of(self, column: str) -> float:
        if column in self.scaling:
            return 100.0
        if column == self.days_column and "days" in self.scaling:
            return 100.0
        return 1.0

    def as_dict(self) -> dict:
        return {
            "response": self.response,
            "indicator": self.indicator,
            "controls": self.resolved_controls(),
            "scaled": sorted(c for c in self.regressors if self.scale_of(c) != 1.0),
            "model": self.model.value,
        }


@dataclass
class RegressionResult:
    spec: RegressionSpec
    names: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_stats: np.ndarray
    one_tailed_p: np.ndarray
    adj_r_squared: float
    n: int
    dropped_rows: int
    r_squared: float = math.nan
    dropped: list[str] = field(default_factory=list)
    residuals: np.ndarray | None = None
    iterations: int | None = None

    @property
    def beta(self) -> dict[str, float]:
        return dict(zip(self.names, self.coefficients.tolist()))

    def stars(self, i: int) -> str:
        return significance_stars(float(self.one_tailed_p[i]))

    def as_dict(self) -> dict:
        out = {
            "spec": self.spec.as_dict(),
            "coefficients": [
                {
                    "name": name,
                    "estimate": float(b),
                    "se": float(se),
                    "t": float(t),
                    "p_one_tailed": float(p),
                    "stars": significance_stars(float(p)),
                }
                for name, b, se, t, p in zip(
                    self.names, self.coefficients, self.standard_errors, self.t_stats, self.one_tailed_p
                )
            ],
            "n": self.n,
            "dropped_rows": self.dropped_rows,
            "dropped": list(self.dropped),
        }
        if self.spec.model is Model.OLS:
            out["r_squared"] = self.r_squared
            out["adj_r_squared"] = self.adj_r_squared
        else:
            out["pseudo_r_squared"] = self.r_squared
            out["iterations"] = self.iterations
        return out


def _design(spec: RegressionSpec, data: pd.DataFrame):
    cols = [spec.response] + spec.regressors
    missing = [c for c in cols if c not in data.columns]
    if missing:
        raise KeyError(f"columns not in data: {missing}")
    sub = data[cols].apply(pd.to_numeric, errors="coerce")
    keep = np.isfinite(sub.to_numpy(dtype=float)).all(axis=1)
    dropped = [str(i) for i in sub.index[~keep]]
    sub = sub[keep]
    y = sub[spec.response].to_numpy(dtype=float)
    X = np.column_stack(
        [np.ones(len(sub))] + [sub[c].to_numpy(dtype=float) / spec.scale_of(c) for c in spec.regressors]
    )
    return y, X, dropped


def _rank_check(X: np.ndarray, names: list[str]) -> None:
    tol = max(X.shape) * np.finfo(float).eps
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise SingularityError(
            "design has an all-zero column", [n for n, z in zip(names, norms == 0) if z]
        )
    Xs = X / norms
    s = np.linalg.svd(Xs, compute_uv=False)
    if s[-1] > tol * s[0]:
        return
    # Columns that lie in the span of those before them are reported.
    culprits, kept = [], []
    for j in range(X.shape[1]):
        trial = Xs[:, kept + [j]]
        sv = np.linalg.svd(trial, compute_uv=False)
        if sv[-1] <= tol * sv[0]:
            culprits.append(names[j])
        else:
            kept.append(j)
    raise SingularityError(f"design matrix is rank deficient: {', '.join(culprits)} collinear", culprits)


def ols(spec: RegressionSpec, data: pd.DataFrame) -> RegressionResult:
    """Least squares via QR with classical standard errors.

    p-values are one-tailed, ``P(T_{n-k} >= |t|)``.
    """
    y, X, dropped = _design(spec, data)
    names = ["const"] + spec.regressors
    n, k = X.shape
    if n <= k:
        raise SampleSizeError(f"{n} complete rows for {k} parameters")
    _rank_check(X, names)
    Q, R = np.linalg.qr(X)
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    dof = n - k
    sse = float(resid @ resid)
    sigma2 = sse / dof
    Rinv = np.linalg.solve(R, np.eye(k))
    se = np.sqrt(sigma2 * np.sum(Rinv**2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    p = stats.t.sf(np.abs(t), dof)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    adj = 1.0 - (1.0 - r2) * (n - 1) / dof
    return RegressionResult(
        spec=spec,
        names=names,
        coefficients=beta,
        standard_errors=se,
        t_stats=t,
        one_tailed_p=p,
        adj_r_squared=adj,
        n=n,
        dropped_rows=len(dropped),
        r_squared=r2,
        dropped=dropped,
        residuals=resid,
    )


def logit(spec: RegressionSpec, data: pd.DataFrame, tol: float = 1e-8, max_iter: int = 100) -> RegressionResult:
    """Logistic maximum likelihood by iteratively reweighted least squares.

    Reports Wald one-tailed p-values and McFadden's pseudo R-squared in
    ``r_squared`` (``adj_r_squared`` holds the same value).
    """
    y, X, dropped = _design(spec, data)
    names = ["const"] + spec.regressors
    n, k = X.shape
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError(f"logit response {spec.response!r} must be 0/1")
    if y.min() == y.max():
        raise DegenerateError(f"response {spec.response!r} has no variation ({int(y[0])} throughout)")
    if n <= k:
        raise SampleSizeError(f"{n} complete rows for {k} parameters")
    _rank_check(X, names)
    beta = np.zeros(k)
    converged = False
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu)
        if np.min(w) < 1e-12 and np.max(np.abs(eta)) > 30:
            raise SeparationError(f"fitted probabilities reached 0 or 1 at iteration {it}; data are separable")
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        step = np.max(np.abs(new - beta))
        beta = new
        if step < tol:
            converged = True
            break
    if not converged:
        raise SeparationError(f"no convergence after {max_iter} iterations; likely quasi-separation")
    mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
    w = mu * (1.0 - mu)
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    se = np.sqrt(np.diag(cov))
    z = beta / se
    p = stats.norm.sf(np.abs(z))
    eps = 1e-300
    ll = float(np.sum(y * np.log(mu + eps) + (1 - y) * np.log(1 - mu + eps)))
    ybar = y.mean()
    ll0 = n * (ybar * math.log(ybar) + (1 - ybar) * math.log(1 - ybar))
    pseudo = 1.0 - ll / ll0
    return RegressionResult(
        spec=spec,
        names=names,
        coefficients=beta,
        standard_errors=se,
        t_stats=z,
        one_tailed_p=p,
        adj_r_squared=pseudo,
        n=n,
        dropped_rows=len(dropped),
        r_squared=pseudo,
        dropped=dropped,
        residuals=y - mu,
        iterations=it,
    )


def fit(spec: RegressionSpec, data: pd.DataFrame) -> RegressionResult:
    return ols(spec, data) if spec.model is Model.OLS else logit(spec, data)


def rejection_dummies(data: pd.DataFrame, alpha: float = 0.01, table=PUBLISHED_CRITICAL_VALUES) -> pd.DataFrame:
    """Add ``reject_<gof column>`` 0/1 columns (missing stays missing)."""
    out = data.copy()
    for col, stat in GOF_COLUMNS.items():
        if col in out:
            thr = table.threshold(stat, alpha)
            out[f"reject_{col}"] = np.where(out[col].isna(), np.nan, (out[col] > thr).astype(float))
    return out


def regression_panel(
    data: pd.DataFrame,
    indicator: str,
    variable: str = "confirmed",
    model: Model | str = Model.OLS,
    scaling=DEFAULT_SCALED,
) -> dict[str, RegressionResult | Exception]:
    """Fit the four gof responses for one variable against ``indicator``.

    Errors are returned in place of results so one failing column does not
    sink the panel.
    """
    model = Model(model)
    if model is Model.LOGIT:
        data = rejection_dummies(data)
    out = {}
    for prefix in ("chi", "kuiper", "m", "d"):
        response = f"{prefix}_{variable}"
        if model is Model.LOGIT:
            response = f"reject_{response}"
        spec = RegressionSpec(
            response, indicator, scaling=scaling, model=model, days_column=f"days_{variable}"
        )
        try:
            out[prefix] = fit(spec, data)
        except (SingularityError, SampleSizeError, SeparationError, DegenerateError, ValueError) as exc:
            out[prefix] = exc
    return out


# -- correlation ----------------------------------------------------------------


@dataclass
class CorrelationMatrix:
    columns: list[str]
    r: np.ndarray
    p: np.ndarray
    n: np.ndarray
    complete: str = "pairwise"

    def value(self, a: str, b: str) -> float:
        return float(self.r[self.columns.index(a), self.columns.index(b)])

    def pvalue(self, a: str, b: str) -> float:
        return float(self.p[self.columns.index(a), self.columns.index(b)])

    def stars(self, a: str, b: str) -> str:
        return significance_stars(self.pvalue(a, b))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.r, index=self.columns, columns=self.columns)

    def as_records(self) -> list[dict]:
        out = []
        for i, a in enumerate(self.columns):
            for j, b in enumerate(self.columns):
                if j >= i:
                    continue
                r = self.r[i, j]
                out.append(
                    {
                        "row": a,
                        "column": b,
                        "r": None if np.isnan(r) else float(r),
                        "p": None if np.isnan(self.p[i, j]) else float(self.p[i, j]),
                        "n": int(self.n[i, j]),
                        "stars": self.stars(a, b),
                    }
                )
        return out


def _pearson(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    n = len(x)
    if n < 3:
        return math.nan, math.nan
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        return math.nan, math.nan
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return r, float(2 * stats.t.sf(abs(t), n - 2))


def pearson_matrix(data: pd.DataFrame, columns=None, complete: str = "pairwise") -> CorrelationMatrix:
    """Pearson correlations with two-tailed t-test p-values.

    ``complete="pairwise"`` uses every row complete for each pair;
    ``"listwise"`` first drops any row with a missing value in ``columns``.
    Cells involving a constant column are NaN.
    """
    if complete not in ("pairwise", "listwise"):
        raise ValueError(f"complete must be 'pairwise' or 'listwise', got {complete!r}")
    columns = list(data.columns if columns is None else columns)
    arr = data[columns].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    if complete == "listwise":
        arr = arr[np.isfinite(arr).all(axis=1)]
    k = len(columns)
    r = np.full((k, k), np.nan)
    p = np.full((k, k), np.nan)
    n = np.zeros((k, k), dtype=int)
    for i in range(k):
        for j in range(i + 1):
            mask = np.isfinite(arr[:, i]) & np.isfinite(arr[:, j])
            n[i, j] = n[j, i] = int(mask.sum())
            if i == j:
                if np.nanstd(arr[:, i]) > 0:
                    r[i, i], p[i, i] = 1.0, 0.0
                continue
            r[i, j], p[i, j] = _pearson(arr[mask, i], arr[mask, j])
            r[j, i], p[j, i] = r[i, j], p[i, j]
    return CorrelationMatrix(columns, r, p, n, complete)


# -- descriptives -----------------------------------------------------------------


@dataclass
class DescriptiveRow:
    column: str
    n: int
    mean: float
    min: float
    median: float
    max: float
    std: float
    stars: dict = field(default_factory=dict)
    share_rejected: float | None = None

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if k == "stars":
                out.update({f"stars_{s}": m for s, m in v.items()})
            else:
                out[k] = None if isinstance(v, float) and math.isnan(v) else v
        return out


def descriptive_stats(data: pd.DataFrame, columns=None, gof_columns=None) -> list[DescriptiveRow]:
    """n, mean, min, median, max and sample std per column.

    Columns that are gof statistics get ``stars`` marking where the mean,
    min, median and max fall against the published 1/5/10% thresholds, and
    the share of entities rejected at 1%. A single observation gives
    ``std`` NaN.
    """
    columns = list(data.columns if columns is None else columns)
    gof_columns = GOF_COLUMNS if gof_columns is None else gof_columns
    rows = []
    for col in columns:
        x = pd.to_numeric(data[col], errors="coerce").dropna().to_numpy(dtype=float)
        if x.size == 0:
            rows.append(DescriptiveRow(col, 0, *([math.nan] * 5)))
            continue
        row = DescriptiveRow(
            column=col,
            n=int(x.size),
            mean=float(x.mean()),
            min=float(x.min()),
            median=float(np.median(x)),
            max=float(x.max()),
            std=float(x.std(ddof=1)) if x.size > 1 else math.nan,
        )
        stat = gof_columns.get(col)
        if stat is not None:
            row.stars = {
                name: PUBLISHED_CRITICAL_VALUES.stars(stat, getattr(row, name))
                for name in ("mean", "min", "median", "max")
            }
            thr = PUBLISHED_CRITICAL_VALUES.threshold(stat, 0.01)
            row.share_rejected = float((x > thr).mean())
        rows.append(row)
    return rows


# -- t-tests and quartiles ----------------------------------------------------------


@dataclass
class TTestResult:
    t: float
    p: float
    df: float
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int

    @property
    def stars(self) -> str:
        return significance_stars(self.p)

    def as_dict(self) -> dict:
        return {**self.__dict__, "stars": self.stars}


def mean_difference_test(a, b) -> TTestResult:
    """Welch two-sample t-test (two-tailed). NaNs are dropped first."""
    a = pd.to_numeric(pd.Series(a), errors="coerce").dropna().to_numpy(dtype=float)
    b = pd.to_numeric(pd.Series(b), errors="coerce").dropna().to_numpy(dtype=float)
    if a.size < 2 or b.size < 2:
        raise SampleSizeError(f"each sample needs n >= 2, got {a.size} and {b.size}")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    if va + vb == 0:
        if diff == 0:
            return TTestResult(0.0, 1.0, math.nan, float(a.mean()), float(b.mean()), a.size, b.size)
        raise DegenerateError("both samples have zero variance; t is undefined")
    t = diff / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = float(2 * stats.t.sf(abs(t), df))
    return TTestResult(float(t), p, float(df), float(a.mean()), float(b.mean()), a.size, b.size)


@dataclass
class QuartileSummary:
    indicator: str
    gof: str
    boundaries: tuple[float, float, float]
    means: tuple[float, float, float, float]
    sizes: tuple[int, int, int, int]
    test: TTestResult | None
    method: str
    ties: str

    @property
    def smallest(self) -> float:
        return self.means[0]

    @property
    def largest(self) -> float:
        return self.means[3]

    def as_dict(self) -> dict:
        return {
            "indicator": self.indicator,
            "gof": self.gof,
            "boundaries": list(self.boundaries),
            "means": list(self.means),
            "sizes": list(self.sizes),
            "t": None if self.test is None else self.test.t,
            "p": None if self.test is None else self.test.p,
            "stars": "" if self.test is None else self.test.stars,
            "method": self.method,
            "ties": self.ties,
        }


def quartile_contrast(
    data: pd.DataFrame,
    indicator: str,
    gof: str,
    method: str = "weibull",
    ties: str = "upper",
    boundaries_from: str = "indicator",
) -> QuartileSummary:
    """Mean of ``gof`` within each quartile of ``indicator`` and a Welch test
    of smallest against largest quartile.

    With ``boundaries_from="indicator"`` the quartile cut points come from
    every non-missing indicator value, so all gof columns share one
    partition; ``"complete"`` uses only rows where ``gof`` is present too.
    ``test`` is None when an extreme quartile is too small or flat to test.
    """
    if ties not in ("upper", "lower"):
        raise ValueError(f"ties must be 'upper' or 'lower', got {ties!r}")
    if boundaries_from not in ("indicator", "complete"):
        raise ValueError(f"boundaries_from must be 'indicator' or 'complete', got {boundaries_from!r}")
    sub = data[[indicator, gof]].apply(pd.to_numeric, errors="coerce").dropna()
    if len(sub) < 8:
        raise SampleSizeError(f"quartile contrast needs >= 8 complete rows, got {len(sub)}")
    x = sub[indicator].to_numpy(dtype=float)
    y = sub[gof].to_numpy(dtype=float)
    if x.min() == x.max():
        raise DegenerateError(f"{indicator} is constant; quartiles are undefined")
    if boundaries_from == "indicator":
        ref = pd.to_numeric(data[indicator], errors="coerce").dropna().to_numpy(dtype=float)
    else:
        ref = x
    bounds = np.quantile(ref, [0.25, 0.5, 0.75], method=method)
    labels = np.searchsorted(bounds, x, side="right" if ties == "upper" else "left")
    sizes = tuple(int((labels == q).sum()) for q in range(4))
    if min(sizes) == 0:
        raise DegenerateError(f"{indicator} ties leave an empty quartile (sizes {sizes})")
    means = tuple(float(y[labels == q].mean()) for q in range(4))
    try:
        test = mean_difference_test(y[labels == 0], y[labels == 3])
    except (SampleSizeError, DegenerateError):
        test = None
    return QuartileSummary(indicator, gof, tuple(map(float, bounds)), means, sizes, test, method, ties)


# -- collinearity ---------------------------------------------------------------


def condition_number(design) -> float:
    """Largest over smallest singular value of the column-scaled design.

    An intercept column is prepended unless the design already has a
    constant column. Every column is then scaled to unit length (no
    centring), so the result does not depend on the units of any regressor.
    Rows with missing values are dropped. Returns ``inf`` when the smallest
    singular value is zero.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.size == 0:
        raise ValueError("empty design matrix")
    X = X[np.isfinite(X).all(axis=1)]
    if X.shape[0] == 0:
        raise ValueError("no complete rows in design matrix")
    has_const = any(np.all(X[:, j] == X[0, j]) and X[0, j] != 0 for j in range(X.shape[1]))
    if not has_const:
        X = np.column_stack([np.ones(len(X)), X])
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        return math.inf
    s = np.linalg.svd(X / norms, compute_uv=False)
    if s[-1] <= max(X.shape) * np.finfo(float).eps * s[0]:
        return math.inf
    return float(s[0] / s[-1])
