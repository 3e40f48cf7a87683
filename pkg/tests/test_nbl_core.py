import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbl_forensics.errors import DomainError, UndefinedStatisticError
from nbl_forensics.nbl_core import (
    PUBLISHED_CRITICAL_VALUES,
    CriticalValue,
    CriticalValueTable,
    DigitHistogram,
    Statistic,
    benford_distribution,
    benford_pmf,
    build_histogram,
    chi_squared,
    d_stat,
    gof_all,
    kuiper,
    m_stat,
    monte_carlo_critical_values,
    significant_digit,
    simulate_statistics,
    statistics_from_counts,
)


def oracle_second_digit(d):
    # Brute force: share of the mantissa interval [10, 100) whose second digit is d,
    # weighted by the Benford density on log10.
    return sum(math.log10((10 * k + d + 1) / (10 * k + d)) for k in range(1, 10))


def test_first_digit_pmf_closed_form():
    for d in range(1, 10):
        assert benford_pmf(1, d) == pytest.approx(math.log10((d + 1) / d), abs=1e-15)


def test_second_digit_pmf_against_ratio_form():
    for d in range(10):
        assert benford_pmf(2, d) == pytest.approx(oracle_second_digit(d), abs=1e-14)


@pytest.mark.parametrize("position", [1, 2])
def test_pmf_sums_to_one(position):
    assert sum(benford_distribution(position).probabilities) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("position,digit", [(1, 0), (1, 10), (2, -1), (3, 1), (0, 1), (1, 1.5)])
def test_pmf_domain(position, digit):
    with pytest.raises(DomainError):
        benford_pmf(position, digit)


def test_significant_digit_examples():
    assert significant_digit(852, 1) == 8
    assert significant_digit(1093, 2) == 0
    assert significant_digit(7, 2) is None
    assert significant_digit(10, 2) == 0


@pytest.mark.parametrize("bad", [0, -5])
def test_significant_digit_rejects_nonpositive(bad):
    with pytest.raises(DomainError):
        significant_digit(bad, 1)


@given(st.integers(min_value=1, max_value=10**15), st.sampled_from([1, 2]))
def test_significant_digit_matches_arithmetic(value, position):
    # Arithmetic oracle: shift the value so it has exactly `position` digits.
    k = int(math.floor(math.log10(value))) + 1
    while 10 ** (k - 1) > value:
        k -= 1
    while 10**k <= value:
        k += 1
    if k < position:
        assert significant_digit(value, position) is None
    else:
        assert significant_digit(value, position) == (value // 10 ** (k - position)) % 10


def test_histogram_skips_short_values():
    h = build_histogram([1, 5, 10, 23, 99], 2)
    assert h.total == 3
    assert h.count(0) == 1 and h.count(3) == 1 and h.count(9) == 1


def test_histogram_from_mapping_and_validation():
    h = DigitHistogram.from_mapping(1, {1: 3, 9: 1})
    assert h.counts == (3, 0, 0, 0, 0, 0, 0, 0, 1)
    with pytest.raises(DomainError):
        DigitHistogram.from_mapping(1, {0: 1})
    with pytest.raises(DomainError):
        DigitHistogram(1, (1, 2))


def test_chi_squared_uses_expected_counts():
    counts = (30, 18, 12, 10, 8, 7, 6, 5, 4)
    h = DigitHistogram(1, counts)
    n = sum(counts)
    expected = sum((c - n * benford_pmf(1, d)) ** 2 / (n * benford_pmf(1, d)) for d, c in zip(range(1, 10), counts))
    assert chi_squared(h) == pytest.approx(expected, rel=1e-12)


def test_kuiper_single_digit_hand_value():
    # All mass on digit 1: D+ = 1 - P(1) at d=1 .. 8 max; D- = 0.
    h = DigitHistogram(1, (4, 0, 0, 0, 0, 0, 0, 0, 0))
    dplus = 1 - math.log10(2)
    assert kuiper(h) == pytest.approx(dplus * (2 + 0.155 + 0.12), rel=1e-12)


def test_perfect_fit_gives_zero():
    # Counts exactly proportional to the pmf are impossible with integers, so
    # feed the distribution itself through the vectorised path.
    p = benford_distribution(1).as_array()
    out = statistics_from_counts(p * 1e6, p)
    for v in out.values():
        assert v == pytest.approx(0.0, abs=1e-9)


def test_empty_and_mismatched_histograms():
    with pytest.raises(UndefinedStatisticError) as exc:
        gof_all([], 1)
    assert exc.value.n == 0
    with pytest.raises(UndefinedStatisticError):
        gof_all([3, 7], 2)
    with pytest.raises(DomainError):
        chi_squared(DigitHistogram(1, (1,) * 9), benford_distribution(2))


def test_vectorised_matches_scalar():
    rng = np.random.default_rng(3)
    counts = rng.integers(0, 30, size=(50, 9))
    counts[:, 0] += 1
    vec = statistics_from_counts(counts, benford_distribution(1).as_array())
    for i, row in enumerate(counts):
        h = DigitHistogram(1, tuple(int(c) for c in row))
        assert vec["chi_squared"][i] == pytest.approx(chi_squared(h), rel=1e-12)
        assert vec["kuiper"][i] == pytest.approx(kuiper(h), rel=1e-12)
        assert vec["m_stat"][i] == pytest.approx(m_stat(h), rel=1e-12)
        assert vec["d_stat"][i] == pytest.approx(d_stat(h), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=10**9), min_size=1, max_size=300))
def test_statistics_nonnegative_and_consistent(values):
    r = gof_all(values, 1)
    assert r.n == len(values)
    assert min(r.chi_squared, r.kuiper, r.m_stat, r.d_stat) >= 0
    # M is a max over the terms whose squares D sums.
    assert r.m_stat <= r.d_stat + 1e-12


def test_published_table_and_stars():
    t = PUBLISHED_CRITICAL_VALUES
    assert t.threshold(Statistic.CHI_SQUARED) == 20.09
    assert t.threshold("kuiper") == 2.00
    assert t.threshold("m_stat") == 1.21
    assert t.threshold("d_stat") == 1.57
    assert t.rejects("chi_squared", 20.1) and not t.rejects("chi_squared", 20.0)
    # Printed two-decimal Kuiper means carrying ** and * respectively.
    assert t.stars("kuiper", 1.75) == "**"
    assert t.stars("kuiper", 1.74) == "*"
    assert t.stars("chi_squared", 19.55) == "**"
    assert t.stars("m_stat", 0.5) == ""
    with pytest.raises(DomainError):
        t.threshold("kuiper", 0.02)


def test_table_holds_simulated_entries_separately():
    t = CriticalValueTable.published()
    t.add(CriticalValue(Statistic.KUIPER, 0.01, 1.6, "monte_carlo", trials=1000, n=10, seed=1, rng="x"))
    assert t.threshold("kuiper", 0.01, "monte_carlo") == 1.6
    assert t.threshold("kuiper", 0.01) == 2.00
    rows = t.rows()
    assert rows[-1]["source"] == "monte_carlo" and rows[-1]["seed"] == 1


def test_simulation_is_deterministic_and_worker_independent():
    a = simulate_statistics(50, 45_000, seed=11, workers=1)
    b = simulate_statistics(50, 45_000, seed=11, workers=4)
    c = simulate_statistics(50, 45_000, seed=12, workers=1)
    for s in Statistic:
        assert np.array_equal(a[s], b[s])
    assert not np.array_equal(a[Statistic.CHI_SQUARED], c[Statistic.CHI_SQUARED])


def test_chi_squared_null_quantile_near_chi2_8():
    from scipy import stats

    cv = monte_carlo_critical_values("chi_squared", 2000, 0.05, trials=40_000, seed=5)
    assert cv.threshold == pytest.approx(stats.chi2.ppf(0.95, 8), abs=0.35)
    assert cv.source == "monte_carlo" and cv.n == 2000 and cv.trials == 40_000


@pytest.mark.parametrize("alpha,trials", [(0.0, 10_000), (1.0, 10_000), (0.05, 10)])
def test_monte_carlo_argument_checks(alpha, trials):
    with pytest.raises(DomainError):
        monte_carlo_critical_values("kuiper", 100, alpha, trials=trials)


def test_exact_rational_chi_squared_small_case():
    counts = (2, 1, 0, 0, 0, 0, 0, 0, 1)
    h = DigitHistogram(1, counts)
    # Exact arithmetic on the terms with the float pmf as input.
    n = Fraction(4)
    total = Fraction(0)
    for d, c in zip(range(1, 10), counts):
        e = n * Fraction(benford_pmf(1, d))
        total += (c - e) ** 2 / e
    assert chi_squared(h) == pytest.approx(float(total), rel=1e-13)
