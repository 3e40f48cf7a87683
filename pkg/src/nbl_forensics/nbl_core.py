"""Benford digit distributions and the four goodness-of-fit statistics.

The statistics all compare an observed histogram of significant digits with
the Newcomb-Benford expectation:

* ``chi_squared`` -- Pearson chi-squared on expected *counts*;
* ``kuiper``      -- Kuiper's V with Stephens' finite-sample factor;
* ``m_stat``      -- Leemis' max-deviation statistic;
* ``d_stat``      -- Cho-Gaines' Euclidean distance statistic.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError, UndefinedStatisticError

__all__ = [
    "Statistic",
    "Variable",
    "DigitDistribution",
    "DigitHistogram",
    "GofResult",
    "CriticalValueTable",
    "PUBLISHED_CRITICAL_VALUES",
    "RNG_NAME",
    "benford_pmf",
    "benford_distribution",
    "significant_digit",
    "build_histogram",
    "chi_squared",
    "kuiper",
    "m_stat",
    "d_stat",
    "gof_all",
    "statistics_from_counts",
    "monte_carlo_critical_values",
    "simulate_statistics",
]

# Name of the bit generator recorded alongside Monte Carlo output.
RNG_NAME = "numpy.random.PCG64"

# Trials per independently seeded Monte Carlo shard. Fixed so results do not
# depend on how many workers run the shards.
_SHARD_TRIALS = 20_000


class Statistic(str, enum.Enum):
    CHI_SQUARED = "chi_squared"
    KUIPER = "kuiper"
    M_STAT = "m_stat"
    D_STAT = "d_stat"


class Variable(str, enum.Enum):
    CONFIRMED = "confirmed"
    DEATHS = "deaths"
    CURED = "cured"
    TESTS = "tests"


def _digit_domain(position: int) -> range:
    if position == 1:
        return range(1, 10)
    if position == 2:
        return range(0, 10)
    raise DomainError(f"digit position must be 1 or 2, got {position!r}")


def benford_pmf(position: int, digit: int) -> float:
    """Probability of ``digit`` at significant ``position`` under Benford's law.

    Position 1 uses ``log10(1 + 1/d)``; position 2 sums
    ``log10(1 + 1/(10k + d))`` over the first-digit values ``k = 1..9``.
    """
    domain = _digit_domain(position)
    if isinstance(digit, bool) or int(digit) != digit or digit not in domain:
        raise DomainError(f"digit {digit!r} outside the domain of position {position}")
    if position == 1:
        return math.log10(1.0 + 1.0 / digit)
    lo = 10 ** (position - 2)
    hi = 10 ** (position - 1)
    return math.fsum(math.log10(1.0 + 1.0 / (10 * k + digit)) for k in range(lo, hi))


@dataclass(frozen=True)
class DigitDistribution:
    """Theoretical Benford probabilities for one digit position."""

    position: int
    probabilities: tuple[float, ...]

    @property
    def digits(self) -> tuple[int, ...]:
        return tuple(_digit_domain(self.position))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=float)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.as_array())


@lru_cache(maxsize=None)
def benford_distribution(position: int) -> DigitDistribution:
    domain = _digit_domain(position)
    return DigitDistribution(position, tuple(benford_pmf(position, d) for d in domain))


def significant_digit(value: int, position: int) -> int | None:
    """Decimal digit at significant ``position`` of a positive integer.

    Returns ``None`` when ``value`` has fewer than ``position`` digits.

    >>> significant_digit(852, 1)
    8
    >>> significant_digit(1093, 2)
    0
    >>> significant_digit(7, 2) is None
    True
    """
    _digit_domain(position)
    if isinstance(value, bool) or int(value) != value:
        raise DomainError(f"value must be an integer, got {value!r}")
    value = int(value)
    if value <= 0:
        raise DomainError(f"value must be positive, got {value}")
    text = str(value)
    if len(text) < position:
        return None
    return int(text[position - 1])


@dataclass(frozen=True)
class DigitHistogram:
    position: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != len(_digit_domain(self.position)):
            raise DomainError(
                f"position {self.position} needs {len(_digit_domain(self.position))} counts, "
                f"got {len(self.counts)}"
            )
        if any(c < 0 for c in self.counts):
            raise DomainError("counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def digits(self) -> tuple[int, ...]:
        return tuple(_digit_domain(self.position))

    def count(self, digit: int) -> int:
        return self.counts[self.digits.index(digit)]

    def proportions(self) -> np.ndarray:
        if self.total == 0:
            raise UndefinedStatisticError("empty histogram has no proportions", n=0)
        return np.asarray(self.counts, dtype=float) / self.total

    @classmethod
    def from_mapping(cls, position: int, counts: dict[int, int]) -> "DigitHistogram":
        unknown = set(counts) - set(_digit_domain(position))
        if unknown:
            raise DomainError(f"digits {sorted(unknown)} outside position {position}")
        return cls(position, tuple(int(counts.get(d, 0)) for d in _digit_domain(position)))


def build_histogram(values, position: int) -> DigitHistogram:
    """Count significant digits of ``values``, skipping values too short to have one."""
    domain = _digit_domain(position)
    offset = domain.start
    counts = [0] * len(domain)
    for v in values:
        d = significant_digit(v, position)
        if d is not None:
            counts[d - offset] += 1
    return DigitHistogram(position, tuple(counts))


def _check(h: DigitHistogram, dist: DigitDistribution | None) -> DigitDistribution:
    if dist is None:
        dist = benford_distribution(h.position)
    if h.position != dist.position:
        raise DomainError(
            f"histogram position {h.position} does not match distribution position {dist.position}"
        )
    if h.total == 0:
        raise UndefinedStatisticError("statistic undefined for an empty histogram", n=0)
    return dist


def statistics_from_counts(counts, probabilities) -> dict[str, np.ndarray]:
    """All four statistics for one or many histograms at once.

    ``counts`` has shape ``(..., k)``; the last axis runs over the digit
    domain. Rows with zero total produce NaN.
    """
    counts = np.asarray(counts, dtype=float)
    p = np.asarray(probabilities, dtype=float)
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        expected = n[..., None] * p
        chi = ((counts - expected) ** 2 / expected).sum(axis=-1)
        obs = counts / n[..., None]
        diff = obs - p
        emp_cdf = np.cumsum(obs, axis=-1)
        gap = emp_cdf - np.cumsum(p)
        # The final cdf value is 1 on both sides; clip round-off so an exact
        # match gives 0 rather than a tiny positive number.
        d_plus = np.maximum(gap.max(axis=-1), 0.0)
        d_minus = np.maximum((-gap).max(axis=-1), 0.0)
        root_n = np.sqrt(n)
        kuiper_v = (d_plus + d_minus) * (root_n + 0.155 + 0.24 / root_n)
        m = np.abs(diff).max(axis=-1) * root_n
        d = np.sqrt(n * (diff**2).sum(axis=-1))
    return {"chi_squared": chi, "kuiper": kuiper_v, "m_stat": m, "d_stat": d}


def chi_squared(h: DigitHistogram, dist: DigitDistribution | None = None) -> float:
    dist = _check(h, dist)
    expected = h.total * dist.as_array()
    observed = np.asarray(h.counts, dtype=float)
    return float(((observed - expected) ** 2 / expected).sum())


def kuiper(h: DigitHistogram, dist: DigitDistribution | None = None) -> float:
    """Kuiper's V: (D+ + D-) * (sqrt(N) + 0.155 + 0.24/sqrt(N)).

    D+ and D- are the signed maxima of the empirical minus theoretical cdf
    and its negation, both evaluated at every digit of the domain.
    """
    dist = _check(h, dist)
    gap = np.cumsum(h.proportions()) - dist.cdf()
    d_plus = max(float(gap.max()), 0.0)
    d_minus = max(float((-gap).max()), 0.0)
    root_n = math.sqrt(h.total)
    return (d_plus + d_minus) * (root_n + 0.155 + 0.24 / root_n)


def m_stat(h: DigitHistogram, dist: DigitDistribution | None = None) -> float:
    dist = _check(h, dist)
    return float(np.abs(h.proportions() - dist.as_array()).max() * math.sqrt(h.total))


def d_stat(h: DigitHistogram, dist: DigitDistribution | None = None) -> float:
    dist = _check(h, dist)
    diff = h.proportions() - dist.as_array()
    return math.sqrt(h.total * float((diff**2).sum()))


@dataclass(frozen=True)
class GofResult:
    chi_squared: float
    kuiper: float
    m_stat: float
    d_stat: float
    n: int
    position: int = 1
    variable: Variable = Variable.CONFIRMED

    def value(self, statistic: Statistic | str) -> float:
        return getattr(self, Statistic(statistic).value)

    def as_dict(self) -> dict:
        return {
            "variable": Variable(self.variable).value,
            "position": self.position,
            "n": self.n,
            "chi_squared": self.chi_squared,
            "kuiper": self.kuiper,
            "m_stat": self.m_stat,
            "d_stat": self.d_stat,
        }


def gof_all(values, position: int = 1, variable: Variable | str = Variable.CONFIRMED) -> GofResult:
    """Histogram ``values`` once and compute all four statistics."""
    h = build_histogram(values, position)
    if h.total == 0:
        raise UndefinedStatisticError(
            f"no usable values for digit position {position}", n=0
        )
    dist = benford_distribution(position)
    return GofResult(
        chi_squared=chi_squared(h, dist),
        kuiper=kuiper(h, dist),
        m_stat=m_stat(h, dist),
        d_stat=d_stat(h, dist),
        n=h.total,
        position=position,
        variable=Variable(variable),
    )


# Thresholds at which each statistic rejects Benford conformance. The 1% row
# is the set used throughout the cross-country analysis. The 5% and 10% rows
# are the chi-squared(8) quantiles, Stephens' asymptotic Kuiper points, and
# Morrow's simulated points for M and D.
_PUBLISHED = {
    Statistic.CHI_SQUARED: {0.01: 20.09, 0.05: 15.51, 0.10: 13.36},
    Statistic.KUIPER: {0.01: 2.00, 0.05: 1.747, 0.10: 1.620},
    Statistic.M_STAT: {0.01: 1.21, 0.05: 0.967, 0.10: 0.851},
    Statistic.D_STAT: {0.01: 1.57, 0.05: 1.330, 0.10: 1.212},
}


@dataclass(frozen=True)
class CriticalValue:
    statistic: Statistic
    alpha: float
    threshold: float
    source: str
    trials: int | None = None
    n: int | None = None
    seed: int | None = None
    rng: str | None = None

    def as_dict(self) -> dict:
        out = {
            "statistic": self.statistic.value,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "source": self.source,
        }
        if self.source == "monte_carlo":
            out.update(trials=self.trials, n=self.n, seed=self.seed, rng=self.rng)
        return out


@dataclass
class CriticalValueTable:
    """Rejection thresholds keyed by (statistic, alpha, source)."""

    entries: dict[tuple[Statistic, float, str], CriticalValue] = field(default_factory=dict)

    def add(self, cv: CriticalValue) -> None:
        self.entries[(cv.statistic, round(cv.alpha, 10), cv.source)] = cv

    def threshold(self, statistic, alpha: float = 0.01, source: str = "published") -> float:
        key = (Statistic(statistic), round(alpha, 10), source)
        try:
            return self.entries[key].threshold
        except KeyError:
            raise DomainError(
                f"no {source} threshold for {Statistic(statistic).value} at alpha={alpha}"
            ) from None

    def rejects(self, statistic, value: float, alpha: float = 0.01, source: str = "published") -> bool:
        return value > self.threshold(statistic, alpha, source)

    def stars(self, statistic, value: float, source: str = "published") -> str:
        """'***', '**', '*' or '' for the 1/5/10% thresholds."""
        for alpha, mark in ((0.01, "***"), (0.05, "**"), (0.10, "*")):
            if value >= self.threshold(statistic, alpha, source):
                return mark
        return ""

    def rows(self) -> list[dict]:
        return [
            cv.as_dict()
            for cv in sorted(
                self.entries.values(),
                key=lambda c: (c.source != "published", list(Statistic).index(c.statistic), c.alpha),
            )
        ]

    @classmethod
    def published(cls) -> "CriticalValueTable":
        table = cls()
        for stat, levels in _PUBLISHED.items():
            for alpha, thr in levels.items():
                table.add(CriticalValue(stat, alpha, thr, "published"))
        return table


PUBLISHED_CRITICAL_VALUES = CriticalValueTable.published()


def _shard(args) -> np.ndarray:
    seed_seq, size, n, p = args
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    counts = rng.multinomial(n, p, size=size)
    stats = statistics_from_counts(counts, p)
    return np.stack([stats[s.value] for s in Statistic], axis=1)


def simulate_statistics(
    n: int, trials: int, seed: int, position: int = 1, workers: int = 1
) -> dict[Statistic, np.ndarray]:
    """Statistics of ``trials`` Benford-distributed digit samples of size ``n``.

    A sample of ``n`` iid digits is summarised by its multinomial histogram,
    so histograms are drawn directly. Shards use child seeds spawned from
    ``seed`` and are concatenated in order; output is identical for any
    ``workers``.
    """
    if n < 1:
        raise DomainError(f"sample size must be >= 1, got {n}")
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    p = benford_distribution(position).as_array()
    p = p / p.sum()
    sizes = [_SHARD_TRIALS] * (trials // _SHARD_TRIALS)
    if trials % _SHARD_TRIALS:
        sizes.append(trials % _SHARD_TRIALS)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(s, size, n, p) for s, size in zip(seeds, sizes)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_shard, jobs))
    else:
        parts = [_shard(j) for j in jobs]
    allstats = np.concatenate(parts, axis=0)
    return {s: allstats[:, i] for i, s in enumerate(Statistic)}


def monte_carlo_critical_values(
    statistic: Statistic | str,
    n: int,
    alpha: float,
    trials: int = 100_000,
    seed: int = 0,
    position: int = 1,
    workers: int = 1,
) -> CriticalValue:
    """Empirical ``1 - alpha`` quantile of ``statistic`` under the Benford null."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if trials < 1000:
        raise DomainError(f"need at least 1000 trials, got {trials}")
    statistic = Statistic(statistic)
    sims = simulate_statistics(n, trials, seed, position=position, workers=workers)
    thr = float(np.quantile(sims[statistic], 1.0 - alpha))
    return CriticalValue(statistic, alpha, thr, "monte_carlo", trials=trials, n=n, seed=seed, rng=RNG_NAME)
