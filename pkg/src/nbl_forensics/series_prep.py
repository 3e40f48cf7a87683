"""Growth-window extraction from cumulative epidemic series.

A cumulative series is expected to follow Benford's law only while it grows
roughly exponentially. The window ends at a cutoff date chosen by one of the
policies below; the usable digit sample is every positive cumulative value
up to that date.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Union

import numpy as np

from .errors import DomainError, NoCutoffError, UndefinedStatisticError
from .nbl_core import GofResult, Variable, gof_all

log = logging.getLogger(__name__)

__all__ = [
    "EpidemicSeries",
    "MaxMovingAverage",
    "GlobalDay",
    "SinceFirst",
    "WindowAverage",
    "CutoffPolicy",
    "GrowthWindow",
    "DataQualityWarning",
    "daily_new",
    "moving_average",
    "growth_cutoff",
    "extract_growth_window",
    "windowed_gof",
]

ORIGIN = date(2020, 1, 22)


class DataQualityWarning(UserWarning):
    """Raised (as a warning) for decreasing cumulative counts and similar."""


@dataclass
class EpidemicSeries:
    """Daily cumulative counts for one entity on a contiguous date range."""

    entity_id: str
    dates: list[date]
    cumulative: dict[Variable, list[int]]
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.cumulative = {Variable(k): [int(x) for x in v] for k, v in self.cumulative.items()}
        for a, b in zip(self.dates, self.dates[1:]):
            if b - a != timedelta(days=1):
                raise DomainError(
                    f"{self.entity_id}: dates must be contiguous days, found {a} then {b}"
                )
        for var, vals in self.cumulative.items():
            if len(vals) != len(self.dates):
                raise DomainError(
                    f"{self.entity_id}: {var.value} has {len(vals)} values for {len(self.dates)} dates"
                )
            if any(v < 0 for v in vals):
                raise DomainError(f"{self.entity_id}: negative cumulative {var.value} count")
            drops = sum(1 for a, b in zip(vals, vals[1:]) if b < a)
            if drops:
                self.flags.append(f"{var.value}: {drops} decreasing step(s)")

    def __len__(self) -> int:
        return len(self.dates)

    def get(self, variable: Variable | str) -> list[int]:
        return self.cumulative.get(Variable(variable), [])

    def index_of(self, day: date) -> int:
        """Position of ``day`` relative to the first date (may be out of range)."""
        return (day - self.dates[0]).days


@dataclass(frozen=True)
class MaxMovingAverage:
    """Earliest date of the peak trailing moving average of daily new cases."""

    window: int = 7

    def __post_init__(self):
        if self.window < 1:
            raise DomainError(f"moving-average window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class GlobalDay:
    """A single calendar cutoff for every entity: ``origin + offset_days``."""

    offset_days: int = 80
    origin: date = ORIGIN


@dataclass(frozen=True)
class SinceFirst:
    """A fixed number of days after each entity's first confirmed case."""

    days: int = 45


@dataclass(frozen=True)
class WindowAverage:
    """Average the statistics over cutoffs shifted by ``offsets`` days."""

    base: "CutoffPolicy"
    offsets: tuple[int, ...] = (-1, 0, 1)

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(int(o) for o in self.offsets))
        if not self.offsets:
            raise DomainError("window offsets must be nonempty")
        if sorted(self.offsets) != sorted(-o for o in self.offsets):
            raise DomainError(f"window offsets must be symmetric around 0, got {self.offsets}")
        if isinstance(self.base, WindowAverage):
            raise DomainError("window averaging cannot be nested")


CutoffPolicy = Union[MaxMovingAverage, GlobalDay, SinceFirst, WindowAverage]


@dataclass
class GrowthWindow:
    entity_id: str
    cutoff_date: date
    usable_values: dict[Variable, list[int]]
    include_cutoff: bool = True

    @property
    def nonzero_days(self) -> dict[Variable, int]:
        return {k: len(v) for k, v in self.usable_values.items()}


def daily_new(cumulative) -> list[int]:
    """First element as-is, then first differences.

    Negative differences (reporting corrections) are kept and reported with a
    :class:`DataQualityWarning`.
    """
    vals = [int(v) for v in cumulative]
    if not vals:
        raise DomainError("daily_new needs at least one value")
    out = [vals[0]] + [b - a for a, b in zip(vals, vals[1:])]
    negative = [i for i, v in enumerate(out) if v < 0]
    if negative:
        warnings.warn(
            f"{len(negative)} negative daily difference(s), first at index {negative[0]}",
            DataQualityWarning,
            stacklevel=2,
        )
    return out


def moving_average(series, window: int) -> list[float]:
    """Trailing mean over the last ``min(window, i + 1)`` points."""
    if window < 1:
        raise DomainError(f"window must be >= 1, got {window}")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return []
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    start = np.maximum(idx - window, 0)
    return list((csum[idx] - csum[start]) / (idx - start))


def _first_case(series: EpidemicSeries) -> int:
    conf = series.get(Variable.CONFIRMED)
    for i, v in enumerate(conf):
        if v >= 1:
            return i
    raise NoCutoffError(f"{series.entity_id}: confirmed series is all zero")


def growth_cutoff(series: EpidemicSeries, policy: CutoffPolicy | None = None) -> date:
    """Cutoff date for ``series``, always derived from confirmed cases."""
    policy = MaxMovingAverage() if policy is None else policy
    if len(series) == 0:
        raise NoCutoffError(f"{series.entity_id}: empty series")
    if isinstance(policy, WindowAverage):
        return growth_cutoff(series, policy.base)
    first = _first_case(series)
    if isinstance(policy, GlobalDay):
        return policy.origin + timedelta(days=policy.offset_days)
    if isinstance(policy, SinceFirst):
        return series.dates[first] + timedelta(days=policy.days)
    if isinstance(policy, MaxMovingAverage):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataQualityWarning)
            new = daily_new(series.get(Variable.CONFIRMED))
        # Averaging starts at the first case, so leading zero days never
        # shift the cutoff. argmax returns the earliest of tied maxima.
        ma = np.asarray(moving_average(new[first:], policy.window))
        return series.dates[first + int(np.argmax(ma))]
    raise DomainError(f"unknown cutoff policy {policy!r}")


def _window_at(series: EpidemicSeries, cutoff: date, include_cutoff: bool) -> GrowthWindow:
    stop = series.index_of(cutoff) + (1 if include_cutoff else 0)
    stop = max(0, min(stop, len(series)))
    usable = {
        var: [v for v in vals[:stop] if v >= 1] for var, vals in series.cumulative.items()
    }
    return GrowthWindow(series.entity_id, cutoff, usable, include_cutoff)


def extract_growth_window(
    series: EpidemicSeries,
    policy: CutoffPolicy | None = None,
    include_cutoff: bool = True,
) -> GrowthWindow:
    """Positive cumulative values up to the cutoff, per variable.

    With ``include_cutoff`` (the default) the cutoff day itself belongs to the
    window; set it False for a strictly-before window.
    """
    cutoff = growth_cutoff(series, policy)
    return _window_at(series, cutoff, include_cutoff)


def windowed_gof(
    series: EpidemicSeries,
    base_policy: CutoffPolicy,
    offsets,
    position: int = 1,
    variable: Variable | str = Variable.CONFIRMED,
    include_cutoff: bool = True,
) -> GofResult:
    """Mean of the four statistics over cutoffs shifted by each offset.

    Offsets whose shifted cutoff falls before the first confirmed case (or
    leaves no usable values) are skipped. ``n`` is the base-cutoff sample.
    """
    offsets = [int(o) for o in offsets]
    if not offsets:
        raise DomainError("offsets must be nonempty")
    variable = Variable(variable)
    base = growth_cutoff(series, base_policy)
    first_day = series.dates[_first_case(series)]
    results = []
    for off in offsets:
        cut = base + timedelta(days=off)
        if cut < first_day:
            log.debug("%s: offset %+d precedes first case, skipped", series.entity_id, off)
            continue
        values = _window_at(series, cut, include_cutoff).usable_values.get(variable, [])
        try:
            results.append(gof_all(values, position, variable))
        except UndefinedStatisticError:
            log.debug("%s: offset %+d has no usable values, skipped", series.entity_id, off)
    if not results:
        raise UndefinedStatisticError(
            f"{series.entity_id}: every offset in {offsets} was skipped", n=0
        )
    base_values = _window_at(series, base, include_cutoff).usable_values.get(variable, [])
    base_n = sum(1 for v in base_values if v >= 10 ** (position - 1))
    return GofResult(
        chi_squared=float(np.mean([r.chi_squared for r in results])),
        kuiper=float(np.mean([r.kuiper for r in results])),
        m_stat=float(np.mean([r.m_stat for r in results])),
        d_stat=float(np.mean([r.d_stat for r in results])),
        n=base_n,
        position=position,
        variable=variable,
    )
