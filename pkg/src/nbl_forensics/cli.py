"""Command line entry point: ``nbl-forensics <subcommand> [options]``.

Exit codes: 0 success, 1 invalid usage or configuration, 2 bad input data,
3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, ingest, regress
from .errors import BenfordError, NoCutoffError, UndefinedStatisticError, ValidationError
from .nbl_core import (
    PUBLISHED_CRITICAL_VALUES,
    RNG_NAME,
    CriticalValueTable,
    Statistic,
    Variable,
    gof_all,
    monte_carlo_critical_values,
)
from .series_prep import (
    GlobalDay,
    MaxMovingAverage,
    SinceFirst,
    WindowAverage,
    extract_growth_window,
    growth_cutoff,
    windowed_gof,
)

log = logging.getLogger("nbl_forensics")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

JHU_NAMES = {
    Variable.CONFIRMED: "time_series_covid19_confirmed_global.csv",
    Variable.DEATHS: "time_series_covid19_deaths_global.csv",
    Variable.CURED: "time_series_covid19_recovered_global.csv",
}

COUNTRY_INDICATORS = ["eiu", "ln_gdp", "he_gdp", "uhc"]
STATE_INDICATORS = ["won", "senate", "governor", "ln_gdp", "he_gdp"]
COMPONENT_INDICATORS = ["elect", "gvmt", "part", "cult", "libert", "fh_dem", "fh_av"]
# Component scores and the Freedom House average share the 0-100 scale.
SCALED = regress.DEFAULT_SCALED | {"elect", "gvmt", "part", "cult", "libert", "fh_av"}

GOF_ORDER = ["chi", "kuiper", "m", "d"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    command: str
    series: Path | None = None
    tests: Path | None = None
    indicators: Path | None = None
    policy: str = "max-ma"
    ma_window: int = 7
    offset: int | None = None
    window_offsets: tuple[int, ...] | None = None
    digit: int = 1
    variables: list[Variable] = field(default_factory=lambda: [Variable.CONFIRMED, Variable.DEATHS])
    alpha: float = 0.01
    regional: bool = False
    state_mode: bool = False
    use_appendix_a1: bool = False
    seed: int = 20200722
    formats: tuple[str, ...] = ("json",)
    out: Path | None = None
    timestamp: bool = True
    workers: int = 1
    indicator_list: list[str] = field(default_factory=list)
    model: str = "ols"
    complete: str = "pairwise"
    quartile_method: str = "weibull"
    ties: str = "upper"
    simulate: bool = False
    n: int = 1000
    trials: int = 100_000
    include_cutoff: bool = True

    def cutoff_policy(self):
        if self.policy == "max-ma":
            base = MaxMovingAverage(self.ma_window)
        elif self.policy == "global-day":
            base = GlobalDay(80 if self.offset is None else self.offset)
        else:
            base = SinceFirst(45 if self.offset is None else self.offset)
        if self.window_offsets:
            return WindowAverage(base, self.window_offsets)
        return base

    def describe_policy(self) -> dict:
        policy = self.cutoff_policy()
        base = policy.base if isinstance(policy, WindowAverage) else policy
        out = {"policy": self.policy, "include_cutoff": self.include_cutoff}
        if isinstance(base, MaxMovingAverage):
            out["ma_window"] = base.window
        elif isinstance(base, GlobalDay):
            out["offset"] = base.offset_days
            out["origin"] = base.origin.isoformat()
        else:
            out["offset"] = base.days
        if self.window_offsets:
            out["window_offsets"] = list(self.window_offsets)
        return out


# -- argument parsing -----------------------------------------------------------


def _offsets(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("window offsets must be nonempty")
    if sorted(vals) != sorted(-v for v in vals):
        raise argparse.ArgumentTypeError(f"window offsets must be symmetric around 0, got {text!r}")
    return vals


def _alpha(text: str) -> float:
    try:
        a = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be a number, got {text!r}") from None
    if not 0 < a < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {a}")
    return a


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    g = shared.add_argument_group("shared options")
    g.add_argument("--series", type=Path, help="JHU confirmed CSV, or a directory with the three global CSVs")
    g.add_argument("--tests", type=Path, help="long-format cumulative tests CSV")
    g.add_argument("--indicators", type=Path, help="indicator CSV")
    g.add_argument("--policy", choices=["max-ma", "global-day", "since-first"], default="max-ma")
    g.add_argument("--ma-window", type=_positive, default=7)
    g.add_argument("--offset", type=int, help="days for global-day (from 2020-01-22) or since-first")
    g.add_argument("--window-offsets", type=_offsets, help="e.g. -1,0,1; average statistics over shifted cutoffs")
    g.add_argument("--exclude-cutoff", action="store_true", help="use values strictly before the cutoff day")
    g.add_argument("--digit", type=int, choices=[1, 2], default=1)
    g.add_argument("--variable", action="append", choices=[v.value for v in Variable],
                   help="repeatable; default confirmed and deaths")
    g.add_argument("--alpha", type=_alpha, default=0.01)
    g.add_argument("--regional", action="store_true", help="keep provinces as separate entities")
    g.add_argument("--state-mode", action="store_true", help="use the US state table and politics dummies")
    g.add_argument("--use-appendix-a1", action="store_true", help="use the bundled appendix statistics")
    g.add_argument("--seed", type=int, default=20200722)
    g.add_argument("--format", choices=["csv", "json", "both"], default="json")
    g.add_argument("--out", type=Path, help="output directory (default: JSON to stdout)")
    g.add_argument("--no-timestamp", action="store_true")
    g.add_argument("--workers", type=_positive, default=1)
    g.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="nbl-forensics", description="Benford-law screening of epidemic counts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("ingest-check", parents=[shared], help="parse inputs and report coverage")
    sub.add_parser("cutoff", parents=[shared], help="growth-window cutoff per entity")
    sub.add_parser("gof", parents=[shared], help="digit statistics per entity")
    for name in ("regress", "report"):
        p = sub.add_parser(name, parents=[shared],
                           help="full table suite" if name == "regress" else "cutoff, gof and table suite in one report")
        p.add_argument("--indicator", action="append", help="repeatable; eiu, ln_gdp, he_gdp, uhc, eiu_component:elect, ...")
        p.add_argument("--model", choices=["ols", "logit"], default="ols")
        p.add_argument("--complete", choices=["pairwise", "listwise"], default="listwise")
        p.add_argument("--quartile-method", default="weibull")
        p.add_argument("--ties", choices=["upper", "lower"], default="upper")
    p = sub.add_parser("corr", parents=[shared], help="Pearson correlation matrix")
    p.add_argument("--complete", choices=["pairwise", "listwise"], default="listwise")
    p = sub.add_parser("quartiles", parents=[shared], help="gof means by indicator quartile")
    p.add_argument("--indicator", action="append")
    p.add_argument("--quartile-method", default="weibull")
    p.add_argument("--ties", choices=["upper", "lower"], default="upper")
    p = sub.add_parser("critical-values", parents=[shared], help="published and simulated thresholds")
    p.add_argument("--simulate", action="store_true")
    p.add_argument("--n", type=_positive, default=1000)
    p.add_argument("--trials", type=int, default=100_000)
    return parser


def _indicator_column(name: str) -> str:
    name = name.strip().lower()
    if name.startswith("eiu_component:"):
        name = name.split(":", 1)[1]
    elif name.startswith("fh:"):
        name = "fh_" + name.split(":", 1)[1]
    aliases = {"gdp": "ln_gdp", "lngdp": "ln_gdp", "he": "he_gdp", "heath_exp": "he_gdp"}
    return aliases.get(name, name)


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=ns.command)
    for attr in ("series", "tests", "indicators", "policy", "ma_window", "offset", "window_offsets",
                 "digit", "alpha", "regional", "state_mode", "use_appendix_a1", "seed", "out", "workers"):
        setattr(cfg, attr, getattr(ns, attr))
    cfg.timestamp = not ns.no_timestamp
    cfg.include_cutoff = not ns.exclude_cutoff
    cfg.formats = ("csv", "json") if ns.format == "both" else (ns.format,)
    if ns.variable:
        cfg.variables = list(dict.fromkeys(Variable(v) for v in ns.variable))
    for attr in ("model", "complete", "quartile_method", "ties", "simulate", "n", "trials"):
        if hasattr(ns, attr):
            setattr(cfg, attr, getattr(ns, attr))
    if getattr(ns, "indicator", None):
        cfg.indicator_list = [_indicator_column(i) for i in ns.indicator]
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Raise UsageError for any inconsistency; touches no output."""
    for label in ("series", "tests", "indicators"):
        p = getattr(cfg, label)
        if p is not None and not p.exists():
            raise UsageError(f"--{label} path does not exist: {p}")
    if cfg.series is not None and cfg.series.is_dir():
        if not (cfg.series / JHU_NAMES[Variable.CONFIRMED]).exists():
            raise UsageError(f"{cfg.series} has no {JHU_NAMES[Variable.CONFIRMED]}")
    if cfg.out is not None and cfg.out.exists() and not cfg.out.is_dir():
        raise UsageError(f"--out must be a directory: {cfg.out}")
    if cfg.offset is not None and cfg.policy == "max-ma":
        raise UsageError("--offset applies to --policy global-day or since-first")
    if cfg.policy == "since-first" and cfg.offset is not None and cfg.offset < 0:
        raise UsageError("--offset for since-first must be >= 0")
    if cfg.command in ("cutoff", "gof") and cfg.series is None:
        raise UsageError(f"{cfg.command} needs --series")
    if cfg.command == "ingest-check" and cfg.series is None and cfg.indicators is None:
        raise UsageError("ingest-check needs --series and/or --indicators")
    if cfg.command in ("regress", "corr", "quartiles"):
        if not (cfg.use_appendix_a1 or cfg.state_mode) and (cfg.series is None or cfg.indicators is None):
            raise UsageError(f"{cfg.command} needs --use-appendix-a1, --state-mode, or both --series and --indicators")
    if cfg.command == "report" and cfg.series is None and not (cfg.use_appendix_a1 or cfg.state_mode):
        raise UsageError("report needs --series or a bundled table")
    if cfg.command == "critical-values" and cfg.simulate and cfg.trials < 1000:
        raise UsageError("--trials must be >= 1000")


# -- output ---------------------------------------------------------------------


def _clean(obj):
    """Make ``obj`` JSON-safe: NaN/inf to None, numpy scalars to Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (date, Path)):
        return str(obj)
    if isinstance(obj, (Variable, Statistic)):
        return obj.value
    return obj


def _sha(path: Path) -> dict:
    if path.is_dir():
        return {p.name: ingest.file_sha256(p) for p in sorted(path.glob("*.csv"))}
    return ingest.file_sha256(path)


def provenance(cfg: RunConfig) -> dict:
    inputs = {}
    for label in ("series", "tests", "indicators"):
        p = getattr(cfg, label)
        if p is not None:
            inputs[label] = {"path": str(p), "sha256": _sha(p)}
    if cfg.use_appendix_a1 or cfg.state_mode:
        inputs["fixtures"] = {"path": str(ingest.fixtures_dir()), "sha256": ingest.verify_fixtures()}
    out = {
        "tool": "nbl-forensics",
        "version": __version__,
        "command": cfg.command,
        "inputs": inputs,
        "cutoff": cfg.describe_policy(),
        "digit": cfg.digit,
        "alpha": cfg.alpha,
        "seed": cfg.seed,
    }
    if cfg.timestamp:
        out["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return out


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        keys = list(dict.fromkeys(k for r in rows for k in r))
        w = csv.DictWriter(buf, fieldnames=keys, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})
    return buf.getvalue()


def emit(cfg: RunConfig, payload: dict, tables: dict[str, list[dict]], stdout) -> None:
    """JSON report (canonical) plus one CSV per table."""
    report = _clean({"provenance": provenance(cfg), **payload})
    text = json.dumps(report, indent=2, sort_keys=False) + "\n"
    if cfg.out is None:
        if "json" in cfg.formats:
            stdout.write(text)
        if "csv" in cfg.formats:
            for name, rows in tables.items():
                stdout.write(f"# {name}\n")
                stdout.write(_csv_text(_clean(rows)))
        return
    cfg.out.mkdir(parents=True, exist_ok=True)
    stem = cfg.command.replace("-", "_")
    if "json" in cfg.formats:
        (cfg.out / f"{stem}.json").write_text(text, encoding="utf-8")
    if "csv" in cfg.formats:
        for name, rows in tables.items():
            (cfg.out / f"{stem}_{name}.csv").write_text(_csv_text(_clean(rows)), encoding="utf-8")


# -- loading ------------------------------------------------------------------


def load_series(cfg: RunConfig):
    paths = {}
    if cfg.series.is_dir():
        for var, name in JHU_NAMES.items():
            if (cfg.series / name).exists():
                paths[var] = cfg.series / name
    else:
        paths[Variable.CONFIRMED] = cfg.series
    series = ingest.load_jhu(
        paths[Variable.CONFIRMED],
        paths.get(Variable.DEATHS),
        paths.get(Variable.CURED),
        regional=cfg.regional,
    )
    if cfg.tests is not None:
        ingest.attach_tests(series, ingest.parse_tests_long(cfg.tests))
    return sorted(series, key=lambda s: s.entity_id)


def _map(cfg: RunConfig, fn, items):
    if cfg.workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, items))


def _cutoff_row(cfg: RunConfig, s):
    try:
        win = extract_growth_window(s, cfg.cutoff_policy(), cfg.include_cutoff)
    except NoCutoffError as exc:
        return None, {"entity": s.entity_id, "error": "no_cutoff", "detail": str(exc)}
    row = {"entity": s.entity_id, "cutoff": win.cutoff_date.isoformat()}
    for var in Variable:
        if var in s.cumulative:
            row[f"days_{var.value}"] = win.nonzero_days[var]
    if s.flags:
        row["flags"] = "; ".join(s.flags)
    return win, row


def compute_cutoffs(cfg: RunConfig, series):
    results = _map(cfg, lambda s: _cutoff_row(cfg, s), series)
    rows = [r for w, r in results if w is not None]
    exceptions = [r for w, r in results if w is None]
    return rows, exceptions


def _gof_rows(cfg: RunConfig, s) -> tuple[list[dict], list[dict]]:
    rows, problems = [], []
    policy = cfg.cutoff_policy()
    try:
        cutoff = growth_cutoff(s, policy)
        win = extract_growth_window(s, policy, cfg.include_cutoff)
    except NoCutoffError as exc:
        return [], [{"entity": s.entity_id, "error": "no_cutoff", "detail": str(exc)}]
    for var in cfg.variables:
        if var not in s.cumulative:
            continue
        row = {"entity": s.entity_id, "variable": var.value, "position": cfg.digit,
               "cutoff": cutoff.isoformat(), "days": win.nonzero_days[var]}
        try:
            if isinstance(policy, WindowAverage):
                res = windowed_gof(s, policy.base, policy.offsets, cfg.digit, var, cfg.include_cutoff)
            else:
                res = gof_all(win.usable_values[var], cfg.digit, var)
        except UndefinedStatisticError as exc:
            row.update(n=exc.n, chi_squared=None, kuiper=None, m_stat=None, d_stat=None,
                       diagnostic="no usable values")
            rows.append(row)
            continue
        row["n"] = res.n
        for stat in Statistic:
            v = res.value(stat)
            row[stat.value] = v
            thr = PUBLISHED_CRITICAL_VALUES.threshold(stat, cfg.alpha) if _has_published(cfg.alpha) else None
            row[f"reject_{stat.value}"] = None if thr is None else bool(v > thr)
        rows.append(row)
    return rows, problems


def _has_published(alpha: float) -> bool:
    return any(abs(alpha - a) < 1e-12 for a in (0.01, 0.05, 0.10))


def compute_gof(cfg: RunConfig, series):
    results = _map(cfg, lambda s: _gof_rows(cfg, s), series)
    rows = [r for rs, _ in results for r in rs]
    problems = [p for _, ps in results for p in ps]
    return rows, problems


_STAT_PREFIX = {"chi_squared": "chi", "kuiper": "kuiper", "m_stat": "m", "d_stat": "d"}


def frame_from_gof(gof_rows: list[dict], indicators) -> tuple[pd.DataFrame, dict]:
    """Join recomputed statistics with indicator records into an analysis table."""
    aliases = ingest.load_aliases()
    wide: dict[str, dict] = {}
    for r in gof_rows:
        if r["position"] != 1:
            continue
        rec = wide.setdefault(r["entity"], {"entity": r["entity"]})
        var = r["variable"]
        rec[f"days_{var}"] = r["days"]
        for stat, prefix in _STAT_PREFIX.items():
            rec[f"{prefix}_{var}"] = r.get(stat)
    by_key = {ingest.normalize_entity(e, aliases): rec for e, rec in wide.items()}
    rows, matched = [], set()
    for ind in indicators:
        key = ingest.normalize_entity(ind.entity_id, aliases)
        rec = by_key.get(key)
        if rec is None:
            continue
        matched.add(key)
        rows.append({**rec, **{k: v for k, v in ind.as_dict().items() if k != "entity_id"}})
    report = {
        "unmatched_series": sorted(rec["entity"] for k, rec in by_key.items() if k not in matched),
        "unmatched_indicators": sorted(
            i.entity_id for i in indicators if ingest.normalize_entity(i.entity_id, aliases) not in matched
        ),
    }
    df = pd.DataFrame(rows).set_index("entity").sort_index() if rows else pd.DataFrame()
    for col in list(df.columns):
        if col != "cutoff":
            df[col] = pd.to_numeric(df[col], errors="coerce")
    if "gdp_per_capita" in df:
        df["ln_gdp"] = np.log(df["gdp_per_capita"])
    if "population" in df:
        df["ln_pop"] = np.log(df["population"])
    return df, report


def analysis_frame(cfg: RunConfig, gof_rows=None) -> tuple[pd.DataFrame, dict]:
    if cfg.state_mode:
        df = ingest.state_frame()
    elif cfg.use_appendix_a1:
        df = ingest.appendix_frame()
    else:
        if gof_rows is None:
            gof_rows, _ = compute_gof(cfg, load_series(cfg))
        df, report = frame_from_gof(gof_rows, ingest.parse_indicators(cfg.indicators))
        return df, report
    if cfg.indicators is not None:
        extra = pd.DataFrame([r.as_dict() for r in ingest.parse_indicators(cfg.indicators)])
        aliases = ingest.load_aliases()
        extra["key"] = [ingest.normalize_entity(e, aliases) for e in extra.pop("entity_id")]
        extra = extra.dropna(axis=1, how="all").set_index("key")
        keys = [ingest.normalize_entity(e, aliases) for e in df.index]
        for col in extra.columns:
            df[col] = extra[col].reindex(keys).to_numpy()
        if "gdp_per_capita" in extra:
            df["ln_gdp"] = np.log(df["gdp_per_capita"])
        if "population" in extra:
            df["ln_pop"] = np.log(df["population"])
    return df, {}


def _gof_columns(df):
    return [f"{p}_{v}" for v in ("confirmed", "deaths") for p in GOF_ORDER if f"{p}_{v}" in df]


def _indicators(cfg: RunConfig, df) -> list[str]:
    if cfg.indicator_list:
        missing = [c for c in cfg.indicator_list if c not in df]
        if missing:
            raise ValidationError(f"indicator column(s) not available: {missing}", missing)
        return cfg.indicator_list
    base = STATE_INDICATORS if cfg.state_mode else COUNTRY_INDICATORS
    return [c for c in base if c in df]


# -- table builders -------------------------------------------------------------


def table_descriptives(df):
    cols = _gof_columns(df) + [c for c in ("eiu", "ln_gdp", "he_gdp", "uhc", "ln_pop", "days_confirmed", "days_deaths") if c in df]
    rows = [r.as_dict() for r in regress.descriptive_stats(df, cols)]
    tests = []
    for p in GOF_ORDER:
        a, b = f"{p}_confirmed", f"{p}_deaths"
        if a in df and b in df:
            try:
                t = regress.mean_difference_test(df[a], df[b])
                tests.append({"statistic": p, **t.as_dict()})
            except BenfordError as exc:
                tests.append({"statistic": p, "error": str(exc)})
    return rows, tests


def table_quartiles(cfg, df, indicators):
    rows = []
    for ind in indicators:
        src = "gdp_per_capita" if ind == "ln_gdp" and "gdp_per_capita" in df else ind
        for g in _gof_columns(df):
            try:
                q = regress.quartile_contrast(df, src, g, cfg.quartile_method, cfg.ties)
                rows.append(q.as_dict())
            except BenfordError as exc:
                rows.append({"indicator": src, "gof": g, "error": str(exc)})
    return rows


def table_corr(cfg, df):
    cols = _gof_columns(df) + [c for c in ("eiu", "ln_gdp", "he_gdp", "uhc", "ln_pop") if c in df]
    return regress.pearson_matrix(df, cols, complete=cfg.complete)


def table_panels(cfg, df, indicators):
    out = []
    for ind in indicators:
        for var in ("confirmed", "deaths"):
            if f"days_{var}" not in df:
                continue
            panel = regress.regression_panel(df, ind, var, cfg.model, scaling=SCALED)
            for prefix, res in panel.items():
                if isinstance(res, Exception):
                    out.append({"indicator": ind, "variable": var, "response": prefix,
                                "error": f"{type(res).__name__}: {res}"})
                else:
                    out.append({"indicator": ind, "variable": var, "response": prefix, **res.as_dict()})
    return out


def _flat_panel_rows(panels):
    rows = []
    for p in panels:
        base = {"indicator": p["indicator"], "variable": p["variable"], "response": p["response"]}
        if "error" in p:
            rows.append({**base, "error": p["error"]})
            continue
        for c in p["coefficients"]:
            rows.append({**base, "term": c["name"], "estimate": c["estimate"], "se": c["se"], "t": c["t"],
                         "p_one_tailed": c["p_one_tailed"], "stars": c["stars"], "n": p["n"],
                         "adj_r_squared": p.get("adj_r_squared", p.get("pseudo_r_squared"))})
    return rows


# -- subcommands ----------------------------------------------------------------


def cmd_ingest_check(cfg, stdout):
    payload, tables = {}, {}
    series = None
    if cfg.series is not None:
        series = load_series(cfg)
        payload["series"] = {
            "entities": len(series),
            "first_date": series[0].dates[0] if series else None,
            "last_date": series[0].dates[-1] if series else None,
            "variables": sorted({v.value for s in series for v in s.cumulative}),
            "flagged": [{"entity": s.entity_id, "flags": s.flags} for s in series if s.flags],
        }
    if cfg.indicators is not None:
        inds = ingest.parse_indicators(cfg.indicators)
        payload["indicators"] = {"records": len(inds)}
        if series is not None:
            rep = ingest.join(series, inds)
            payload["join"] = {
                "joined": len(rep.joined),
                "unmatched_series": rep.unmatched_series,
                "unmatched_indicators": rep.unmatched_indicators,
            }
            tables["unmatched"] = [{"side": "series", "entity": e} for e in rep.unmatched_series] + [
                {"side": "indicators", "entity": e} for e in rep.unmatched_indicators
            ]
    emit(cfg, payload, tables, stdout)
    return EXIT_OK


def cmd_cutoff(cfg, stdout):
    rows, exceptions = compute_cutoffs(cfg, load_series(cfg))
    emit(cfg, {"cutoffs": rows, "exceptions": exceptions}, {"cutoffs": rows, "exceptions": exceptions}, stdout)
    return EXIT_OK


def cmd_gof(cfg, stdout):
    rows, problems = compute_gof(cfg, load_series(cfg))
    emit(cfg, {"gof": rows, "exceptions": problems}, {"gof": rows, "exceptions": problems}, stdout)
    return EXIT_OK


def _suite(cfg, df):
    indicators = _indicators(cfg, df)
    desc, tests = table_descriptives(df)
    quart = table_quartiles(cfg, df, indicators)
    corr = table_corr(cfg, df)
    panels = table_panels(cfg, df, indicators)
    ind_cols = [c for c in indicators if c in df]
    design = [c for c in ind_cols + ["ln_pop", "days_confirmed"] if c in df]
    cond = regress.condition_number(df[design].to_numpy(dtype=float)) if len(design) > 1 else None
    payload = {
        "descriptives": desc,
        "mean_difference_tests": tests,
        "quartiles": quart,
        "correlations": {"complete": corr.complete, "cells": corr.as_records()},
        "regressions": panels,
        "condition_number": {"columns": design, "value": cond},
    }
    tables = {
        "descriptives": desc,
        "mean_difference_tests": tests,
        "quartiles": [{k: (";".join(map(str, v)) if isinstance(v, list) else v) for k, v in q.items()} for q in quart],
        "correlations": corr.as_records(),
        "regressions": _flat_panel_rows(panels),
    }
    return payload, tables


def cmd_regress(cfg, stdout):
    df, join_report = analysis_frame(cfg)
    payload, tables = _suite(cfg, df)
    if join_report:
        payload["join"] = join_report
    emit(cfg, payload, tables, stdout)
    return EXIT_OK


def cmd_corr(cfg, stdout):
    df, _ = analysis_frame(cfg)
    corr = table_corr(cfg, df)
    emit(cfg, {"correlations": {"complete": corr.complete, "cells": corr.as_records()}},
         {"correlations": corr.as_records()}, stdout)
    return EXIT_OK


def cmd_quartiles(cfg, stdout):
    df, _ = analysis_frame(cfg)
    rows = table_quartiles(cfg, df, _indicators(cfg, df))
    flat = [{k: (";".join(map(str, v)) if isinstance(v, list) else v) for k, v in q.items()} for q in rows]
    emit(cfg, {"quartiles": rows}, {"quartiles": flat}, stdout)
    return EXIT_OK


def cmd_critical_values(cfg, stdout):
    table = CriticalValueTable(dict(PUBLISHED_CRITICAL_VALUES.entries))
    if cfg.simulate:
        for stat in Statistic:
            table.add(monte_carlo_critical_values(stat, cfg.n, cfg.alpha, cfg.trials, cfg.seed,
                                                  position=cfg.digit, workers=cfg.workers))
    rows = table.rows()
    payload = {"critical_values": rows}
    if cfg.simulate:
        payload["simulation"] = {"n": cfg.n, "trials": cfg.trials, "seed": cfg.seed, "rng": RNG_NAME,
                                 "alpha": cfg.alpha, "position": cfg.digit}
    emit(cfg, payload, {"critical_values": rows}, stdout)
    return EXIT_OK


def cmd_report(cfg, stdout):
    payload, tables = {}, {}
    gof_rows = None
    if cfg.series is not None:
        series = load_series(cfg)
        cut_rows, cut_exc = compute_cutoffs(cfg, series)
        gof_rows, gof_exc = compute_gof(cfg, series)
        payload.update(cutoffs=cut_rows, gof=gof_rows, exceptions=cut_exc + gof_exc)
        tables.update(cutoffs=cut_rows, gof=gof_rows)
    if cfg.indicators is not None or cfg.use_appendix_a1 or cfg.state_mode:
        df, join_report = analysis_frame(cfg, gof_rows)
        suite, suite_tables = _suite(cfg, df)
        payload.update(suite)
        tables.update(suite_tables)
        if join_report:
            payload["join"] = join_report
    emit(cfg, payload, tables, stdout)
    return EXIT_OK


COMMANDS = {
    "ingest-check": cmd_ingest_check,
    "cutoff": cmd_cutoff,
    "gof": cmd_gof,
    "regress": cmd_regress,
    "corr": cmd_corr,
    "quartiles": cmd_quartiles,
    "critical-values": cmd_critical_values,
    "report": cmd_report,
}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = config_from_args(ns)
    except UsageError as exc:
        stderr.write(f"nbl-forensics: error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return COMMANDS[cfg.command](cfg, stdout)
    except ValidationError as exc:
        stderr.write(f"nbl-forensics: validation error: {exc}\n")
        return EXIT_USAGE
    except (BenfordError, ValueError, KeyError, OSError) as exc:
        stderr.write(f"nbl-forensics: data error: {exc}\n")
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("internal error")
        stderr.write(f"nbl-forensics: internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
