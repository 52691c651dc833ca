"""Density / fragmentation sweeps: per-seed rows, aggregation and plots."""

from __future__ import annotations

import csv
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .config import ScenarioConfig
from .engine import run
from .metrics import CSV_FIELDS, fmt, header_overhead, parse_value
from .protocol import Strategy

log = logging.getLogger(__name__)

# plotted in the goodput, capacity and energy figures; the gains analysis adds the rest
PRIMARY_STRATEGIES = ("aloha", "buffered_aloha", "frag2_retx1", "frag3_retx1", "frag4_retx1", "frag5_retx1")
EXTRA_STRATEGIES = (
    "frag2", "frag3", "frag4", "frag5",
    "frag2_retx2", "frag3_retx2", "frag4_retx2", "frag5_retx2",
)

# two-sided 95 % Student t quantiles, df = 1..30
_T95 = (
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
    2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
)


def t95(df: int) -> float:
    return _T95[df - 1] if df <= len(_T95) else 1.96


@dataclass
class SweepSpec:
    node_counts: list[int] = field(default_factory=lambda: list(range(1, 51)))
    strategies: list[str] = field(default_factory=lambda: list(PRIMARY_STRATEGIES))
    extra: list[str] = field(default_factory=lambda: list(EXTRA_STRATEGIES))
    seeds_per_point: int = 20
    out_dir: Path = Path("results")
    base: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __post_init__(self):
        if not self.node_counts or not self.strategies:
            raise ValueError("node_counts and strategies must be non-empty")
        if self.seeds_per_point < 1:
            raise ValueError("seeds_per_point must be >= 1")
        for label in [*self.strategies, *self.extra]:
            Strategy.parse(label)

    @property
    def all_strategies(self) -> list[str]:
        seen = dict.fromkeys([*self.strategies, *self.extra])
        return list(seen)

    def points(self) -> list[tuple[int, str, int]]:
        return [
            (n, s, seed)
            for s in self.all_strategies
            for n in self.node_counts
            for seed in range(self.seeds_per_point)
        ]


def run_point(base: ScenarioConfig, node_count: int, label: str, seed: int) -> dict[str, str]:
    strategy = Strategy.parse(label)
    cfg = base.replace(node_count=node_count, strategy=strategy, seed=seed)
    m = run(cfg, keep_log=False).metrics
    return report_row(cfg, m)


def report_row(cfg: ScenarioConfig, m) -> dict[str, str]:
    strategy = cfg.strategy
    overhead = None
    if strategy.fragmented:
        overhead = header_overhead(
            strategy.fragments_per_packet, cfg.payload_bytes, cfg.fragment_header_bytes, cfg.radio
        )
    return {
        "node_count": str(cfg.node_count),
        "strategy": strategy.label,
        "n_f": str(strategy.fragments_per_packet),
        "retx_sessions": str(strategy.retx_sessions_max),
        "seed": str(cfg.seed),
        "m_asked": str(m.m_asked),
        "m_sent": str(m.m_sent),
        "m_correct": str(m.m_correct),
        "goodput_pct": fmt(m.goodput_percent),
        "app_capacity_pct": fmt(m.app_capacity_percent),
        "energy_J": fmt(m.energy_joules),
        "energy_per_pkt_J": fmt(m.energy_per_correct_packet),
        "header_overhead_pct": fmt(overhead) if overhead is not None else "0.0",
    }


def _run_star(args):
    base, n, label, seed = args
    try:
        return run_point(base, n, label, seed)
    except Exception as exc:  # recorded, excluded from aggregation
        log.warning("run failed: nodes=%s strategy=%s seed=%s: %s", n, label, seed, exc)
        return {"node_count": str(n), "strategy": label, "seed": str(seed), "error": repr(exc)}


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[dict[str, str]]:
    tasks = [(spec.base, n, s, seed) for n, s, seed in spec.points()]
    if jobs <= 1:
        return [_run_star(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_star, tasks, chunksize=8))


def write_rows(rows: Iterable[dict[str, str]], path: Path, fields: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


AGG_METRICS = ("goodput_pct", "app_capacity_pct", "energy_per_pkt_J")


def aggregate(rows: Iterable[dict[str, str]], with_ci: bool = True) -> list[dict[str, str]]:
    """Mean (and 95 % CI half-width when >1 seed) per (strategy, node_count)."""
    groups: dict[tuple[str, int], list[dict[str, str]]] = {}
    order: list[tuple[str, int]] = []
    for row in rows:
        if row.get("error"):
            continue
        key = (row["strategy"], int(row["node_count"]))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    out = []
    for key in order:
        group = groups[key]
        first = group[0]
        agg = {
            "node_count": first["node_count"],
            "strategy": first["strategy"],
            "n_f": first["n_f"],
            "retx_sessions": first["retx_sessions"],
            "seeds": str(len(group)),
        }
        for metric in AGG_METRICS:
            values = [v for v in (parse_value(r[metric]) for r in group) if v is not None]
            agg[f"{metric}_mean"] = fmt(statistics.fmean(values)) if values else fmt(None)
            if with_ci:
                if len(values) > 1:
                    half = t95(len(values) - 1) * statistics.stdev(values) / math.sqrt(len(values))
                    agg[f"{metric}_ci95"] = fmt(half)
                else:
                    agg[f"{metric}_ci95"] = fmt(None)
        out.append(agg)
    return out


def aggregate_fields(with_ci: bool) -> list[str]:
    cols = ["node_count", "strategy", "n_f", "retx_sessions", "seeds"]
    for metric in AGG_METRICS:
        cols.append(f"{metric}_mean")
        if with_ci:
            cols.append(f"{metric}_ci95")
    return cols


def series(agg: Iterable[dict[str, str]], metric: str) -> dict[str, dict[int, Optional[float]]]:
    """``{strategy: {node_count: mean}}`` for one aggregated metric."""
    out: dict[str, dict[int, Optional[float]]] = {}
    for row in agg:
        out.setdefault(row["strategy"], {})[int(row["node_count"])] = parse_value(row[f"{metric}_mean"])
    return out


def goodput_gains(agg: Iterable[dict[str, str]], fragments: Iterable[int] = (2, 3, 4, 5)) -> list[dict[str, str]]:
    """Sweep-averaged goodput gains for the fragmentation comparison.

    For each n_f: fragmentation alone over Buffered Aloha, the extra gain of one
    retransmission session over fragmentation alone, and the extra gain of a
    second session over the first.  Gains are differences in percentage points
    of the per-density means, averaged over the densities all series share.
    """
    good = series(agg, "goodput_pct")
    rows = []

    def mean_diff(a: str, b: str) -> Optional[float]:
        if a not in good or b not in good:
            return None
        shared = [n for n in good[a] if n in good[b] and good[a][n] is not None and good[b][n] is not None]
        if not shared:
            return None
        return statistics.fmean(good[a][n] - good[b][n] for n in shared)

    for n_f in fragments:
        rows.append({
            "n_f": str(n_f),
            "frag_over_buffered": fmt(mean_diff(f"frag{n_f}", "buffered_aloha")),
            "retx1_over_frag": fmt(mean_diff(f"frag{n_f}_retx1", f"frag{n_f}")),
            "retx2_over_retx1": fmt(mean_diff(f"frag{n_f}_retx2", f"frag{n_f}_retx1")),
        })
    return rows


GAIN_FIELDS = ("n_f", "frag_over_buffered", "retx1_over_frag", "retx2_over_retx1")


def write_plots(agg: list[dict[str, str]], gains: list[dict[str, str]], out_dir: Path) -> list[Path]:
    """Render the four figures from aggregated CSV data; empty if matplotlib is missing."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib unavailable; skipping plots")
        return []

    written = []
    labels = {
        "goodput_pct": ("Goodput [%]", "goodput.svg"),
        "app_capacity_pct": ("Application capacity [%]", "app_capacity.svg"),
        "energy_per_pkt_J": ("Energy efficiency [J/packet]", "energy_efficiency.svg"),
    }
    for metric, (ylabel, name) in labels.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for strategy, points in series(agg, metric).items():
            if strategy not in PRIMARY_STRATEGIES:
                continue
            xs = sorted(n for n, v in points.items() if v is not None)
            ax.plot(xs, [points[n] for n in xs], marker=".", label=strategy)
        ax.set_xlabel("Number of nodes")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = out_dir / name
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.25
    xs = [int(g["n_f"]) for g in gains]
    for k, (col, label) in enumerate((
        ("frag_over_buffered", "fragmentation only"),
        ("retx1_over_frag", "+1 retransmission session"),
        ("retx2_over_retx1", "+2nd retransmission session"),
    )):
        ys = [parse_value(g[col]) or 0.0 for g in gains]
        ax.bar([x + (k - 1) * width for x in xs], ys, width=width, label=label)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("Fragments per packet")
    ax.set_ylabel("Average goodput gain [percentage points]")
    ax.set_xticks(xs)
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = out_dir / "goodput_gains.svg"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written


def execute(spec: SweepSpec, jobs: int = 1) -> dict[str, Path]:
    """Run a sweep and write runs.csv, aggregate.csv, gains.csv and the plots."""
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(spec, jobs)
    failed = [r for r in rows if r.get("error")]
    for r in failed:
        log.warning("excluded failed run %s", r)
    ok = [r for r in rows if not r.get("error")]
    with_ci = spec.seeds_per_point > 1
    agg = aggregate(ok, with_ci)
    gains = goodput_gains(agg)
    files = {
        "runs": out_dir / "runs.csv",
        "aggregate": out_dir / "aggregate.csv",
        "gains": out_dir / "gains.csv",
    }
    write_rows(ok, files["runs"], CSV_FIELDS)
    write_rows(agg, files["aggregate"], aggregate_fields(with_ci))
    write_rows(gains, files["gains"], GAIN_FIELDS)
    for path in write_plots(agg, gains, out_dir):
        files[path.stem] = path
    return files
