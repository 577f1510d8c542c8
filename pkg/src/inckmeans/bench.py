"""Full-refit vs. incremental-insert benchmark and crossover estimation.

Both paths are measured twice over: wall time (median of repetitions, a
monotonic clock around the clustering call only) and an exact count of
distance evaluations, which is hardware independent.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .core import (
    DEFAULT_MAX_ITERATIONS,
    FIRST_K_DISTINCT,
    ClusteringError,
    CostCounter,
    InitStrategy,
    Metric,
    TieBreak,
    as_matrix,
    incremental_insert,
    lloyd_fit,
)


class BenchError(ValueError):
    pass


class Basis(str, Enum):
    WALL_TIME = "wall_time"
    DISTANCE_EVALS = "distance_evals"


def delta_percent(old_size: int, new_size: int) -> float:
    """Database growth in percent: (new - old) / old * 100."""
    if old_size < 1:
        raise BenchError(f"old size must be >= 1, got {old_size}")
    if new_size < old_size:
        raise BenchError(f"new size {new_size} is smaller than old size {old_size}")
    return (new_size - old_size) / old_size * 100.0


@dataclass(frozen=True)
class Cost:
    wall_time_ms: float
    distance_evaluations: Optional[int] = None
    iterations: int = 0

    def value(self, basis: Basis) -> Optional[float]:
        if basis is Basis.WALL_TIME:
            return self.wall_time_ms
        return None if self.distance_evaluations is None else float(self.distance_evaluations)


@dataclass(frozen=True)
class DeltaPoint:
    old_size: int
    new_size: int
    full_cost: Cost
    incremental_cost: Cost

    @property
    def batch_size(self) -> int:
        return self.new_size - self.old_size

    @property
    def delta_percent(self) -> float:
        return delta_percent(self.old_size, self.new_size)


@dataclass
class BenchConfig:
    repetitions: int = 5
    seed: int = 0
    noise: float = 0.05
    init: InitStrategy = FIRST_K_DISTINCT
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    tie_break: TieBreak = TieBreak.LOWEST
    update_means: bool = False
    extension: Optional[np.ndarray] = None
    clock: Callable[[], float] = field(default=time.perf_counter, repr=False)


@dataclass
class DeltaSeries:
    base_size: int
    points: list
    config: Optional[BenchConfig] = None
    base_cost: Optional[Cost] = None
    k: Optional[int] = None

    def __post_init__(self):
        if not self.points:
            raise BenchError("a delta series needs at least one point")
        deltas = [p.delta_percent for p in self.points]
        if any(b <= a for a, b in zip(deltas, deltas[1:])):
            raise BenchError("delta percentages must be strictly increasing")

    @property
    def deltas(self) -> list:
        return [p.delta_percent for p in self.points]

    def has_basis(self, basis: Basis) -> bool:
        return all(p.full_cost.value(basis) is not None
                   and p.incremental_cost.value(basis) is not None for p in self.points)


@dataclass(frozen=True)
class ThresholdEstimate:
    crossover_percent: Optional[float]
    bracket: Optional[tuple]
    basis: Basis

    @property
    def found(self) -> bool:
        return self.crossover_percent is not None


def resample_with_noise(X: np.ndarray, size: int, noise: float, seed: int) -> np.ndarray:
    """Draw ``size`` rows of ``X`` with replacement, each scaled by U(1-noise, 1+noise)."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, X.shape[0], size=size)
    scale = rng.uniform(1.0 - noise, 1.0 + noise, size=(size, X.shape[1]))
    return X[idx] * scale


def _measure(fn, repetitions: int, clock):
    times = []
    result = None
    for _ in range(repetitions):
        counter = CostCounter()
        t0 = clock()
        out = fn(counter)
        t1 = clock()
        times.append((t1 - t0) * 1000.0)
        if result is not None and counter != result[1]:
            raise BenchError("operation counts differ between repetitions")
        result = (out, counter)
    return statistics.median(times), result[0], result[1]


def run_benchmark(base, deltas: Sequence[int], k: int,
                  metric: Union[Metric, str] = Metric.EUCLIDEAN,
                  config: Optional[BenchConfig] = None) -> DeltaSeries:
    config = config or BenchConfig()
    metric = Metric.parse(metric)
    X = as_matrix(base.X if hasattr(base, "X") else base)
    n = X.shape[0]
    deltas = [int(m) for m in deltas]
    if not deltas:
        raise BenchError("no delta batch sizes given")
    if any(m < 1 for m in deltas):
        raise BenchError("delta batch sizes must be >= 1")
    if any(b <= a for a, b in zip(deltas, deltas[1:])):
        raise BenchError("delta batch sizes must be strictly increasing")
    if k < 1 or k > n:
        raise BenchError(f"k={k} must be between 1 and the base size {n}")
    if config.repetitions < 1:
        raise BenchError("repetitions must be >= 1")

    need = max(deltas)
    if config.extension is not None:
        pool = as_matrix(config.extension)
        if pool.shape[1] != X.shape[1]:
            raise BenchError(
                f"extension data has dimension {pool.shape[1]}, base has {X.shape[1]}")
        if pool.shape[0] < need:
            raise BenchError(
                f"batch of {need} requested but only {pool.shape[0]} extension records")
    else:
        pool = resample_with_noise(X, need, config.noise, config.seed)

    def fit(data, counter):
        return lloyd_fit(data, k, init=config.init, metric=metric,
                         max_iterations=config.max_iterations,
                         tie_break=config.tie_break, counter=counter)

    base_ms, base_model, base_counter = _measure(lambda c: fit(X, c), config.repetitions,
                                                 config.clock)
    base_cost = Cost(base_ms, base_counter.distance_evaluations, base_model.iterations)
    lookup = dict(enumerate(X)) if config.update_means else None

    points = []
    for m in deltas:
        grown = np.vstack([X, pool[:m]])
        full_ms, full_model, full_counter = _measure(lambda c: fit(grown, c),
                                                     config.repetitions, config.clock)
        batch = [(n + i, pool[i]) for i in range(m)]
        inc_ms, _, inc_counter = _measure(
            lambda c: incremental_insert(batch, base_model, config.update_means, c,
                                         data_lookup=lookup),
            config.repetitions, config.clock)
        points.append(DeltaPoint(
            old_size=n,
            new_size=n + m,
            full_cost=Cost(full_ms, full_counter.distance_evaluations, full_model.iterations),
            incremental_cost=Cost(inc_ms, inc_counter.distance_evaluations, 0),
        ))
    return DeltaSeries(base_size=n, points=points, config=config, base_cost=base_cost, k=k)


def estimate_threshold(series: DeltaSeries, basis: Union[Basis, str] = Basis.WALL_TIME
                       ) -> ThresholdEstimate:
    """Crossover of the two piecewise-linear cost curves.

    Scans for the first adjacent pair where incremental <= full turns into
    incremental > full and interpolates linearly inside it. At 0% growth the
    incremental cost is zero and the full cost is the base fit (or, lacking
    that, the first measured full cost), so a series that is already
    crossed at its first point is bracketed by (0, first delta).
    """
    basis = Basis(basis)
    if not series.has_basis(basis):
        return ThresholdEstimate(None, None, basis)
    xs = [p.delta_percent for p in series.points]
    full = [p.full_cost.value(basis) for p in series.points]
    inc = [p.incremental_cost.value(basis) for p in series.points]
    if xs[0] > 0:
        anchor = series.base_cost.value(basis) if series.base_cost is not None else None
        xs.insert(0, 0.0)
        full.insert(0, anchor if anchor is not None else full[0])
        inc.insert(0, 0.0)
    gap = [g - f for g, f in zip(inc, full)]
    for i in range(len(xs) - 1):
        if gap[i] <= 0 < gap[i + 1]:
            x0, x1 = xs[i], xs[i + 1]
            t = x0 + (x1 - x0) * (-gap[i]) / (gap[i + 1] - gap[i])
            return ThresholdEstimate(t, (x0, x1), basis)
    return ThresholdEstimate(None, None, basis)


def load_replay(path, base_size: int = 1000) -> DeltaSeries:
    """Read an externally supplied cost table.

    Required columns: ``delta_percent, full_ms, incremental_ms``; optional
    ``full_distance_evals, incremental_distance_evals, full_iterations``.
    Sizes are reconstructed from ``base_size``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(row for row in fh if not row.lstrip().startswith("#")))
    if not rows:
        raise BenchError(f"{path}: replay file has no rows")
    missing = {"delta_percent", "full_ms", "incremental_ms"} - set(rows[0])
    if missing:
        raise BenchError(f"{path}: replay file lacks columns {sorted(missing)}")

    def opt_int(row, key):
        v = (row.get(key) or "").strip()
        return int(float(v)) if v else None

    points = []
    for lineno, row in enumerate(rows, start=2):
        try:
            pct = float(row["delta_percent"])
            new_size = round(base_size * (1 + pct / 100.0))
            if abs(delta_percent(base_size, new_size) - pct) > 1e-9:
                raise BenchError(
                    f"{pct}% growth is not reachable from base size {base_size}")
            points.append(DeltaPoint(
                old_size=base_size,
                new_size=new_size,
                full_cost=Cost(float(row["full_ms"]), opt_int(row, "full_distance_evals"),
                               opt_int(row, "full_iterations") or 0),
                incremental_cost=Cost(float(row["incremental_ms"]),
                                      opt_int(row, "incremental_distance_evals"), 0),
            ))
        except (ValueError, TypeError) as exc:
            raise BenchError(f"{path}:{lineno}: {exc}") from None
    return DeltaSeries(base_size=base_size, points=points)


def _num(x) -> str:
    return format(float(x), ".10g")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _evals(cost: Cost) -> str:
    return "" if cost.distance_evaluations is None else str(cost.distance_evaluations)


def describe(estimate: ThresholdEstimate, series: DeltaSeries) -> str:
    lo, hi = series.deltas[0], series.deltas[-1]
    if not estimate.found:
        return (f"threshold ({estimate.basis.value}): no crossover observed in range "
                f"{_num(lo)}%..{_num(hi)}%")
    b0, b1 = estimate.bracket
    return (f"threshold ({estimate.basis.value}): {estimate.crossover_percent:.1f}% "
            f"bracket ({_num(b0)}, {_num(b1)})")


def advice(delta: float, threshold: Optional[float]) -> str:
    if threshold is None:
        return "no threshold configured; cannot advise on refitting"
    if delta <= threshold:
        return (f"growth {delta:.1f}% is within the {threshold:.1f}% threshold: "
                f"keep using the previous result")
    return (f"growth {delta:.1f}% exceeds the {threshold:.1f}% threshold: "
            f"rerun K-means on the full database")


def summary_text(series: DeltaSeries, estimates: Sequence[ThresholdEstimate]) -> str:
    lines = [f"base size: {series.base_size}",
             f"delta points: {len(series.points)} "
             f"({', '.join(_num(d) + '%' for d in series.deltas)})"]
    for est in estimates:
        lines.append(describe(est, series))
    primary = next((e for e in estimates if e.found), None)
    if primary is not None:
        t = primary.crossover_percent
        lines.append(f"policy: up to {t:.1f}% growth use the previous result "
                     f"(incremental insert); beyond {t:.1f}% rerun K-means")
    else:
        lines.append("policy: incremental insert stayed cheaper over the whole range; "
                     "use the previous result")
    return "\n".join(lines) + "\n"


def emit_report(series: DeltaSeries,
                estimate: Union[ThresholdEstimate, Iterable[ThresholdEstimate]],
                out_dir, figures: bool = True) -> list:
    """Write CSV tables, plot-data files, a summary and figures to ``out_dir``.

    Returns the list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    estimates = [estimate] if isinstance(estimate, ThresholdEstimate) else list(estimate)
    written = []

    rows = []
    if series.base_cost is not None:
        bc = series.base_cost
        rows.append([series.base_size, _num(bc.wall_time_ms), _evals(bc), bc.iterations])
    for p in series.points:
        fc = p.full_cost
        rows.append([p.new_size, _num(fc.wall_time_ms), _evals(fc), fc.iterations])
    path = out / "time_vs_base_size.csv"
    _write_csv(path, ["data_size", "full_ms", "full_distance_evals", "full_iterations"], rows)
    written.append(path)

    path = out / "time_vs_delta_size.csv"
    _write_csv(path, ["incremental_records", "incremental_ms", "incremental_distance_evals"],
               [[p.batch_size, _num(p.incremental_cost.wall_time_ms), _evals(p.incremental_cost)]
                for p in series.points])
    written.append(path)

    path = out / "delta_table.csv"
    _write_csv(path, ["delta_percent", "full_ms", "incremental_ms"],
               [[_num(p.delta_percent), _num(p.full_cost.wall_time_ms),
                 _num(p.incremental_cost.wall_time_ms)] for p in series.points])
    written.append(path)

    path = out / "delta_counts.csv"
    _write_csv(path, ["delta_percent", "full_distance_evals", "incremental_distance_evals",
                      "full_iterations"],
               [[_num(p.delta_percent), _evals(p.full_cost), _evals(p.incremental_cost),
                 p.full_cost.iterations] for p in series.points])
    written.append(path)

    for basis, name in ((Basis.WALL_TIME, "delta_plot.dat"),
                        (Basis.DISTANCE_EVALS, "delta_plot_evals.dat")):
        if not series.has_basis(basis):
            continue
        unit = "ms" if basis is Basis.WALL_TIME else "distance_evals"
        lines = [f"# delta_percent full_{unit} incremental_{unit}"]
        lines += [f"{_num(p.delta_percent)} {_num(p.full_cost.value(basis))} "
                  f"{_num(p.incremental_cost.value(basis))}" for p in series.points]
        path = out / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)

    path = out / "summary.txt"
    path.write_text(summary_text(series, estimates), encoding="utf-8")
    written.append(path)

    if figures:
        from .plotting import render_figures
        written += render_figures(series, estimates, out)
    return written
