"""Benchmark figures rendered to PNG with the Agg backend."""

from __future__ import annotations

from pathlib import Path

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .bench import Basis

FIGSIZE = (6.0, 4.0)
DPI = 100
# no Software/date chunk, so reruns give byte-identical files
PNG_METADATA = {"Software": None}


def _new_axes():
    fig = Figure(figsize=FIGSIZE, dpi=DPI)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    ax.grid(True, linestyle=":", linewidth=0.6)
    return fig, ax


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    return path


def plot_full_vs_size(series, path) -> Path:
    fig, ax = _new_axes()
    sizes, ms = [], []
    if series.base_cost is not None:
        sizes.append(series.base_size)
        ms.append(series.base_cost.wall_time_ms)
    for p in series.points:
        sizes.append(p.new_size)
        ms.append(p.full_cost.wall_time_ms)
    ax.plot(sizes, ms, marker="o", color="tab:blue")
    ax.set_xlabel("records in database")
    ax.set_ylabel("full K-means time (ms)")
    ax.set_title("Full refit")
    return _save(fig, Path(path))


def plot_incremental_vs_batch(series, path) -> Path:
    fig, ax = _new_axes()
    ax.plot([p.batch_size for p in series.points],
            [p.incremental_cost.wall_time_ms for p in series.points],
            marker="s", color="tab:orange")
    ax.set_xlabel("inserted records")
    ax.set_ylabel("incremental time (ms)")
    ax.set_title("Incremental insert")
    return _save(fig, Path(path))


def plot_crossover(series, estimate, path) -> Path:
    basis = estimate.basis
    unit = "time (ms)" if basis is Basis.WALL_TIME else "distance evaluations"
    fig, ax = _new_axes()
    xs = series.deltas
    ax.plot(xs, [p.full_cost.value(basis) for p in series.points],
            marker="o", color="tab:blue", label="full refit")
    ax.plot(xs, [p.incremental_cost.value(basis) for p in series.points],
            marker="s", color="tab:orange", label="incremental")
    if estimate.found:
        t = estimate.crossover_percent
        ax.axvline(t, color="tab:red", linestyle="--", linewidth=1.0,
                   label=f"threshold {t:.1f}%")
    ax.set_xlabel("% change in database")
    ax.set_ylabel(unit)
    ax.legend(loc="best", frameon=False)
    return _save(fig, Path(path))


def render_figures(series, estimates, out_dir) -> list:
    out = Path(out_dir)
    paths = [
        plot_full_vs_size(series, out / "fig_full_vs_size.png"),
        plot_incremental_vs_batch(series, out / "fig_incremental_vs_batch.png"),
    ]
    for est in estimates:
        if series.has_basis(est.basis):
            paths.append(plot_crossover(series, est, out / f"fig_crossover_{est.basis.value}.png"))
    return paths
