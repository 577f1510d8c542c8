import itertools
from pathlib import Path

import numpy as np
import pytest

from inckmeans.bench import (
    Basis,
    BenchConfig,
    BenchError,
    Cost,
    DeltaPoint,
    DeltaSeries,
    advice,
    delta_percent,
    emit_report,
    estimate_threshold,
    load_replay,
    run_benchmark,
)
from oracles import interpolate_crossover

DATA = Path(__file__).resolve().parent.parent / "data"
TIMING_FULL = [172, 172, 187, 188, 188, 203]
TIMING_INC = [47, 94, 125, 172, 178, 218]


def series_from(deltas, full, inc, base=1000, base_cost=None):
    points = [DeltaPoint(base, base + base * d // 100, Cost(f), Cost(g))
              for d, f, g in zip(deltas, full, inc)]
    return DeltaSeries(base, points, base_cost=base_cost)


def fake_clock(step=0.001):
    ticks = itertools.count()
    return lambda: next(ticks) * step


@pytest.fixture
def timing():
    return series_from(range(10, 70, 10), TIMING_FULL, TIMING_INC)


@pytest.fixture
def small_base():
    rng = np.random.default_rng(2)
    return np.vstack([rng.normal(c, 1.0, size=(20, 2)) for c in (0.0, 6.0, 12.0)])


class TestDeltaPercent:
    def test_first_table_row(self):
        assert delta_percent(1000, 1100) == 10

    def test_no_growth(self):
        assert delta_percent(37, 37) == 0

    def test_reported_threshold_point(self):
        assert delta_percent(1000, 1570) == pytest.approx(57)

    @pytest.mark.parametrize("old, new", [(0, 10), (10, 9)])
    def test_errors(self, old, new):
        with pytest.raises(BenchError):
            delta_percent(old, new)


class TestEstimateThreshold:
    def test_timing(self, timing):
        est = estimate_threshold(timing, Basis.WALL_TIME)
        expected, bracket = interpolate_crossover(list(range(10, 70, 10)), TIMING_FULL, TIMING_INC)
        assert est.bracket == bracket == (50, 60)
        assert est.crossover_percent == pytest.approx(expected, abs=1e-9)
        assert est.crossover_percent == pytest.approx(54.0, abs=0.1)

    def test_incremental_always_cheaper(self):
        s = series_from([10, 20, 30], [100, 110, 120], [10, 20, 30])
        est = estimate_threshold(s)
        assert not est.found and est.bracket is None

    def test_equal_at_grid_point(self):
        s = series_from([10, 20, 30], [100, 100, 100], [50, 100, 150])
        est = estimate_threshold(s)
        assert est.crossover_percent == 20
        assert est.bracket == (20, 30)

    def test_already_crossed_at_first_point(self):
        s = series_from([10], [100], [150], base_cost=Cost(90))
        est = estimate_threshold(s)
        assert est.bracket == (0.0, 10)
        # gap runs from -90 at 0% to +50 at 10%
        assert est.crossover_percent == pytest.approx(90 / 140 * 10)

    def test_single_point_not_crossed(self):
        assert not estimate_threshold(series_from([10], [100], [5])).found

    def test_bracket_brackets_the_sign_change(self, timing):
        est = estimate_threshold(timing)
        lo, hi = est.bracket
        by_delta = {p.delta_percent: p for p in timing.points}
        assert by_delta[lo].incremental_cost.wall_time_ms <= by_delta[lo].full_cost.wall_time_ms
        assert by_delta[hi].incremental_cost.wall_time_ms >= by_delta[hi].full_cost.wall_time_ms

    def test_missing_basis_is_none(self, timing):
        assert not estimate_threshold(timing, Basis.DISTANCE_EVALS).found


class TestSeries:
    def test_empty_rejected(self):
        with pytest.raises(BenchError):
            DeltaSeries(10, [])

    def test_non_increasing_rejected(self):
        with pytest.raises(BenchError):
            series_from([20, 10], [1, 1], [1, 1])


class TestRunBenchmark:
    def test_structure_and_counters(self, small_base):
        cfg = BenchConfig(repetitions=2, clock=fake_clock())
        s = run_benchmark(small_base, [6, 12, 18], 3, "euclidean", cfg)
        assert s.deltas == [10, 20, 30]
        n = len(small_base)
        for p in s.points:
            assert p.incremental_cost.distance_evaluations == 3 * p.batch_size
            assert p.full_cost.distance_evaluations == 3 * (n + p.batch_size) * p.full_cost.iterations
        assert s.base_cost.distance_evaluations == 3 * n * s.base_cost.iterations

    def test_incremental_counter_strictly_increases(self, small_base):
        s = run_benchmark(small_base, [1, 2, 5, 9], 3, "manhattan",
                          BenchConfig(repetitions=1, clock=fake_clock()))
        evals = [p.incremental_cost.distance_evaluations for p in s.points]
        assert all(a < b for a, b in zip(evals, evals[1:]))

    def test_counter_basis_has_no_crossover(self, small_base):
        s = run_benchmark(small_base, [6, 30, 60], 3, "euclidean",
                          BenchConfig(repetitions=1, clock=fake_clock()))
        assert not estimate_threshold(s, Basis.DISTANCE_EVALS).found

    def test_update_means_path(self, small_base):
        s = run_benchmark(small_base, [6], 3, "manhattan",
                          BenchConfig(repetitions=1, update_means=True, clock=fake_clock()))
        assert s.points[0].incremental_cost.distance_evaluations == 18

    def test_median_of_repetitions(self, small_base):
        durations = iter([0, 5, 0, 1, 0, 3] * 10)
        t = [0.0]

        def clock():
            t[0] += next(durations)
            return t[0]

        s = run_benchmark(small_base, [6], 3, "euclidean", BenchConfig(repetitions=3, clock=clock))
        assert s.base_cost.wall_time_ms == 3000.0

    @pytest.mark.parametrize("deltas", [[], [0], [5, 5]])
    def test_bad_deltas(self, small_base, deltas):
        with pytest.raises(BenchError):
            run_benchmark(small_base, deltas, 3)

    def test_k_too_large(self, small_base):
        with pytest.raises(BenchError):
            run_benchmark(small_base[:2], [1], 3)

    def test_extension_too_small(self, small_base):
        cfg = BenchConfig(extension=small_base[:4])
        with pytest.raises(BenchError, match="only 4"):
            run_benchmark(small_base, [5], 3, config=cfg)

    def test_extension_used_verbatim(self, small_base):
        ext = small_base[::-1][:6] + 0.5
        s = run_benchmark(small_base, [6], 3, config=BenchConfig(repetitions=1, extension=ext,
                                                                 clock=fake_clock()))
        assert s.points[0].new_size == 66


class TestReport:
    def test_timing_report(self, tmp_path, timing):
        est = estimate_threshold(timing)
        emit_report(timing, est, tmp_path)
        lines = (tmp_path / "delta_table.csv").read_text().splitlines()
        assert lines[0] == "delta_percent,full_ms,incremental_ms"
        assert len(lines) == 7
        assert lines[1] == "10,172,47"
        plot = (tmp_path / "delta_plot.dat").read_text().splitlines()
        assert plot[0].startswith("#")
        assert plot[6].split() == ["60", "203", "218"]
        summary = (tmp_path / "summary.txt").read_text()
        assert "54.0%" in summary and "rerun" in summary
        assert (tmp_path / "fig_crossover_wall_time.png").stat().st_size > 0

    def test_single_point_no_crossover(self, tmp_path):
        s = series_from([10], [100], [5])
        emit_report(s, estimate_threshold(s), tmp_path, figures=False)
        assert "no crossover observed in range" in (tmp_path / "summary.txt").read_text()

    def test_regenerated_report_is_byte_identical(self, tmp_path, small_base):
        s = run_benchmark(small_base, [6, 12], 3, config=BenchConfig(repetitions=1,
                                                                     clock=fake_clock()))
        ests = [estimate_threshold(s, b) for b in Basis]
        a = emit_report(s, ests, tmp_path / "a")
        b = emit_report(s, ests, tmp_path / "b")
        assert [p.name for p in a] == [p.name for p in b]
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_load_replay():
    s = load_replay(DATA / "timing_replay.csv")
    assert s.deltas == [10, 20, 30, 40, 50, 60]
    assert [p.full_cost.wall_time_ms for p in s.points] == TIMING_FULL
    assert s.points[0].new_size == 1100


def test_replay_unreachable_percent(tmp_path):
    (tmp_path / "r.csv").write_text("delta_percent,full_ms,incremental_ms\n10.05,1,1\n")
    with pytest.raises(BenchError, match="not reachable"):
        load_replay(tmp_path / "r.csv", base_size=100)


def test_advice():
    assert "keep using" in advice(10.0, 54.0)
    assert "rerun" in advice(60.0, 54.0)
    assert "no threshold" in advice(60.0, None)
