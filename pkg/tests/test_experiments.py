import json
import math

import numpy as np
import pytest

from licspulse import (
    ControlGrid,
    DetuningMode,
    SystemConfig,
    SweepResult,
    gaussian_baseline_search,
    gaussian_grid,
    optimal_duration_sweep,
    r_sweep,
    robustness_scan,
    saturation_limit,
    sincos_efficiency_analytic,
    sincos_grid,
    sincos_sweep,
    smooth_controls,
)
from licspulse.experiments import (
    benchmark_table,
    embed_zero_padded,
    fano_sweep,
    format_table,
    table_to_csv,
    write_sweep,
)
from licspulse.propagator import efficiency_of


class TestSweepResult:
    def test_validation(self):
        with pytest.raises(ValueError):
            SweepResult("x", [1.0, 1.0], [0.5, 0.5])
        with pytest.raises(ValueError):
            SweepResult("x", [1.0, 2.0], [0.5, 1.5])
        with pytest.raises(ValueError):
            SweepResult("x", [1.0, 2.0], [0.5])

    def test_best_point(self):
        res = SweepResult("at", [1.0, 2.0, 3.0], [0.2, 0.9, 0.4])
        assert res.best_index == 1
        assert res.best_axis == 2.0
        assert res.best_value == 0.9

    def test_csv_and_manifest(self, tmp_path):
        res = SweepResult(
            "at", [1.0, 2.0], [0.2, 0.3],
            [{"n_intervals": 10}, {"n_intervals": 10}],
        )
        csv_path, manifest_path = write_sweep(
            res, tmp_path, "demo", config=SystemConfig(), seed=7,
            parameters={"note": "test"},
        )
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "at,efficiency,n_intervals"
        assert len(lines) == 3
        manifest = json.loads(manifest_path.read_text())
        assert manifest["tool"] == "licspulse"
        assert manifest["seed"] == 7
        assert manifest["config"]["q"] == -6.0


class TestGaussianBaseline:
    def test_matches_bruteforce_on_small_grid(self):
        cfg = SystemConfig(q=-6.0, R=0.25)
        widths = [0.3, 0.5, 1.0]
        ratios = [0.4, 0.6]
        best = gaussian_baseline_search(cfg, widths, ratios)
        # oracle: direct propagation of each candidate
        brute = max(
            (efficiency_of(cfg, gaussian_grid(w, r * w, 600)), w, r * w)
            for w in widths
            for r in ratios
        )
        assert best.efficiency == pytest.approx(brute[0], abs=2e-4)
        assert best.width == brute[1]
        assert best.delay == pytest.approx(brute[2])

    def test_deterministic(self):
        cfg = SystemConfig(q=-6.0, R=1.0)
        a = gaussian_baseline_search(cfg, [0.3, 0.4], [0.3, 0.5])
        b = gaussian_baseline_search(cfg, [0.3, 0.4], [0.3, 0.5])
        assert a == b

    def test_tie_breaks_toward_smaller_width_then_delay(self, monkeypatch):
        import licspulse.experiments as exp

        cfg = SystemConfig()
        monkeypatch.setattr(
            exp,
            "efficiencies_batch",
            lambda config, u1, u2, dt, substeps=4: np.full(u1.shape[0], 0.5),
        )
        best = exp.gaussian_baseline_search(cfg, [0.2, 0.4], [0.1, 0.3])
        assert best.width == 0.2
        assert best.delay == pytest.approx(0.02)


class TestSincosSweep:
    def test_matches_analytic_for_lossless_case(self):
        cfg = SystemConfig(q=-6.0, R=0.0)
        ats = np.array([0.5, 1.0, 2.0, 4.0])
        res = sincos_sweep(cfg, ats, min_intervals=2000)
        expected = [sincos_efficiency_analytic(-6.0, at) for at in ats]
        np.testing.assert_allclose(res.efficiencies, expected, atol=1e-6)

    def test_monotone_toward_unity_when_lossless(self):
        cfg = SystemConfig(q=-6.0, R=0.0)
        res = sincos_sweep(cfg, np.arange(0.5, 12.1, 0.5))
        assert np.all(np.diff(res.efficiencies) > 0)

    def test_finite_maximum_with_losses(self, resonant_quarter):
        res = sincos_sweep(resonant_quarter, np.round(np.arange(0.5, 6.01, 0.05), 10))
        assert res.best_value == pytest.approx(0.6945, abs=0.003)
        assert res.best_axis == pytest.approx(1.9, abs=0.15)

    def test_rejects_bad_grids(self, resonant_quarter):
        with pytest.raises(ValueError):
            sincos_sweep(resonant_quarter, [2.0, 1.0])
        with pytest.raises(ValueError):
            sincos_sweep(resonant_quarter, [-1.0, 1.0])


class TestEmbedding:
    def test_exact_when_intervals_align(self, rng):
        grid = ControlGrid(2.0, rng.uniform(0, 1, 20), rng.uniform(0, 1, 20))
        longer = embed_zero_padded(grid, 3.0, 30)
        np.testing.assert_array_equal(longer.u1[:20], grid.u1)
        np.testing.assert_array_equal(longer.u2[:20], grid.u2)
        np.testing.assert_array_equal(longer.u1[20:], np.zeros(10))
        # identical efficiency: appended zero controls freeze the state
        cfg = SystemConfig(q=-6.0, R=0.25)
        assert efficiency_of(cfg, longer) == pytest.approx(
            efficiency_of(cfg, grid), abs=1e-15
        )

    def test_shrinking_rejected(self):
        grid = ControlGrid(2.0, [0.5, 0.5], [0.5, 0.5])
        with pytest.raises(ValueError):
            embed_zero_padded(grid, 1.0, 10)


class TestOptimalDurationSweep:
    def test_monotone_and_annotated(self, resonant_quarter):
        res = optimal_duration_sweep(
            resonant_quarter, [0.5, 1.0, 1.5, 2.0], max_iter=250
        )
        assert np.all(np.diff(res.efficiencies) >= -1e-12)
        assert all("start_label" in m and "iterations" in m for m in res.metadata)

    def test_tiny_duration_gives_tiny_efficiency(self, resonant_quarter):
        res = optimal_duration_sweep(resonant_quarter, [0.01], max_iter=100)
        assert res.efficiencies[0] < 0.01


class TestSaturation:
    def test_cap_hit_while_rising_reports_unsaturated(self):
        # the lossless resonant case keeps gaining well past small caps
        cfg = SystemConfig(q=-6.0, R=0.0, detuning_mode=DetuningMode.RESONANT)
        res = saturation_limit(cfg, at_cap=5.0, max_iter=400)
        assert not res.saturated
        assert res.at_reached == 5.0
        assert np.all(np.diff(res.efficiencies) > 1e-4)

    def test_plateau_for_strong_incoherence(self):
        # Table-style benchmark: dynamic Stark, R=1.  One-sided bound: the
        # adjoint optimizer may exceed the published plateau.
        cfg = SystemConfig(q=-6.0, R=1.0, detuning_mode=DetuningMode.DYNAMIC_STARK)
        res = saturation_limit(cfg, max_iter=600)
        assert res.saturated
        assert res.efficiency >= 0.4207 - 0.005
        assert np.all(np.diff(res.efficiencies) >= -1e-12)


class TestRSweep:
    def test_efficiency_decreases_with_incoherence(self):
        res = r_sweep(
            DetuningMode.DYNAMIC_STARK,
            [1.0 / 16.0, 0.25, 1.0],
            at_cap=4.0,
            max_iter=400,
        )
        assert np.all(np.diff(res.efficiencies) < 0)
        assert all("at_reached" in m and "saturated" in m for m in res.metadata)

    def test_matches_benchmark_plateaus(self):
        # resonant R = 1/4 and 1 saturate quickly; one-sided as above
        res = r_sweep(
            DetuningMode.RESONANT, [0.25, 1.0], at_cap=8.0, max_iter=600
        )
        assert res.efficiencies[0] >= 0.7528 - 0.005
        assert res.efficiencies[1] >= 0.5691 - 0.005

    def test_negative_r_rejected(self):
        with pytest.raises(ValueError):
            r_sweep(DetuningMode.RESONANT, [-0.5, 0.5])


class TestFanoSweep:
    def test_single_point_matches_benchmark(self):
        cfg = SystemConfig(q=-6.0, R=1.0, detuning_mode=DetuningMode.DYNAMIC_STARK)
        res = fano_sweep(cfg, [-6.0], at_cap=4.0, max_iter=400)
        assert res.efficiencies[0] >= 0.4207 - 0.005

    def test_unsorted_grid_rejected(self):
        cfg = SystemConfig()
        with pytest.raises(ValueError):
            fano_sweep(cfg, [-2.0, -6.0])


class TestSmoothing:
    def test_constant_grid_unchanged(self):
        grid = ControlGrid(2.0, np.full(50, 0.6), np.full(50, 0.3))
        sm = smooth_controls(grid, 10)
        np.testing.assert_allclose(sm.u1, grid.u1, atol=1e-12)
        np.testing.assert_allclose(sm.u2, grid.u2, atol=1e-12)

    def test_linear_ramp_reproduced(self):
        # a natural cubic spline through collinear points is the line
        t = np.linspace(0, 1, 60)
        grid = ControlGrid(1.0, 0.8 * t, 0.8 * (1 - t))
        sm = smooth_controls(grid, 12)
        np.testing.assert_allclose(sm.u1, grid.u1, atol=1e-10)
        np.testing.assert_allclose(sm.u2, grid.u2, atol=1e-10)

    def test_clamps_to_box(self):
        u = np.r_[np.zeros(20), np.ones(3), np.zeros(20)]
        grid = ControlGrid(1.0, u, u)
        sm = smooth_controls(grid, 4, u_max=1.0)
        assert sm.u1.min() >= 0.0
        assert sm.u1.max() <= 1.0

    def test_bad_inputs_rejected(self):
        grid = ControlGrid(1.0, [0.5, 0.5], [0.5, 0.5])
        with pytest.raises(ValueError):
            smooth_controls(grid, 1)
        with pytest.raises(ValueError):
            smooth_controls(ControlGrid(1.0, [0.5], [0.5]), 2)


class TestRobustness:
    def test_alpha_one_is_identity(self, resonant_quarter):
        grid = sincos_grid(1.9, 100)
        ref = efficiency_of(resonant_quarter, grid)
        res = robustness_scan(resonant_quarter, grid, [1.0], baseline=0.7)
        assert res.efficiencies[0] == ref

    def test_alpha_zero_kills_transfer(self, resonant_quarter):
        grid = sincos_grid(1.9, 100)
        res = robustness_scan(resonant_quarter, grid, [0.0, 1.0], baseline=0.7)
        assert res.efficiencies[0] == 0.0

    def test_negative_alpha_rejected(self, resonant_quarter):
        grid = sincos_grid(1.0, 10)
        with pytest.raises(ValueError):
            robustness_scan(resonant_quarter, grid, [-0.5, 1.0], baseline=0.7)

    def test_equivalent_to_time_rescaling(self, stark_sixteenth):
        # scaling all widths by alpha equals running the undistorted pulse
        # for duration alpha * T with matched steps
        grid = sincos_grid(1.3, 120)
        for alpha in (0.64, 1.44):
            scan = robustness_scan(stark_sixteenth, grid, [alpha], baseline=0.5)
            stretched = ControlGrid(alpha * grid.T, grid.u1, grid.u2)
            assert scan.efficiencies[0] == pytest.approx(
                efficiency_of(stark_sixteenth, stretched), abs=1e-10
            )

    def test_baseline_metadata_column(self, resonant_quarter):
        grid = sincos_grid(1.9, 50)
        res = robustness_scan(resonant_quarter, grid, [0.5, 1.0], baseline=0.71)
        assert all(m["baseline"] == 0.71 for m in res.metadata)


class TestBenchmarkTable:
    def test_small_table_and_formatting(self, tmp_path):
        rows = benchmark_table(
            r_values=(0.25,),
            modes=(DetuningMode.RESONANT,),
            methods=("sincos",),
            sincos_at_grid=np.round(np.arange(0.5, 4.01, 0.1), 10),
        )
        assert len(rows) == 1
        assert rows[0]["sincos"] == pytest.approx(0.6945, abs=0.005)
        text = format_table(rows)
        assert "resonant" in text
        assert "0.69" in text
        table_to_csv(rows, tmp_path / "t.csv")
        header = (tmp_path / "t.csv").read_text().splitlines()[0]
        assert header.startswith("mode,R,gaussian")

    def test_cell_failures_are_isolated(self, monkeypatch):
        import licspulse.experiments as exp

        def boom(*args, **kwargs):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(exp, "gaussian_baseline_search", boom)
        rows = exp.benchmark_table(
            r_values=(0.25,),
            modes=(DetuningMode.RESONANT,),
            methods=("gaussian", "sincos"),
            sincos_at_grid=np.round(np.arange(1.0, 3.01, 0.25), 10),
        )
        assert "gaussian" in rows[0]["errors"]
        assert rows[0]["sincos"] > 0.5
