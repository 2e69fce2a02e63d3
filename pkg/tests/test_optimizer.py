import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from licspulse import (
    ControlGrid,
    DetuningMode,
    SystemConfig,
    detect_structure,
    gradient,
    optimize,
    propagate,
    sincos_grid,
    standard_starts,
)
from licspulse.optimizer import (
    BANG_MAX,
    BANG_MIN,
    INTERIOR,
    _objective,
    adjoint_states,
    gradient_and_value,
)
from licspulse.propagator import system_matrices

from conftest import random_config


def finite_difference_gradient(cfg, grid, eps=1e-6, substeps=4):
    n = grid.n_intervals
    u = np.concatenate([grid.u1, grid.u2])
    g = np.zeros_like(u)
    for i in range(u.size):
        up = u.copy()
        up[i] += eps
        dn = u.copy()
        dn[i] -= eps
        g[i] = (
            _objective(cfg, grid.T, n, up, substeps)
            - _objective(cfg, grid.T, n, dn, substeps)
        ) / (2 * eps)
    return g[:n], g[n:]


class TestGradient:
    def test_matches_finite_differences_on_random_grids(self, rng):
        worst = 0.0
        for _ in range(20):
            cfg = random_config(rng)
            n = int(rng.integers(3, 50))
            grid = ControlGrid(
                float(rng.uniform(0.3, 4.0)),
                rng.uniform(0, 1, n),
                rng.uniform(0, 1, n),
            )
            g1, g2 = gradient(cfg, grid)
            f1, f2 = finite_difference_gradient(cfg, grid)
            scale = max(np.abs(np.r_[f1, f2]).max(), 1e-12)
            err = max(np.abs(g1 - f1).max(), np.abs(g2 - f2).max()) / scale
            worst = max(worst, err)
        assert worst < 1e-5

    def test_zero_controls_give_zero_gradient(self):
        # with no fields the state never acquires excited amplitude, so
        # first-order variations of either control cannot either
        cfg = SystemConfig(q=-6.0, R=0.25)
        grid = ControlGrid(2.0, np.zeros(20), np.zeros(20))
        g1, g2 = gradient(cfg, grid)
        np.testing.assert_array_equal(g1, np.zeros(20))
        np.testing.assert_array_equal(g2, np.zeros(20))
        f1, f2 = finite_difference_gradient(cfg, grid)
        assert np.abs(f1).max() < 1e-9
        assert np.abs(f2).max() < 1e-9

    def test_terminal_costate_values(self, resonant_quarter):
        grid = sincos_grid(1.9, 40)
        lam = adjoint_states(resonant_quarter, grid)
        final = propagate(resonant_quarter, grid).final_state
        np.testing.assert_array_equal(
            lam[-1], [0.0, 0.0, 2.0 * final.x3, 2.0 * final.x4]
        )

    def test_costate_solves_continuous_adjoint(self, resonant_quarter):
        # documentation cross-check: the transposed-RK4 costate tracks the
        # continuous equation lam' = -M(t)^T lam integrated backward
        grid = sincos_grid(1.5, 150)
        lam = adjoint_states(resonant_quarter, grid)

        def rhs(t, y):
            k = min(int(t / grid.dt), grid.n_intervals - 1)
            m = system_matrices(resonant_quarter, grid.u1[k], grid.u2[k])
            return -m.T @ y

        sol = solve_ivp(
            rhs,
            (grid.T, 0.0),
            lam[-1],
            rtol=1e-10,
            atol=1e-12,
            max_step=grid.dt,
        )
        np.testing.assert_allclose(sol.y[:, -1], lam[0], atol=1e-6)

    def test_gradient_and_value_consistent(self, stark_sixteenth):
        grid = sincos_grid(0.9, 30)
        value, g1, g2 = gradient_and_value(stark_sixteenth, grid)
        assert value == pytest.approx(
            propagate(stark_sixteenth, grid).efficiency, abs=1e-14
        )
        gg1, gg2 = gradient(stark_sixteenth, grid)
        np.testing.assert_array_equal(g1, gg1)
        np.testing.assert_array_equal(g2, gg2)


class TestOptimize:
    def test_zero_iteration_budget_rejected(self, resonant_quarter):
        with pytest.raises(ValueError):
            optimize(resonant_quarter, 1.0, 10, max_iter=0)

    def test_nonpositive_duration_rejected(self, resonant_quarter):
        with pytest.raises(ValueError):
            optimize(resonant_quarter, 0.0, 10)

    def test_no_starts_rejected(self, resonant_quarter):
        with pytest.raises(ValueError):
            optimize(resonant_quarter, 1.0, 10, [])

    def test_mismatched_start_rejected(self, resonant_quarter):
        with pytest.raises(ValueError):
            optimize(resonant_quarter, 1.0, 10, [sincos_grid(1.0, 20)])
        with pytest.raises(ValueError):
            optimize(resonant_quarter, 1.0, 10, [sincos_grid(2.0, 10)])

    def test_monotone_history_and_feasibility(self, resonant_quarter):
        report = optimize(resonant_quarter, 1.5, 40, max_iter=300)
        history = np.asarray(report.history)
        assert np.all(np.diff(history) >= 0)
        assert report.grid.u1.min() >= 0 and report.grid.u1.max() <= 1.0
        assert report.grid.u2.min() >= 0 and report.grid.u2.max() <= 1.0
        assert report.efficiency == history[-1]

    def test_never_below_best_start(self, resonant_quarter):
        starts = standard_starts(resonant_quarter, 1.5, 40)
        from licspulse.propagator import efficiency_of

        best_initial = max(efficiency_of(resonant_quarter, g) for _, g in starts)
        report = optimize(resonant_quarter, 1.5, 40, starts, max_iter=50)
        assert report.efficiency >= best_initial - 1e-15

    def test_converged_point_satisfies_first_order_optimality(self, stark_sixteenth):
        report = optimize(stark_sixteenth, 0.9, 60, max_iter=3000)
        assert report.converged
        assert report.projected_gradient_norm < 1e-6
        # projected gradient recomputed independently
        g1, g2 = gradient(stark_sixteenth, report.grid)
        u = np.concatenate([report.grid.u1, report.grid.u2])
        pg = np.clip(u + np.concatenate([g1, g2]), 0.0, 1.0) - u
        assert np.abs(pg).max() < 1e-6

    def test_single_interval_short_horizon_goes_bang(self):
        # very short horizons want both controls at the bound
        cfg = SystemConfig(q=-6.0, R=0.25)
        report = optimize(cfg, 0.05, 1, max_iter=500)
        assert report.grid.u1[0] == pytest.approx(1.0, abs=1e-6)
        assert report.grid.u2[0] == pytest.approx(1.0, abs=1e-6)

    def test_accepts_plain_grids_as_starts(self, resonant_quarter):
        report = optimize(
            resonant_quarter, 1.0, 20, [sincos_grid(1.0, 20)], max_iter=50
        )
        assert report.start_label == "start_0"

    def test_report_round_trip(self, tmp_path, resonant_quarter):
        report = optimize(resonant_quarter, 1.0, 15, max_iter=40)
        path = tmp_path / "report.json"
        report.save_json(path)
        import json

        data = json.loads(path.read_text())
        assert data["efficiency"] == report.efficiency
        assert data["controls"]["n_intervals"] == 15
        assert data["start_label"] == report.start_label

    def test_duration_monotonicity_small_ladder(self, resonant_quarter):
        from licspulse.experiments import embed_zero_padded

        durations = [0.5, 1.0, 1.5, 2.0]
        prev = None
        effs = []
        for at in durations:
            n = int(round(at / 0.05))
            starts = standard_starts(resonant_quarter, at, n)
            if prev is not None:
                starts = [("warm", embed_zero_padded(prev, at, n))] + starts
            report = optimize(resonant_quarter, at, n, starts, max_iter=250)
            prev = report.grid
            effs.append(report.efficiency)
        assert np.all(np.diff(effs) >= -1e-12)


class TestStandardStarts:
    def test_labels_and_shapes(self, resonant_quarter):
        starts = standard_starts(resonant_quarter, 2.0, 50)
        labels = [label for label, _ in starts]
        assert labels == ["sincos", "gaussian", "all_max", "ramp"]
        for _, grid in starts:
            assert grid.n_intervals == 50
            assert grid.T == 2.0
            grid.check_bounds(1.0)

    def test_ramp_is_counterintuitive(self, resonant_quarter):
        starts = dict(standard_starts(resonant_quarter, 2.0, 50))
        ramp = starts["ramp"]
        assert ramp.u2[0] > ramp.u2[-1]   # Stokes decreasing
        assert ramp.u1[0] < ramp.u1[-1]   # pump increasing


class TestDetectStructure:
    def test_all_max_is_single_bang(self):
        grid = ControlGrid(1.0, np.ones(30), np.ones(30))
        segs = detect_structure(grid)
        for control in ("u1", "u2"):
            assert len(segs[control]) == 1
            assert segs[control][0].label == BANG_MAX
            assert segs[control][0].n_intervals == 30

    def test_all_zero_is_single_bang_min(self):
        grid = ControlGrid(1.0, np.zeros(30), np.zeros(30))
        segs = detect_structure(grid)
        for control in ("u1", "u2"):
            assert [s.label for s in segs[control]] == [BANG_MIN]

    def test_segment_times(self):
        u1 = np.r_[np.ones(10), 0.5 * np.ones(10)]
        grid = ControlGrid(2.0, u1, u1[::-1])
        segs = detect_structure(grid)
        assert [s.label for s in segs["u1"]] == [BANG_MAX, INTERIOR]
        assert segs["u1"][0].t_stop == pytest.approx(1.0)
        assert [s.label for s in segs["u2"]] == [INTERIOR, BANG_MAX]

    def test_tolerance_scales_with_bound(self):
        grid = ControlGrid(1.0, [1.998], [0.001])
        segs = detect_structure(grid, tolerance=1e-3, u_max=2.0)
        assert segs["u1"][0].label == BANG_MAX
        assert segs["u2"][0].label == BANG_MIN
