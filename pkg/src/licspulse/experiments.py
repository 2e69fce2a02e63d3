"""Study harness: baseline searches, parameter sweeps, saturation limits,
pulse smoothing, and distortion robustness.

Every sweep result can be written as a plot-ready CSV next to a JSON
manifest (config snapshot, seed, tool version), so runs are reproducible
byte for byte.  Sweep points that do not share a warm-start chain are
independent jobs and can be fanned out over a process pool.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import __version__
from .model import ControlGrid, DetuningMode, SystemConfig, gaussian_window
from .optimizer import optimize, standard_starts
from .propagator import efficiencies_batch, efficiency_of, propagate

__all__ = [
    "GaussianBaseline",
    "SaturationResult",
    "SweepResult",
    "benchmark_table",
    "embed_zero_padded",
    "fano_sweep",
    "format_table",
    "gaussian_baseline_search",
    "optimal_duration_sweep",
    "r_sweep",
    "robustness_scan",
    "saturation_limit",
    "sincos_sweep",
    "smooth_controls",
    "table_to_csv",
    "write_sweep",
]

# Default search grids for the Gaussian-pair baseline: pulse width scale
# A*T_g in [0.1, 20] step 0.1 and delay/width ratio in [0, 1.5] step 0.05.
DEFAULT_BASELINE_WIDTHS = np.round(np.arange(0.1, 20.0001, 0.1), 10)
DEFAULT_BASELINE_RATIOS = np.round(np.arange(0.0, 1.5001, 0.05), 10)

# Distortion sweep default: alpha in [0, 2] step 0.05, bracketing the
# undistorted point symmetrically.
DEFAULT_ALPHA_GRID = np.round(np.arange(0.0, 2.0001, 0.05), 10)

_EFF_SLACK = 1e-9


@dataclass
class SweepResult:
    """One-axis study result: efficiencies plus per-point metadata."""

    axis_name: str
    axis_values: np.ndarray
    efficiencies: np.ndarray
    metadata: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.axis_values = np.asarray(self.axis_values, dtype=float)
        self.efficiencies = np.asarray(self.efficiencies, dtype=float)
        if self.axis_values.ndim != 1 or self.axis_values.size == 0:
            raise ValueError("axis_values must be a non-empty 1-D array")
        if np.any(np.diff(self.axis_values) <= 0):
            raise ValueError("axis_values must be strictly increasing")
        if self.efficiencies.shape != self.axis_values.shape:
            raise ValueError("efficiencies must match axis_values in shape")
        if (
            self.efficiencies.min() < -_EFF_SLACK
            or self.efficiencies.max() > 1.0 + _EFF_SLACK
        ):
            raise ValueError("efficiencies must lie in [0, 1]")
        if not self.metadata:
            self.metadata = [{} for _ in range(self.axis_values.size)]
        if len(self.metadata) != self.axis_values.size:
            raise ValueError("metadata must have one entry per axis value")

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.efficiencies))

    @property
    def best_value(self) -> float:
        return float(self.efficiencies[self.best_index])

    @property
    def best_axis(self) -> float:
        return float(self.axis_values[self.best_index])

    def to_csv(self, path) -> None:
        keys = sorted({k for meta in self.metadata for k in meta})
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([self.axis_name, "efficiency", *keys])
            for i, value in enumerate(self.axis_values):
                row = [repr(float(value)), repr(float(self.efficiencies[i]))]
                for key in keys:
                    cell = self.metadata[i].get(key, "")
                    row.append(repr(float(cell)) if isinstance(cell, float) else str(cell))
                writer.writerow(row)


def write_sweep(
    result: SweepResult,
    outdir,
    name: str,
    *,
    config: Optional[SystemConfig] = None,
    seed: int = 0,
    parameters: Optional[dict] = None,
) -> tuple[Path, Path]:
    """Write ``name.csv`` and ``name.manifest.json`` under ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"{name}.csv"
    manifest_path = outdir / f"{name}.manifest.json"
    result.to_csv(csv_path)
    manifest = {
        "tool": "licspulse",
        "version": __version__,
        "axis": result.axis_name,
        "n_points": int(result.axis_values.size),
        "seed": int(seed),
        "config": config.to_json_dict() if config is not None else None,
        "parameters": parameters or {},
    }
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return csv_path, manifest_path


# -- Gaussian-pair baseline ---------------------------------------------------

@dataclass(frozen=True)
class GaussianBaseline:
    """Best Gaussian-pair transfer found by the grid search."""

    efficiency: float
    width: float
    delay: float


def _bucketed_gaussian_batches(widths, ratios, dt_target, max_chunk):
    """Group (width, ratio) combos by padded interval count so each batch
    shares one array shape; trailing zero controls freeze the state."""
    items = []
    for width in widths:
        for ratio in ratios:
            window = gaussian_window(width, ratio * width)
            n = max(64, int(math.ceil(window / dt_target)))
            items.append((width, ratio, window, n))
    buckets: dict[int, list] = {}
    for item in items:
        size = 1 << int(math.ceil(math.log2(item[3])))
        buckets.setdefault(size, []).append(item)
    for size in sorted(buckets):
        group = buckets[size]
        for lo in range(0, len(group), max_chunk):
            yield size, group[lo:lo + max_chunk]


def gaussian_baseline_search(
    config: SystemConfig,
    widths: Optional[Sequence[float]] = None,
    delay_ratios: Optional[Sequence[float]] = None,
    *,
    substeps: int = 4,
    dt_target: float = 0.05,
    max_chunk: int = 1024,
) -> GaussianBaseline:
    """Grid search over Gaussian-pair widths and delays.

    Propagates every (width, delay) combination on its own simulation
    window and returns the best final efficiency.  Ties break toward the
    smallest width, then the smallest delay, by visiting the grid in that
    order and keeping strict improvements only; repeated runs therefore
    return identical results.
    """
    widths = np.asarray(
        DEFAULT_BASELINE_WIDTHS if widths is None else widths, dtype=float
    )
    ratios = np.asarray(
        DEFAULT_BASELINE_RATIOS if delay_ratios is None else delay_ratios,
        dtype=float,
    )
    root = config.u_max
    results: dict[tuple[float, float], float] = {}
    for size, chunk in _bucketed_gaussian_batches(widths, ratios, dt_target, max_chunk):
        batch = len(chunk)
        u1 = np.zeros((batch, size))
        u2 = np.zeros((batch, size))
        dts = np.empty(batch)
        for i, (width, ratio, window, n) in enumerate(chunk):
            dt = window / n
            mids = (np.arange(n) + 0.5) * dt - 0.5 * window
            delay = ratio * width
            u1[i, :n] = root * np.exp(-0.5 * (((mids - delay) / width) ** 2))
            u2[i, :n] = root * np.exp(-0.5 * (((mids + delay) / width) ** 2))
            dts[i] = dt
        effs = efficiencies_batch(config, u1, u2, dts, substeps=substeps)
        for (width, ratio, _, _), eff in zip(chunk, effs):
            results[(float(width), float(ratio))] = float(eff)

    best = GaussianBaseline(-1.0, math.nan, math.nan)
    for width in widths:
        for ratio in ratios:
            eff = results[(float(width), float(ratio))]
            if eff > best.efficiency:
                best = GaussianBaseline(eff, float(width), float(ratio * width))
    return best


# -- protocol sweeps ----------------------------------------------------------

def sincos_sweep(
    config: SystemConfig,
    at_grid: Sequence[float],
    *,
    substeps: int = 4,
    dt_target: float = 0.05,
    min_intervals: int = 200,
) -> SweepResult:
    """Transfer efficiency of the sin-cos protocol over pulse durations."""
    ats = np.asarray(at_grid, dtype=float)
    if ats.ndim != 1 or ats.size == 0 or np.any(ats <= 0):
        raise ValueError("at_grid must contain positive durations")
    if np.any(np.diff(ats) <= 0):
        raise ValueError("at_grid must be strictly increasing")
    n = max(min_intervals, int(math.ceil(ats.max() / dt_target)))
    mids = (np.arange(n) + 0.5)[None, :] * (ats[:, None] / n)
    phase = 0.5 * np.pi * mids / ats[:, None]
    root = config.u_max
    effs = efficiencies_batch(
        config, root * np.sin(phase), root * np.cos(phase), ats / n,
        substeps=substeps,
    )
    return SweepResult("at", ats, effs, [{"n_intervals": n} for _ in ats])


def embed_zero_padded(grid: ControlGrid, duration: float, n_intervals: int) -> ControlGrid:
    """Re-express a control grid on a longer horizon, padded with zeros.

    The new grid holds the old control value at each new midpoint that
    falls inside the old horizon and zero afterwards; when the interval
    widths match, this reproduces the old controls exactly, and trailing
    zero controls leave the state untouched.
    """
    if duration < grid.T * (1 - 1e-12):
        raise ValueError("can only embed into an equal or longer horizon")
    dt_new = duration / n_intervals
    mids = (np.arange(n_intervals) + 0.5) * dt_new
    idx = np.minimum((mids / grid.dt).astype(int), grid.n_intervals - 1)
    inside = mids < grid.T
    u1 = np.where(inside, grid.u1[idx], 0.0)
    u2 = np.where(inside, grid.u2[idx], 0.0)
    return ControlGrid(duration, u1, u2)


def _aligned_interval_counts(ats: np.ndarray, dt_target: float) -> Optional[list[int]]:
    """Interval counts sharing one width so consecutive grids nest exactly.

    Picks the largest width w <= dt_target that divides the first
    duration, then requires every duration to be an integer multiple of
    w.  Returns None when no such width exists."""
    t0 = ats[0]
    k0 = max(4, int(math.ceil(t0 / dt_target - 1e-9)))
    for k in range(k0, k0 + 64):
        w = t0 / k
        counts = ats / w
        if np.all(np.abs(counts - np.round(counts)) < 1e-9):
            return [int(round(c)) for c in counts]
    return None


def optimal_duration_sweep(
    config: SystemConfig,
    at_grid: Sequence[float],
    *,
    substeps: int = 4,
    tol: float = 1e-6,
    max_iter: int = 1000,
    dt_target: float = 0.1,
) -> SweepResult:
    """Optimized efficiency as a function of the pulse duration.

    Each duration is optimized from the standard start set plus the
    previous duration's solution padded with zeros.  Appending zero
    controls never changes the reached state, so whenever the grids nest
    the warm start reproduces the previous efficiency exactly and the
    sweep is non-decreasing by construction.
    """
    ats = np.asarray(at_grid, dtype=float)
    if ats.ndim != 1 or ats.size == 0 or np.any(ats <= 0):
        raise ValueError("at_grid must contain positive durations")
    if np.any(np.diff(ats) <= 0):
        raise ValueError("at_grid must be strictly increasing")
    counts = _aligned_interval_counts(ats, dt_target)
    if counts is None:
        counts = [max(40, int(math.ceil(at / dt_target))) for at in ats]

    effs = []
    metadata = []
    prev: Optional[ControlGrid] = None
    for at, n in zip(ats, counts):
        starts = standard_starts(config, float(at), n, substeps=substeps)
        if prev is not None:
            starts = [("warm", embed_zero_padded(prev, float(at), n))] + starts
        report = optimize(
            config, float(at), n, starts,
            substeps=substeps, tol=tol, max_iter=max_iter,
        )
        prev = report.grid
        effs.append(report.efficiency)
        metadata.append(
            {
                "n_intervals": n,
                "iterations": report.iterations,
                "start_label": report.start_label,
            }
        )
    return SweepResult("at", ats, np.array(effs), metadata)


# -- saturation ---------------------------------------------------------------

@dataclass(frozen=True)
class SaturationResult:
    """Plateau of the optimized efficiency for growing durations.

    ``saturated`` is False when the duration cap was hit while the
    efficiency was still gaining more than the threshold per step."""

    efficiency: float
    at_reached: float
    saturated: bool
    at_values: np.ndarray
    efficiencies: np.ndarray


def saturation_limit(
    config: SystemConfig,
    *,
    at_start: float = 1.0,
    at_step: float = 1.0,
    at_cap: float = 50.0,
    gain_tol: float = 1e-4,
    substeps: int = 4,
    tol: float = 1e-6,
    max_iter: int = 1000,
    intervals_per_unit: float = 10.0,
    min_intervals: int = 100,
) -> SaturationResult:
    """Extend a warm-started duration ladder until the efficiency plateaus.

    Stops once the gain per duration step drops below ``gain_tol`` or the
    duration cap is reached.  The first rung uses the full standard start
    set; later rungs reuse the previous solution (zero-padded) plus the
    cheap sin-cos and all-max starts, which is enough because the warm
    start already sits on the optimal branch.
    """
    ats: list[float] = []
    effs: list[float] = []
    prev: Optional[ControlGrid] = None
    at = float(at_start)
    saturated = False
    while True:
        n = max(min_intervals, int(round(at * intervals_per_unit)))
        if prev is None:
            starts = standard_starts(config, at, n, substeps=substeps)
        else:
            full = np.full(n, config.u_max)
            starts = [
                ("warm", embed_zero_padded(prev, at, n)),
                ("sincos", standard_starts(config, at, n, substeps=substeps)[0][1]),
                ("all_max", ControlGrid(at, full, full)),
            ]
        report = optimize(
            config, at, n, starts, substeps=substeps, tol=tol, max_iter=max_iter
        )
        prev = report.grid
        gain = report.efficiency - effs[-1] if effs else math.inf
        ats.append(at)
        effs.append(report.efficiency)
        if gain < gain_tol:
            saturated = True
            break
        if at >= at_cap - 1e-9:
            break
        at = min(at + at_step, at_cap)
    return SaturationResult(
        efficiency=float(max(effs)),
        at_reached=float(ats[-1]),
        saturated=saturated,
        at_values=np.array(ats),
        efficiencies=np.array(effs),
    )


def _saturation_job(payload):
    config = SystemConfig.from_json_dict(payload["config"])
    result = saturation_limit(config, **payload["kwargs"])
    return result.efficiency, result.at_reached, result.saturated


def _run_saturation_points(configs: list[SystemConfig], jobs: int, kwargs: dict):
    payloads = [
        {"config": cfg.to_json_dict(), "kwargs": kwargs} for cfg in configs
    ]
    if jobs <= 1 or len(payloads) <= 1:
        return [_saturation_job(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=min(jobs, len(payloads))) as pool:
        return list(pool.map(_saturation_job, payloads))


def r_sweep(
    detuning_mode,
    r_grid: Sequence[float],
    *,
    q: float = -6.0,
    A: float = 1.0,
    jobs: int = 1,
    **saturation_kwargs,
) -> SweepResult:
    """Saturation efficiency as a function of the incoherence ratio R."""
    rs = np.asarray(r_grid, dtype=float)
    if rs.ndim != 1 or rs.size == 0 or np.any(rs < 0):
        raise ValueError("r_grid must contain values >= 0")
    if np.any(np.diff(rs) <= 0):
        raise ValueError("r_grid must be strictly increasing")
    mode = DetuningMode.coerce(detuning_mode)
    configs = [SystemConfig(q=q, R=float(r), detuning_mode=mode, A=A) for r in rs]
    points = _run_saturation_points(configs, jobs, saturation_kwargs)
    effs = [p[0] for p in points]
    metadata = [
        {"at_reached": p[1], "saturated": p[2]} for p in points
    ]
    return SweepResult("R", rs, np.array(effs), metadata)


def fano_sweep(
    config_base: SystemConfig,
    q_grid: Sequence[float],
    *,
    jobs: int = 1,
    **saturation_kwargs,
) -> SweepResult:
    """Saturation efficiency as a function of the Fano parameter q."""
    qs = np.asarray(q_grid, dtype=float)
    if qs.ndim != 1 or qs.size == 0:
        raise ValueError("q_grid must be non-empty")
    if np.any(np.diff(qs) <= 0):
        raise ValueError("q_grid must be strictly increasing")
    configs = [replace(config_base, q=float(q)) for q in qs]
    points = _run_saturation_points(configs, jobs, saturation_kwargs)
    effs = [p[0] for p in points]
    metadata = [
        {"at_reached": p[1], "saturated": p[2]} for p in points
    ]
    return SweepResult("q", qs, np.array(effs), metadata)


# -- smoothing and robustness -------------------------------------------------

def smooth_controls(
    grid: ControlGrid, undersample_factor: int = 20, u_max: float = 1.0
) -> ControlGrid:
    """Undersample a control grid and rebuild it with a cubic spline.

    Keeps every ``undersample_factor``-th sample plus the first and last,
    fits a natural cubic spline through the kept midpoints, re-evaluates
    it on the full grid, and clamps to the control box.  Removes the
    kinks of bang/interior switches at a very small cost in efficiency.
    """
    if undersample_factor < 2:
        raise ValueError("undersample factor must be at least 2")
    n = grid.n_intervals
    if n < 2:
        raise ValueError("grid too short to smooth")
    keep = np.unique(np.r_[np.arange(0, n, undersample_factor), n - 1])
    t = grid.midpoints()
    smoothed = []
    for u in (grid.u1, grid.u2):
        if keep.size < 2:
            smoothed.append(u.copy())
            continue
        spline = CubicSpline(t[keep], u[keep], bc_type="natural")
        smoothed.append(np.clip(spline(t), 0.0, u_max))
    return ControlGrid(grid.T, smoothed[0], smoothed[1])


def robustness_scan(
    config: SystemConfig,
    grid: ControlGrid,
    alpha_grid: Optional[Sequence[float]] = None,
    *,
    baseline: Optional[float] = None,
    substeps: int = 4,
) -> SweepResult:
    """Transfer efficiency of intensity-distorted pulses.

    The distortion parameter alpha scales every ionization width, i.e.
    the controls by sqrt(alpha); alpha > 1 may leave the control box, so
    bounds are not enforced here.  ``baseline`` is the undistorted
    Gaussian-pair reference level reported alongside each point; it is
    computed by :func:`gaussian_baseline_search` when not supplied.
    """
    alphas = np.asarray(
        DEFAULT_ALPHA_GRID if alpha_grid is None else alpha_grid, dtype=float
    )
    if alphas.ndim != 1 or alphas.size == 0:
        raise ValueError("alpha_grid must be non-empty")
    if np.any(alphas < 0):
        raise ValueError("distortion parameters must be >= 0")
    if np.any(np.diff(alphas) <= 0):
        raise ValueError("alpha_grid must be strictly increasing")
    if baseline is None:
        baseline = gaussian_baseline_search(config).efficiency
    effs = np.empty(alphas.size)
    for i, alpha in enumerate(alphas):
        effs[i] = efficiency_of(
            config,
            grid.scaled(math.sqrt(alpha)),
            substeps=substeps,
            enforce_bounds=False,
        )
    metadata = [{"baseline": float(baseline)} for _ in alphas]
    return SweepResult("alpha", alphas, effs, metadata)


# -- benchmark table ----------------------------------------------------------

DEFAULT_TABLE_R = (0.0, 1.0 / 16.0, 0.25, 1.0)


def benchmark_table(
    *,
    q: float = -6.0,
    r_values: Sequence[float] = DEFAULT_TABLE_R,
    modes: Sequence = (DetuningMode.RESONANT, DetuningMode.DYNAMIC_STARK),
    methods: Sequence[str] = ("gaussian", "sincos", "optimal"),
    sincos_at_grid: Optional[Sequence[float]] = None,
    gaussian_widths: Optional[Sequence[float]] = None,
    gaussian_ratios: Optional[Sequence[float]] = None,
    jobs: int = 1,
    **saturation_kwargs,
) -> list[dict]:
    """Maximum transfer efficiency for every (mode, R) cell and method.

    Runs the Gaussian-pair grid search, the sin-cos duration scan, and
    the optimizer saturation ladder per cell.  A failure in one cell is
    recorded under ``errors`` and the remaining cells still run.
    """
    methods = tuple(methods)
    if sincos_at_grid is None:
        sincos_at_grid = np.round(np.arange(0.05, 50.0001, 0.05), 10)
    rows: list[dict] = []
    optimal_jobs = []
    for mode in modes:
        mode = DetuningMode.coerce(mode)
        for r in r_values:
            config = SystemConfig(q=q, R=float(r), detuning_mode=mode)
            row: dict = {"mode": mode.value, "R": float(r), "errors": {}}
            if "gaussian" in methods:
                try:
                    base = gaussian_baseline_search(
                        config, gaussian_widths, gaussian_ratios
                    )
                    row["gaussian"] = base.efficiency
                    row["gaussian_width"] = base.width
                    row["gaussian_delay"] = base.delay
                except Exception as exc:  # per-cell isolation
                    row["errors"]["gaussian"] = str(exc)
            if "sincos" in methods:
                try:
                    sweep = sincos_sweep(config, sincos_at_grid)
                    row["sincos"] = sweep.best_value
                    row["sincos_at"] = sweep.best_axis
                except Exception as exc:
                    row["errors"]["sincos"] = str(exc)
            if "optimal" in methods:
                optimal_jobs.append((len(rows), config))
            rows.append(row)

    if optimal_jobs:
        configs = [cfg for _, cfg in optimal_jobs]
        try:
            points = _run_saturation_points(configs, jobs, saturation_kwargs)
        except Exception as exc:
            for index, _ in optimal_jobs:
                rows[index]["errors"]["optimal"] = str(exc)
        else:
            for (index, _), point in zip(optimal_jobs, points):
                rows[index]["optimal"] = point[0]
                rows[index]["optimal_at"] = point[1]
                rows[index]["optimal_saturated"] = point[2]
    return rows


def _cell_text(row: dict, method: str) -> str:
    if method in row.get("errors", {}):
        return "error"
    if method not in row:
        return "-"
    eff = row[method]
    if method == "gaussian":
        return f"{eff:.4f} (w={row['gaussian_width']:g}, d={row['gaussian_delay']:g})"
    if method == "sincos":
        return f"{eff:.4f} (AT={row['sincos_at']:g})"
    return f"{eff:.4f} (AT={row['optimal_at']:g})"


def format_table(rows: list[dict]) -> str:
    """Aligned text table, one block per detuning mode."""
    lines = []
    for mode in (DetuningMode.RESONANT, DetuningMode.DYNAMIC_STARK):
        block = [row for row in rows if row["mode"] == mode.value]
        if not block:
            continue
        lines.append(f"detuning mode: {mode.value}")
        header = f"{'R':>8s}  {'Gaussian':<28s}{'Sin-Cos':<22s}{'Optimal':<22s}"
        lines.append(header)
        lines.append("-" * len(header))
        for row in block:
            lines.append(
                f"{row['R']:>8.4f}  "
                f"{_cell_text(row, 'gaussian'):<28s}"
                f"{_cell_text(row, 'sincos'):<22s}"
                f"{_cell_text(row, 'optimal'):<22s}"
            )
        lines.append("")
    return "\n".join(lines)


def table_to_csv(rows: list[dict], path) -> None:
    columns = [
        "mode", "R",
        "gaussian", "gaussian_width", "gaussian_delay",
        "sincos", "sincos_at",
        "optimal", "optimal_at", "optimal_saturated",
        "errors",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            out = []
            for col in columns:
                value = row.get(col, "")
                if col == "errors":
                    value = json.dumps(value, sort_keys=True) if value else ""
                elif isinstance(value, float):
                    value = repr(value)
                out.append(value)
            writer.writerow(out)
