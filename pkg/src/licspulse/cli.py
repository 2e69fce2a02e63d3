"""Command-line front end: simulate / optimize / sweep / robustness /
table1 / smooth.

Configuration is a strict JSON file; unknown keys are rejected so a
manifest always describes exactly what ran.  Exit codes: 0 success,
1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    DEFAULT_ALPHA_GRID,
    benchmark_table,
    format_table,
    gaussian_baseline_search,
    optimal_duration_sweep,
    r_sweep,
    fano_sweep,
    robustness_scan,
    smooth_controls,
    table_to_csv,
    write_sweep,
)
from .model import ControlGrid, SystemConfig, gaussian_grid, sincos_grid
from .optimizer import optimize, standard_starts
from .propagator import NonFiniteStateError, efficiency_of, propagate

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


class ConfigError(Exception):
    """Invalid configuration input; maps to exit code 1."""


_TOP_KEYS = {"system", "protocol", "numerics", "output_dir", "seed"}
_SYSTEM_KEYS = {"q", "R", "detuning_mode", "A", "stark_profile"}
_PROTOCOL_KEYS = {"kind", "at", "width", "delay", "path"}
_NUMERICS_KEYS = {"n_intervals", "substeps", "tolerance", "max_iterations"}
_PROTOCOL_KINDS = {"gaussian", "sincos", "optimal", "file"}


@dataclass
class RunConfig:
    """Validated run configuration."""

    system: SystemConfig
    protocol: dict
    n_intervals: int = 200
    substeps: int = 4
    tolerance: float = 1e-6
    max_iterations: int = 5000
    output_dir: str = "out"
    seed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "system": self.system.to_json_dict(),
            "protocol": self.protocol,
            "numerics": {
                "n_intervals": self.n_intervals,
                "substeps": self.substeps,
                "tolerance": self.tolerance,
                "max_iterations": self.max_iterations,
            },
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}"
        )


def load_run_config(path) -> RunConfig:
    """Parse and strictly validate a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    _check_keys(data, _TOP_KEYS, "config")

    system_section = data.get("system", {})
    if not isinstance(system_section, dict):
        raise ConfigError("'system' must be an object")
    _check_keys(system_section, _SYSTEM_KEYS, "'system'")
    try:
        system = SystemConfig(**system_section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'system' section: {exc}") from exc

    protocol = data.get("protocol", {})
    if not isinstance(protocol, dict):
        raise ConfigError("'protocol' must be an object")
    _check_keys(protocol, _PROTOCOL_KEYS, "'protocol'")
    kind = protocol.get("kind")
    if kind not in _PROTOCOL_KINDS:
        raise ConfigError(
            f"'protocol.kind' must be one of {sorted(_PROTOCOL_KINDS)}, got {kind!r}"
        )
    needs = {
        "sincos": ("at",),
        "optimal": ("at",),
        "gaussian": ("width", "delay"),
        "file": ("path",),
    }[kind]
    for key in needs:
        if key not in protocol:
            raise ConfigError(f"protocol kind {kind!r} requires '{key}'")

    numerics = data.get("numerics", {})
    if not isinstance(numerics, dict):
        raise ConfigError("'numerics' must be an object")
    _check_keys(numerics, _NUMERICS_KEYS, "'numerics'")

    try:
        cfg = RunConfig(
            system=system,
            protocol=protocol,
            n_intervals=int(numerics.get("n_intervals", 200)),
            substeps=int(numerics.get("substeps", 4)),
            tolerance=float(numerics.get("tolerance", 1e-6)),
            max_iterations=int(numerics.get("max_iterations", 5000)),
            output_dir=str(data.get("output_dir", "out")),
            seed=int(data.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid numerics/output values: {exc}") from exc
    if cfg.n_intervals < 1 or cfg.substeps < 1 or cfg.max_iterations < 1:
        raise ConfigError("n_intervals, substeps and max_iterations must be >= 1")
    if cfg.tolerance <= 0:
        raise ConfigError("tolerance must be positive")
    return cfg


def _load_pulse_file(path, where: str = "pulse file") -> ControlGrid:
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            return ControlGrid.load_json(path)
        return ControlGrid.from_csv(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load {where} {path}: {exc}") from exc


def _build_grid(cfg: RunConfig) -> ControlGrid:
    """Control grid described by the protocol section (not 'optimal')."""
    proto = cfg.protocol
    kind = proto["kind"]
    try:
        if kind == "sincos":
            return sincos_grid(float(proto["at"]), cfg.n_intervals, scale=cfg.system.A)
        if kind == "gaussian":
            return gaussian_grid(
                float(proto["width"]),
                float(proto["delay"]),
                cfg.n_intervals,
                scale=cfg.system.A,
            )
        if kind == "file":
            return _load_pulse_file(proto["path"], "protocol pulse file")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid protocol parameters: {exc}") from exc
    raise ConfigError(f"protocol kind {kind!r} does not describe a fixed pulse")


def _outdir(cfg_dir: str, override) -> Path:
    out = Path(override) if override else Path(cfg_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, name: str, payload: dict) -> None:
    payload = {"tool": "licspulse", "version": __version__, **payload}
    (out / f"{name}.manifest.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n"
    )


def _parse_grid_spec(spec: str, name: str) -> np.ndarray:
    """'start:stop:step' (inclusive) or a comma-separated list."""
    try:
        if ":" in spec:
            parts = [float(p) for p in spec.split(":")]
            if len(parts) != 3:
                raise ValueError("expected start:stop:step")
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise ValueError("need step > 0 and stop >= start")
            count = int(round((stop - start) / step))
            values = np.round(start + step * np.arange(count + 1), 12)
            values = values[values <= stop + 1e-12]
        else:
            values = np.array([float(p) for p in spec.split(",") if p.strip()])
        if values.size == 0:
            raise ValueError("empty grid")
        return values
    except ValueError as exc:
        raise ConfigError(f"invalid {name} grid spec {spec!r}: {exc}") from exc


# -- subcommand handlers ------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config)
    out = _outdir(cfg.output_dir, args.out)
    if cfg.protocol["kind"] == "optimal":
        report = optimize(
            cfg.system,
            float(cfg.protocol["at"]),
            cfg.n_intervals,
            substeps=cfg.substeps,
            tol=cfg.tolerance,
            max_iter=cfg.max_iterations,
        )
        grid = report.grid
    else:
        grid = _build_grid(cfg)
    result = propagate(
        cfg.system, grid, record=True, substeps=cfg.substeps, enforce_bounds=False
    )
    result.write_csv(out / "trajectory.csv")
    _write_manifest(
        out, "trajectory", {"config": cfg.to_json_dict(), "seed": cfg.seed}
    )
    print(f"{result.efficiency:.6f}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = load_run_config(args.config)
    if "at" not in cfg.protocol:
        raise ConfigError("optimize requires a protocol with an 'at' duration")
    out = _outdir(cfg.output_dir, args.out)
    duration = float(cfg.protocol["at"])
    starts = standard_starts(cfg.system, duration, cfg.n_intervals, substeps=cfg.substeps)
    if cfg.protocol["kind"] == "file":
        starts = [("file", _build_grid(cfg))] + starts
    report = optimize(
        cfg.system,
        duration,
        cfg.n_intervals,
        starts,
        substeps=cfg.substeps,
        tol=cfg.tolerance,
        max_iter=cfg.max_iterations,
    )
    report.grid.to_csv(out / "optimal_controls.csv")
    report.save_json(out / "optimization_report.json")
    _write_manifest(
        out, "optimization", {"config": cfg.to_json_dict(), "seed": cfg.seed}
    )
    print(f"{report.efficiency:.6f}")
    return EXIT_OK


_SWEEP_DEFAULT_GRIDS = {
    "duration": "0.5:10:0.5",
    "r": "0:1:0.05",
    "q": "-8:-2:0.5",
}


def cmd_sweep(args) -> int:
    cfg = load_run_config(args.config)
    out = _outdir(cfg.output_dir, args.out)
    grid_spec = args.grid or _SWEEP_DEFAULT_GRIDS[args.kind]
    values = _parse_grid_spec(grid_spec, args.kind)
    jobs = args.jobs or os.cpu_count() or 1
    saturation_kwargs = {"max_iter": cfg.max_iterations, "tol": cfg.tolerance}
    if args.at_cap is not None:
        saturation_kwargs["at_cap"] = args.at_cap

    if args.kind == "duration":
        result = optimal_duration_sweep(
            cfg.system, values, substeps=cfg.substeps,
            tol=cfg.tolerance, max_iter=cfg.max_iterations,
        )
    elif args.kind == "r":
        result = r_sweep(
            cfg.system.detuning_mode, values, q=cfg.system.q, A=cfg.system.A,
            jobs=jobs, substeps=cfg.substeps, **saturation_kwargs,
        )
    else:
        result = fano_sweep(
            cfg.system, values, jobs=jobs, substeps=cfg.substeps,
            **saturation_kwargs,
        )
    write_sweep(
        result, out, f"sweep_{args.kind}",
        config=cfg.system, seed=cfg.seed,
        parameters={"grid": grid_spec, "jobs": jobs},
    )
    print(f"{result.best_value:.6f}")
    return EXIT_OK


def cmd_robustness(args) -> int:
    cfg = load_run_config(args.config)
    out = _outdir(cfg.output_dir, args.out)
    grid = _load_pulse_file(args.pulse)
    alphas = (
        _parse_grid_spec(args.alphas, "alpha") if args.alphas else DEFAULT_ALPHA_GRID
    )
    baseline = args.baseline
    if baseline is None:
        baseline = gaussian_baseline_search(cfg.system).efficiency
    result = robustness_scan(
        cfg.system, grid, alphas, baseline=baseline, substeps=cfg.substeps
    )
    write_sweep(
        result, out, "robustness",
        config=cfg.system, seed=cfg.seed,
        parameters={"pulse": str(args.pulse), "baseline": float(baseline)},
    )
    return EXIT_OK


def cmd_table1(args) -> int:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    kwargs = {}
    if args.at_cap is not None:
        kwargs["at_cap"] = args.at_cap
    if args.max_iterations is not None:
        kwargs["max_iter"] = args.max_iterations
    rows = benchmark_table(
        q=args.q,
        methods=tuple(args.methods.split(",")),
        jobs=args.jobs or os.cpu_count() or 1,
        **kwargs,
    )
    table_to_csv(rows, out / "table1.csv")
    _write_manifest(
        out, "table1",
        {"q": args.q, "methods": args.methods, "seed": args.seed},
    )
    print(format_table(rows))
    failures = {f"{r['mode']}/R={r['R']}": r["errors"] for r in rows if r["errors"]}
    if failures:
        print(f"warning: {len(failures)} cell(s) reported errors: {failures}",
              file=sys.stderr)
    return EXIT_OK


def cmd_smooth(args) -> int:
    grid = _load_pulse_file(args.pulse)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    u_max = 1.0
    cfg = None
    if args.config:
        cfg = load_run_config(args.config)
        u_max = cfg.system.u_max
    smoothed = smooth_controls(grid, args.factor, u_max=u_max)
    smoothed.to_csv(out / "smoothed_controls.csv")
    if cfg is not None:
        before = efficiency_of(cfg.system, grid, substeps=cfg.substeps)
        after = efficiency_of(cfg.system, smoothed, substeps=cfg.substeps)
        print(f"{before:.6f}")
        print(f"{after:.6f}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="licspulse",
        description=(
            "Synthesize and evaluate ionization-pulse envelopes for "
            "population transfer through a continuum"
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="propagate a configured pulse protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("optimize", help="optimize the pulse envelopes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_optimize)

    p = sub.add_parser("sweep", help="run a duration / R / q sweep")
    p.add_argument("kind", choices=("duration", "r", "q"))
    p.add_argument("--config", required=True)
    p.add_argument("--grid", default=None,
                   help="'start:stop:step' or comma list; kind-specific default")
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--at-cap", type=float, default=None,
                   help="duration cap for the saturation ladders")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("robustness", help="scan pulse-distortion robustness")
    p.add_argument("--config", required=True)
    p.add_argument("--pulse", required=True, help="control grid CSV or JSON")
    p.add_argument("--alphas", default=None)
    p.add_argument("--baseline", type=float, default=None,
                   help="Gaussian reference efficiency (computed when omitted)")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_robustness)

    p = sub.add_parser(
        "table1",
        help="benchmark Gaussian / sin-cos / optimal efficiencies over the "
             "standard (mode, R) set",
    )
    p.add_argument("--q", type=float, default=-6.0)
    p.add_argument("--methods", default="gaussian,sincos,optimal")
    p.add_argument("--at-cap", type=float, default=None)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_table1)

    p = sub.add_parser("smooth", help="undersample + spline-smooth a pulse file")
    p.add_argument("--pulse", required=True)
    p.add_argument("--factor", type=int, default=20)
    p.add_argument("--config", default=None,
                   help="when given, print efficiencies before and after")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_smooth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteStateError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
