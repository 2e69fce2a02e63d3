"""Physical model: system parameters, control envelopes, control grids.

The dynamics live in a scaled two-state picture where the only inputs are
the envelopes of the two ionization pulses.  Controls are the square
roots u1(t), u2(t) of the pump and Stokes ionization widths, constrained
to the box 0 <= u_i <= sqrt(A) where A is the laser intensity scale.
Internally A = 1 is the canonical normalization and durations are quoted
as the dimensionless product A*T.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "DEFAULT_STARK_PROFILE",
    "DetuningMode",
    "SystemConfig",
    "ControlGrid",
    "StateVector",
    "effective_detuning",
    "gaussian_pair",
    "sincos_controls",
    "sample_onto_grid",
    "sincos_grid",
    "gaussian_grid",
    "gaussian_grid_for_duration",
    "gaussian_window",
]

# Stark-shift coefficients per unit ionization width, in the order
# (pump->ground, Stokes->ground, pump->excited, Stokes->excited).
DEFAULT_STARK_PROFILE: tuple[float, float, float, float] = (1.0, -1.0, 1.0, 3.0)


class DetuningMode(str, enum.Enum):
    """Rule used for the effective two-photon detuning during propagation."""

    RESONANT = "resonant"            # detuning identically zero
    DYNAMIC_STARK = "dynamic_stark"  # detuning follows the Stark-shift profile

    @classmethod
    def coerce(cls, value) -> "DetuningMode":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().lower().replace("-", "_")
            try:
                return cls(key)
            except ValueError:
                pass
        raise ValueError(
            f"unknown detuning mode {value!r}; expected one of "
            f"{[m.value for m in cls]}"
        )


@dataclass(frozen=True)
class SystemConfig:
    """Physical parameters of the continuum-coupled two-state system.

    Attributes
    ----------
    q : float
        Fano parameter (dimensionless).  The benchmark value is -6, close
        to the hydrogen value; positive and zero q are accepted as well.
    R : float
        Strength of the incoherent pump-driven ionization of the excited
        state relative to its coherent width.  Must be >= 0.
    detuning_mode : DetuningMode
        Effective two-photon detuning rule, see :func:`effective_detuning`.
    A : float
        Intensity scale.  The control bound is sqrt(A) and durations
        scale as A*T, so A = 1 is the canonical choice.
    stark_profile : tuple of 4 floats
        Stark-shift coefficients per unit ionization width in the order
        (pump->ground, Stokes->ground, pump->excited, Stokes->excited).
        Together with q they fix the dynamic detuning
        delta = (s3 - s1 - q/2) u1^2 + (s4 - s2 + q/2) u2^2.
    """

    q: float = -6.0
    R: float = 0.0
    detuning_mode: DetuningMode = DetuningMode.RESONANT
    A: float = 1.0
    stark_profile: tuple[float, float, float, float] = DEFAULT_STARK_PROFILE

    def __post_init__(self):
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "A", float(self.A))
        object.__setattr__(
            self, "detuning_mode", DetuningMode.coerce(self.detuning_mode)
        )
        profile = tuple(float(s) for s in self.stark_profile)
        if len(profile) != 4:
            raise ValueError("stark_profile must have exactly 4 coefficients")
        object.__setattr__(self, "stark_profile", profile)
        if not all(map(math.isfinite, (self.q, self.R, self.A) + profile)):
            raise ValueError("system parameters must be finite")
        if self.R < 0:
            raise ValueError("incoherence ratio R must be >= 0")
        if self.A <= 0:
            raise ValueError("intensity scale A must be > 0")

    @property
    def u_max(self) -> float:
        """Upper control bound sqrt(A)."""
        return math.sqrt(self.A)

    @property
    def detuning_coefficients(self) -> tuple[float, float]:
        """Coefficients (k1, k2) of the quadratic delta = k1 u1^2 + k2 u2^2."""
        s_pg, s_sg, s_pe, s_se = self.stark_profile
        return (s_pe - s_pg - 0.5 * self.q, s_se - s_sg + 0.5 * self.q)

    def to_json_dict(self) -> dict:
        return {
            "q": self.q,
            "R": self.R,
            "detuning_mode": self.detuning_mode.value,
            "A": self.A,
            "stark_profile": list(self.stark_profile),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SystemConfig":
        return cls(**data)


def effective_detuning(config: SystemConfig, u1, u2):
    """Effective two-photon detuning for the given control amplitudes.

    Resonant mode returns 0 identically.  Dynamic-Stark mode evaluates
    the quadratic form fixed by ``config.detuning_coefficients``; with
    the default profile this is -(q/2) u1^2 + (4 + q/2) u2^2.  Accepts
    scalars or arrays.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if config.detuning_mode is DetuningMode.RESONANT:
        out = np.zeros(np.broadcast_shapes(u1.shape, u2.shape))
    else:
        k1, k2 = config.detuning_coefficients
        out = k1 * u1 * u1 + k2 * u2 * u2
    if out.ndim == 0:
        return float(out)
    return out


def gaussian_pair(width: float, delay: float, t):
    """Delayed Gaussian envelope pair (pump, Stokes).

    f_p(t) = exp(-((t - delay)/width)^2) peaks at +delay, while
    f_s(t) = exp(-((t + delay)/width)^2) peaks at -delay, so the Stokes
    pulse precedes the pump (counterintuitive ordering).  Returns the
    dimensionless intensity profiles; multiply by A for the widths.
    """
    if width <= 0:
        raise ValueError("gaussian width must be positive")
    t = np.asarray(t, dtype=float)
    f_p = np.exp(-(((t - delay) / width) ** 2))
    f_s = np.exp(-(((t + delay) / width) ** 2))
    if f_p.ndim == 0:
        return float(f_p), float(f_s)
    return f_p, f_s


def sincos_controls(scale: float, duration: float, t):
    """Controls of the linear-mixing-angle protocol at time t in [0, T].

    u1 = sqrt(A) sin(pi t / 2T) and u2 = sqrt(A) cos(pi t / 2T), i.e. the
    Stokes control starts at full strength and the pump ends there, with
    u1^2 + u2^2 = A at every instant.
    """
    if scale <= 0:
        raise ValueError("intensity scale must be positive")
    if duration <= 0:
        raise ValueError("duration must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12 * duration) or np.any(t > duration * (1 + 1e-12)):
        raise ValueError("time outside the protocol window [0, T]")
    phase = 0.5 * np.pi * t / duration
    root = math.sqrt(scale)
    u1 = root * np.sin(phase)
    u2 = root * np.cos(phase)
    if u1.ndim == 0:
        return float(u1), float(u2)
    return u1, u2


@dataclass(frozen=True)
class StateVector:
    """Real 4-vector (x1, x2, x3, x4) with b_g = x1 + i x2, b_e = x3 + i x4."""

    x1: float
    x2: float
    x3: float
    x4: float

    @classmethod
    def ground(cls) -> "StateVector":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, x) -> "StateVector":
        x1, x2, x3, x4 = np.asarray(x, dtype=float)
        return cls(float(x1), float(x2), float(x3), float(x4))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4])

    @property
    def b_g(self) -> complex:
        return complex(self.x1, self.x2)

    @property
    def b_e(self) -> complex:
        return complex(self.x3, self.x4)

    @property
    def norm_sq(self) -> float:
        return self.x1 ** 2 + self.x2 ** 2 + self.x3 ** 2 + self.x4 ** 2

    @property
    def pop_ground(self) -> float:
        return self.x1 ** 2 + self.x2 ** 2

    @property
    def pop_excited(self) -> float:
        return self.x3 ** 2 + self.x4 ** 2


@dataclass
class ControlGrid:
    """Piecewise-constant samples of the two control envelopes on [0, T].

    Interval k covers [k dt, (k+1) dt) with dt = T / n_intervals; u1[k]
    and u2[k] are the square-root ionization widths held on it.
    """

    T: float
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        self.T = float(self.T)
        self.u1 = np.atleast_1d(np.asarray(self.u1, dtype=float)).copy()
        self.u2 = np.atleast_1d(np.asarray(self.u2, dtype=float)).copy()
        if self.T <= 0:
            raise ValueError("grid duration must be positive")
        if self.u1.ndim != 1 or self.u2.ndim != 1:
            raise ValueError("control samples must be one-dimensional")
        if self.u1.shape != self.u2.shape:
            raise ValueError("u1 and u2 must have the same length")
        if self.u1.size < 1:
            raise ValueError("grid needs at least one interval")
        if not (np.isfinite(self.u1).all() and np.isfinite(self.u2).all()):
            raise ValueError("control samples must be finite")

    @property
    def n_intervals(self) -> int:
        return self.u1.size

    @property
    def dt(self) -> float:
        return self.T / self.u1.size

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_intervals) + 0.5) * self.dt

    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_intervals + 1)

    def copy(self) -> "ControlGrid":
        return ControlGrid(self.T, self.u1, self.u2)

    def scaled(self, factor: float) -> "ControlGrid":
        """Both controls multiplied by ``factor`` (widths by factor^2)."""
        if factor < 0:
            raise ValueError("control scale factor must be >= 0")
        return ControlGrid(self.T, factor * self.u1, factor * self.u2)

    def clamped(self, u_max: float) -> "ControlGrid":
        return ControlGrid(
            self.T,
            np.clip(self.u1, 0.0, u_max),
            np.clip(self.u2, 0.0, u_max),
        )

    def check_bounds(self, u_max: float, tol: float = 1e-9) -> None:
        """Raise if any sample leaves the box [0, u_max]."""
        slack = tol * max(u_max, 1.0)
        for name, u in (("u1", self.u1), ("u2", self.u2)):
            if u.min() < -slack or u.max() > u_max + slack:
                raise ValueError(
                    f"{name} leaves the control box [0, {u_max}]: "
                    f"range [{u.min()}, {u.max()}]"
                )

    # -- serialization ---------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "T": self.T,
            "n_intervals": self.n_intervals,
            "u1": self.u1.tolist(),
            "u2": self.u2.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ControlGrid":
        grid = cls(data["T"], data["u1"], data["u2"])
        declared = data.get("n_intervals")
        if declared is not None and int(declared) != grid.n_intervals:
            raise ValueError(
                f"declared n_intervals {declared} does not match "
                f"{grid.n_intervals} control samples"
            )
        return grid

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()) + "\n")

    @classmethod
    def load_json(cls, path) -> "ControlGrid":
        return cls.from_json_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path) -> None:
        edges = self.edges()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t_start", "t_end", "u1", "u2"])
            for k in range(self.n_intervals):
                writer.writerow(
                    [repr(edges[k]), repr(edges[k + 1]),
                     repr(self.u1[k]), repr(self.u2[k])]
                )

    @classmethod
    def from_csv(cls, path) -> "ControlGrid":
        starts, ends, u1, u2 = [], [], [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"t_start", "t_end", "u1", "u2"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise ValueError(
                    f"control CSV must have columns {sorted(required)}"
                )
            for row in reader:
                starts.append(float(row["t_start"]))
                ends.append(float(row["t_end"]))
                u1.append(float(row["u1"]))
                u2.append(float(row["u2"]))
        if not starts:
            raise ValueError("control CSV contains no intervals")
        T = ends[-1]
        grid = cls(T, u1, u2)
        # The on-disk format permits arbitrary edges but the in-memory
        # grid is uniform; reject files that are not.
        expected = grid.edges()
        if not (
            np.allclose(starts, expected[:-1], atol=1e-9 * max(T, 1.0))
            and np.allclose(ends, expected[1:], atol=1e-9 * max(T, 1.0))
        ):
            raise ValueError("control CSV intervals are not uniform")
        return grid


def sample_onto_grid(
    pulse: Callable[[np.ndarray], tuple],
    duration: float,
    n_intervals: int,
    u_max: float = 1.0,
) -> ControlGrid:
    """Midpoint-sample a continuous control pair onto a uniform grid.

    ``pulse`` maps an array of times in [0, duration] to a pair of
    control arrays (u1, u2).  Samples are clamped to [0, u_max].
    """
    if n_intervals < 1:
        raise ValueError("n_intervals must be at least 1")
    if duration <= 0:
        raise ValueError("duration must be positive")
    mids = (np.arange(n_intervals) + 0.5) * (duration / n_intervals)
    u1, u2 = pulse(mids)
    u1 = np.clip(np.asarray(u1, dtype=float), 0.0, u_max)
    u2 = np.clip(np.asarray(u2, dtype=float), 0.0, u_max)
    return ControlGrid(duration, u1, u2)


def sincos_grid(duration: float, n_intervals: int, scale: float = 1.0) -> ControlGrid:
    """Linear-mixing-angle protocol sampled onto a grid."""
    return sample_onto_grid(
        lambda t: sincos_controls(scale, duration, t),
        duration,
        n_intervals,
        u_max=math.sqrt(scale),
    )


def gaussian_window(width: float, delay: float) -> float:
    """Simulation window length for a delayed Gaussian pair.

    The pair is defined on the whole real line; beyond 4 widths past the
    outer pulse center the envelopes are below e^-16 and are dropped, so
    the window [-(delay + 4 width), +(delay + 4 width)] captures them.
    """
    return 2.0 * (abs(delay) + 4.0 * width)


def gaussian_grid(
    width: float, delay: float, n_intervals: int, scale: float = 1.0
) -> ControlGrid:
    """Delayed Gaussian control pair sampled on its shifted window.

    The window of :func:`gaussian_window` is shifted to start at t = 0;
    the pump control peaks after the Stokes control.  Controls are the
    square roots of the width profiles, sqrt(A f_{p,s}).
    """
    window = gaussian_window(width, delay)
    center = 0.5 * window

    def pulse(t):
        f_p, f_s = gaussian_pair(width, delay, t - center)
        return np.sqrt(scale * f_p), np.sqrt(scale * f_s)

    return sample_onto_grid(pulse, window, n_intervals, u_max=math.sqrt(scale))


def gaussian_grid_for_duration(
    duration: float,
    delay_ratio: float,
    n_intervals: int,
    scale: float = 1.0,
) -> ControlGrid:
    """Gaussian pair whose simulation window is exactly ``duration``.

    Solves 2 (delay + 4 width) = duration for the given delay/width
    ratio; useful for seeding fixed-horizon optimizations.
    """
    if delay_ratio < 0:
        raise ValueError("delay ratio must be >= 0")
    width = duration / (2.0 * (delay_ratio + 4.0))
    return gaussian_grid(width, delay_ratio * width, n_intervals, scale=scale)
