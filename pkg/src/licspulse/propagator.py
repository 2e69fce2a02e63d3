"""Fixed-step propagation of the scaled two-state amplitude dynamics.

The state is the real 4-vector x with b_g = x1 + i x2 and b_e = x3 + i x4.
Under piecewise-constant controls the motion is linear, x' = M(u1, u2) x,
with a = u1^2, b = u1 u2, c = u2^2, d the effective two-photon detuning:

    M = 1/2 * [[ -a,   -q a,   -b,         -q b       ],
               [  q a, -a,      q b,       -b         ],
               [ -b,   -q b,   -(R a + c),  2 d - q c ],
               [  q b, -b,      q c - 2 d, -(R a + c) ]].

The symmetric part of M is negative semidefinite (two identical 2x2
blocks with trace -(a (1 + R) + c)/2 and determinant R a^2 / 4), so the
squared norm never grows and the final excited-state population
x3^2 + x4^2 is a transfer efficiency in [0, 1].

Each control interval is integrated with classical RK4 using a fixed
number of substeps.  Because M is constant on an interval, one RK4 step
is exactly the degree-4 Taylor polynomial of expm(h M) applied to the
state; this makes the discrete adjoint used by the optimizer exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ControlGrid, DetuningMode, StateVector, SystemConfig

__all__ = [
    "GROUND_STATE",
    "NonFiniteStateError",
    "PropagationResult",
    "adiabatic_transform",
    "dark_state",
    "efficiencies_batch",
    "efficiency_of",
    "propagate",
    "rk4_step_matrices",
    "sincos_efficiency_analytic",
    "system_matrices",
    "system_matrix",
]

GROUND_STATE = np.array([1.0, 0.0, 0.0, 0.0])

DEFAULT_SUBSTEPS = 4


class NonFiniteStateError(RuntimeError):
    """The propagated state stopped being finite (misconfigured inputs)."""


def system_matrices(config: SystemConfig, u1, u2) -> np.ndarray:
    """Dynamics matrices for a stack of control samples; shape (..., 4, 4)."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    a = u1 * u1
    b = u1 * u2
    c = u2 * u2
    q = config.q
    big_r = config.R
    if config.detuning_mode is DetuningMode.RESONANT:
        d = np.zeros_like(a)
    else:
        k1, k2 = config.detuning_coefficients
        d = k1 * a + k2 * c
    m = np.zeros(a.shape + (4, 4))
    m[..., 0, 0] = -0.5 * a
    m[..., 0, 1] = -0.5 * q * a
    m[..., 0, 2] = -0.5 * b
    m[..., 0, 3] = -0.5 * q * b
    m[..., 1, 0] = 0.5 * q * a
    m[..., 1, 1] = -0.5 * a
    m[..., 1, 2] = 0.5 * q * b
    m[..., 1, 3] = -0.5 * b
    m[..., 2, 0] = -0.5 * b
    m[..., 2, 1] = -0.5 * q * b
    m[..., 2, 2] = -0.5 * (big_r * a + c)
    m[..., 2, 3] = d - 0.5 * q * c
    m[..., 3, 0] = 0.5 * q * b
    m[..., 3, 1] = -0.5 * b
    m[..., 3, 2] = 0.5 * q * c - d
    m[..., 3, 3] = -0.5 * (big_r * a + c)
    return m


def system_matrix(config: SystemConfig, u1: float, u2: float) -> np.ndarray:
    """Single 4x4 dynamics matrix for one control sample."""
    return system_matrices(config, float(u1), float(u2))


def rk4_step_matrices(m: np.ndarray, h) -> np.ndarray:
    """One classical RK4 step as a matrix: the degree-4 Taylor polynomial
    of expm(h m).  ``h`` may be a scalar or broadcast over the stack."""
    h = np.asarray(h, dtype=float)
    hm = h[..., None, None] * m if h.ndim else h * m
    hm2 = hm @ hm
    hm3 = hm2 @ hm
    hm4 = hm3 @ hm
    return np.eye(4) + hm + hm2 / 2.0 + hm3 / 6.0 + hm4 / 24.0


@dataclass
class PropagationResult:
    """Outcome of a single propagation.

    ``times`` and ``norm_history`` cover every RK4 substep boundary
    (including t = 0); ``states`` holds the trajectory rows when it was
    recorded.  ``efficiency`` is the final excited-state population
    x3(T)^2 + x4(T)^2.
    """

    times: np.ndarray
    norm_history: np.ndarray
    efficiency: float
    final_state: StateVector
    states: Optional[np.ndarray] = None

    def populations(self) -> tuple[np.ndarray, np.ndarray]:
        """Ground and excited populations along a recorded trajectory."""
        if self.states is None:
            raise ValueError("trajectory was not recorded")
        pop_g = self.states[:, 0] ** 2 + self.states[:, 1] ** 2
        pop_e = self.states[:, 2] ** 2 + self.states[:, 3] ** 2
        return pop_g, pop_e

    def write_csv(self, path) -> None:
        """Trajectory CSV with columns t, x1..x4, norm2, pop_g, pop_e."""
        if self.states is None:
            raise ValueError("trajectory was not recorded")
        pop_g, pop_e = self.populations()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["t", "x1", "x2", "x3", "x4", "norm2", "pop_g", "pop_e"]
            )
            for i, t in enumerate(self.times):
                row = [t, *self.states[i], self.norm_history[i], pop_g[i], pop_e[i]]
                writer.writerow([repr(float(v)) for v in row])


def propagate(
    config: SystemConfig,
    grid: ControlGrid,
    record: bool = False,
    substeps: int = DEFAULT_SUBSTEPS,
    enforce_bounds: bool = True,
) -> PropagationResult:
    """Integrate the dynamics from the ground state under a control grid.

    Controls are held constant across the ``substeps`` RK4 steps of each
    interval; in dynamic-Stark mode the detuning is recomputed from the
    interval's (u1, u2) and is therefore constant there too.  Raises
    :class:`NonFiniteStateError` as soon as a step produces a non-finite
    state.  ``enforce_bounds=False`` skips the control-box check, which
    is needed when propagating deliberately distorted pulses.
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    if enforce_bounds:
        grid.check_bounds(config.u_max)
    n = grid.n_intervals
    h = grid.dt / substeps
    p = rk4_step_matrices(system_matrices(config, grid.u1, grid.u2), h)

    n_steps = n * substeps
    x = GROUND_STATE.copy()
    norms = np.empty(n_steps + 1)
    norms[0] = 1.0
    states = None
    if record:
        states = np.empty((n_steps + 1, 4))
        states[0] = x
    j = 0
    for k in range(n):
        pk = p[k]
        for _ in range(substeps):
            x = pk @ x
            j += 1
            norms[j] = x @ x
            if not math.isfinite(norms[j]):
                raise NonFiniteStateError(
                    f"state became non-finite at step {j} (interval {k})"
                )
            if record:
                states[j] = x
    times = np.arange(n_steps + 1) * h
    efficiency = float(x[2] ** 2 + x[3] ** 2)
    return PropagationResult(
        times=times,
        norm_history=norms,
        efficiency=efficiency,
        final_state=StateVector.from_array(x),
        states=states,
    )


def _final_state(
    config: SystemConfig, grid: ControlGrid, substeps: int
) -> np.ndarray:
    """Forward sweep without recording; same arithmetic path as the
    adjoint forward sweep so objective values agree bitwise."""
    p = rk4_step_matrices(
        system_matrices(config, grid.u1, grid.u2), grid.dt / substeps
    )
    x = GROUND_STATE.copy()
    for k in range(grid.n_intervals):
        pk = p[k]
        for _ in range(substeps):
            x = pk @ x
    if not np.isfinite(x).all():
        raise NonFiniteStateError("state became non-finite")
    return x


def efficiency_of(
    config: SystemConfig,
    grid: ControlGrid,
    substeps: int = DEFAULT_SUBSTEPS,
    enforce_bounds: bool = True,
) -> float:
    """Final excited-state population only (no trajectory bookkeeping)."""
    if enforce_bounds:
        grid.check_bounds(config.u_max)
    x = _final_state(config, grid, substeps)
    return float(x[2] ** 2 + x[3] ** 2)


def efficiencies_batch(
    config: SystemConfig,
    u1: np.ndarray,
    u2: np.ndarray,
    dt,
    substeps: int = DEFAULT_SUBSTEPS,
) -> np.ndarray:
    """Final efficiencies for a batch of control grids.

    ``u1`` and ``u2`` have shape (batch, n_intervals) and ``dt`` is the
    per-grid interval width (scalar or shape (batch,)).  Grids of unequal
    length can share a batch by padding with zero controls, which freeze
    the state.  Used by the sweep harness where thousands of propagations
    would otherwise dominate the runtime.
    """
    u1 = np.atleast_2d(np.asarray(u1, dtype=float))
    u2 = np.atleast_2d(np.asarray(u2, dtype=float))
    if u1.shape != u2.shape:
        raise ValueError("u1 and u2 must have the same shape")
    batch, n = u1.shape
    h = np.broadcast_to(np.asarray(dt, dtype=float) / substeps, (batch,))
    x = np.tile(GROUND_STATE, (batch, 1))
    for k in range(n):
        p = rk4_step_matrices(system_matrices(config, u1[:, k], u2[:, k]), h)
        for _ in range(substeps):
            x = np.einsum("bij,bj->bi", p, x)
    if not np.isfinite(x).all():
        raise NonFiniteStateError("a batch member became non-finite")
    return x[:, 2] ** 2 + x[:, 3] ** 2


def sincos_efficiency_analytic(q: float, at: float) -> float:
    """Closed-form transfer efficiency of the sin-cos protocol in the
    loss-free resonant case (R = 0, zero effective detuning).

    Integrating the adiabatic-frame equations for a mixing angle that
    grows linearly over a normalized duration ``at`` = A*T gives, with
    eta = (1 - i q)/2 and kappa = sqrt(eta^2 - (pi/at)^2) / 2,

        P_e = exp(-Re(eta) at) * |cosh(z) + (eta at / 2) sinh(z)/z|^2,
        z = kappa at.

    cosh(z) and sinh(z)/z are even, so the square-root branch does not
    matter; the principal branch is used and a series covers z -> 0.
    """
    if at <= 0:
        raise ValueError("normalized duration A*T must be positive")
    eta = 0.5 * (1.0 - 1j * q)
    kappa = 0.5 * np.sqrt(complex(eta * eta - (np.pi / at) ** 2))
    z = kappa * at
    if abs(z) < 1e-6:
        sinhc = 1.0 + z * z / 6.0 + z ** 4 / 120.0
    else:
        sinhc = np.sinh(z) / z
    bracket = np.cosh(z) + 0.5 * eta * at * sinhc
    value = float(np.exp(-eta.real * at) * abs(bracket) ** 2)
    return min(max(value, 0.0), 1.0)


def adiabatic_transform(theta: float, b_g, b_e):
    """Rotate bare amplitudes into the adiabatic basis at mixing angle theta.

    a0 = cos(theta) b_g - sin(theta) b_e,
    a1 = sin(theta) b_g + cos(theta) b_e;
    an orthogonal rotation, so |a0|^2 + |a1|^2 = |b_g|^2 + |b_e|^2.
    """
    c = np.cos(theta)
    s = np.sin(theta)
    return c * b_g - s * b_e, s * b_g + c * b_e


def dark_state(theta: float) -> StateVector:
    """Zero-eigenvalue adiabatic eigenstate at mixing angle theta.

    (cos theta, 0, -sin theta, 0) is annihilated by M whenever R = 0, the
    detuning vanishes, and the controls sit at u1 = sqrt(A) sin(theta),
    u2 = sqrt(A) cos(theta); it is then a fixed point of the dynamics.
    """
    return StateVector(math.cos(theta), 0.0, -math.sin(theta), 0.0)
