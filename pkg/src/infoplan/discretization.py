"""First-order-hold transcription of the controlled dynamics.

Each grid interval of a reference trajectory is reduced to an affine
discrete transition

    x_{k+1} = A_k x_k + Bm_k u_k + Bp_k u_{k+1} + r_k + E_k eps_k,

where the matrices come from integrating the variational system along the
nonlinear reference flow with the control interpolated linearly between
nodes, and ``E_k`` is the virtual-control gain. The module also evaluates
nonlinear defects of candidate trajectories and allocates per-node thrust
bounds on non-uniform grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .dynamics import (
    FohControl,
    SystemParameters,
    TimeGrid,
    crtbp_accel,
    crtbp_jacobian,
    propagate,
)
from .dynamics import _solve as _solve_ivp_checked

__all__ = [
    "ControlAffineSystem",
    "DiscreteSegment",
    "TrajectoryIterate",
    "crtbp_control_system",
    "discretize_segment",
    "foh_discretize",
    "defects",
    "thrust_bounds",
]


@dataclass(frozen=True)
class ControlAffineSystem:
    """Dynamics of the form xdot = f(t, x) + B u with constant input matrix B."""

    f: Callable[[float, np.ndarray], np.ndarray]
    jacobian: Callable[[float, np.ndarray], np.ndarray]
    b_matrix: np.ndarray

    @property
    def n_states(self) -> int:
        return self.b_matrix.shape[0]

    @property
    def n_controls(self) -> int:
        return self.b_matrix.shape[1]


def crtbp_control_system(params: SystemParameters) -> ControlAffineSystem:
    """Thrust-accelerated CRTBP as a control-affine system."""
    b = np.zeros((6, 3))
    b[3:, :] = np.eye(3)

    def f(t, x):
        out = np.empty(6)
        out[:3] = x[3:]
        out[3:] = crtbp_accel(x, params)
        return out

    return ControlAffineSystem(f=f, jacobian=lambda t, x: crtbp_jacobian(x, params),
                               b_matrix=b)


@dataclass(frozen=True)
class DiscreteSegment:
    """Affine transition of one grid interval, plus the virtual-control gain."""

    a_k: np.ndarray
    b_minus: np.ndarray
    b_plus: np.ndarray
    r_k: np.ndarray
    e_k: np.ndarray


@dataclass
class TrajectoryIterate:
    """Node states and controls on a time grid; the planner's decision object."""

    grid: TimeGrid
    states: np.ndarray
    controls: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        n = len(self.grid)
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        self.u_max = np.asarray(self.u_max, dtype=float)
        if self.states.shape != (n, 6):
            raise ValueError(f"states must have shape ({n}, 6)")
        if self.controls.shape != (n, 3):
            raise ValueError(f"controls must have shape ({n}, 3)")
        if self.u_max.shape != (n,):
            raise ValueError(f"u_max must have shape ({n},)")

    def copy(self) -> "TrajectoryIterate":
        return TrajectoryIterate(self.grid, self.states.copy(),
                                 self.controls.copy(), self.u_max.copy())

    def segment_control(self, k: int) -> FohControl:
        t = self.grid.nodes
        return FohControl(t[k: k + 2], self.controls[k: k + 2])


def discretize_segment(system: ControlAffineSystem, x0, u0, u1, t0: float,
                       t1: float, params: SystemParameters) -> DiscreteSegment:
    """Integrate the segment variational system and form the affine transition.

    The state transition inverse needed by the integrands is obtained by an
    LU-backed linear solve at every evaluation, never an explicit inverse.
    """
    n = system.n_states
    m = system.n_controls
    b = system.b_matrix
    x0 = np.asarray(x0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    dt = t1 - t0
    if dt <= 0.0:
        raise ValueError("segment must have positive duration")

    n_phi = n * n
    n_bu = n * m
    idx_phi = slice(n, n + n_phi)
    idx_bm = slice(n + n_phi, n + n_phi + n_bu)
    idx_bp = slice(n + n_phi + n_bu, n + n_phi + 2 * n_bu)
    idx_r = slice(n + n_phi + 2 * n_bu, 2 * n + n_phi + 2 * n_bu)
    idx_e = slice(2 * n + n_phi + 2 * n_bu, 2 * n + 2 * n_phi + 2 * n_bu)

    def rhs(t, y):
        x = y[:n]
        phi = y[idx_phi].reshape(n, n)
        lam_p = (t - t0) / dt
        lam_m = 1.0 - lam_p
        u = lam_m * u0 + lam_p * u1
        fx = system.f(t, x)
        a = system.jacobian(t, x)
        # one LU solve for all Phi^-1 (.) integrands
        stacked = np.empty((n, 2 * m + 1 + n))
        stacked[:, :m] = lam_m * b
        stacked[:, m: 2 * m] = lam_p * b
        stacked[:, 2 * m] = fx - a @ x
        stacked[:, 2 * m + 1:] = np.eye(n)
        solved = np.linalg.solve(phi, stacked)

        dy = np.empty_like(y)
        dy[:n] = fx + b @ u
        dy[idx_phi] = (a @ phi).ravel()
        dy[idx_bm] = solved[:, :m].ravel()
        dy[idx_bp] = solved[:, m: 2 * m].ravel()
        dy[idx_r] = solved[:, 2 * m]
        dy[idx_e] = solved[:, 2 * m + 1:].ravel()
        return dy

    y0 = np.zeros(2 * n + 2 * n_phi + 2 * n_bu)
    y0[:n] = x0
    y0[idx_phi] = np.eye(n).ravel()

    sol = _solve_ivp_checked(rhs, t0, t1, y0, params)
    yf = sol.y[:, -1]
    a_k = yf[idx_phi].reshape(n, n).copy()
    return DiscreteSegment(
        a_k=a_k,
        b_minus=a_k @ yf[idx_bm].reshape(n, m),
        b_plus=a_k @ yf[idx_bp].reshape(n, m),
        r_k=a_k @ yf[idx_r],
        e_k=a_k @ yf[idx_e].reshape(n, n),
    )


def _crtbp_segment(x0, u0, u1, t0, t1, params) -> DiscreteSegment:
    """Kernel-backed segment transcription for the production dynamics."""
    mu = params.mu
    u0 = np.ascontiguousarray(u0, dtype=float)
    u1 = np.ascontiguousarray(u1, dtype=float)
    y0 = np.zeros(120)
    y0[:6] = x0
    y0[6:42] = np.eye(6).ravel()
    sol = _solve_ivp_checked(
        lambda t, y: _kernels.rhs_discretize(y, mu, t, t0, t1, u0, u1),
        t0, t1, y0, params,
    )
    yf = sol.y[:, -1]
    a_k = yf[6:42].reshape(6, 6).copy()
    return DiscreteSegment(
        a_k=a_k,
        b_minus=a_k @ yf[42:60].reshape(6, 3),
        b_plus=a_k @ yf[60:78].reshape(6, 3),
        r_k=a_k @ yf[78:84],
        e_k=a_k @ yf[84:120].reshape(6, 6),
    )


def foh_discretize(reference: TrajectoryIterate,
                   params: SystemParameters) -> list[DiscreteSegment]:
    """Discretize every interval of the reference under FOH control."""
    nodes = reference.grid.nodes
    return [
        _crtbp_segment(
            reference.states[k],
            reference.controls[k],
            reference.controls[k + 1],
            nodes[k],
            nodes[k + 1],
            params,
        )
        for k in range(len(reference.grid) - 1)
    ]


def defects(candidate: TrajectoryIterate, params: SystemParameters) -> np.ndarray:
    """Per-interval gap between node states and the nonlinear FOH propagation."""
    nodes = candidate.grid.nodes
    n_seg = len(candidate.grid) - 1
    out = np.empty((n_seg, 6))
    for k in range(n_seg):
        propagated = propagate(
            candidate.states[k], nodes[k], nodes[k + 1], params,
            control=candidate.segment_control(k),
        )
        out[k] = candidate.states[k + 1] - propagated
    return out


def thrust_bounds(grid: TimeGrid, a_max: float) -> np.ndarray:
    """Per-node thrust bounds aligning trapezoid impulses with a_max.

    Returns the minimum-2-norm solution of the underdetermined system
    ``(u_k + u_{k+1}) / (2 dt_k) = a_max`` over all intervals. Should the
    minimum-norm solution turn negative on a pathological grid, falls back
    to the per-interval assignment ``a_max * min(adjacent dt)``.
    """
    if a_max < 0.0:
        raise ValueError("a_max must be nonnegative")
    n = len(grid)
    dts = grid.intervals
    if a_max == 0.0:
        return np.zeros(n)

    a_mat = np.zeros((n - 1, n))
    for k in range(n - 1):
        a_mat[k, k] = 1.0 / dts[k]
        a_mat[k, k + 1] = 1.0 / dts[k]
    rhs = np.full(n - 1, 2.0 * a_max)
    solution, *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)

    if np.any(solution < 0.0):
        padded = np.concatenate(([dts[0]], np.minimum(dts[:-1], dts[1:]), [dts[-1]]))
        return a_max * padded
    return solution
