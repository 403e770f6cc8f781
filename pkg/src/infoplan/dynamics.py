"""Dynamics of the Earth-Moon circular restricted three-body problem.

States are 6-vectors ``[x, y, z, vx, vy, vz]`` expressed in the rotating
barycentric frame in normalized units: positions in DU (Earth-Moon
distance), velocities in DU/TU, with the x-axis pointing from the
barycenter toward the Moon.

The module provides the equations of motion together with their first-
and second-order partials, numerical propagation (optionally carrying
first- and second-order state transition derivatives), white-acceleration
process-noise integration, and time-node generation under a generalized
Sundman transformation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels

__all__ = [
    "EARTH_MOON_MU",
    "EARTH_MOON_DU_KM",
    "EARTH_MOON_TU_S",
    "SystemParameters",
    "Stm",
    "TimeGrid",
    "FohControl",
    "SingularPositionError",
    "PropagationError",
    "crtbp_accel",
    "crtbp_vector_field",
    "crtbp_jacobian",
    "crtbp_hessian",
    "jacobi_constant",
    "propagate",
    "propagate_with_stm",
    "stm_history",
    "reference_period",
    "sundman_nodes",
    "process_noise_segment",
]

# Standard Earth-Moon constants; the normalized initial conditions used by
# the bundled scenarios presume these values.
EARTH_MOON_MU = 1.215058560962404e-2
EARTH_MOON_DU_KM = 384400.0
EARTH_MOON_TU_S = 375190.26


class SingularPositionError(ValueError):
    """Raised when a state falls onto (or numerically under) a primary."""


class PropagationError(RuntimeError):
    """Raised when the numerical integrator fails to meet its tolerances."""


@dataclass(frozen=True)
class SystemParameters:
    """Normalization constants and integrator settings of the three-body system.

    Parameters
    ----------
    mu : float
        Mass ratio m2/(m1 + m2), in (0, 0.5).
    du_km : float
        Distance unit in kilometers.
    tu_s : float
        Time unit in seconds.
    r_floor : float
        Hard floor on the distance to either primary, in DU. States below
        the floor raise :class:`SingularPositionError`.
    rtol, atol : float
        Local tolerances of the adaptive integrator.
    """

    mu: float = EARTH_MOON_MU
    du_km: float = EARTH_MOON_DU_KM
    tu_s: float = EARTH_MOON_TU_S
    r_floor: float = 1e-12
    rtol: float = 1e-12
    atol: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ValueError(f"mass ratio must lie in (0, 0.5), got {self.mu}")
        if self.du_km <= 0.0 or self.tu_s <= 0.0:
            raise ValueError("distance and time units must be positive")

    # -- unit conversions -------------------------------------------------
    # All SI quantities use km and s; normalized quantities use DU and TU.

    def km_to_du(self, x):
        return np.asarray(x, dtype=float) / self.du_km

    def du_to_km(self, x):
        return np.asarray(x, dtype=float) * self.du_km

    def kmps_to_vu(self, v):
        return np.asarray(v, dtype=float) * (self.tu_s / self.du_km)

    def vu_to_kmps(self, v):
        return np.asarray(v, dtype=float) * (self.du_km / self.tu_s)

    def kmps2_to_au(self, a):
        return np.asarray(a, dtype=float) * (self.tu_s**2 / self.du_km)

    def au_to_kmps2(self, a):
        return np.asarray(a, dtype=float) * (self.du_km / self.tu_s**2)

    def s_to_tu(self, t):
        return np.asarray(t, dtype=float) / self.tu_s

    def tu_to_s(self, t):
        return np.asarray(t, dtype=float) * self.tu_s

    def accel_psd_to_norm(self, q):
        """Convert an acceleration-noise PSD from km^2/s^3 to DU^2/TU^3."""
        return float(q) * (self.tu_s**3 / self.du_km**2)

    def state_to_km(self, state):
        state = np.asarray(state, dtype=float)
        out = np.empty(6)
        out[:3] = self.du_to_km(state[:3])
        out[3:] = self.vu_to_kmps(state[3:])
        return out

    def state_to_norm(self, state_km):
        state_km = np.asarray(state_km, dtype=float)
        out = np.empty(6)
        out[:3] = self.km_to_du(state_km[:3])
        out[3:] = self.kmps_to_vu(state_km[3:])
        return out


@dataclass(frozen=True)
class Stm:
    """State transition derivatives over an arc.

    ``first_order[i, a]`` is d x_i(t1) / d x_a(t0); ``second_order[i, a, b]``
    (when carried) is d^2 x_i(t1) / d x_a(t0) d x_b(t0), symmetric in the
    trailing index pair.
    """

    first_order: np.ndarray
    second_order: np.ndarray | None = None


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing sequence of node epochs, in TU."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if not np.all(np.diff(nodes) > 0.0):
            raise ValueError("time grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @property
    def intervals(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def tf(self) -> float:
        return float(self.nodes[-1])

    def __len__(self) -> int:
        return self.nodes.size


class FohControl:
    """First-order-hold (piecewise linear) control profile u(t), in DU/TU^2."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("FOH control needs at least two breakpoints")
        if not np.all(np.diff(self.times) > 0.0):
            raise ValueError("FOH control breakpoints must be increasing")
        if self.values.shape != (self.times.size, 3):
            raise ValueError("control values must have shape (n_times, 3)")

    def __call__(self, t: float) -> np.ndarray:
        times, values = self.times, self.values
        if t <= times[0]:
            return values[0]
        if t >= times[-1]:
            return values[-1]
        k = int(np.searchsorted(times, t) - 1)
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - w) * values[k] + w * values[k + 1]


def _primary_offsets(state, mu, r_floor):
    """Offsets from each primary and their distances, with singularity guard."""
    x, y, z = state[0], state[1], state[2]
    d1 = np.array([x + mu, y, z])
    d2 = np.array([x + mu - 1.0, y, z])
    r1 = math.sqrt(d1[0] ** 2 + y * y + z * z)
    r2 = math.sqrt(d2[0] ** 2 + y * y + z * z)
    if r1 < r_floor or r2 < r_floor:
        raise SingularPositionError(
            f"state within {r_floor} DU of a primary (r1={r1:.3e}, r2={r2:.3e})"
        )
    return d1, d2, r1, r2


def crtbp_accel(state, params: SystemParameters) -> np.ndarray:
    """Rotating-frame acceleration of the third body, in DU/TU^2."""
    state = np.asarray(state, dtype=float)
    mu = params.mu
    d1, d2, r1, r2 = _primary_offsets(state, mu, params.r_floor)
    x, y = state[0], state[1]
    vx, vy = state[3], state[4]
    grav = -(1.0 - mu) / r1**3 * d1 - mu / r2**3 * d2
    return np.array(
        [
            2.0 * vy + x + grav[0],
            -2.0 * vx + y + grav[1],
            grav[2],
        ]
    )


def crtbp_vector_field(state, params: SystemParameters) -> np.ndarray:
    """Full state derivative [v; a] of the uncontrolled dynamics."""
    state = np.asarray(state, dtype=float)
    out = np.empty(6)
    out[:3] = state[3:]
    out[3:] = crtbp_accel(state, params)
    return out


def crtbp_jacobian(state, params: SystemParameters) -> np.ndarray:
    """Jacobian d f / d state of the uncontrolled vector field, shape (6, 6)."""
    state = np.asarray(state, dtype=float)
    mu = params.mu
    d1, d2, r1, r2 = _primary_offsets(state, mu, params.r_floor)

    # Gravity gradient: sum over primaries of gm (3 d d^T / r^5 - I / r^3).
    grad = np.zeros((3, 3))
    for gm, d, r in (((1.0 - mu), d1, r1), (mu, d2, r2)):
        grad += gm * (3.0 * np.outer(d, d) / r**5 - np.eye(3) / r**3)
    grad[0, 0] += 1.0  # centrifugal
    grad[1, 1] += 1.0

    jac = np.zeros((6, 6))
    jac[:3, 3:] = np.eye(3)
    jac[3:, :3] = grad
    jac[3, 4] = 2.0  # Coriolis
    jac[4, 3] = -2.0
    return jac


def crtbp_hessian(state, params: SystemParameters) -> np.ndarray:
    """Second partials d^2 f_i / d state_a d state_b, shape (6, 6, 6).

    Only the acceleration rows against position pairs are nonzero; the
    accelerations are linear in velocity.
    """
    state = np.asarray(state, dtype=float)
    mu = params.mu
    d1, d2, r1, r2 = _primary_offsets(state, mu, params.r_floor)

    eye = np.eye(3)
    gg = np.zeros((3, 3, 3))
    for gm, d, r in (((1.0 - mu), d1, r1), (mu, d2, r2)):
        ddd = np.einsum("i,j,k->ijk", d, d, d)
        sym = (
            np.einsum("ij,k->ijk", eye, d)
            + np.einsum("ik,j->ijk", eye, d)
            + np.einsum("jk,i->ijk", eye, d)
        )
        gg += gm * (3.0 * sym / r**5 - 15.0 * ddd / r**7)

    hess = np.zeros((6, 6, 6))
    hess[3:, :3, :3] = gg
    return hess


def jacobi_constant(state, params: SystemParameters) -> float:
    """Jacobi integral C = 2*Omega - v^2 (conserved along coast arcs)."""
    state = np.asarray(state, dtype=float)
    _, _, r1, r2 = _primary_offsets(state, params.mu, params.r_floor)
    x, y = state[0], state[1]
    v2 = float(np.dot(state[3:], state[3:]))
    return x * x + y * y + 2.0 * (1.0 - params.mu) / r1 + 2.0 * params.mu / r2 - v2


# ---------------------------------------------------------------------------
# Propagation


def _solve(fun, t0, t1, y0, params, t_eval=None, dense_output=False,
           events=None, method="DOP853"):
    if t1 == t0 and not dense_output:
        raise ValueError("degenerate span must be handled by the caller")
    sol = solve_ivp(
        fun,
        (t0, t1),
        y0,
        method=method,
        rtol=params.rtol,
        atol=params.atol,
        t_eval=t_eval,
        dense_output=dense_output,
        events=events,
    )
    if not sol.success:
        raise PropagationError(f"integrator failed: {sol.message}")
    return sol


def _control_rhs(params: SystemParameters, control: FohControl | None):
    """Integrator RHS for the (optionally thrusted) dynamics.

    Two-breakpoint FOH profiles, the planner's segment case, run on the
    compiled kernel; anything else falls back to the generic closure.
    """
    mu = params.mu
    if control is None:
        return lambda t, y: _kernels.rhs_coast(y, mu)
    if control.times.size == 2:
        ct0, ct1 = float(control.times[0]), float(control.times[1])
        u0 = np.ascontiguousarray(control.values[0])
        u1 = np.ascontiguousarray(control.values[1])
        return lambda t, y: _kernels.rhs_foh(y, mu, t, ct0, ct1, u0, u1)

    def rhs(t, y):
        out = crtbp_vector_field(y, params)
        out[3:] += control(t)
        return out

    return rhs


def propagate(state, t0: float, t1: float, params: SystemParameters,
              control: FohControl | None = None) -> np.ndarray:
    """Propagate a state from t0 to t1 under optional FOH thrust acceleration.

    Backward spans (t1 < t0) are supported; they are used to trace boundary
    reference orbits into the past.
    """
    state = np.asarray(state, dtype=float)
    if t1 == t0:
        return state.copy()
    sol = _solve(_control_rhs(params, control), t0, t1, state, params)
    return sol.y[:, -1].copy()


def _stm_rhs(params, order, control):
    """RHS of the joint state / first- / second-order variational system."""
    mu = params.mu
    zero3 = np.zeros(3)
    if control is None:
        return lambda t, y: _kernels.rhs_stm(y, mu, order, False, 0.0, 0.0,
                                             1.0, zero3, zero3)
    if control.times.size == 2:
        ct0, ct1 = float(control.times[0]), float(control.times[1])
        u0 = np.ascontiguousarray(control.values[0])
        u1 = np.ascontiguousarray(control.values[1])
        return lambda t, y: _kernels.rhs_stm(y, mu, order, True, t, ct0, ct1,
                                             u0, u1)

    n1 = 6 + 36

    def rhs(t, y):
        x = y[:6]
        phi = y[6:n1].reshape(6, 6)
        a = crtbp_jacobian(x, params)
        dx = np.empty(6)
        dx[:3] = x[3:]
        dx[3:] = crtbp_accel(x, params) + control(t)
        dphi = a @ phi
        if order == 1:
            return np.concatenate((dx, dphi.ravel()))
        psi2 = y[n1:].reshape(6, 6, 6)
        hess = crtbp_hessian(x, params)
        dpsi2 = np.einsum("ij,jab->iab", a, psi2)
        dpsi2 += np.einsum("ijk,ja,kb->iab", hess, phi, phi)
        return np.concatenate((dx, dphi.ravel(), dpsi2.ravel()))

    return rhs


def propagate_with_stm(state, t0: float, t1: float, params: SystemParameters,
                       order: int = 1,
                       control: FohControl | None = None) -> tuple[np.ndarray, Stm]:
    """Propagate a state together with its state transition derivatives.

    With ``order=2`` the second-order transition tensor is integrated
    alongside the state and STM. Zero control is the default (coast arcs
    and observation windows); an FOH control may be supplied for covariance
    propagation across thrust arcs.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    state = np.asarray(state, dtype=float)
    if t1 == t0:
        second = np.zeros((6, 6, 6)) if order == 2 else None
        return state.copy(), Stm(np.eye(6), second)

    y0 = np.concatenate((state, np.eye(6).ravel()))
    if order == 2:
        y0 = np.concatenate((y0, np.zeros(216)))
    sol = _solve(_stm_rhs(params, order, control), t0, t1, y0, params)
    yf = sol.y[:, -1]
    phi = yf[6:42].reshape(6, 6).copy()
    second = yf[42:].reshape(6, 6, 6).copy() if order == 2 else None
    return yf[:6].copy(), Stm(phi, second)


def stm_history(state, t0: float, epochs, params: SystemParameters,
                order: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """States and transition derivatives from t0 at each requested epoch.

    Returns ``(states, phis, psi2s)`` with shapes (n, 6), (n, 6, 6) and,
    for ``order=2``, (n, 6, 6, 6); all derivatives are taken with respect
    to the state at t0. Epochs must be non-decreasing with ``epochs[0] >= t0``.
    Coast dynamics only.
    """
    epochs = np.asarray(epochs, dtype=float)
    if epochs.ndim != 1 or epochs.size == 0:
        raise ValueError("need at least one epoch")
    if np.any(np.diff(epochs) < 0.0) or epochs[0] < t0:
        raise ValueError("epochs must be non-decreasing and start at or after t0")

    state = np.asarray(state, dtype=float)
    n = epochs.size
    states = np.empty((n, 6))
    phis = np.empty((n, 6, 6))
    psi2s = np.empty((n, 6, 6, 6)) if order == 2 else None

    y0 = np.concatenate((state, np.eye(6).ravel()))
    if order == 2:
        y0 = np.concatenate((y0, np.zeros(216)))

    start = 0
    if epochs[0] == t0:
        states[0] = state
        phis[0] = np.eye(6)
        if order == 2:
            psi2s[0] = 0.0
        start = 1
    if start < n:
        sol = _solve(_stm_rhs(params, order, None), t0, epochs[-1], y0, params,
                     t_eval=epochs[start:])
        ys = sol.y.T
        states[start:] = ys[:, :6]
        phis[start:] = ys[:, 6:42].reshape(-1, 6, 6)
        if order == 2:
            psi2s[start:] = ys[:, 42:].reshape(-1, 6, 6, 6)
    return states, phis, psi2s


# ---------------------------------------------------------------------------
# Reference period


def reference_period(state0, params: SystemParameters,
                     max_time: float = 50.0, scan_step: float = 0.05,
                     tol: float = 1e-12) -> float:
    """Period of a planar symmetric periodic orbit from its y=0 crossing state.

    Locates the second y=0 crossing of the coasting trajectory by sign scan
    plus bisection on the dense solution. For an orbit launched from a
    perpendicular crossing (y = 0, vx = 0) the second crossing closes the
    revolution.
    """
    state0 = np.asarray(state0, dtype=float)
    if abs(state0[1]) > 1e-9:
        raise ValueError("period finder expects an initial state on the y=0 section")

    sol = _solve(_control_rhs(params, None), 0.0, max_time,
                 state0, params, dense_output=True)

    def y_of(t):
        return sol.sol(t)[1]

    crossings = []
    t_prev = scan_step
    y_prev = y_of(t_prev)
    t = t_prev + scan_step
    while t <= max_time and len(crossings) < 2:
        y = y_of(t)
        if y_prev == 0.0:
            crossings.append(t_prev)
        elif y_prev * y < 0.0:
            lo, hi = t_prev, t
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if y_of(lo) * y_of(mid) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            crossings.append(0.5 * (lo + hi))
        t_prev, y_prev = t, y
        t += scan_step
    if len(crossings) < 2:
        raise PropagationError("no second y=0 crossing found; not a periodic orbit?")
    return float(crossings[1])


# ---------------------------------------------------------------------------
# Sundman node generation


def sundman_nodes(state0, t0: float, tf: float, sigma: float, n_nodes: int,
                  params: SystemParameters) -> TimeGrid:
    """Time nodes spaced uniformly in the Sundman variable dt = r_m^sigma dtau.

    The coasting reference trajectory from ``state0`` regulates the node
    density: positive ``sigma`` concentrates nodes near perilune. The tau
    endpoint is located by bisection so the final epoch equals ``tf`` within
    1e-9 TU; node epochs span exactly [t0, tf].
    """
    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    if tf <= t0:
        raise ValueError("tf must exceed t0")

    state0 = np.asarray(state0, dtype=float)
    if sigma == 0.0:
        return TimeGrid(np.linspace(t0, tf, n_nodes))

    mu = params.mu

    def rhs(tau, z):
        return _kernels.rhs_sundman(z, mu, sigma)

    # dt/dtau > 0, so t(tau) is strictly increasing; integrate past tf and
    # bisect on the dense solution for the tau endpoint.
    z0 = np.concatenate((state0, [t0]))
    tau_max = 2.0 * (tf - t0)
    for _ in range(60):
        sol = _solve(rhs, 0.0, tau_max, z0, params, dense_output=True)
        if sol.sol(tau_max)[6] >= tf:
            break
        tau_max *= 2.0
    else:
        raise PropagationError("Sundman span search failed to bracket tf")

    lo, hi = 0.0, tau_max
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if sol.sol(mid)[6] < tf:
            lo = mid
        else:
            hi = mid
        if abs(sol.sol(0.5 * (lo + hi))[6] - tf) < 1e-12:
            break
    tau_end = 0.5 * (lo + hi)

    taus = np.linspace(0.0, tau_end, n_nodes)
    nodes = np.array([sol.sol(tau)[6] for tau in taus])
    nodes[0] = t0
    nodes[-1] = tf
    if abs(sol.sol(tau_end)[6] - tf) > 1e-9:
        raise PropagationError("Sundman endpoint bisection missed tf")
    return TimeGrid(nodes)


# ---------------------------------------------------------------------------
# Process noise


def process_noise_segment(q_psd: float, dt: float,
                          stm: np.ndarray | None = None) -> np.ndarray:
    """White-acceleration process noise integrated over one segment.

    State-noise-compensation closed form for a PSD ``q_psd`` (DU^2/TU^3)
    acting on the velocity channels over ``dt`` TU. The ``stm`` argument is
    accepted for interface compatibility with transition-weighted variants
    and is not used by the closed form.
    """
    if q_psd < 0.0:
        raise ValueError("process noise PSD must be nonnegative")
    if dt <= 0.0:
        raise ValueError("segment duration must be positive")
    eye = np.eye(3)
    q = np.zeros((6, 6))
    q[:3, :3] = dt**3 / 3.0 * eye
    q[:3, 3:] = dt**2 / 2.0 * eye
    q[3:, :3] = dt**2 / 2.0 * eye
    q[3:, 3:] = dt * eye
    return q_psd * q
