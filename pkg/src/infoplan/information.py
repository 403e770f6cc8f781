"""Mutual information of an observation window and its observer-state gradient.

Over a coasting observation window the sensor collects synchronous
measurements of every catalog target at a fixed cadence. Stacking the
measurement residuals over the window against the independent error
sources (the augmented prior at the window start plus the per-interval
process noise) yields a linear-Gaussian model

    dY = H~ xi + w,   cov(xi) = P~,   cov(w) = R~,

whose mutual information with the stacked state sequence is
``0.5 * (logdet(H~ P~ H~^T + R~) - logdet R~)``. The gradient of that
quantity with respect to the sensor state at the window-start epoch is
assembled blockwise from measurement second derivatives and second-order
state transition tensors of the sensor flow; the prior and process-noise
blocks are held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dynamics import SystemParameters, process_noise_segment, stm_history
from .measurements import MeasurementModel, measure_hessian, measure_jacobians

__all__ = [
    "SECONDS_PER_DAY",
    "ObservationWindow",
    "AugmentedPrior",
    "InformationBlocks",
    "WindowSystem",
    "NotPositiveDefiniteError",
    "assemble_window_system",
    "assemble_blocks",
    "blocks_from_system",
    "mutual_information",
    "mi_gradient",
    "mi_linearize",
    "logdet_psd",
]

SECONDS_PER_DAY = 86400.0


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix required to be positive definite fails factorization."""


@dataclass(frozen=True)
class ObservationWindow:
    """A coast interval with measurements taken at fixed cadence.

    Epochs are in TU; the cadence is in measurements per day. Measurement
    epochs are ``t_start + j * dt_meas`` for ``j = 0..n_meas-1`` with
    ``dt_meas = day / cadence`` converted to TU, truncated at ``t_end``.
    ``anchor_node`` optionally records the planner grid index of ``t_start``.
    """

    t_start: float
    t_end: float
    cadence_per_day: float
    anchor_node: int | None = None

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("window start must precede its end")
        if self.cadence_per_day <= 0.0:
            raise ValueError("cadence must be positive")

    def measurement_epochs(self, params: SystemParameters) -> np.ndarray:
        dt = SECONDS_PER_DAY / self.cadence_per_day / params.tu_s
        n = int(np.floor((self.t_end - self.t_start) / dt + 1e-9)) + 1
        return self.t_start + dt * np.arange(n)


@dataclass(frozen=True)
class AugmentedPrior:
    """Covariance blocks of the augmented state and per-object noise PSDs.

    ``sensor_cov`` and each entry of ``target_covs`` are 6x6 covariances at
    the epoch the caller anchors them to; ``q_psd`` holds one white
    acceleration PSD (DU^2/TU^3) per object, sensor first (a scalar is
    broadcast to all objects).
    """

    sensor_cov: np.ndarray
    target_covs: tuple[np.ndarray, ...]
    q_psd: np.ndarray

    def __post_init__(self):
        sensor = np.asarray(self.sensor_cov, dtype=float)
        targets = tuple(np.asarray(c, dtype=float) for c in self.target_covs)
        q = np.atleast_1d(np.asarray(self.q_psd, dtype=float))
        for cov in (sensor, *targets):
            if cov.shape != (6, 6):
                raise ValueError("covariance blocks must be 6x6")
            if not np.allclose(cov, cov.T):
                raise ValueError("covariance blocks must be symmetric")
            if np.any(np.linalg.eigvalsh(cov) <= 0.0):
                raise ValueError("covariance blocks must be positive definite")
        if q.size == 1:
            q = np.full(1 + len(targets), float(q[0]))
        if q.size != 1 + len(targets):
            raise ValueError("need one process-noise PSD per object")
        if np.any(q < 0.0):
            raise ValueError("process-noise PSDs must be nonnegative")
        object.__setattr__(self, "sensor_cov", sensor)
        object.__setattr__(self, "target_covs", targets)
        object.__setattr__(self, "q_psd", q)

    @property
    def n_targets(self) -> int:
        return len(self.target_covs)

    def augmented(self) -> np.ndarray:
        """Block-diagonal augmented covariance, sensor block first."""
        n = 6 * (1 + self.n_targets)
        out = np.zeros((n, n))
        out[:6, :6] = self.sensor_cov
        for i, cov in enumerate(self.target_covs):
            sl = slice(6 * (i + 1), 6 * (i + 2))
            out[sl, sl] = cov
        return out


@dataclass(frozen=True)
class InformationBlocks:
    """Stacked measurement sensitivity H~, prior P~, and noise R~."""

    h_tilde: np.ndarray
    p_tilde: np.ndarray
    r_tilde: np.ndarray
    n_meas: int
    n_targets: int
    meas_dim: int


@dataclass(frozen=True)
class WindowSystem:
    """Per-epoch linearization of the observation window.

    ``phis[o, j]`` is the state transition matrix of object ``o`` (sensor
    first) from the window start to measurement epoch ``j``; ``h_blocks[j]``
    is the augmented measurement Jacobian at epoch ``j``; ``q_blocks[j-1]``
    is the augmented process noise accumulated over (epoch j-1, epoch j).
    The same arrays drive the batch information blocks, the information
    gradient (which additionally needs ``sensor_psi2``), and the sequential
    covariance recursion used to cross-validate them.
    """

    epochs: np.ndarray
    sensor_states: np.ndarray
    target_states: np.ndarray
    h_blocks: np.ndarray
    phis: np.ndarray
    q_blocks: np.ndarray
    p0: np.ndarray
    r_block: np.ndarray
    sensor_psi2: np.ndarray | None = None

    @property
    def n_meas(self) -> int:
        return self.epochs.size

    @property
    def n_objects(self) -> int:
        return self.phis.shape[0]

    @property
    def n_targets(self) -> int:
        return self.n_objects - 1

    @property
    def meas_dim(self) -> int:
        return self.r_block.shape[0] // self.n_targets

    def phi_augmented(self, j: int, ell: int) -> np.ndarray:
        """Block-diagonal transition of the augmented state from epoch ell to j."""
        n = 6 * self.n_objects
        out = np.zeros((n, n))
        for o in range(self.n_objects):
            sl = slice(6 * o, 6 * (o + 1))
            if ell == 0:
                out[sl, sl] = self.phis[o, j]
            else:
                # Phi(t_j, t_l) = Phi(t_j, t_0) Phi(t_l, t_0)^-1 by a solve
                out[sl, sl] = np.linalg.solve(self.phis[o, ell].T, self.phis[o, j].T).T
        return out


def assemble_window_system(window: ObservationWindow, sensor_state_at_anchor,
                           target_states_at_anchor, prior: AugmentedPrior,
                           model: MeasurementModel, params: SystemParameters,
                           sensor_order: int = 1) -> WindowSystem:
    """Propagate all objects across the window and linearize each measurement.

    ``sensor_order=2`` additionally carries the second-order transition
    tensor of the sensor flow, required by the information gradient.
    """
    targets0 = [np.asarray(t, dtype=float) for t in target_states_at_anchor]
    n_t = len(targets0)
    if n_t != prior.n_targets:
        raise ValueError("prior and target list disagree on the number of targets")
    if n_t == 0:
        raise ValueError("need at least one target")

    epochs = window.measurement_epochs(params)
    n_meas = epochs.size
    n_obj = n_t + 1
    m = model.dimension

    sensor_states, sensor_phis, sensor_psi2 = stm_history(
        np.asarray(sensor_state_at_anchor, dtype=float), window.t_start, epochs,
        params, order=sensor_order,
    )
    phis = np.empty((n_obj, n_meas, 6, 6))
    phis[0] = sensor_phis
    target_states = np.empty((n_t, n_meas, 6))
    for i, t0 in enumerate(targets0):
        states, tphis, _ = stm_history(t0, window.t_start, epochs, params)
        target_states[i] = states
        phis[i + 1] = tphis

    h_blocks = np.zeros((n_meas, m * n_t, 6 * n_obj))
    for j in range(n_meas):
        for i in range(n_t):
            d_sensor, d_target = measure_jacobians(
                model, target_states[i, j], sensor_states[j]
            )
            rows = slice(m * i, m * (i + 1))
            h_blocks[j, rows, :6] = d_sensor
            h_blocks[j, rows, 6 * (i + 1): 6 * (i + 2)] = d_target

    q_blocks = np.zeros((max(n_meas - 1, 0), 6 * n_obj, 6 * n_obj))
    for j in range(1, n_meas):
        dt = epochs[j] - epochs[j - 1]
        for o in range(n_obj):
            sl = slice(6 * o, 6 * (o + 1))
            q_blocks[j - 1][sl, sl] = process_noise_segment(prior.q_psd[o], dt)

    r_block = np.kron(np.eye(n_t), model.noise_cov)
    return WindowSystem(
        epochs=epochs,
        sensor_states=sensor_states,
        target_states=target_states,
        h_blocks=h_blocks,
        phis=phis,
        q_blocks=q_blocks,
        p0=prior.augmented(),
        r_block=r_block,
        sensor_psi2=sensor_psi2,
    )


def assemble_blocks(window: ObservationWindow, sensor_state_at_anchor,
                    target_states_at_anchor, prior: AugmentedPrior,
                    model: MeasurementModel,
                    params: SystemParameters) -> InformationBlocks:
    """Stack the window linearization into the H~, P~, R~ block matrices.

    Block (j, l) of H~ is ``H_j Phi_A(t_j, t_l)`` for ``l <= j`` and zero
    above the diagonal; P~ carries the anchor-epoch prior followed by the
    per-interval process noise; R~ repeats the single-trial noise matrix
    once per epoch.
    """
    system = assemble_window_system(
        window, sensor_state_at_anchor, target_states_at_anchor, prior, model, params
    )
    return blocks_from_system(system)


def blocks_from_system(system: WindowSystem) -> InformationBlocks:
    n_meas = system.n_meas
    n_t = system.n_targets
    m = system.meas_dim
    ns = 6 * system.n_objects

    h_tilde = np.zeros((m * n_t * n_meas, ns * n_meas))
    for j in range(n_meas):
        rows = slice(m * n_t * j, m * n_t * (j + 1))
        for ell in range(j + 1):
            cols = slice(ns * ell, ns * (ell + 1))
            if ell == j:
                h_tilde[rows, cols] = system.h_blocks[j]
            else:
                h_tilde[rows, cols] = system.h_blocks[j] @ system.phi_augmented(j, ell)

    p_tilde = np.zeros((ns * n_meas, ns * n_meas))
    p_tilde[:ns, :ns] = system.p0
    for j in range(1, n_meas):
        sl = slice(ns * j, ns * (j + 1))
        p_tilde[sl, sl] = system.q_blocks[j - 1]

    r_tilde = np.kron(np.eye(n_meas), system.r_block)
    return InformationBlocks(
        h_tilde=h_tilde,
        p_tilde=p_tilde,
        r_tilde=r_tilde,
        n_meas=n_meas,
        n_targets=n_t,
        meas_dim=m,
    )


def logdet_psd(mat: np.ndarray) -> float:
    """Log-determinant of a symmetric positive definite matrix via Cholesky."""
    try:
        chol, _ = cho_factor(mat, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def mutual_information(blocks: InformationBlocks) -> float:
    """Mutual information (nats) between the stacked states and measurements."""
    inner = blocks.h_tilde @ blocks.p_tilde @ blocks.h_tilde.T + blocks.r_tilde
    return 0.5 * (logdet_psd(inner) - logdet_psd(blocks.r_tilde))


def gradient_from_system(system: WindowSystem,
                         model: MeasurementModel) -> np.ndarray:
    """Gradient of the window mutual information w.r.t. the anchor sensor state.

    Evaluates ``dI/dx_s = <dH~/dx_s, (H~ P~ H~^T + R~)^-1 H~ P~>_F`` with the
    H~-block derivative split into the measurement-Hessian chain term and
    the second-order transition term of the sensor flow.
    """
    if system.sensor_psi2 is None:
        raise ValueError("gradient needs a window system with sensor_order=2")
    n_meas = system.n_meas
    n_t = system.n_targets
    m = system.meas_dim
    ns = 6 * system.n_objects

    blocks = blocks_from_system(system)
    inner = blocks.h_tilde @ blocks.p_tilde @ blocks.h_tilde.T + blocks.r_tilde
    try:
        chol = cho_factor(inner, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    gain = cho_solve(chol, blocks.h_tilde @ blocks.p_tilde)

    psi = system.phis[0]
    psi2 = system.sensor_psi2
    psi_inv = np.array([np.linalg.inv(psi[ell]) for ell in range(n_meas)])
    # v_term[l][:, :, s] = psi2_l[:, :, s] @ psi_l^-1
    v_term = np.stack(
        [np.einsum("abs,bc->acs", psi2[ell], psi_inv[ell]) for ell in range(n_meas)]
    )

    # Chain term of dH_j/dx_s: measurement Hessian against the sensor flow.
    dh = np.zeros((n_meas, m * n_t, ns, 6))
    for j in range(n_meas):
        for i in range(n_t):
            hess = measure_hessian(
                model, system.target_states[i, j], system.sensor_states[j]
            )
            chain = np.einsum("abc,cs->abs", hess, psi[j])
            rows = slice(m * i, m * (i + 1))
            dh[j, rows, :6, :] = chain
            dh[j, rows, 6 * (i + 1): 6 * (i + 2), :] = -chain

    grad = np.zeros(6)
    for j in range(n_meas):
        rows = slice(m * n_t * j, m * n_t * (j + 1))
        for ell in range(j + 1):
            cols = slice(ns * ell, ns * (ell + 1))
            g_block = gain[rows, cols]
            phi_a = np.eye(ns) if ell == j else system.phi_augmented(j, ell)
            grad += np.einsum("aps,pq,aq->s", dh[j], phi_a, g_block)
            if ell < j:
                # d Phi_S(t_j, t_l) / dx_s =
                #   (psi2_j[:, :, s] - Phi_S(t_j, t_l) psi2_l[:, :, s]) psi_l^-1
                dphi = np.einsum("abs,bc->acs", psi2[j], psi_inv[ell])
                dphi -= np.einsum("ab,bcs->acs", phi_a[:6, :6], v_term[ell])
                grad += np.einsum(
                    "ap,pqs,aq->s", system.h_blocks[j][:, :6], dphi, g_block[:, :6]
                )
    return grad


def mi_gradient(window: ObservationWindow, sensor_state_at_anchor,
                target_states_at_anchor, prior: AugmentedPrior,
                model: MeasurementModel, params: SystemParameters) -> np.ndarray:
    """d I / d (sensor state at the window-start epoch), targets held fixed."""
    system = assemble_window_system(
        window, sensor_state_at_anchor, target_states_at_anchor, prior, model,
        params, sensor_order=2,
    )
    return gradient_from_system(system, model)


def mi_linearize(window: ObservationWindow, sensor_state_at_anchor,
                 target_states_at_anchor, prior: AugmentedPrior,
                 model: MeasurementModel,
                 params: SystemParameters) -> tuple[float, np.ndarray]:
    """Mutual information at the reference anchor state and its gradient.

    The pair defines the affine model ``I(dx) = i0 + grad . dx`` consumed
    by the convex subproblem.
    """
    system = assemble_window_system(
        window, sensor_state_at_anchor, target_states_at_anchor, prior, model,
        params, sensor_order=2,
    )
    value = mutual_information(blocks_from_system(system))
    grad = gradient_from_system(system, model)
    return value, grad
