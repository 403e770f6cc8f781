"""Linear-covariance (CRLB) evaluation of planned trajectories.

The estimator-performance oracle is the covariance recursion of a Kalman
filter linearized about the planned reference: propagate the augmented
covariance across every grid segment, update it at each measurement epoch
(Joseph form), and report per-object position RMS histories. The same
recursion, restricted to an observation window, reproduces the batch
mutual information as a sum of innovation log-determinants and serves as
the cross-validation oracle for the information module. Total impulse uses
the planner's trapezoid quadrature, and a Pareto sweep maps the homotopy
weight to (impulse, terminal RMS) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .discretization import TrajectoryIterate
from .dynamics import SystemParameters, process_noise_segment, propagate_with_stm
from .information import (
    NotPositiveDefiniteError,
    WindowSystem,
    logdet_psd,
)
from .measurements import MeasurementModel, measure_jacobians
from .scenario import Scenario

__all__ = [
    "CovarianceHistory",
    "ParetoPoint",
    "crlb_run",
    "total_impulse",
    "trapezoid_impulse",
    "sequential_mutual_information",
    "kalman_update",
    "pareto_sweep",
]


@dataclass
class CovarianceHistory:
    """Augmented covariance along a trajectory, before and after updates.

    ``rms_position_km[k, o]`` is the post-update root-sum-square position
    uncertainty of object ``o`` (observer first) at epoch ``k``.
    """

    epochs: np.ndarray
    pre_update: np.ndarray
    post_update: np.ndarray
    rms_position_km: np.ndarray
    is_measurement: np.ndarray

    def rms_at(self, epoch: float, atol: float = 1e-9) -> np.ndarray:
        k = int(np.argmin(np.abs(self.epochs - epoch)))
        if abs(self.epochs[k] - epoch) > atol:
            raise ValueError(f"no history epoch at t = {epoch}")
        return self.rms_position_km[k]


@dataclass
class ParetoPoint:
    """One homotopy-weight sample of the impulse / estimability trade."""

    alpha_h: float
    total_impulse_km_s: float
    avg_impulse_km_s_per_day: float
    terminal_rms_km: np.ndarray
    converged: bool
    mutual_information: float = float("nan")
    failure: str | None = None


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def kalman_update(p_bar: np.ndarray, h: np.ndarray,
                  r: np.ndarray) -> tuple[np.ndarray, float]:
    """Joseph-form covariance update; returns (P_hat, logdet innovation)."""
    s = h @ p_bar @ h.T + r
    try:
        chol = cho_factor(_symmetrize(s), lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"innovation covariance not positive definite: {exc}"
        ) from exc
    gain = cho_solve(chol, h @ p_bar).T
    ikh = np.eye(p_bar.shape[0]) - gain @ h
    p_hat = _symmetrize(ikh @ p_bar @ ikh.T + gain @ r @ gain.T)
    logdet_s = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    return p_hat, logdet_s


def sequential_mutual_information(system: WindowSystem) -> float:
    """Window mutual information as the innovation log-det chain sum.

    Runs the covariance recursion of a sequential filter on the window
    linearization and accumulates ``0.5 * (logdet S_j - logdet R)``; equal
    to the batch block-matrix value by the innovations factorization.
    """
    n_obj = system.n_objects
    logdet_r = logdet_psd(system.r_block)
    p = system.p0.copy()
    total = 0.0
    for j in range(system.n_meas):
        if j > 0:
            phi = system.phi_augmented(j, j - 1)
            p = _symmetrize(phi @ p @ phi.T) + system.q_blocks[j - 1]
        p, logdet_s = kalman_update(p, system.h_blocks[j], system.r_block)
        total += logdet_s - logdet_r
    return 0.5 * total


def trapezoid_impulse(grid_nodes: np.ndarray, controls: np.ndarray) -> float:
    """Trapezoid quadrature of the control norm along the grid (DU/TU)."""
    norms = np.linalg.norm(controls, axis=1)
    dts = np.diff(grid_nodes)
    return float(np.sum(0.5 * dts * (norms[:-1] + norms[1:])))


def total_impulse(trajectory: TrajectoryIterate,
                  params: SystemParameters) -> float:
    """Total impulse of the trajectory in km/s."""
    impulse = trapezoid_impulse(trajectory.grid.nodes, trajectory.controls)
    return float(params.vu_to_kmps(impulse))


def _measurement_node_map(trajectory: TrajectoryIterate, scenario: Scenario,
                          params: SystemParameters) -> dict[int, bool]:
    """Grid-node indices carrying a measurement; errors if epochs miss nodes."""
    nodes = trajectory.grid.nodes
    flags: dict[int, bool] = {}
    for sw in scenario.windows:
        for epoch in sw.window.measurement_epochs(params):
            k = int(np.argmin(np.abs(nodes - epoch)))
            if abs(nodes[k] - epoch) > 1e-9:
                raise ValueError(
                    f"measurement epoch t = {epoch:.9f} TU is not a trajectory "
                    "node; the trajectory does not cover this scenario"
                )
            flags[k] = True
    return flags


def _augmented_h(model: MeasurementModel, observer_state,
                 target_states) -> np.ndarray:
    n_t = len(target_states)
    m = model.dimension
    h = np.zeros((m * n_t, 6 * (n_t + 1)))
    for i, target in enumerate(target_states):
        d_sensor, d_target = measure_jacobians(model, target, observer_state)
        rows = slice(m * i, m * (i + 1))
        h[rows, :6] = d_sensor
        h[rows, 6 * (i + 1): 6 * (i + 2)] = d_target
    return h


def crlb_run(trajectory: TrajectoryIterate, scenario: Scenario,
             model: MeasurementModel | None = None,
             params: SystemParameters | None = None) -> CovarianceHistory:
    """Covariance recursion along the planned trajectory.

    Alternates ``P <- Phi P Phi^T + Q`` over grid segments (observer
    transition taken along the controlled reference, targets ballistic)
    with Joseph-form updates at measurement epochs. Priors and process
    noise come from the scenario; linearization states are the trajectory
    nodes and the propagated catalog means.
    """
    model = model if model is not None else scenario.model
    params = params if params is not None else scenario.params

    nodes = trajectory.grid.nodes
    n_nodes = nodes.size
    n_t = scenario.n_targets
    n_obj = n_t + 1
    n_aug = 6 * n_obj
    meas_nodes = _measurement_node_map(trajectory, scenario, params)
    r_aug = np.kron(np.eye(n_t), model.noise_cov)

    # Ballistic target states and per-segment transition blocks.
    target_states = np.empty((n_t, n_nodes, 6))
    target_states[:, 0] = scenario.target_initials
    seg_phis = np.empty((n_nodes - 1, n_obj, 6, 6))
    for i in range(n_t):
        state = scenario.target_initials[i]
        for k in range(n_nodes - 1):
            state, stm = propagate_with_stm(state, nodes[k], nodes[k + 1], params)
            target_states[i, k + 1] = state
            seg_phis[k, i + 1] = stm.first_order
    for k in range(n_nodes - 1):
        _, stm = propagate_with_stm(
            trajectory.states[k], nodes[k], nodes[k + 1], params,
            control=trajectory.segment_control(k),
        )
        seg_phis[k, 0] = stm.first_order

    pre = np.empty((n_nodes, n_aug, n_aug))
    post = np.empty_like(pre)
    p = scenario.prior.augmented()

    def update_if_measured(k, p_now):
        if not meas_nodes.get(k, False):
            return p_now
        h = _augmented_h(model, trajectory.states[k], target_states[:, k])
        p_new, _ = kalman_update(p_now, h, r_aug)
        return p_new

    pre[0] = p
    p = update_if_measured(0, p)
    post[0] = p
    for k in range(1, n_nodes):
        dt = nodes[k] - nodes[k - 1]
        phi = np.zeros((n_aug, n_aug))
        q = np.zeros((n_aug, n_aug))
        for o in range(n_obj):
            sl = slice(6 * o, 6 * (o + 1))
            phi[sl, sl] = seg_phis[k - 1, o]
            q[sl, sl] = process_noise_segment(scenario.prior.q_psd[o], dt)
        p = _symmetrize(phi @ p @ phi.T) + q
        pre[k] = p
        p = update_if_measured(k, p)
        post[k] = p

    rms = np.empty((n_nodes, n_obj))
    for k in range(n_nodes):
        for o in range(n_obj):
            sl = slice(6 * o, 6 * o + 3)
            rms[k, o] = float(params.du_to_km(np.sqrt(np.trace(post[k][sl, sl]))))

    flags = np.zeros(n_nodes, dtype=bool)
    for k in meas_nodes:
        flags[k] = True
    return CovarianceHistory(
        epochs=nodes.copy(),
        pre_update=pre,
        post_update=post,
        rms_position_km=rms,
        is_measurement=flags,
    )


def terminal_rms(history: CovarianceHistory, scenario: Scenario,
                 params: SystemParameters | None = None) -> np.ndarray:
    """Post-update RMS at the last measurement epoch of the last window."""
    params = params if params is not None else scenario.params
    last_epoch = scenario.windows[-1].window.measurement_epochs(params)[-1]
    return history.rms_at(last_epoch)


def pareto_sweep(scenario: Scenario, alpha_grid, settings=None) -> list[ParetoPoint]:
    """One planning run plus CRLB evaluation per homotopy weight.

    Points are returned in input order; a failed or non-converged point is
    flagged rather than dropped, and its failure reason recorded.
    """
    from . import scvx  # deferred: scvx depends on this module's impulse helper

    alpha_grid = list(alpha_grid)
    if not alpha_grid:
        raise ValueError("alpha_grid must not be empty")

    points: list[ParetoPoint] = []
    duration_days = scenario.duration * scenario.params.tu_s / 86400.0
    n_obj = scenario.n_targets + 1
    for alpha in alpha_grid:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha_h must lie in [0, 1], got {alpha}")
        try:
            report = scvx.solve(scenario, alpha, settings)
            impulse = total_impulse(report.iterate, scenario.params)
            history = crlb_run(report.iterate, scenario)
            rms = terminal_rms(history, scenario)
            points.append(ParetoPoint(
                alpha_h=float(alpha),
                total_impulse_km_s=impulse,
                avg_impulse_km_s_per_day=impulse / duration_days,
                terminal_rms_km=rms,
                converged=report.converged,
                mutual_information=report.mutual_information,
            ))
        except Exception as exc:  # record, keep sweeping
            points.append(ParetoPoint(
                alpha_h=float(alpha),
                total_impulse_km_s=float("nan"),
                avg_impulse_km_s_per_day=float("nan"),
                terminal_rms_km=np.full(n_obj, np.nan),
                converged=False,
                failure=f"{type(exc).__name__}: {exc}",
            ))
    return points
