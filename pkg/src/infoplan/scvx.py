"""Successive convexification of the information-driven planning problem.

Starting from a boundary-interpolated coast, each iteration discretizes
the dynamics about the reference, linearizes the window information about
the reference anchor state, solves the convex subproblem inside a trust
region, and accepts or rejects the step by comparing the actual and
predicted decrease of the penalized nonlinear cost

    J = -alpha_h * I + (1 - alpha_h) * impulse + gamma * defect_penalty.

The trust region follows the standard four-way update on the accuracy
ratio rho; convergence requires both vanishing defects and a stalled cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .discretization import (
    TrajectoryIterate,
    defects as evaluate_defects,
    foh_discretize,
    thrust_bounds,
)
from .dynamics import (
    FohControl,
    SystemParameters,
    TimeGrid,
    process_noise_segment,
    propagate,
    propagate_with_stm,
    sundman_nodes,
)
from .evaluation import trapezoid_impulse
from .information import (
    AugmentedPrior,
    ObservationWindow,
    assemble_blocks,
    mi_linearize,
    mutual_information,
)
from .scenario import Scenario
from .subproblem import (
    SubproblemSolution,
    SubproblemStatus,
    build_subproblem,
    solve_subproblem,
    trapezoid_node_weights,
)

__all__ = [
    "ScvxSettings",
    "ScvxError",
    "IterationRecord",
    "ScvxReport",
    "settings_from_overrides",
    "nonlinear_cost",
    "linearized_cost",
    "accuracy_ratio",
    "trust_region_step",
    "initial_guess",
    "build_grid",
    "solve",
]

logger = logging.getLogger("infoplan.scvx")

_DEGENERATE_DENOMINATOR = 1e-14


class ScvxError(RuntimeError):
    """Raised when the outer loop cannot continue (with iteration context)."""


@dataclass(frozen=True)
class ScvxSettings:
    """Trust-region protocol thresholds and stopping tolerances."""

    rho0: float = 0.0
    rho1: float = 0.25
    rho2: float = 0.7
    beta_sh: float = 2.0
    beta_gr: float = 2.0
    eta0: float = 0.1
    eta_min: float = 1e-8
    eta_max: float = 10.0
    gamma: float = 1e3
    max_iters: int = 100
    tol_defect: float = 1e-8
    tol_cost: float = 1e-7

    def __post_init__(self):
        if not 0.0 <= self.rho0 < self.rho1 < self.rho2 <= 1.0:
            raise ValueError("need 0 <= rho0 < rho1 < rho2 <= 1")
        if self.beta_sh <= 1.0 or self.beta_gr <= 1.0:
            raise ValueError("shrink/growth factors must exceed 1")
        if not self.eta_min <= self.eta0 <= self.eta_max:
            raise ValueError("need eta_min <= eta0 <= eta_max")
        if self.gamma <= 0.0 or self.max_iters < 1:
            raise ValueError("gamma must be positive and max_iters >= 1")


def settings_from_overrides(overrides: dict) -> ScvxSettings:
    """ScvxSettings with config overrides applied; unknown keys are errors."""
    valid = set(ScvxSettings.__dataclass_fields__)
    unknown = set(overrides) - valid
    if unknown:
        raise ValueError(f"unknown scvx setting(s): {', '.join(sorted(unknown))}")
    return ScvxSettings(**overrides)


@dataclass
class IterationRecord:
    iteration: int
    j_candidate: float
    l_candidate: float
    rho: float
    eta: float
    max_defect: float
    accepted: bool


@dataclass
class ScvxReport:
    """Converged (or best-effort) iterate plus the iteration history."""

    iterate: TrajectoryIterate
    history: list[IterationRecord]
    converged: bool
    iterations: int
    objective: float
    mutual_information: float
    total_impulse: float
    max_defect: float
    zero_thrust: np.ndarray
    anchor_nodes: list[int]


# ---------------------------------------------------------------------------
# Grid construction and initial guess


def _merge_epochs(nodes: np.ndarray, anchors, min_gap: float = 1e-3) -> np.ndarray:
    """Insert anchor epochs into a grid, replacing crowding neighbors."""
    merged = list(nodes)
    for t in sorted(anchors):
        if t <= merged[0] or t >= merged[-1]:
            continue
        nearest = min(range(len(merged)), key=lambda i: abs(merged[i] - t))
        if abs(merged[nearest] - t) < min_gap:
            if nearest not in (0, len(merged) - 1):
                merged[nearest] = t
                continue
        merged.append(t)
        merged.sort()
    out = np.array(merged)
    if np.any(np.diff(out) <= 0.0):
        out = np.unique(out)
    return out


def build_grid(scenario: Scenario,
               params: SystemParameters | None = None) -> tuple[TimeGrid, list[ObservationWindow], np.ndarray]:
    """Sundman grid with window boundaries and measurement epochs merged in.

    Returns the grid, the scenario windows with their anchor node indices
    resolved, and the boolean zero-thrust node mask.
    """
    params = params if params is not None else scenario.params
    base = sundman_nodes(scenario.observer_initial, 0.0, scenario.duration,
                         scenario.sigma, scenario.n_nodes, params)
    anchors: list[float] = []
    for sw in scenario.windows:
        anchors.append(sw.window.t_start)
        anchors.append(sw.window.t_end)
        anchors.extend(sw.window.measurement_epochs(params))
    grid = TimeGrid(_merge_epochs(base.nodes, anchors))

    windows = []
    for sw in scenario.windows:
        k_star = int(np.argmin(np.abs(grid.nodes - sw.window.t_start)))
        if abs(grid.nodes[k_star] - sw.window.t_start) > 1e-9:
            raise ScvxError("window start epoch missing from the merged grid")
        windows.append(replace(sw.window, anchor_node=k_star))

    zero_thrust = np.zeros(len(grid), dtype=bool)
    for sw in scenario.windows:
        if sw.zero_thrust:
            inside = (grid.nodes >= sw.window.t_start - 1e-9) & (
                grid.nodes <= sw.window.t_end + 1e-9)
            zero_thrust |= inside
    return grid, windows, zero_thrust


def _coast_states(state: np.ndarray, t_ref: float, nodes: np.ndarray,
                  params: SystemParameters) -> np.ndarray:
    """Coast states at each node of a trajectory through (state, t_ref)."""
    out = np.empty((nodes.size, 6))
    # propagate outward from the reference epoch in each direction
    before = nodes[nodes < t_ref][::-1]
    after = nodes[nodes >= t_ref]
    current, t_now = state, t_ref
    for t in after:
        current = propagate(current, t_now, t, params)
        t_now = t
        out[np.searchsorted(nodes, t)] = current
    current, t_now = state, t_ref
    for t in before:
        current = propagate(current, t_now, t, params)
        t_now = t
        out[np.searchsorted(nodes, t)] = current
    return out


def initial_guess(scenario: Scenario, grid: TimeGrid,
                  u_max: np.ndarray) -> TrajectoryIterate:
    """Boundary-interpolated coast: states blend the two boundary orbits."""
    params = scenario.params
    nodes = grid.nodes
    from_initial = _coast_states(scenario.observer_initial, 0.0, nodes, params)
    from_terminal = _coast_states(scenario.observer_terminal, scenario.duration,
                                  nodes, params)
    theta = (nodes - nodes[0]) / (nodes[-1] - nodes[0])
    states = (1.0 - theta)[:, None] * from_initial + theta[:, None] * from_terminal
    return TrajectoryIterate(grid=grid, states=states,
                             controls=np.zeros((len(grid), 3)), u_max=u_max)


# ---------------------------------------------------------------------------
# Scenario-level cache (target propagation is iterate-independent)


class _ScenarioCache:
    def __init__(self, scenario: Scenario, grid: TimeGrid,
                 windows: list[ObservationWindow]):
        params = scenario.params
        nodes = grid.nodes
        n_nodes = nodes.size
        n_t = scenario.n_targets
        self.scenario = scenario
        self.grid = grid
        self.windows = windows
        self.weights = trapezoid_node_weights(grid.intervals)

        self.target_states = np.empty((n_t, n_nodes, 6))
        self.target_states[:, 0] = scenario.target_initials
        target_phis = np.empty((n_t, n_nodes - 1, 6, 6))
        for i in range(n_t):
            state = scenario.target_initials[i]
            for k in range(n_nodes - 1):
                state, stm = propagate_with_stm(state, nodes[k], nodes[k + 1],
                                                params)
                self.target_states[i, k + 1] = state
                target_phis[i, k] = stm.first_order

        # target covariance propagated (process noise only) to each anchor
        self.target_covs_at_anchor: list[tuple[np.ndarray, ...]] = []
        for window in windows:
            k_star = window.anchor_node
            covs = []
            for i in range(n_t):
                p = scenario.prior.target_covs[i].copy()
                q_psd = scenario.prior.q_psd[i + 1]
                for k in range(k_star):
                    phi = target_phis[i, k]
                    p = phi @ p @ phi.T + process_noise_segment(
                        q_psd, nodes[k + 1] - nodes[k])
                    p = 0.5 * (p + p.T)
                covs.append(p)
            self.target_covs_at_anchor.append(tuple(covs))

        self.max_anchor = max((w.anchor_node for w in windows), default=0)

    def prior_at(self, window_index: int, sensor_cov: np.ndarray) -> AugmentedPrior:
        return AugmentedPrior(
            sensor_cov,
            self.target_covs_at_anchor[window_index],
            self.scenario.prior.q_psd,
        )


# ---------------------------------------------------------------------------
# Costs


@dataclass
class CostBreakdown:
    total: float
    information: float
    impulse: float
    defect_penalty: float
    max_defect: float
    defects: np.ndarray


def _sensor_covs_from_segments(segments, scenario: Scenario,
                               cache: _ScenarioCache) -> list[np.ndarray]:
    """Observer covariance at each window anchor, from the reference STMs.

    Walks P <- A_k P A_k' + Q over the grid segments of the current
    reference; the A_k of the FOH discretization are exactly the needed
    transition matrices, so acceptance costs no extra propagation.
    """
    nodes = cache.grid.nodes
    q_sensor = scenario.prior.q_psd[0]
    cov = scenario.prior.sensor_cov.copy()
    out: dict[int, np.ndarray] = {0: cov.copy()}
    for k in range(cache.max_anchor):
        phi = segments[k].a_k
        cov = phi @ cov @ phi.T + process_noise_segment(
            q_sensor, nodes[k + 1] - nodes[k])
        cov = 0.5 * (cov + cov.T)
        out[k + 1] = cov.copy()
    return [out[window.anchor_node] for window in cache.windows]


def _information_value(states: np.ndarray, scenario: Scenario,
                       cache: _ScenarioCache,
                       sensor_covs: list[np.ndarray]) -> float:
    """Summed window mutual information at the iterate's anchor states."""
    information = 0.0
    for w, window in enumerate(cache.windows):
        prior = cache.prior_at(w, sensor_covs[w])
        blocks = assemble_blocks(
            window, states[window.anchor_node],
            list(cache.target_states[:, window.anchor_node]),
            prior, scenario.model, scenario.params,
        )
        information += mutual_information(blocks)
    return information


def _evaluate_cost(iterate: TrajectoryIterate, scenario: Scenario,
                   cache: _ScenarioCache, alpha_h: float, gamma: float,
                   sensor_covs: list[np.ndarray] | None = None) -> CostBreakdown:
    """Penalized nonlinear cost along one trajectory iterate.

    ``sensor_covs`` carries the observer covariance at each window anchor
    (propagated along the current reference); the information term treats
    it as fixed data, matching the gradient model, which ignores the
    sensitivity of the prior blocks.
    """
    params = scenario.params
    nodes = iterate.grid.nodes
    n_seg = nodes.size - 1
    need_info = alpha_h > 0.0 and len(cache.windows) > 0

    deltas = np.empty((n_seg, 6))
    for k in range(n_seg):
        endpoint = propagate(iterate.states[k], nodes[k], nodes[k + 1],
                             params, control=iterate.segment_control(k))
        deltas[k] = iterate.states[k + 1] - endpoint

    impulse = trapezoid_impulse(nodes, iterate.controls)
    defect_penalty = float(
        np.sum(cache.weights[:-1] * np.sum(np.abs(deltas), axis=1)))

    information = 0.0
    if need_info:
        if sensor_covs is None:
            raise ValueError("anchor covariances are required when alpha_h > 0")
        information = _information_value(iterate.states, scenario, cache,
                                         sensor_covs)

    total = (-alpha_h * information + (1.0 - alpha_h) * impulse
             + gamma * defect_penalty)
    return CostBreakdown(
        total=total,
        information=information,
        impulse=impulse,
        defect_penalty=defect_penalty,
        max_defect=float(np.max(np.abs(deltas))) if n_seg else 0.0,
        defects=deltas,
    )


def nonlinear_cost(iterate: TrajectoryIterate, scenario: Scenario,
                   alpha_h: float, gamma: float) -> float:
    """Penalized nonlinear cost J of an iterate (information, impulse, defects).

    The observer prior at each window anchor is propagated along the
    iterate itself (it is its own reference here).
    """
    windows = _windows_on_grid(scenario, iterate.grid)
    cache = _ScenarioCache(scenario, iterate.grid, windows)
    sensor_covs = None
    if alpha_h > 0.0:
        segments = foh_discretize(iterate, scenario.params)
        sensor_covs = _sensor_covs_from_segments(segments, scenario, cache)
    return _evaluate_cost(iterate, scenario, cache, alpha_h, gamma,
                          sensor_covs).total


def _windows_on_grid(scenario: Scenario,
                     grid: TimeGrid) -> list[ObservationWindow]:
    windows = []
    for sw in scenario.windows:
        k_star = int(np.argmin(np.abs(grid.nodes - sw.window.t_start)))
        if abs(grid.nodes[k_star] - sw.window.t_start) > 1e-9:
            raise ValueError("iterate grid does not contain a window anchor")
        windows.append(replace(sw.window, anchor_node=k_star))
    return windows


def linearized_cost(solution: SubproblemSolution, segments, reference,
                    mi_terms, alpha_h: float, gamma: float) -> float:
    """Recompute L from the returned subproblem variables.

    Must agree with the solver's reported objective to within its
    convergence tolerance; used both for the accuracy ratio and as a
    consistency audit of the encoding.
    """
    weights = trapezoid_node_weights(reference.grid.intervals)
    norms = np.linalg.norm(solution.controls, axis=1)
    impulse = float(np.sum(weights * norms))
    penalty = 0.0
    for k, seg in enumerate(segments):
        penalty += weights[k] * float(
            np.sum(np.abs(seg.e_k @ solution.virtual_controls[k])))
    info = 0.0
    for i0, grad, anchor in mi_terms:
        dx = solution.states[anchor] - reference.states[anchor]
        info += float(i0) + float(np.asarray(grad) @ dx)
    return -alpha_h * info + (1.0 - alpha_h) * impulse + gamma * penalty


def accuracy_ratio(j_ref: float, j_star: float, l_star: float) -> float:
    """Actual vs predicted cost decrease; the trust-region accuracy metric."""
    denominator = j_ref - l_star
    if abs(denominator) < _DEGENERATE_DENOMINATOR:
        raise ZeroDivisionError("degenerate linearization denominator")
    return (j_ref - j_star) / denominator


def trust_region_step(rho: float, eta: float,
                      settings: ScvxSettings) -> tuple[float, bool]:
    """Four-way trust region update; returns (new radius, accept flag)."""
    if rho < settings.rho0:
        new_eta, accept = eta / settings.beta_sh, False
    elif rho < settings.rho1:
        new_eta, accept = eta / settings.beta_sh, True
    elif rho < settings.rho2:
        new_eta, accept = eta, True
    else:
        new_eta, accept = settings.beta_gr * eta, True
    return float(np.clip(new_eta, settings.eta_min, settings.eta_max)), accept


# ---------------------------------------------------------------------------
# Outer loop


def _mi_terms(reference: TrajectoryIterate, scenario: Scenario,
              cache: _ScenarioCache, sensor_covs: list[np.ndarray]):
    terms = []
    for w, window in enumerate(cache.windows):
        prior = cache.prior_at(w, sensor_covs[w])
        i0, grad = mi_linearize(
            window, reference.states[window.anchor_node],
            list(cache.target_states[:, window.anchor_node]),
            prior, scenario.model, scenario.params,
        )
        terms.append((i0, grad, window.anchor_node))
    return terms


def solve(scenario: Scenario, alpha_h: float | None = None,
          settings: ScvxSettings | None = None) -> ScvxReport:
    """Run the successive convexification loop on a scenario."""
    if alpha_h is None:
        alpha_h = scenario.alpha_h
    if alpha_h is None:
        raise ValueError("no homotopy weight: pass alpha_h or set it in the "
                         "scenario")
    if not 0.0 <= alpha_h <= 1.0:
        raise ValueError("alpha_h must lie in [0, 1]")
    if settings is None:
        settings = settings_from_overrides(scenario.scvx_overrides)
    params = scenario.params
    gamma = settings.gamma

    grid, windows, zero_thrust = build_grid(scenario)
    u_max = thrust_bounds(grid, scenario.a_max)
    reference = initial_guess(scenario, grid, u_max)
    cache = _ScenarioCache(scenario, grid, windows)

    segments = foh_discretize(reference, params)
    sensor_covs = (_sensor_covs_from_segments(segments, scenario, cache)
                   if alpha_h > 0.0 else None)
    ref_cost = _evaluate_cost(reference, scenario, cache, alpha_h, gamma,
                              sensor_covs)
    mi_terms = (_mi_terms(reference, scenario, cache, sensor_covs)
                if alpha_h > 0.0 else [])

    eta = settings.eta0
    history: list[IterationRecord] = []
    converged = False

    for iteration in range(1, settings.max_iters + 1):
        program = build_subproblem(
            segments, reference,
            mi_terms if alpha_h > 0.0 else None,
            alpha_h, gamma, eta, u_max=u_max, zero_thrust_nodes=zero_thrust,
        )
        solution = solve_subproblem(program)
        if solution.status is SubproblemStatus.INFEASIBLE:
            raise ScvxError(
                f"iteration {iteration}: subproblem reported infeasible; the "
                "virtual control should make every subproblem feasible"
            )
        if solution.status is SubproblemStatus.NUMERICAL_FAILURE:
            raise ScvxError(
                f"iteration {iteration}: conic solver numerical failure "
                f"(eta={eta:.3e})"
            )

        candidate = TrajectoryIterate(grid, solution.states.copy(),
                                      solution.controls.copy(), u_max.copy())
        cand_cost = _evaluate_cost(candidate, scenario, cache, alpha_h, gamma,
                                   sensor_covs)
        l_star = linearized_cost(solution, segments, reference, mi_terms,
                                 alpha_h, gamma)

        predicted = ref_cost.total - l_star
        if (ref_cost.max_defect <= settings.tol_defect
                and abs(predicted) <= settings.tol_cost):
            # the reference is dynamically feasible and the convex model
            # can no longer improve the cost beyond tolerance
            converged = True
            history.append(IterationRecord(
                iteration, cand_cost.total, l_star, 1.0, eta,
                ref_cost.max_defect, False))
            logger.info(
                "iter=%d J=%.12e L=%.12e rho=stalled eta=%.6e "
                "max_defect=%.3e accepted=0 converged=1",
                iteration, cand_cost.total, l_star, eta,
                ref_cost.max_defect)
            break
        if abs(predicted) < _DEGENERATE_DENOMINATOR:
            rho = -np.inf  # no usable prediction: force a rejection and shrink
        else:
            rho = (ref_cost.total - cand_cost.total) / predicted

        eta_next, accepted = trust_region_step(rho, eta, settings)
        history.append(IterationRecord(
            iteration, cand_cost.total, l_star, float(rho), eta,
            cand_cost.max_defect, accepted))
        logger.info(
            "iter=%d J=%.12e L=%.12e rho=%.6f eta=%.6e max_defect=%.3e "
            "accepted=%d", iteration, cand_cost.total, l_star, rho, eta,
            cand_cost.max_defect, int(accepted))
        eta = eta_next

        if accepted:
            improvement = ref_cost.total - cand_cost.total
            reference = candidate
            segments = foh_discretize(reference, params)
            ref_cost = cand_cost
            if alpha_h > 0.0:
                # the anchor priors follow the new reference; refresh the
                # information value and its linearization against them
                sensor_covs = _sensor_covs_from_segments(segments, scenario,
                                                         cache)
                information = _information_value(reference.states, scenario,
                                                 cache, sensor_covs)
                ref_cost = CostBreakdown(
                    total=(-alpha_h * information
                           + (1.0 - alpha_h) * cand_cost.impulse
                           + gamma * cand_cost.defect_penalty),
                    information=information,
                    impulse=cand_cost.impulse,
                    defect_penalty=cand_cost.defect_penalty,
                    max_defect=cand_cost.max_defect,
                    defects=cand_cost.defects,
                )
                mi_terms = _mi_terms(reference, scenario, cache, sensor_covs)
            if (ref_cost.max_defect <= settings.tol_defect
                    and abs(improvement) <= settings.tol_cost):
                converged = True
                break

    return ScvxReport(
        iterate=reference,
        history=history,
        converged=converged,
        iterations=len(history),
        objective=ref_cost.total,
        mutual_information=ref_cost.information,
        total_impulse=ref_cost.impulse,
        max_defect=ref_cost.max_defect,
        zero_thrust=zero_thrust,
        anchor_nodes=[w.anchor_node for w in windows],
    )
