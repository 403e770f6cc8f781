import numpy as np
import pytest

from infoplan.discretization import TrajectoryIterate, foh_discretize
from infoplan.dynamics import SystemParameters, TimeGrid, propagate
from infoplan.information import AugmentedPrior, ObservationWindow
from infoplan.measurements import MeasurementKind, MeasurementModel
from infoplan.scenario import Scenario, ScenarioWindow
from infoplan import scvx
from infoplan.scvx import (
    ScvxSettings,
    accuracy_ratio,
    build_grid,
    initial_guess,
    linearized_cost,
    nonlinear_cost,
    settings_from_overrides,
    solve,
    trust_region_step,
)

from conftest import OBSERVER_X0, TARGET_X0


@pytest.fixture(scope="module")
def params():
    return SystemParameters()


def small_scenario(params, duration=1.5, terminal_offset=0.0, alpha=None,
                   n_nodes=25):
    """Compact one-target scenario; terminal_offset displaces the terminal
    velocity off the coast orbit to force a transfer."""
    xf = propagate(OBSERVER_X0, 0.0, duration, params)
    xf = xf + np.array([0.0, 0.0, 0.0, 0.0, terminal_offset, 0.0])
    pos = float(params.km_to_du(100.0))
    vel = float(params.kmps_to_vu(0.01))
    cov = np.diag([pos**2] * 3 + [vel**2] * 3)
    q = params.accel_psd_to_norm(1e-11)
    return Scenario(
        params=params,
        observer_initial=OBSERVER_X0.copy(),
        observer_terminal=xf,
        target_initials=np.array([TARGET_X0]),
        prior=AugmentedPrior(cov, (cov,), np.array([q])),
        model=MeasurementModel(
            MeasurementKind.RELATIVE_POSITION,
            float(params.km_to_du(0.1))**2 * np.eye(3),
        ),
        a_max=float(params.kmps2_to_au(1e-6)),
        duration=duration,
        windows=[ScenarioWindow(ObservationWindow(0.5, 1.0, 1.0),
                                zero_thrust=True)],
        n_nodes=n_nodes,
        sigma=1.0,
        alpha_h=alpha,
    )


class TestSettings:
    def test_defaults_valid(self):
        ScvxSettings()

    def test_threshold_ordering_enforced(self):
        with pytest.raises(ValueError):
            ScvxSettings(rho0=0.5, rho1=0.2)

    def test_overrides(self):
        settings = settings_from_overrides({"max_iters": 7, "gamma": 10.0})
        assert settings.max_iters == 7
        assert settings.gamma == 10.0

    def test_unknown_override_rejected(self):
        with pytest.raises(ValueError):
            settings_from_overrides({"tr_radius": 1.0})


class TestTrustRegion:
    SETTINGS = ScvxSettings(rho0=0.1, rho1=0.25, rho2=0.7, beta_sh=2.0,
                            beta_gr=3.0, eta0=1.0, eta_min=1e-6, eta_max=8.0)

    @pytest.mark.parametrize("rho,expected_eta,expected_accept", [
        (-0.5, 0.5, False),        # below rho0: reject and shrink
        (0.05, 0.5, False),
        (0.1, 0.5, True),          # at rho0: accept and shrink
        (0.2, 0.5, True),
        (0.25, 1.0, True),         # at rho1: accept and hold
        (0.5, 1.0, True),
        (0.7, 3.0, True),          # at rho2: accept and grow
        (0.95, 3.0, True),
        (2.0, 3.0, True),
    ])
    def test_four_rows_with_boundaries(self, rho, expected_eta, expected_accept):
        new_eta, accept = trust_region_step(rho, 1.0, self.SETTINGS)
        assert new_eta == expected_eta
        assert accept is expected_accept

    def test_clamping(self):
        settings = self.SETTINGS
        eta, _ = trust_region_step(0.9, 4.0, settings)
        assert eta == settings.eta_max
        eta, _ = trust_region_step(-1.0, 1.5e-6, settings)
        assert eta == settings.eta_min


class TestAccuracyRatio:
    def test_perfect_linearization(self):
        assert accuracy_ratio(10.0, 6.0, 6.0) == 1.0

    def test_no_improvement(self):
        assert accuracy_ratio(10.0, 10.0, 6.0) == 0.0

    def test_direct_arithmetic(self):
        assert accuracy_ratio(10.0, 7.0, 6.0) == 0.75

    def test_degenerate_denominator(self):
        with pytest.raises(ZeroDivisionError):
            accuracy_ratio(10.0, 9.0, 10.0 - 1e-16)


def coast_iterate_for(scenario, params):
    grid, _, zero_thrust = build_grid(scenario)
    nodes = grid.nodes
    states = np.empty((nodes.size, 6))
    states[0] = scenario.observer_initial
    for k in range(nodes.size - 1):
        states[k + 1] = propagate(states[k], nodes[k], nodes[k + 1], params)
    return TrajectoryIterate(grid, states, np.zeros((nodes.size, 3)),
                             np.zeros(nodes.size)), zero_thrust


class TestNonlinearCost:
    def test_feasible_coast_costs_nothing_at_alpha_zero(self, params):
        scenario = small_scenario(params)
        iterate, _ = coast_iterate_for(scenario, params)
        j = nonlinear_cost(iterate, scenario, alpha_h=0.0, gamma=1e3)
        assert abs(j) < 1e-8

    def test_defect_term_is_one_homogeneous(self, params):
        scenario = small_scenario(params)
        iterate, _ = coast_iterate_for(scenario, params)
        bump = np.array([3e-6, -1e-6, 2e-6, 0.0, 1e-6, 0.0])

        def with_terminal_bump(scale):
            modified = iterate.copy()
            modified.states[-1] += scale * bump
            return nonlinear_cost(modified, scenario, alpha_h=0.0, gamma=1e3)

        base = nonlinear_cost(iterate, scenario, alpha_h=0.0, gamma=1e3)
        j1 = with_terminal_bump(1.0) - base
        j2 = with_terminal_bump(2.0) - base
        assert abs(j2 - 2.0 * j1) / j1 < 1e-9

    def test_coast_cost_is_minus_alpha_times_information(self, params):
        from infoplan.evaluation import sequential_mutual_information
        from infoplan.information import assemble_window_system
        from infoplan.scvx import (
            _ScenarioCache,
            _evaluate_cost,
            _sensor_covs_from_segments,
        )

        scenario = small_scenario(params)
        grid, windows, _ = build_grid(scenario)
        iterate, _ = coast_iterate_for(scenario, params)
        cache = _ScenarioCache(scenario, grid, windows)
        alpha = 5e-3
        segments = foh_discretize(iterate, params)
        sensor_covs = _sensor_covs_from_segments(segments, scenario, cache)
        cost = _evaluate_cost(iterate, scenario, cache, alpha, 1e3, sensor_covs)
        # independent chain-rule oracle on the same window linearization
        window = windows[0]
        prior = cache.prior_at(0, sensor_covs[0])
        system = assemble_window_system(
            window, iterate.states[window.anchor_node],
            list(cache.target_states[:, window.anchor_node]), prior,
            scenario.model, params,
        )
        oracle = sequential_mutual_information(system)
        assert abs(cost.total - (-alpha * oracle)) / abs(oracle * alpha) < 1e-7


class TestLinearizedCost:
    def test_reference_with_zero_virtual_control(self, params):
        scenario = small_scenario(params)
        iterate, _ = coast_iterate_for(scenario, params)
        segments = foh_discretize(iterate, params)
        from infoplan.subproblem import SubproblemSolution, SubproblemStatus

        solution = SubproblemSolution(
            status=SubproblemStatus.OPTIMAL,
            states=iterate.states.copy(),
            controls=iterate.controls.copy(),
            virtual_controls=np.zeros((len(iterate.grid) - 1, 6)),
            objective_value=0.0, solver_iterations=0, gap=0.0,
            primal_residual=0.0, dual_residual=0.0,
        )
        i0, grad = 4.0, np.array([1.0, 2.0, 3.0, 0.0, 0.0, 0.0])
        alpha = 0.25
        value = linearized_cost(solution, segments, iterate,
                                [(i0, grad, 3)], alpha, 1e3)
        assert abs(value - (-alpha * i0)) < 1e-12

    def test_affine_in_anchor_state(self, params):
        scenario = small_scenario(params)
        iterate, _ = coast_iterate_for(scenario, params)
        segments = foh_discretize(iterate, params)
        from infoplan.subproblem import SubproblemSolution, SubproblemStatus

        grad = np.array([1.0, -1.0, 0.5, 0.0, 2.0, 0.0])
        dx = np.array([1e-3, 2e-3, -1e-3, 0.0, 0.0, 1e-3])

        def value(scale):
            states = iterate.states.copy()
            states[3] += scale * dx
            solution = SubproblemSolution(
                status=SubproblemStatus.OPTIMAL, states=states,
                controls=iterate.controls.copy(),
                virtual_controls=np.zeros((len(iterate.grid) - 1, 6)),
                objective_value=0.0, solver_iterations=0, gap=0.0,
                primal_residual=0.0, dual_residual=0.0,
            )
            return linearized_cost(solution, segments, iterate,
                                   [(4.0, grad, 3)], 0.25, 1e3)

        v0, v1, v2 = value(0.0), value(1.0), value(2.0)
        assert abs((v2 - v0) - 2.0 * (v1 - v0)) < 1e-12


class TestSolve:
    def test_coast_feasible_converges_immediately(self, params):
        scenario = small_scenario(params, terminal_offset=0.0)
        report = solve(scenario, alpha_h=0.0)
        assert report.converged
        assert report.iterations <= 10
        impulse_km_s = float(params.vu_to_kmps(report.total_impulse))
        assert impulse_km_s < 1e-9
        assert report.max_defect < 1e-8

    def test_transfer_with_information_reward(self, params):
        scenario = small_scenario(params, terminal_offset=2e-4)
        report = solve(scenario, alpha_h=5e-3)
        assert report.converged
        assert report.max_defect < 1e-8
        # thrust inside the observation window is structurally zero
        assert np.max(np.abs(report.iterate.controls[report.zero_thrust])) == 0.0
        # terminal boundary condition holds exactly (pinned by equality)
        err = np.linalg.norm(report.iterate.states[-1] - scenario.observer_terminal)
        assert err < 1e-7

    def test_accepted_cost_sequence_non_increasing(self, params):
        scenario = small_scenario(params, terminal_offset=2e-4)
        report = solve(scenario, alpha_h=5e-3)
        accepted = [rec.j_candidate for rec in report.history if rec.accepted]
        diffs = np.diff(accepted)
        assert np.all(diffs <= 1e-9)

    def test_dynamic_feasibility_of_converged_solution(self, params):
        scenario = small_scenario(params, terminal_offset=2e-4)
        report = solve(scenario, alpha_h=0.0)
        assert report.converged
        iterate = report.iterate
        state = iterate.states[0]
        nodes = iterate.grid.nodes
        for k in range(nodes.size - 1):
            state = propagate(state, nodes[k], nodes[k + 1], params,
                              control=iterate.segment_control(k))
        assert np.linalg.norm(state - iterate.states[-1]) < 10 * 1e-8

    def test_history_and_report_shape(self, params):
        scenario = small_scenario(params)
        report = solve(scenario, alpha_h=0.0)
        assert len(report.history) == report.iterations
        assert report.iterate.states.shape[0] == len(report.iterate.grid)

    def test_alpha_resolution(self, params):
        scenario = small_scenario(params, alpha=None)
        with pytest.raises(ValueError):
            solve(scenario)


class TestGridConstruction:
    def test_anchors_present(self, params):
        scenario = small_scenario(params)
        grid, windows, zero_thrust = build_grid(scenario)
        window = windows[0]
        epochs = window.measurement_epochs(params)
        for epoch in epochs:
            assert np.min(np.abs(grid.nodes - epoch)) < 1e-9
        assert abs(grid.nodes[window.anchor_node] - window.t_start) < 1e-12
        inside = (grid.nodes >= window.t_start - 1e-9) & (
            grid.nodes <= window.t_end + 1e-9)
        assert np.array_equal(zero_thrust, inside)

    def test_initial_guess_hits_boundaries(self, params):
        scenario = small_scenario(params, terminal_offset=1e-3)
        grid, _, _ = build_grid(scenario)
        from infoplan.discretization import thrust_bounds

        guess = initial_guess(scenario, grid, thrust_bounds(grid, scenario.a_max))
        assert np.allclose(guess.states[0], scenario.observer_initial)
        assert np.allclose(guess.states[-1], scenario.observer_terminal)
        assert np.array_equal(guess.controls, np.zeros_like(guess.controls))
