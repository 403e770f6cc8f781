import numpy as np
import pytest

from infoplan.discretization import (
    ControlAffineSystem,
    TrajectoryIterate,
    crtbp_control_system,
    defects,
    discretize_segment,
    foh_discretize,
    thrust_bounds,
)
from infoplan.dynamics import SystemParameters, TimeGrid, propagate, propagate_with_stm

from conftest import OBSERVER_X0


@pytest.fixture(scope="module")
def params():
    return SystemParameters()


def zero_system(n, m):
    return ControlAffineSystem(
        f=lambda t, x: np.zeros(n),
        jacobian=lambda t, x: np.zeros((n, n)),
        b_matrix=np.zeros((n, m)),
    )


def double_integrator():
    return ControlAffineSystem(
        f=lambda t, x: np.array([x[1], 0.0]),
        jacobian=lambda t, x: np.array([[0.0, 1.0], [0.0, 0.0]]),
        b_matrix=np.array([[0.0], [1.0]]),
    )


class TestDiscretizeSegment:
    def test_zero_vector_field(self, params):
        seg = discretize_segment(
            zero_system(4, 2), np.zeros(4), np.zeros(2), np.zeros(2), 0.0, 0.7, params
        )
        assert np.allclose(seg.a_k, np.eye(4), atol=1e-14)
        assert np.allclose(seg.b_minus, 0.0, atol=1e-14)
        assert np.allclose(seg.b_plus, 0.0, atol=1e-14)
        assert np.allclose(seg.r_k, 0.0, atol=1e-14)
        assert np.allclose(seg.e_k, 0.7 * np.eye(4), atol=1e-12)

    def test_double_integrator_hand_values(self, params):
        seg = discretize_segment(
            double_integrator(), np.zeros(2), np.zeros(1), np.zeros(1), 0.0, 1.0,
            params,
        )
        assert np.allclose(seg.a_k, [[1.0, 1.0], [0.0, 1.0]], atol=1e-12)
        assert np.allclose(seg.b_minus, [[1.0 / 3.0], [0.5]], atol=1e-12)
        assert np.allclose(seg.b_plus, [[1.0 / 6.0], [0.5]], atol=1e-12)
        assert np.allclose(seg.r_k, 0.0, atol=1e-13)

    def test_crtbp_a_matches_stm(self, params):
        system = crtbp_control_system(params)
        seg = discretize_segment(
            system, OBSERVER_X0, np.zeros(3), np.zeros(3), 0.0, 0.3, params
        )
        _, stm = propagate_with_stm(OBSERVER_X0, 0.0, 0.3, params)
        assert np.max(np.abs(seg.a_k - stm.first_order)) < 1e-9

    def test_foh_prediction_matches_nonlinear_propagation(self, params):
        # exact reference propagation => predicted transition reproduces the
        # endpoint when evaluated at the reference inputs
        system = crtbp_control_system(params)
        u0 = np.array([1e-3, -2e-3, 0.0])
        u1 = np.array([-1e-3, 1e-3, 5e-4])
        seg = discretize_segment(system, OBSERVER_X0, u0, u1, 0.0, 0.25, params)
        from infoplan.dynamics import FohControl

        control = FohControl([0.0, 0.25], np.vstack((u0, u1)))
        endpoint = propagate(OBSERVER_X0, 0.0, 0.25, params, control=control)
        predicted = seg.a_k @ OBSERVER_X0 + seg.b_minus @ u0 + seg.b_plus @ u1 + seg.r_k
        assert np.linalg.norm(predicted - endpoint) < 1e-10


def coast_iterate(params, n_nodes=8, tf=1.0, u_max_value=1.0):
    nodes = np.linspace(0.0, tf, n_nodes)
    states = np.empty((n_nodes, 6))
    states[0] = OBSERVER_X0
    for k in range(n_nodes - 1):
        states[k + 1] = propagate(states[k], nodes[k], nodes[k + 1], params)
    return TrajectoryIterate(
        grid=TimeGrid(nodes),
        states=states,
        controls=np.zeros((n_nodes, 3)),
        u_max=np.full(n_nodes, u_max_value),
    )


class TestDefects:
    def test_exact_propagation_zero_defects(self, params):
        iterate = coast_iterate(params)
        delta = defects(iterate, params)
        assert np.max(np.abs(delta)) < 1e-10

    def test_affine_in_next_state(self, params):
        iterate = coast_iterate(params)
        eps = 1e-4
        perturbed = iterate.copy()
        perturbed.states[3, 0] += eps
        base = defects(iterate, params)
        shifted = defects(perturbed, params)
        diff = shifted - base
        expected = np.zeros_like(diff)
        expected[2, 0] = eps  # defect of interval 2 ends at node 3
        # the node also seeds interval 3, whose defect changes nonlinearly
        assert abs(diff[2, 0] - eps) < 1e-12
        assert np.max(np.abs(diff[2, 1:])) < 1e-15

    def test_linear_prediction_error_is_second_order(self, params):
        iterate = coast_iterate(params, n_nodes=4, tf=0.6)
        segs = foh_discretize(iterate, params)

        def prediction_error(scale):
            dx = scale * np.array([1.0, -0.5, 0.2, 0.1, 0.4, -0.3])
            du0 = scale * np.array([0.5, 0.1, -0.2])
            du1 = scale * np.array([-0.3, 0.2, 0.1])
            from infoplan.dynamics import FohControl

            x0 = iterate.states[0] + dx
            control = FohControl(iterate.grid.nodes[:2], np.vstack((du0, du1)))
            truth = propagate(x0, iterate.grid.nodes[0], iterate.grid.nodes[1],
                              params, control=control)
            seg = segs[0]
            predicted = seg.a_k @ x0 + seg.b_minus @ du0 + seg.b_plus @ du1 + seg.r_k
            return np.linalg.norm(predicted - truth)

        e1 = prediction_error(1e-4)
        e2 = prediction_error(5e-5)
        assert 4.0 / 1.6 < e1 / e2 < 4.0 * 1.6


class TestThrustBounds:
    def test_two_nodes(self):
        grid = TimeGrid(np.array([0.0, 1.0]))
        bounds = thrust_bounds(grid, 2.5)
        assert np.allclose(bounds, [2.5, 2.5], atol=1e-12)

    def test_three_uniform_nodes(self):
        dt = 0.7
        a_max = 1.3
        grid = TimeGrid(np.array([0.0, dt, 2 * dt]))
        bounds = thrust_bounds(grid, a_max)
        expected = np.array([2.0 / 3.0, 4.0 / 3.0, 2.0 / 3.0]) * a_max * dt
        assert np.allclose(bounds, expected, atol=1e-12)

    def test_residual_and_minimum_norm(self):
        rng = np.random.default_rng(21)
        nodes = np.concatenate(([0.0], np.cumsum(rng.uniform(0.05, 1.0, 9))))
        grid = TimeGrid(nodes)
        a_max = 0.8
        bounds = thrust_bounds(grid, a_max)
        dts = grid.intervals
        residual = (bounds[:-1] + bounds[1:]) / (2.0 * dts) - a_max
        assert np.max(np.abs(residual)) < 1e-12
        # pseudoinverse oracle
        a_mat = np.zeros((9, 10))
        for k in range(9):
            a_mat[k, k] = a_mat[k, k + 1] = 1.0 / dts[k]
        pinv_solution = a_mat.T @ np.linalg.solve(a_mat @ a_mat.T,
                                                  np.full(9, 2.0 * a_max))
        assert np.max(np.abs(bounds - pinv_solution)) < 1e-10

    def test_zero_acceleration(self):
        grid = TimeGrid(np.linspace(0.0, 3.0, 7))
        assert np.array_equal(thrust_bounds(grid, 0.0), np.zeros(7))

    def test_negative_fallback_is_nonnegative(self):
        # wildly skewed grid drives the minimum-norm solution negative
        nodes = np.array([0.0, 1e-4, 1.0, 1.0001, 2.0])
        bounds = thrust_bounds(TimeGrid(nodes), 1.0)
        assert np.all(bounds >= 0.0)


class TestTrajectoryIterate:
    def test_shape_validation(self, params):
        grid = TimeGrid(np.linspace(0.0, 1.0, 4))
        with pytest.raises(ValueError):
            TrajectoryIterate(grid, np.zeros((3, 6)), np.zeros((4, 3)), np.zeros(4))
