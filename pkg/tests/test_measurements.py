import numpy as np
import pytest

from infoplan.dynamics import SystemParameters
from infoplan.measurements import (
    MeasurementKind,
    MeasurementModel,
    ZeroRangeError,
    measure,
    measure_hessian,
    measure_jacobians,
)

from conftest import central_difference, relative_error


@pytest.fixture
def relpos_model():
    return MeasurementModel(MeasurementKind.RELATIVE_POSITION, 1e-8 * np.eye(3))


@pytest.fixture
def range_model():
    return MeasurementModel(MeasurementKind.RANGE_RANGE_RATE, np.diag([1e-8, 1e-6]))


def random_geometries(n, seed, rho_min=1e-3, rho_max=1.0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        x_sensor = rng.uniform(-1.0, 1.0, 6)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        rho = rng.uniform(rho_min, rho_max)
        x_target = x_sensor + np.concatenate((rho * direction, rng.uniform(-0.5, 0.5, 3)))
        yield x_target, x_sensor


class TestMeasure:
    def test_relative_position_coincident(self, relpos_model):
        x = np.arange(6.0)
        assert np.array_equal(measure(relpos_model, x, x), np.zeros(3))

    def test_relative_position_sign_convention(self, relpos_model):
        x_s = np.zeros(6)
        x_t = np.array([0.1, -0.2, 0.3, 0.0, 0.0, 0.0])
        assert np.allclose(measure(relpos_model, x_t, x_s), [0.1, -0.2, 0.3])

    def test_range_rate_orthogonal_velocity(self, range_model):
        x_s = np.zeros(6)
        x_t = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        assert np.allclose(measure(range_model, x_t, x_s), [1.0, 0.0])

    def test_range_rate_hand_value(self, range_model):
        x_s = np.zeros(6)
        x_t = np.array([3.0, 4.0, 0.0, 1.0, 1.0, 0.0])
        # rho = 5, rho_dot = (1*3 + 1*4)/5 = 7/5
        assert np.allclose(measure(range_model, x_t, x_s), [5.0, 7.0 / 5.0])

    def test_zero_range_error(self, range_model):
        x = np.array([0.1, 0.2, 0.3, 0.0, 0.0, 0.0])
        with pytest.raises(ZeroRangeError):
            measure(range_model, x, x)


class TestJacobians:
    def test_relative_position_blocks(self, relpos_model):
        rng = np.random.default_rng(2)
        x_t, x_s = rng.normal(size=6), rng.normal(size=6)
        d_sensor, d_target = measure_jacobians(relpos_model, x_t, x_s)
        expected = np.hstack((np.eye(3), np.zeros((3, 3))))
        assert np.array_equal(d_target, expected)
        assert np.array_equal(d_sensor, -expected)

    @pytest.mark.parametrize("kind", list(MeasurementKind))
    def test_antisymmetry(self, kind, relpos_model, range_model):
        model = relpos_model if kind is MeasurementKind.RELATIVE_POSITION else range_model
        for x_t, x_s in random_geometries(20, seed=4):
            d_sensor, d_target = measure_jacobians(model, x_t, x_s)
            assert np.allclose(d_sensor + d_target, 0.0, atol=1e-15)

    def test_range_rate_finite_difference_hand_geometry(self, range_model):
        x_s = np.zeros(6)
        x_t = np.array([3.0, 4.0, 0.0, 1.0, 1.0, 0.0])
        d_sensor, d_target = measure_jacobians(range_model, x_t, x_s)
        fd_t = central_difference(lambda s: measure(range_model, s, x_s), x_t, 1e-6)
        fd_s = central_difference(lambda s: measure(range_model, x_t, s), x_s, 1e-6)
        assert relative_error(d_target, fd_t) < 1e-7
        assert relative_error(d_sensor, fd_s) < 1e-7

    @pytest.mark.parametrize("kind", list(MeasurementKind))
    def test_finite_difference_many_geometries(self, kind, relpos_model, range_model):
        model = relpos_model if kind is MeasurementKind.RELATIVE_POSITION else range_model
        for x_t, x_s in random_geometries(1000, seed=9):
            d_sensor, _ = measure_jacobians(model, x_t, x_s)
            fd_s = central_difference(lambda s: measure(model, x_t, s), x_s, 1e-6)
            assert relative_error(d_sensor, fd_s) < 1e-6


class TestHessians:
    def test_relative_position_zero(self, relpos_model):
        rng = np.random.default_rng(8)
        hess = measure_hessian(relpos_model, rng.normal(size=6), rng.normal(size=6))
        assert np.array_equal(hess, np.zeros((3, 6, 6)))

    def test_symmetry(self, range_model):
        for x_t, x_s in random_geometries(50, seed=12):
            hess = measure_hessian(range_model, x_t, x_s)
            assert np.allclose(hess, np.swapaxes(hess, 1, 2), atol=1e-14)

    def test_finite_difference_hand_geometry(self, range_model):
        x_s = np.zeros(6)
        x_t = np.array([3.0, 4.0, 0.0, 1.0, 1.0, 0.0])
        hess = measure_hessian(range_model, x_t, x_s)
        fd = central_difference(
            lambda s: measure_jacobians(range_model, x_t, s)[0], x_s, 1e-6
        )
        assert relative_error(hess, fd) < 1e-5

    def test_finite_difference_many_geometries(self, range_model):
        for x_t, x_s in random_geometries(1000, seed=13):
            hess = measure_hessian(range_model, x_t, x_s)
            fd = central_difference(
                lambda s: measure_jacobians(range_model, x_t, s)[0], x_s, 1e-5
            )
            assert relative_error(hess, fd) < 1e-4


class TestNoiseConversion:
    def test_si_round_trip(self):
        params = SystemParameters()
        sigma_pos_km = 0.1
        sigma_vel_kmps = 0.01
        pos_norm = params.km_to_du(sigma_pos_km)
        vel_norm = params.kmps_to_vu(sigma_vel_kmps)
        assert abs(params.du_to_km(pos_norm) - sigma_pos_km) / sigma_pos_km < 1e-12
        assert abs(params.vu_to_kmps(vel_norm) - sigma_vel_kmps) / sigma_vel_kmps < 1e-12


class TestModelValidation:
    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            MeasurementModel(MeasurementKind.RANGE_RANGE_RATE, np.eye(3))

    def test_non_pd_covariance(self):
        with pytest.raises(ValueError):
            MeasurementModel(MeasurementKind.RELATIVE_POSITION, np.zeros((3, 3)))
