"""Satellite-to-satellite measurement models.

Two models are provided: the relative position vector of a target with
respect to the sensor, and the range / range-rate pair. Each model exposes
the measurement value, its analytic Jacobians with respect to the sensor
and target states, and the second-derivative tensor needed by the
information gradient. All quantities are in normalized units; both models
depend on the states only through the difference ``x_target - x_sensor``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "MeasurementKind",
    "MeasurementModel",
    "ZeroRangeError",
    "measure",
    "measure_jacobians",
    "measure_hessian",
]

_RANGE_FLOOR = 1e-12


class ZeroRangeError(ValueError):
    """Raised when a range-type measurement is evaluated at zero separation."""


class MeasurementKind(Enum):
    RELATIVE_POSITION = "relative_position"
    RANGE_RANGE_RATE = "range_range_rate"

    @property
    def dimension(self) -> int:
        return 3 if self is MeasurementKind.RELATIVE_POSITION else 2


@dataclass(frozen=True)
class MeasurementModel:
    """A measurement kind paired with its noise covariance (normalized units)."""

    kind: MeasurementKind
    noise_cov: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        m = self.kind.dimension
        if cov.shape != (m, m):
            raise ValueError(f"noise covariance must be {m}x{m} for {self.kind}")
        if not np.allclose(cov, cov.T):
            raise ValueError("noise covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) <= 0.0):
            raise ValueError("noise covariance must be positive definite")
        object.__setattr__(self, "noise_cov", cov)

    @property
    def dimension(self) -> int:
        return self.kind.dimension


def _separation(x_target, x_sensor):
    dx = np.asarray(x_target, dtype=float) - np.asarray(x_sensor, dtype=float)
    dr, dv = dx[:3], dx[3:]
    rho = float(np.linalg.norm(dr))
    return dr, dv, rho


def measure(model: MeasurementModel, x_target, x_sensor) -> np.ndarray:
    """Evaluate the measurement of a target taken by the sensor."""
    dr, dv, rho = _separation(x_target, x_sensor)
    if model.kind is MeasurementKind.RELATIVE_POSITION:
        return dr.copy()
    if rho < _RANGE_FLOOR:
        raise ZeroRangeError(f"range {rho:.3e} DU below floor {_RANGE_FLOOR}")
    return np.array([rho, float(dv @ dr) / rho])


def measure_jacobians(model: MeasurementModel, x_target,
                      x_sensor) -> tuple[np.ndarray, np.ndarray]:
    """Analytic partials (dy/dx_sensor, dy/dx_target), each m x 6.

    Both models depend only on the state difference, so the sensor partial
    is the negative of the target partial.
    """
    dr, dv, rho = _separation(x_target, x_sensor)
    m = model.dimension
    d_target = np.zeros((m, 6))
    if model.kind is MeasurementKind.RELATIVE_POSITION:
        d_target[:, :3] = np.eye(3)
        return -d_target, d_target

    if rho < _RANGE_FLOOR:
        raise ZeroRangeError(f"range {rho:.3e} DU below floor {_RANGE_FLOOR}")
    rho_dot = float(dv @ dr) / rho
    d_target[0, :3] = dr / rho
    d_target[1, :3] = dv / rho - rho_dot * dr / rho**2
    d_target[1, 3:] = dr / rho
    return -d_target, d_target


def measure_hessian(model: MeasurementModel, x_target, x_sensor) -> np.ndarray:
    """Second partials d^2 y / d x_sensor d x_sensor, shape (m, 6, 6).

    Because the measurement depends only on ``x_target - x_sensor``, the
    mixed blocks follow by sign flips: d2y/dxT dxT equals this tensor and
    d2y/dxS dxT equals its negative.
    """
    dr, dv, rho = _separation(x_target, x_sensor)
    m = model.dimension
    if model.kind is MeasurementKind.RELATIVE_POSITION:
        return np.zeros((m, 6, 6))

    if rho < _RANGE_FLOOR:
        raise ZeroRangeError(f"range {rho:.3e} DU below floor {_RANGE_FLOOR}")
    eye = np.eye(3)
    rr = np.outer(dr, dr)
    # d2(rho)/d(dr)2 and d2(rho_dot)/d(dr,dv) blocks in difference coordinates;
    # two sign flips make them equal to the sensor-sensor second partials.
    d2_rho = eye / rho - rr / rho**3
    rho_dot = float(dv @ dr) / rho
    d2_rr = (
        -(np.outer(dv, dr) + np.outer(dr, dv)) / rho**3
        - rho_dot * (eye / rho**2 - 3.0 * rr / rho**4)
    )
    d2_rv = eye / rho - rr / rho**3

    hess = np.zeros((m, 6, 6))
    hess[0, :3, :3] = d2_rho
    hess[1, :3, :3] = d2_rr
    hess[1, :3, 3:] = d2_rv
    hess[1, 3:, :3] = d2_rv
    return hess
