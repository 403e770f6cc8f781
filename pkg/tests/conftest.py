import numpy as np
import pytest

from infoplan.dynamics import SystemParameters

# Test case 1 boundary orbits (rotating frame, normalized units). The
# observer vy0 is the differentially corrected periodic value; see the
# bundled scenario files.
OBSERVER_X0 = np.array([7.78185828e-1, 0.0, 0.0, 0.0, 5.5593190445114e-1, 0.0])
OBSERVER_XF = np.array([7.77831224e-1, 0.0, 0.0, 0.0, 5.56449590e-1, 0.0])
TARGET_X0 = np.array([7.78008526e-1, 0.0, 0.0, 0.0, 5.56190606e-1, 0.0])

# Period of the observer's initial orbit, from the bisection period finder.
P_REF = 3.724716794574


@pytest.fixture(scope="session")
def params() -> SystemParameters:
    return SystemParameters()


def central_difference(fun, x, step):
    """Central finite differences of fun along each component of x."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = step
        cols.append((np.asarray(fun(x + dx)) - np.asarray(fun(x - dx))) / (2 * step))
    return np.stack(cols, axis=-1)


def relative_error(actual, expected):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    scale = max(np.max(np.abs(expected)), 1e-300)
    return np.max(np.abs(actual - expected)) / scale
