"""Compiled right-hand sides for the propagation-heavy inner loops.

These kernels mirror the public dynamics functions exactly (same
equations, no fast-math reassociation, deterministic) and exist only to
keep the adaptive integrator's per-evaluation cost low. The public API in
:mod:`infoplan.dynamics` retains the plain NumPy implementations with
their precondition guards; states that fall onto a primary produce NaNs
here, which the step-size controller turns into an integration failure.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _accel_into(y, mu, out):
    x, yy, z = y[0], y[1], y[2]
    d1x = x + mu
    d2x = x + mu - 1.0
    r1s = d1x * d1x + yy * yy + z * z
    r2s = d2x * d2x + yy * yy + z * z
    c1 = (1.0 - mu) / (r1s * np.sqrt(r1s))
    c2 = mu / (r2s * np.sqrt(r2s))
    out[0] = 2.0 * y[4] + x - c1 * d1x - c2 * d2x
    out[1] = -2.0 * y[3] + yy - (c1 + c2) * yy
    out[2] = -(c1 + c2) * z


@numba.njit(cache=True)
def _jacobian_into(y, mu, a):
    """Fill the 6x6 Jacobian of the coast vector field."""
    a[:, :] = 0.0
    a[0, 3] = 1.0
    a[1, 4] = 1.0
    a[2, 5] = 1.0
    a[3, 4] = 2.0
    a[4, 3] = -2.0
    x, yy, z = y[0], y[1], y[2]
    for body in range(2):
        if body == 0:
            gm = 1.0 - mu
            dx = x + mu
        else:
            gm = mu
            dx = x + mu - 1.0
        rs = dx * dx + yy * yy + z * z
        r3 = rs * np.sqrt(rs)
        r5 = r3 * rs
        d = (dx, yy, z)
        for i in range(3):
            for j in range(3):
                a[3 + i, j] += gm * 3.0 * d[i] * d[j] / r5
            a[3 + i, i] -= gm / r3
    a[3, 0] += 1.0
    a[4, 1] += 1.0


@numba.njit(cache=True)
def _grav_hessian_into(y, mu, g3):
    """Fill d(accel)/d(pos)d(pos), a symmetric 3x3x3 tensor."""
    g3[:, :, :] = 0.0
    x, yy, z = y[0], y[1], y[2]
    for body in range(2):
        if body == 0:
            gm = 1.0 - mu
            dx = x + mu
        else:
            gm = mu
            dx = x + mu - 1.0
        rs = dx * dx + yy * yy + z * z
        r5 = rs * rs * np.sqrt(rs)
        r7 = r5 * rs
        d = (dx, yy, z)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    val = -15.0 * d[i] * d[j] * d[k] / r7
                    if i == j:
                        val += 3.0 * d[k] / r5
                    if i == k:
                        val += 3.0 * d[j] / r5
                    if j == k:
                        val += 3.0 * d[i] / r5
                    g3[i, j, k] += gm * val


@numba.njit(cache=True)
def rhs_coast(y, mu):
    out = np.empty(6)
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    acc = np.empty(3)
    _accel_into(y, mu, acc)
    out[3] = acc[0]
    out[4] = acc[1]
    out[5] = acc[2]
    return out


@numba.njit(cache=True)
def rhs_foh(y, mu, t, t0, t1, u0, u1):
    out = rhs_coast(y, mu)
    if t <= t0:
        w = 0.0
    elif t >= t1:
        w = 1.0
    else:
        w = (t - t0) / (t1 - t0)
    for i in range(3):
        out[3 + i] += (1.0 - w) * u0[i] + w * u1[i]
    return out


@numba.njit(cache=True)
def rhs_stm(y, mu, order, with_control, t, t0, t1, u0, u1):
    """State + first-order (and optionally second-order) variational RHS."""
    n = 6 + 36 + (216 if order == 2 else 0)
    out = np.empty(n)
    a = np.empty((6, 6))
    _jacobian_into(y[:6], mu, a)
    if with_control:
        dx = rhs_foh(y[:6], mu, t, t0, t1, u0, u1)
    else:
        dx = rhs_coast(y[:6], mu)
    out[:6] = dx
    phi = y[6:42].reshape(6, 6)
    out[6:42] = np.dot(a, phi).ravel()
    if order == 2:
        psi2 = y[42:].reshape(6, 36)
        dpsi2 = np.dot(a, psi2)  # A[i,j] psi2[j, a*6+b]
        g3 = np.empty((3, 3, 3))
        _grav_hessian_into(y[:6], mu, g3)
        for ia in range(6):
            for ib in range(6):
                col = ia * 6 + ib
                for i in range(3):
                    s = 0.0
                    for j in range(3):
                        for k in range(3):
                            s += g3[i, j, k] * phi[j, ia] * phi[k, ib]
                    dpsi2[3 + i, col] += s
        out[42:] = dpsi2.ravel()
    return out


@numba.njit(cache=True)
def rhs_discretize(y, mu, t, t0, t1, u0, u1):
    """Segment transcription RHS: state, Phi, control/residual/gain integrals.

    Layout: x (6), Phi (36), Bminus (18), Bplus (18), r (6), E (36); the
    Phi inverse applications are one LU-backed solve with stacked columns.
    """
    out = np.empty(120)
    a = np.empty((6, 6))
    _jacobian_into(y[:6], mu, a)
    dx = rhs_foh(y[:6], mu, t, t0, t1, u0, u1)
    out[:6] = dx
    phi = y[6:42].reshape(6, 6).copy()
    out[6:42] = np.dot(a, phi).ravel()

    if t <= t0:
        w = 0.0
    elif t >= t1:
        w = 1.0
    else:
        w = (t - t0) / (t1 - t0)

    stacked = np.zeros((6, 13))
    # B columns: control enters the velocity rows only
    for i in range(3):
        stacked[3 + i, i] = 1.0 - w
        stacked[3 + i, 3 + i] = w
    fx = rhs_coast(y[:6], mu)
    ax = np.dot(a, y[:6].copy())
    for i in range(6):
        stacked[i, 6] = fx[i] - ax[i]
        stacked[i, 7 + i] = 1.0
    solved = np.linalg.solve(phi, stacked)
    out[42:60] = solved[:, :3].ravel()
    out[60:78] = solved[:, 3:6].ravel()
    out[78:84] = solved[:, 6]
    out[84:120] = solved[:, 7:].ravel()
    return out


@numba.njit(cache=True)
def rhs_sundman(z, mu, sigma):
    out = np.empty(7)
    dx = rhs_coast(z[:6], mu)
    d2x = z[0] + mu - 1.0
    rm = np.sqrt(d2x * d2x + z[1] * z[1] + z[2] * z[2])
    scale = rm**sigma
    for i in range(6):
        out[i] = scale * dx[i]
    out[6] = scale
    return out
