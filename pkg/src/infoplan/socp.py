"""Embedded second-order-cone solver.

Primal-dual interior-point method for the conic pair

    minimize    c'x                maximize   -b'y - h'z
    subject to  A x = b            subject to G'z + A'y + c = 0
                G x + s = h,                  z in K*
                s in K

with K a product of a nonnegative orthant and second-order cones. The
implementation uses the homogeneous self-dual embedding with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step, so infeasible and
unbounded problems terminate with certificates instead of diverging. KKT
systems are factored sparsely (LU) with iterative refinement.

Iterates are kept in unscaled variables and the scaling is recomputed from
(s, z) every iteration. Cone blocks of equal dimension are processed as
batched arrays, which keeps the per-iteration cost dominated by the KKT
factorization even for problems with hundreds of small cones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "ConeDims",
    "SocpResult",
    "SocpError",
    "solve_socp",
]


class SocpError(RuntimeError):
    """Raised on unrecoverable numerical failure inside the solver."""


@dataclass(frozen=True)
class ConeDims:
    """Sizes of the cone blocks: leading nonnegative orthant, then SOCs."""

    nonneg: int = 0
    soc: tuple[int, ...] = ()

    def __post_init__(self):
        if self.nonneg < 0 or any(d < 1 for d in self.soc):
            raise ValueError("invalid cone dimensions")
        object.__setattr__(self, "soc", tuple(int(d) for d in self.soc))

    @property
    def total(self) -> int:
        return self.nonneg + sum(self.soc)

    @property
    def degree(self) -> int:
        return self.nonneg + len(self.soc)

    def soc_slices(self):
        start = self.nonneg
        for d in self.soc:
            yield slice(start, start + d)
            start += d


@dataclass
class SocpResult:
    """Solution (or certificate) returned by the embedded solver."""

    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    primal_objective: float
    dual_objective: float
    gap: float
    relative_gap: float | None
    primal_residual: float
    dual_residual: float
    iterations: int


class _ConeLayout:
    """Index machinery: SOC blocks grouped by dimension for batched ops."""

    def __init__(self, dims: ConeDims):
        self.dims = dims
        self.nonneg = dims.nonneg
        by_dim: dict[int, list[int]] = {}
        start = dims.nonneg
        for d in dims.soc:
            by_dim.setdefault(d, []).append(start)
            start += d
        self.groups: list[tuple[int, np.ndarray]] = []
        for d in sorted(by_dim):
            starts = np.asarray(by_dim[d], dtype=int)
            idx = starts[:, None] + np.arange(d)[None, :]
            self.groups.append((d, idx))

    def identity(self) -> np.ndarray:
        e = np.zeros(self.dims.total)
        e[: self.nonneg] = 1.0
        for _, idx in self.groups:
            e[idx[:, 0]] = 1.0
        return e


def _jordan_product(layout: _ConeLayout, u, v) -> np.ndarray:
    out = np.empty(layout.dims.total)
    ln = layout.nonneg
    out[:ln] = u[:ln] * v[:ln]
    for _, idx in layout.groups:
        ub, vb = u[idx], v[idx]
        out[idx[:, 0]] = np.sum(ub * vb, axis=1)
        out[idx[:, 1:]] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
    return out


def _jordan_solve(layout: _ConeLayout, lam, v) -> np.ndarray:
    """Solve lam o u = v for u (lam strictly interior)."""
    out = np.empty(layout.dims.total)
    ln = layout.nonneg
    out[:ln] = v[:ln] / lam[:ln]
    for _, idx in layout.groups:
        lb, vb = lam[idx], v[idx]
        l0 = lb[:, 0]
        det = l0**2 - np.sum(lb[:, 1:] ** 2, axis=1)
        dd = np.sum(lb[:, 1:] * vb[:, 1:], axis=1)
        out[idx[:, 0]] = (l0 * vb[:, 0] - dd) / det
        out[idx[:, 1:]] = (vb[:, 1:] / l0[:, None]
                           + ((dd / l0 - vb[:, 0]) / det)[:, None] * lb[:, 1:])
    return out


def _max_step(layout: _ConeLayout, u, du) -> float:
    """Largest alpha in [0, 1] keeping u + alpha*du inside the cone."""
    alpha = 1.0
    ln = layout.nonneg
    neg = du[:ln] < 0.0
    if np.any(neg):
        alpha = min(alpha, float(np.min(-u[:ln][neg] / du[:ln][neg])))
    for _, idx in layout.groups:
        ub, db = u[idx], du[idx]
        u0, d0 = ub[:, 0], db[:, 0]
        # smallest positive root of (u0 + a d0)^2 - |u1 + a d1|^2 = 0
        a = d0**2 - np.sum(db[:, 1:] ** 2, axis=1)
        b = 2.0 * (u0 * d0 - np.sum(ub[:, 1:] * db[:, 1:], axis=1))
        cc = u0**2 - np.sum(ub[:, 1:] ** 2, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            disc = b**2 - 4.0 * a * cc
            sq = np.sqrt(np.maximum(disc, 0.0))
            candidates = np.stack([(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a),
                                   np.where(b != 0.0, -cc / b, np.inf)])
        quad = np.abs(a) > 1e-300
        candidates[0, ~quad] = np.inf
        candidates[1, ~quad] = np.inf
        candidates[2, quad] = np.inf
        candidates[:, disc < 0.0] = np.where(quad[disc < 0.0], np.inf,
                                             candidates[:, disc < 0.0])
        valid = (candidates > 0.0) & (u0[None, :] + candidates * d0[None, :] > 0.0)
        candidates = np.where(valid, candidates, np.inf)
        alpha = min(alpha, float(np.min(candidates, initial=np.inf)))
        apex = d0 < 0.0
        if np.any(apex):
            alpha = min(alpha, float(np.min(-u0[apex] / d0[apex])))
    return alpha


def _interior_margin(layout: _ConeLayout, u) -> float:
    """min { t : u + t*e in K }; negative means strictly interior."""
    worst = -np.inf
    ln = layout.nonneg
    if ln:
        worst = max(worst, float(-np.min(u[:ln])))
    for _, idx in layout.groups:
        ub = u[idx]
        margins = np.linalg.norm(ub[:, 1:], axis=1) - ub[:, 0]
        worst = max(worst, float(np.max(margins)))
    if worst == -np.inf:
        worst = 0.0
    return worst


class _Scaling:
    """Nesterov-Todd scaling W with W z = W^{-T} s = lambda, batched."""

    def __init__(self, layout: _ConeLayout, s, z):
        self.layout = layout
        ln = layout.nonneg
        if ln and (np.any(s[:ln] <= 0.0) or np.any(z[:ln] <= 0.0)):
            raise SocpError("iterate left the nonnegative orthant")
        self.d = np.sqrt(s[:ln] / z[:ln]) if ln else np.zeros(0)
        self.lmbda = np.empty(layout.dims.total)
        self.lmbda[:ln] = np.sqrt(s[:ln] * z[:ln])
        self.beta: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        for _, idx in layout.groups:
            sb, zb = s[idx], z[idx]
            s_arg = sb[:, 0] ** 2 - np.sum(sb[:, 1:] ** 2, axis=1)
            z_arg = zb[:, 0] ** 2 - np.sum(zb[:, 1:] ** 2, axis=1)
            if (np.any(s_arg <= 0.0) or np.any(sb[:, 0] <= 0.0)
                    or np.any(z_arg <= 0.0) or np.any(zb[:, 0] <= 0.0)):
                raise SocpError("iterate left a second-order cone")
            a = np.sqrt(s_arg)
            b = np.sqrt(z_arg)
            beta = np.sqrt(a / b)
            gamma = np.sqrt((np.sum(sb * zb, axis=1) / (a * b) + 1.0) / 2.0)
            # scaling point w (unit hyperbolic norm), stored as its
            # half-rotation v with 2 v v' - J = H(w)
            jz = zb.copy()
            jz[:, 1:] *= -1.0
            w = (sb / a[:, None] + jz / b[:, None]) / (2.0 * gamma[:, None])
            v = w
            v[:, 0] += 1.0
            v /= np.sqrt(2.0 * v[:, :1])
            self.beta.append(beta)
            self.v.append(v)
            dd = 2.0 * gamma + sb[:, 0] / a + zb[:, 0] / b
            lam0 = gamma
            lam1 = ((gamma + zb[:, 0] / b)[:, None] * sb[:, 1:] / a[:, None]
                    + (gamma + sb[:, 0] / a)[:, None] * zb[:, 1:] / b[:, None])
            lam1 /= dd[:, None]
            scale = np.sqrt(a * b)
            self.lmbda[idx[:, 0]] = scale * lam0
            self.lmbda[idx[:, 1:]] = scale[:, None] * lam1

    def apply(self, u, inverse: bool = False) -> np.ndarray:
        """W u (or W^{-1} u); W is symmetric."""
        out = u.copy()
        ln = self.layout.nonneg
        out[:ln] = u[:ln] / self.d if inverse else u[:ln] * self.d
        for g, (_, idx) in enumerate(self.layout.groups):
            ub = u[idx]
            v = self.v[g]
            beta = self.beta[g]
            if not inverse:
                # W u = beta (2 v (v'u) - J u)
                coef = 2.0 * np.sum(v * ub, axis=1)
                res = coef[:, None] * v
                res[:, 0] -= ub[:, 0]
                res[:, 1:] += ub[:, 1:]
                out[idx] = beta[:, None] * res
            else:
                # W^-1 u = (1/beta) (2 (Jv)((Jv)'u) - J u)
                jv = v.copy()
                jv[:, 1:] *= -1.0
                coef = 2.0 * np.sum(jv * ub, axis=1)
                res = coef[:, None] * jv
                res[:, 0] -= ub[:, 0]
                res[:, 1:] += ub[:, 1:]
                out[idx] = res / beta[:, None]
        return out

    def wsq_batches(self):
        """W^2 per SOC group as (m, d, d) batches (the KKT block values)."""
        batches = []
        for g, (d, _) in enumerate(self.layout.groups):
            v = self.v[g]
            beta = self.beta[g]
            w = 2.0 * v[:, :, None] * v[:, None, :]
            w[:, np.arange(1, d), np.arange(1, d)] += 1.0
            w[:, 0, 0] -= 1.0
            w *= beta[:, None, None]
            batches.append(np.einsum("mij,mkj->mik", w, w))
        return batches


class _KktTemplate:
    """Fixed sparsity pattern of the 3x3 KKT matrix; values updated per iter.

    K = [[0, A', G'], [A, 0, 0], [G, 0, -W'W]]; only the W'W entries change
    between iterations.
    """

    def __init__(self, a_eq, g, layout: _ConeLayout):
        n = g.shape[1]
        p = a_eq.shape[0]
        m = g.shape[0]
        self.n, self.p, self.m = n, p, m
        rows, cols, vals = [], [], []

        def add(coo, row_off, col_off):
            rows.append(coo.row + row_off)
            cols.append(coo.col + col_off)
            vals.append(coo.data)

        a_coo = a_eq.tocoo()
        g_coo = g.tocoo()
        add(a_coo, n, 0)                     # A
        rows.append(a_coo.col)               # A'
        cols.append(a_coo.row + n)
        vals.append(a_coo.data)
        add(g_coo, n + p, 0)                 # G
        rows.append(g_coo.col)               # G'
        cols.append(g_coo.row + n + p)
        vals.append(g_coo.data)

        self.static_rows = np.concatenate(rows) if rows else np.zeros(0, int)
        self.static_cols = np.concatenate(cols) if cols else np.zeros(0, int)
        self.static_vals = np.concatenate(vals) if vals else np.zeros(0)

        # positions of the -W'W block
        base = n + p
        ln = layout.nonneg
        w_rows = [base + np.arange(ln)]
        w_cols = [base + np.arange(ln)]
        for d, idx in layout.groups:
            block_rows = (base + idx[:, :, None] + np.zeros((1, 1, d), int)).ravel()
            block_cols = (base + idx[:, None, :] + np.zeros((1, d, 1), int)).ravel()
            w_rows.append(block_rows)
            w_cols.append(block_cols)
        self.w_rows = np.concatenate(w_rows)
        self.w_cols = np.concatenate(w_cols)
        self.size = n + p + m

    def factor(self, scaling: _Scaling, reg: float = 0.0):
        w_vals = [scaling.d**2]
        for batch in scaling.wsq_batches():
            w_vals.append(batch.ravel())
        w_vals = np.concatenate(w_vals) if w_vals else np.zeros(0)
        rows = np.concatenate((self.static_rows, self.w_rows))
        cols = np.concatenate((self.static_cols, self.w_cols))
        vals = np.concatenate((self.static_vals, -w_vals))
        if reg > 0.0:
            diag = np.concatenate((np.full(self.n, reg),
                                   np.full(self.p + self.m, -reg)))
            rows = np.concatenate((rows, np.arange(self.size)))
            cols = np.concatenate((cols, np.arange(self.size)))
            vals = np.concatenate((vals, diag))
        kernel = sp.coo_matrix((vals, (rows, cols)),
                               shape=(self.size, self.size)).tocsc()
        try:
            lu = splu(kernel)
        except RuntimeError as exc:
            raise SocpError(f"KKT factorization failed: {exc}") from exc
        return _KktFactor(kernel, lu, self.n, self.p)

    def factor_with_fallback(self, scaling: _Scaling):
        for reg in (0.0, 1e-10, 1e-8):
            try:
                return self.factor(scaling, reg)
            except SocpError:
                continue
        raise SocpError("KKT factorization failed at all regularization levels")


class _KktFactor:
    def __init__(self, kernel, lu, n, p):
        self.kernel = kernel
        self.lu = lu
        self.n = n
        self.p = p

    def solve(self, bx, by, bz, refine: int = 1):
        rhs = np.concatenate((bx, by, bz))
        sol = self.lu.solve(rhs)
        for _ in range(refine):
            residual = rhs - self.kernel @ sol
            sol = sol + self.lu.solve(residual)
        n, p = self.n, self.p
        return sol[:n], sol[n: n + p], sol[n + p:]


class _IdentityScaling:
    """Unit scaling used to construct the initial point."""

    def __init__(self, layout: _ConeLayout):
        ln = layout.nonneg
        self.layout = layout
        self.d = np.ones(ln)
        self.beta = [np.ones(idx.shape[0]) for _, idx in layout.groups]
        self.v = []
        for d, idx in layout.groups:
            v = np.zeros((idx.shape[0], d))
            v[:, 0] = 1.0
            self.v.append(v)

    def wsq_batches(self):
        batches = []
        for d, idx in self.layout.groups:
            eye = np.zeros((idx.shape[0], d, d))
            eye[:, np.arange(d), np.arange(d)] = 1.0
            batches.append(eye)
        return batches


def solve_socp(c, g, h, dims: ConeDims, a_eq=None, b_eq=None, *,
               max_iters: int = 200, feastol: float = 1e-9,
               abstol: float = 1e-9, reltol: float = 1e-9,
               step_fraction: float = 0.99) -> SocpResult:
    """Solve the conic program min c'x s.t. A x = b, G x + s = h, s in K."""
    c = np.asarray(c, dtype=float)
    h = np.asarray(h, dtype=float)
    n = c.size
    g = sp.csc_matrix(g)
    if g.shape != (dims.total, n):
        raise ValueError("G must be (cone dim) x n")
    if a_eq is None:
        a_eq = sp.csc_matrix((0, n))
        b_eq = np.zeros(0)
    else:
        a_eq = sp.csc_matrix(a_eq)
        b_eq = np.asarray(b_eq, dtype=float)
    p = a_eq.shape[0]
    if dims.total == 0:
        raise ValueError("the cone must be non-empty")

    layout = _ConeLayout(dims)
    e = layout.identity()
    nu = dims.degree + 1
    template = _KktTemplate(a_eq, g, layout)

    resx0 = max(1.0, float(np.linalg.norm(c)))
    resy0 = max(1.0, float(np.linalg.norm(b_eq)))
    resz0 = max(1.0, float(np.linalg.norm(h)))

    # Initial point: least-squares primal/dual with identity scaling.
    kkt0 = template.factor_with_fallback(_IdentityScaling(layout))
    x, _, ztmp = kkt0.solve(np.zeros(n), b_eq.copy(), h.copy())
    s = -ztmp
    margin = _interior_margin(layout, s)
    if margin >= -1e-8 * max(1.0, float(np.linalg.norm(s))):
        s = s + (1.0 + margin) * e
    _, y, z = kkt0.solve(-c, np.zeros(p), np.zeros(dims.total))
    margin = _interior_margin(layout, z)
    if margin >= -1e-8 * max(1.0, float(np.linalg.norm(z))):
        z = z + (1.0 + margin) * e
    tau, kappa = 1.0, 1.0

    def make_result(status, xs, ys, zs, ss, extras):
        return SocpResult(status=status, x=xs, y=ys, z=zs, s=ss, **extras)

    status = "max_iterations"
    for iteration in range(max_iters + 1):
        # residuals of the self-dual embedding
        hresx = -(a_eq.T @ y) - g.T @ z
        rx = hresx - c * tau
        hresy = a_eq @ x
        ry = hresy - b_eq * tau
        hresz = s + g @ x
        rz = hresz - h * tau
        cx = float(c @ x)
        by = float(b_eq @ y)
        hz = float(h @ z)
        rt = kappa + cx + by + hz

        gap = float(s @ z)
        pcost = cx / tau
        dcost = -(by + hz) / tau
        if pcost < 0.0:
            relgap = gap / tau**2 / -pcost
        elif dcost > 0.0:
            relgap = gap / tau**2 / dcost
        else:
            relgap = None
        pres = max(float(np.linalg.norm(ry)) / resy0,
                   float(np.linalg.norm(rz)) / resz0) / tau
        dres = float(np.linalg.norm(rx)) / resx0 / tau

        extras = dict(
            primal_objective=pcost,
            dual_objective=dcost,
            gap=gap / tau**2,
            relative_gap=relgap,
            primal_residual=pres,
            dual_residual=dres,
            iterations=iteration,
        )

        if pres <= feastol and dres <= feastol and (
            gap / tau**2 <= abstol or (relgap is not None and relgap <= reltol)
        ):
            return make_result("optimal", x / tau, y / tau, z / tau, s / tau,
                               extras)
        if hz + by < 0.0:
            pinfres = float(np.linalg.norm(hresx)) / resx0 / (-hz - by)
            if pinfres <= feastol:
                scale = 1.0 / (-hz - by)
                return make_result("primal_infeasible", x * np.nan, y * scale,
                                   z * scale, s * np.nan, extras)
        if cx < 0.0:
            dinfres = max(float(np.linalg.norm(hresy)) / resy0,
                          float(np.linalg.norm(hresz)) / resz0) / (-cx)
            if dinfres <= feastol:
                scale = 1.0 / (-cx)
                return make_result("dual_infeasible", x * scale, y * np.nan,
                                   z * np.nan, s * scale, extras)
        if iteration == max_iters:
            return make_result(status, x / tau, y / tau, z / tau, s / tau,
                               extras)

        try:
            scaling = _Scaling(layout, s, z)
            kkt = template.factor_with_fallback(scaling)
        except SocpError:
            return make_result("numerical_failure", x / tau, y / tau, z / tau,
                               s / tau, extras)
        lmbda = scaling.lmbda
        lam_sq = _jordan_product(layout, lmbda, lmbda)
        mu = (gap + tau * kappa) / nu

        dx1, dy1, dz1 = kkt.solve(-c, b_eq.copy(), h.copy())

        def newton(sigma, corr_s, corr_kt):
            # Newton equations on the self-dual residuals:
            #   A'dy + G'dz + c dtau          = (1-sigma) rx
            #   A dx - b dtau                 = -(1-sigma) ry
            #   G dx + ds - h dtau            = -(1-sigma) rz
            #   c'dx + b'dy + h'dz + dkappa   = -(1-sigma) rt
            #   lmbda o (W dz + W^-1 ds)      = sigma mu e - lmbda o lmbda - corr
            #   tau dkappa + kappa dtau       = sigma mu - tau kappa - corr
            rhs5 = sigma * mu * e - lam_sq - corr_s
            gvec = _jordan_solve(layout, lmbda, rhs5)
            bz3 = -(1.0 - sigma) * rz - scaling.apply(gvec)
            dx0, dy0, dz0 = kkt.solve((1.0 - sigma) * rx,
                                      -(1.0 - sigma) * ry, bz3)
            bt4 = -(1.0 - sigma) * rt - (sigma * mu - tau * kappa - corr_kt) / tau
            denom = float(c @ dx1 + b_eq @ dy1 + h @ dz1) - kappa / tau
            if denom == 0.0:
                raise SocpError("degenerate self-dual step equation")
            dtau = (bt4 - float(c @ dx0 + b_eq @ dy0 + h @ dz0)) / denom
            dx = dx0 + dtau * dx1
            dy = dy0 + dtau * dy1
            dz = dz0 + dtau * dz1
            ds = scaling.apply(gvec - scaling.apply(dz))
            dkappa = (sigma * mu - tau * kappa - corr_kt) / tau - (kappa / tau) * dtau
            return dx, dy, dz, ds, dtau, dkappa

        def step_limit(ds, dz, dtau, dkappa):
            alpha = min(_max_step(layout, s, ds), _max_step(layout, z, dz))
            if dtau < 0.0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0.0:
                alpha = min(alpha, -kappa / dkappa)
            return alpha

        try:
            # affine (predictor) direction
            dxa, dya, dza, dsa, dtaua, dkappaa = newton(0.0, 0.0 * e, 0.0)
            alpha_aff = step_limit(dsa, dza, dtaua, dkappaa)
            sigma = min(1.0, max(0.0, (1.0 - alpha_aff))) ** 3

            # combined direction with Mehrotra correction
            corr_s = _jordan_product(layout, scaling.apply(dsa, inverse=True),
                                     scaling.apply(dza))
            corr_kt = dtaua * dkappaa
            dx, dy, dz, ds, dtau, dkappa = newton(sigma, corr_s, corr_kt)
        except SocpError:
            return make_result("numerical_failure", x / tau, y / tau, z / tau,
                               s / tau, extras)

        alpha = step_fraction * step_limit(ds, dz, dtau, dkappa)
        alpha = min(alpha, 1.0)
        if alpha <= 1e-14:
            return make_result("numerical_failure", x / tau, y / tau, z / tau,
                               s / tau, extras)

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau += alpha * dtau
        kappa += alpha * dkappa
        if tau <= 0.0 or kappa <= 0.0:
            return make_result("numerical_failure", x, y, z, s, extras)

    raise AssertionError("unreachable")
