"""Conic encoding of one successive-convexification step.

The convex subproblem minimizes

    -alpha_h * (i0 + grad . dx_anchor)
    + (1 - alpha_h) * sum_k c_k ||u_k||_2
    + gamma * sum_k w_k ||E_k eps_k||_1

over node states, controls, and virtual controls, subject to the affine
FOH transition with virtual control, fixed boundary states, per-node
thrust cones ||u_k|| <= u_max_k (controls at zero-thrust nodes are
eliminated), and the trust region ||dx_k||_2 + ||du_k||_2 <= eta split by
epigraph variables. The encoding is a standard-form cone program solved by
the embedded interior-point method; an adapter for an external conic
solver implements the same narrow interface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .discretization import DiscreteSegment, TrajectoryIterate
from .socp import ConeDims, SocpError, SocpResult, solve_socp

__all__ = [
    "SubproblemStatus",
    "ConicProgram",
    "SubproblemSolution",
    "trapezoid_node_weights",
    "build_subproblem",
    "solve_subproblem",
    "EmbeddedConeSolver",
    "CvxoptConeSolver",
    "kkt_residuals",
    "dump_program",
    "load_program",
]


class SubproblemStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iterations"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class _Layout:
    """Column offsets of each variable group in the decision vector."""

    n_nodes: int
    free_nodes: np.ndarray  # node indices with control variables
    x0: int = 0
    u0: int = 0
    eps0: int = 0
    sigma0: int = 0
    w0: int = 0
    p0: int = 0
    q0: int = 0
    n_vars: int = 0
    u_col: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        n = self.n_nodes
        nf = len(self.free_nodes)
        self.x0 = 0
        self.u0 = 6 * n
        self.eps0 = self.u0 + 3 * nf
        self.sigma0 = self.eps0 + 6 * (n - 1)
        self.w0 = self.sigma0 + nf
        self.p0 = self.w0 + 6 * (n - 1)
        self.q0 = self.p0 + n
        self.n_vars = self.q0 + nf
        self.u_col = {int(k): self.u0 + 3 * i for i, k in enumerate(self.free_nodes)}

    def x(self, k: int) -> slice:
        return slice(6 * k, 6 * (k + 1))

    def u(self, k: int) -> slice | None:
        col = self.u_col.get(int(k))
        return None if col is None else slice(col, col + 3)

    def eps(self, k: int) -> slice:
        return slice(self.eps0 + 6 * k, self.eps0 + 6 * (k + 1))

    def w(self, k: int) -> slice:
        return slice(self.w0 + 6 * k, self.w0 + 6 * (k + 1))


@dataclass
class ConicProgram:
    """Standard-form cone program plus the decoding metadata."""

    c: np.ndarray
    a_eq: sp.csc_matrix
    b_eq: np.ndarray
    g: sp.csc_matrix
    h: np.ndarray
    dims: ConeDims
    objective_offset: float
    layout: _Layout
    reference: TrajectoryIterate
    constraint_counts: dict[str, int]


@dataclass
class SubproblemSolution:
    """Decoded trajectory step returned by a conic solve."""

    status: SubproblemStatus
    states: np.ndarray
    controls: np.ndarray
    virtual_controls: np.ndarray
    objective_value: float
    solver_iterations: int
    gap: float
    primal_residual: float
    dual_residual: float
    raw: SocpResult | None = None


def trapezoid_node_weights(intervals: np.ndarray) -> np.ndarray:
    """Node weights of trapezoid quadrature on a non-uniform grid."""
    intervals = np.asarray(intervals, dtype=float)
    weights = np.zeros(intervals.size + 1)
    weights[:-1] += 0.5 * intervals
    weights[1:] += 0.5 * intervals
    return weights


def build_subproblem(segments: list[DiscreteSegment],
                     reference: TrajectoryIterate,
                     mi_lin: tuple[float, np.ndarray] | None,
                     alpha_h: float, gamma: float, eta: float,
                     u_max=None, zero_thrust_nodes=None,
                     anchor_node: int | None = None) -> ConicProgram:
    """Encode the convex step around ``reference`` as a cone program.

    ``mi_lin`` is the (value, gradient) pair of the information model at
    the reference anchor state; pass None when ``alpha_h`` is zero.
    ``zero_thrust_nodes`` is a boolean mask over nodes whose controls are
    eliminated rather than bounded.
    """
    if not 0.0 <= alpha_h <= 1.0:
        raise ValueError("alpha_h must lie in [0, 1]")
    if eta <= 0.0 or gamma < 0.0:
        raise ValueError("eta must be positive and gamma nonnegative")
    n = len(reference.grid)
    if len(segments) != n - 1:
        raise ValueError("need one discrete segment per grid interval")

    # normalize the information model into (value, gradient, anchor) terms
    if mi_lin is None:
        mi_terms = []
    elif isinstance(mi_lin, (list,)):
        mi_terms = [(float(i0), np.asarray(g, dtype=float), int(a))
                    for i0, g, a in mi_lin]
    else:
        if anchor_node is None:
            raise ValueError("anchor_node is required with a single (i0, grad)")
        i0, grad = mi_lin
        mi_terms = [(float(i0), np.asarray(grad, dtype=float), int(anchor_node))]
    if alpha_h > 0.0 and not mi_terms:
        raise ValueError("an information model is required when alpha_h > 0")
    for _, _, a in mi_terms:
        if not 0 <= a < n:
            raise ValueError("anchor node outside the grid")

    u_max = reference.u_max if u_max is None else np.asarray(u_max, dtype=float)
    if u_max.shape != (n,):
        raise ValueError(f"u_max must have shape ({n},)")
    zero_thrust = (np.zeros(n, dtype=bool) if zero_thrust_nodes is None
                   else np.asarray(zero_thrust_nodes, dtype=bool))
    if zero_thrust.shape != (n,):
        raise ValueError(f"zero_thrust_nodes must have shape ({n},)")
    if np.any(np.abs(reference.controls[zero_thrust]) > 0.0):
        raise ValueError("reference carries thrust inside a zero-thrust window")

    free_nodes = np.flatnonzero(~zero_thrust)
    layout = _Layout(n_nodes=n, free_nodes=free_nodes)
    n_vars = layout.n_vars
    weights = trapezoid_node_weights(reference.grid.intervals)

    # objective
    c = np.zeros(n_vars)
    offset = 0.0
    if alpha_h > 0.0:
        for i0, grad, anchor in mi_terms:
            c[layout.x(anchor)] += -alpha_h * grad
            offset += -alpha_h * (i0 - float(grad @ reference.states[anchor]))
    for i, k in enumerate(free_nodes):
        c[layout.sigma0 + i] = (1.0 - alpha_h) * weights[k]
    for k in range(n - 1):
        c[layout.w(k)] = gamma * weights[k]

    # equalities: dynamics with virtual control, then boundary pins
    a_rows, a_cols, a_vals, b_eq = [], [], [], []
    row = 0

    def put(r, cols, block):
        block = np.atleast_2d(block)
        for i in range(block.shape[0]):
            for j in range(block.shape[1]):
                v = block[i, j]
                if v != 0.0:
                    a_rows.append(r + i)
                    a_cols.append(cols.start + j)
                    a_vals.append(v)

    eye6 = np.eye(6)
    for k, seg in enumerate(segments):
        put(row, layout.x(k + 1), eye6)
        put(row, layout.x(k), -seg.a_k)
        if (uk := layout.u(k)) is not None:
            put(row, uk, -seg.b_minus)
        if (uk1 := layout.u(k + 1)) is not None:
            put(row, uk1, -seg.b_plus)
        put(row, layout.eps(k), -seg.e_k)
        b_eq.extend(seg.r_k)
        row += 6
    n_dyn_rows = row
    put(row, layout.x(0), eye6)
    b_eq.extend(reference.states[0])
    row += 6
    put(row, layout.x(n - 1), eye6)
    b_eq.extend(reference.states[n - 1])
    row += 6
    a_eq = sp.csc_matrix((a_vals, (a_rows, a_cols)), shape=(row, n_vars))
    b_eq = np.asarray(b_eq)

    # cone rows: nonnegative orthant first, then the second-order cones
    g_rows, g_cols, g_vals, h = [], [], [], []
    grow = 0

    def gput(cols, block):
        nonlocal grow
        block = np.atleast_2d(block)
        for i in range(block.shape[0]):
            for j in range(block.shape[1]):
                v = block[i, j]
                if v != 0.0:
                    g_rows.append(grow + i)
                    g_cols.append(cols.start + j)
                    g_vals.append(v)

    def gput_scalar(col, value):
        g_rows.append(grow)
        g_cols.append(col)
        g_vals.append(value)

    # sigma_k <= u_max_k
    for i, k in enumerate(free_nodes):
        gput_scalar(layout.sigma0 + i, 1.0)
        h.append(u_max[k])
        grow += 1
    # p_k (+ q_k) <= eta
    for k in range(n):
        gput_scalar(layout.p0 + k, 1.0)
        if (layout.u(k)) is not None:
            i = int(np.searchsorted(free_nodes, k))
            gput_scalar(layout.q0 + i, 1.0)
        h.append(eta)
        grow += 1
    # |E_k eps_k| <= w_k componentwise
    for k, seg in enumerate(segments):
        gput(layout.eps(k), seg.e_k)
        gput(layout.w(k), -eye6)
        h.extend(np.zeros(6))
        grow += 6
        gput(layout.eps(k), -seg.e_k)
        gput(layout.w(k), -eye6)
        h.extend(np.zeros(6))
        grow += 6
    n_nonneg = grow

    socs = []
    # thrust cones (sigma_k, u_k)
    for i, k in enumerate(free_nodes):
        gput_scalar(layout.sigma0 + i, -1.0)
        h.append(0.0)
        grow += 1
        gput(layout.u(k), -np.eye(3))
        h.extend(np.zeros(3))
        grow += 3
        socs.append(4)
    # trust-region state cones (p_k, x_k - xbar_k)
    for k in range(n):
        gput_scalar(layout.p0 + k, -1.0)
        h.append(0.0)
        grow += 1
        gput(layout.x(k), -eye6)
        h.extend(-reference.states[k])
        grow += 6
        socs.append(7)
    # trust-region control cones (q_k, u_k - ubar_k)
    for i, k in enumerate(free_nodes):
        gput_scalar(layout.q0 + i, -1.0)
        h.append(0.0)
        grow += 1
        gput(layout.u(k), -np.eye(3))
        h.extend(-reference.controls[k])
        grow += 3
        socs.append(4)

    g = sp.csc_matrix((g_vals, (g_rows, g_cols)), shape=(grow, n_vars))
    dims = ConeDims(nonneg=n_nonneg, soc=tuple(socs))

    counts = {
        "dynamics_equalities": n_dyn_rows,
        "boundary_equalities": 12,
        "thrust_cones": len(free_nodes),
        "trust_state_cones": n,
        "trust_control_cones": len(free_nodes),
        "nonneg_rows": n_nonneg,
        "variables": n_vars,
    }
    return ConicProgram(
        c=c, a_eq=a_eq, b_eq=b_eq, g=g, h=np.asarray(h), dims=dims,
        objective_offset=offset, layout=layout, reference=reference,
        constraint_counts=counts,
    )


class EmbeddedConeSolver:
    """Default backend: the in-package homogeneous self-dual method."""

    def __init__(self, max_iters: int = 200, feastol: float = 1e-9,
                 abstol: float = 1e-10, reltol: float = 1e-10):
        self.max_iters = max_iters
        self.feastol = feastol
        self.abstol = abstol
        self.reltol = reltol

    def solve(self, program: ConicProgram) -> SocpResult:
        return solve_socp(
            program.c, program.g, program.h, program.dims,
            program.a_eq, program.b_eq,
            max_iters=self.max_iters, feastol=self.feastol,
            abstol=self.abstol, reltol=self.reltol,
        )


class CvxoptConeSolver:
    """Adapter for the external CVXOPT conic solver (used for cross-checks)."""

    def solve(self, program: ConicProgram) -> SocpResult:
        import cvxopt
        import cvxopt.solvers

        options = {"show_progress": False, "abstol": 1e-10, "reltol": 1e-10,
                   "feastol": 1e-9}
        sol = cvxopt.solvers.conelp(
            cvxopt.matrix(program.c),
            cvxopt.spmatrix(
                program.g.tocoo().data,
                program.g.tocoo().row.astype(int),
                program.g.tocoo().col.astype(int),
                size=program.g.shape,
            ),
            cvxopt.matrix(program.h),
            dims={"l": program.dims.nonneg, "q": list(program.dims.soc), "s": []},
            A=cvxopt.spmatrix(
                program.a_eq.tocoo().data,
                program.a_eq.tocoo().row.astype(int),
                program.a_eq.tocoo().col.astype(int),
                size=program.a_eq.shape,
            ),
            b=cvxopt.matrix(program.b_eq),
            options=options,
        )
        status_map = {
            "optimal": "optimal",
            "primal infeasible": "primal_infeasible",
            "dual infeasible": "dual_infeasible",
            "unknown": "max_iterations",
        }
        x = np.array(sol["x"]).ravel() if sol["x"] is not None else \
            np.full(program.c.size, np.nan)
        return SocpResult(
            status=status_map.get(sol["status"], "numerical_failure"),
            x=x,
            y=np.array(sol["y"]).ravel() if sol["y"] is not None else np.zeros(0),
            z=np.array(sol["z"]).ravel() if sol["z"] is not None else np.zeros(0),
            s=np.array(sol["s"]).ravel() if sol["s"] is not None else np.zeros(0),
            primal_objective=(sol["primal objective"]
                              if sol["primal objective"] is not None else np.nan),
            dual_objective=(sol["dual objective"]
                            if sol["dual objective"] is not None else np.nan),
            gap=sol["gap"] if sol["gap"] is not None else np.nan,
            relative_gap=sol["relative gap"],
            primal_residual=(sol["primal infeasibility"]
                             if sol["primal infeasibility"] is not None else np.nan),
            dual_residual=(sol["dual infeasibility"]
                           if sol["dual infeasibility"] is not None else np.nan),
            iterations=sol["iterations"],
        )


def solve_subproblem(program: ConicProgram,
                     solver=None) -> SubproblemSolution:
    """Solve the cone program and decode the trajectory variables.

    A reference iterate whose virtual controls absorb its own defects is
    always feasible, so an infeasible status indicates an encoding bug
    rather than a property of the model.
    """
    solver = solver if solver is not None else EmbeddedConeSolver()
    try:
        raw = solver.solve(program)
    except SocpError as exc:
        raise RuntimeError(f"conic solver failed: {exc}") from exc

    status = {
        "optimal": SubproblemStatus.OPTIMAL,
        "max_iterations": SubproblemStatus.MAX_ITER,
        "primal_infeasible": SubproblemStatus.INFEASIBLE,
        "dual_infeasible": SubproblemStatus.INFEASIBLE,
        "numerical_failure": SubproblemStatus.NUMERICAL_FAILURE,
    }[raw.status]

    layout = program.layout
    n = layout.n_nodes
    states = np.full((n, 6), np.nan)
    controls = np.zeros((n, 3))
    virtual = np.full((n - 1, 6), np.nan)
    if raw.x is not None and np.all(np.isfinite(raw.x)):
        for k in range(n):
            states[k] = raw.x[layout.x(k)]
            u = layout.u(k)
            if u is not None:
                controls[k] = raw.x[u]
        for k in range(n - 1):
            virtual[k] = raw.x[layout.eps(k)]
        objective = float(program.c @ raw.x) + program.objective_offset
    else:
        objective = float("nan")

    return SubproblemSolution(
        status=status,
        states=states,
        controls=controls,
        virtual_controls=virtual,
        objective_value=objective,
        solver_iterations=raw.iterations,
        gap=raw.gap,
        primal_residual=raw.primal_residual,
        dual_residual=raw.dual_residual,
        raw=raw,
    )


def kkt_residuals(program: ConicProgram, raw: SocpResult) -> dict[str, float]:
    """Primal/dual feasibility and complementarity of a returned solution."""
    x, y, z, s = raw.x, raw.y, raw.z, raw.s
    eq = float(np.max(np.abs(program.a_eq @ x - program.b_eq))) \
        if program.b_eq.size else 0.0
    cone = float(np.max(np.abs(program.g @ x + s - program.h)))
    dual = float(np.max(np.abs(program.c + program.a_eq.T @ y + program.g.T @ z)))
    gap = abs(float(program.c @ x) + float(program.b_eq @ y) + float(program.h @ z))
    return {
        "primal_equality": eq,
        "primal_cone": cone,
        "dual": dual,
        "complementarity_gap": gap,
    }


# ---------------------------------------------------------------------------
# Debug dump: documented sparse text format for external cross-checks.
#
#   line 1:  "infoplan-conic v1"
#   line 2:  "sizes <n_vars> <n_eq> <n_cone_rows>"
#   line 3:  "cones nonneg <l> soc <d1> <d2> ..."
#   line 4:  "offset <objective offset>"
#   then:    "c <j> <value>"         (nonzero objective entries)
#            "A <i> <j> <value>"     (equality triplets)
#            "b <i> <value>"
#            "G <i> <j> <value>"     (cone-row triplets)
#            "h <i> <value>"
# Indices are zero-based; values use repr-precision floats.


def dump_program(program: ConicProgram, path) -> None:
    lines = [
        "infoplan-conic v1",
        f"sizes {program.c.size} {program.b_eq.size} {program.h.size}",
        "cones nonneg {} soc {}".format(
            program.dims.nonneg, " ".join(str(d) for d in program.dims.soc)
        ).rstrip(),
        f"offset {float(program.objective_offset)!r}",
    ]
    for j in np.flatnonzero(program.c):
        lines.append(f"c {j} {float(program.c[j])!r}")
    coo = program.a_eq.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"A {i} {j} {float(v)!r}")
    for i in np.flatnonzero(program.b_eq):
        lines.append(f"b {i} {float(program.b_eq[i])!r}")
    coo = program.g.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"G {i} {j} {float(v)!r}")
    for i in np.flatnonzero(program.h):
        lines.append(f"h {i} {float(program.h[i])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_program(path):
    """Read back a dumped program as plain conic data (no trajectory metadata)."""
    lines = Path(path).read_text().splitlines()
    if lines[0] != "infoplan-conic v1":
        raise ValueError("not an infoplan conic dump")
    n, p, m = (int(t) for t in lines[1].split()[1:])
    cone_tokens = lines[2].split()
    nonneg = int(cone_tokens[2])
    socs = tuple(int(t) for t in cone_tokens[4:])
    offset = float(lines[3].split()[1])
    c = np.zeros(n)
    b = np.zeros(p)
    h = np.zeros(m)
    a_trip, g_trip = [], []
    for line in lines[4:]:
        tag, *rest = line.split()
        if tag == "c":
            c[int(rest[0])] = float(rest[1])
        elif tag == "A":
            a_trip.append((int(rest[0]), int(rest[1]), float(rest[2])))
        elif tag == "b":
            b[int(rest[0])] = float(rest[1])
        elif tag == "G":
            g_trip.append((int(rest[0]), int(rest[1]), float(rest[2])))
        elif tag == "h":
            h[int(rest[0])] = float(rest[1])
        else:
            raise ValueError(f"unknown dump line tag {tag!r}")
    a_eq = sp.csc_matrix(
        ([t[2] for t in a_trip], ([t[0] for t in a_trip], [t[1] for t in a_trip])),
        shape=(p, n),
    )
    g = sp.csc_matrix(
        ([t[2] for t in g_trip], ([t[0] for t in g_trip], [t[1] for t in g_trip])),
        shape=(m, n),
    )
    return c, a_eq, b, g, h, ConeDims(nonneg=nonneg, soc=socs), offset
