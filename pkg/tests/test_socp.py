import numpy as np
import pytest
import scipy.sparse as sp

from infoplan.socp import ConeDims, solve_socp


def interior_point(rng, dims):
    u = np.zeros(dims.total)
    u[: dims.nonneg] = rng.random(dims.nonneg) + 0.5
    for sl in dims.soc_slices():
        v = rng.normal(size=sl.stop - sl.start - 1)
        u[sl.start] = np.linalg.norm(v) + rng.random() + 0.3
        u[sl.start + 1: sl.stop] = v
    return u


def random_feasible_program(rng, n, p, dims):
    """A cone program with known interior primal/dual points."""
    m = dims.total
    g = sp.csc_matrix(rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.5))
    a = sp.csc_matrix(rng.normal(size=(p, n)))
    x0 = rng.normal(size=n)
    s0 = interior_point(rng, dims)
    z0 = interior_point(rng, dims)
    y0 = rng.normal(size=p)
    h = g @ x0 + s0
    b = a @ x0
    c = -(g.T @ z0) - (a.T @ y0 if p else 0.0)
    return c, g, h, a if p else None, b if p else None


class TestHandInstances:
    def test_lp(self):
        c = np.array([-1.0, -1.0])
        g = sp.csc_matrix([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        h = np.array([1.0, 0.0, 0.0])
        result = solve_socp(c, g, h, ConeDims(nonneg=3))
        assert result.status == "optimal"
        assert abs(result.primal_objective + 1.0) < 1e-8

    def test_epigraph_absolute_value(self):
        # minimize |x - 2| subject to |x| <= 1  ->  x = 1, objective 1
        c = np.array([0.0, 1.0])
        g = sp.csc_matrix([[0.0, -1.0], [-1.0, 0.0], [0.0, 0.0], [-1.0, 0.0]])
        h = np.array([0.0, -2.0, 1.0, 0.0])
        result = solve_socp(c, g, h, ConeDims(soc=(2, 2)))
        assert result.status == "optimal"
        assert abs(result.x[0] - 1.0) < 1e-8
        assert abs(result.primal_objective - 1.0) < 1e-8

    def test_equality_constrained_ball(self):
        # minimize x + y subject to x - y = 1, ||(x, y)|| <= 2
        c = np.array([1.0, 1.0])
        a = sp.csc_matrix([[1.0, -1.0]])
        b = np.array([1.0])
        g = sp.csc_matrix([[0.0, 0.0], [-1.0, 0.0], [0.0, -1.0]])
        h = np.array([2.0, 0.0, 0.0])
        result = solve_socp(c, g, h, ConeDims(soc=(3,)), a, b)
        yy = (-1.0 - np.sqrt(7.0)) / 2.0
        assert result.status == "optimal"
        assert abs(result.primal_objective - (2.0 * yy + 1.0)) < 1e-8

    def test_primal_infeasible_certificate(self):
        c = np.array([1.0])
        g = sp.csc_matrix([[-1.0], [1.0]])
        h = np.array([-1.0, 0.0])
        result = solve_socp(c, g, h, ConeDims(nonneg=2))
        assert result.status == "primal_infeasible"

    def test_dual_infeasible_certificate(self):
        c = np.array([-1.0])
        g = sp.csc_matrix([[-1.0]])
        h = np.array([0.0])
        result = solve_socp(c, g, h, ConeDims(nonneg=1))
        assert result.status == "dual_infeasible"


class TestRandomAgainstCvxopt:
    def test_agrees_with_external_solver(self):
        cvxopt = pytest.importorskip("cvxopt")
        import cvxopt.solvers

        rng = np.random.default_rng(7)
        for _ in range(15):
            n = int(rng.integers(8, 40))
            p = int(rng.integers(0, n // 3))
            socs = tuple(int(rng.integers(2, 7))
                         for _ in range(int(rng.integers(1, 4))))
            nl = int(rng.integers(2, 15)) + max(0, n + 4 - sum(socs))
            dims = ConeDims(nonneg=nl, soc=socs)
            c, g, h, a, b = random_feasible_program(rng, n, p, dims)

            mine = solve_socp(c, g, h, dims, a, b)
            assert mine.status == "optimal"
            assert mine.primal_residual < 1e-8
            assert mine.dual_residual < 1e-8

            kwargs = {}
            if a is not None:
                kwargs = {"A": cvxopt.matrix(a.toarray()), "b": cvxopt.matrix(b)}
            sol = cvxopt.solvers.conelp(
                cvxopt.matrix(c), cvxopt.matrix(g.toarray()), cvxopt.matrix(h),
                dims={"l": nl, "q": list(socs), "s": []},
                options={"show_progress": False}, **kwargs,
            )
            assert sol["status"] == "optimal"
            scale = max(1.0, abs(sol["primal objective"]))
            assert abs(mine.primal_objective - sol["primal objective"]) / scale < 1e-6


class TestKktQuality:
    def test_residuals_below_tolerance(self):
        rng = np.random.default_rng(3)
        dims = ConeDims(nonneg=12, soc=(3, 4, 5))
        c, g, h, a, b = random_feasible_program(rng, 18, 4, dims)
        result = solve_socp(c, g, h, dims, a, b, feastol=1e-9, abstol=1e-10,
                            reltol=1e-10)
        assert result.status == "optimal"
        # primal feasibility of the returned solution
        assert np.max(np.abs(a @ result.x - b)) < 1e-8
        assert np.max(np.abs(g @ result.x + result.s - h)) < 1e-8
        # dual feasibility
        assert np.max(np.abs(c + a.T @ result.y + g.T @ result.z)) < 1e-8
        # complementarity
        assert abs(result.s @ result.z) < 1e-8
