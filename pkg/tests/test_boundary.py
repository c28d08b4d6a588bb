import numpy as np
import pytest

from safemargin import boundary as bd
from safemargin import gfun
from safemargin.errors import (LineSearchFailed, NotRecovered, SingularNewtonMatrix,
                               ZeroGradient)
from safemargin.model import Metric


def _random_spd(rng, m):
    A = rng.standard_normal((m, m))
    return A @ A.T + m * np.eye(m)


# ---------------------------------------------------------------------------
# backtracking

def test_backtrack_accepts_candidate():
    p_new, m = bd.backtrack(lambda p: p + 1.0, np.zeros(2), lambda q: True, 10)
    assert m == 0 and np.array_equal(p_new, [1.0, 1.0])


def test_backtrack_quarter_step():
    calls = []

    def member(q):
        calls.append(q.copy())
        return len(calls) == 3

    p = np.array([1.0, 2.0])
    target = np.array([5.0, -2.0])
    p_new, m = bd.backtrack(target, p, member, 10)
    assert m == 2
    assert np.array_equal(p_new, p + (target - p) / 4)


def test_backtrack_exhausted():
    with pytest.raises(LineSearchFailed):
        bd.backtrack(np.ones(2), np.zeros(2), lambda q: False, 5)


# ---------------------------------------------------------------------------
# tangent

def test_tangent_axis():
    assert np.array_equal(bd.tangent([1.0, 0.0]), [0.0, 1.0])
    assert np.array_equal(bd.tangent([1.0, 0.0], sign=-1), [0.0, -1.0])


def test_tangent_345():
    assert np.allclose(bd.tangent([3.0, 4.0]), [-0.8, 0.6], atol=1e-15)


def test_tangent_continues_previous():
    assert np.allclose(bd.tangent([3.0, 4.0], prev=[0.8, -0.6]), [0.8, -0.6])


def test_tangent_orthogonal(rng):
    for _ in range(100):
        w = rng.standard_normal(2) * 10 ** rng.uniform(-3, 3)
        eta = bd.tangent(w)
        assert abs(eta @ w) <= 1e-12 * max(1.0, np.linalg.norm(w))
        assert abs(np.linalg.norm(eta) - 1) <= 1e-15


def test_tangent_zero_gradient():
    with pytest.raises(ZeroGradient):
        bd.tangent([0.0, 0.0])


# ---------------------------------------------------------------------------
# corrector

def test_corrector_fixed_point(rng):
    for _ in range(20):
        anchor = rng.standard_normal(2)
        eta = bd.tangent(rng.standard_normal(2))
        kappa = 0.05
        q = anchor + kappa * eta
        w = rng.standard_normal(2)
        # the hyperplane residual of q is zero up to rounding
        assert np.allclose(bd.corrector_update(q, anchor, eta, w, 0.0, kappa), q,
                           rtol=0, atol=1e-15)


def test_corrector_solves_linear_problem():
    # G linear: G(q) = w.(q - c); one Newton step lands on both constraints
    w = np.array([0.4, -0.7])
    c = np.array([1.9, 1.5])
    anchor = np.array([1.0, 0.0])
    eta = np.array([0.6, 0.8])
    q = np.array([1.3, 0.2])
    q1 = bd.corrector_update(q, anchor, eta, w, float(w @ (q - c)), 0.05)
    assert abs(w @ (q1 - c)) <= 1e-14
    assert abs((q1 - anchor) @ eta - 0.05) <= 1e-14


def test_corrector_singular():
    eta = np.array([1.0, 0.0])
    with pytest.raises(SingularNewtonMatrix):
        bd.corrector_update(np.zeros(2), np.zeros(2), eta, 2 * eta, 0.1, 0.05)


# ---------------------------------------------------------------------------
# SQP step

def test_sqp_step_example():
    out = bd.sqp_step([1.0, 0.0], [0.0, 0.0], np.eye(2), [1.0, 0.0], 0.5, 0.1)
    assert np.allclose(out, [0.6, 0.0], atol=1e-15)


def test_sqp_step_kkt_fixed_point(rng):
    for _ in range(20):
        m = int(rng.integers(2, 6))
        P = _random_spd(rng, m)
        w = rng.standard_normal(m)
        p0 = rng.standard_normal(m)
        p = p0 + rng.uniform(0.1, 2) * np.linalg.solve(P, w)
        out = bd.sqp_step(p, p0, P, w, 0.3, 0.3)
        assert np.allclose(out, p, rtol=0, atol=1e-12)


def test_sqp_step_linearised_constraint(rng):
    for _ in range(100):
        m = int(rng.integers(1, 8))
        P = _random_spd(rng, m)
        p, p0, w = rng.standard_normal((3, m))
        g, eps = rng.uniform(0, 1), rng.uniform(0, 0.1)
        out = bd.sqp_step(p, p0, Metric(P), w, g, eps)
        assert abs(g + w @ (out - p) - eps) <= 1e-12


def test_sqp_step_is_qp_minimiser(rng):
    # P(F - p0) is parallel to w, so F minimises the metric distance on the plane
    P = _random_spd(rng, 3)
    p, p0, w = rng.standard_normal((3, 3))
    F = bd.sqp_step(p, p0, P, w, 0.4, 0.1)
    v = P @ (F - p0)
    assert np.linalg.norm(np.cross(v, w)) <= 1e-12 * np.linalg.norm(v) * np.linalg.norm(w)


def test_sqp_step_zero_gradient():
    with pytest.raises(ZeroGradient):
        bd.sqp_step([1.0], [0.0], np.eye(1), [0.0], 0.5, 0.1)


# ---------------------------------------------------------------------------
# algorithms on the shipped models

def test_boundary_1d_already_converged(smib):
    p = np.array([1.9, 1.507081])
    assert gfun.eval_G(smib, p).g <= smib.algorithm.tol_g
    bp = bd.boundary_1d(smib, p, axis=1)
    assert bp.iterations == 0 and np.array_equal(bp.p, p)


def test_boundary_1d_needs_recovered_start(smib):
    with pytest.raises(NotRecovered):
        bd.boundary_1d(smib, [1.9, 1.85])


def test_margin_footnote_case(smib):
    p0 = np.array([1.9, 1.5])
    g0 = gfun.eval_G(smib, p0).g
    res = bd.margin_sqp(smib, p0, smib.algorithm.replace(epsilon=g0 * 1.01))
    assert np.array_equal(res.p_star, p0) and res.margin == 0.0 and res.converged


def test_margin_scalar(scalar):
    # G(p) = -p e, so the level set G = eps sits at p = -eps/e.  Close to
    # p = 0 the decay is too slow to converge before t_max, so eps is kept
    # large enough for the level set to lie inside the recovered range.
    eps = 0.5
    res = bd.margin_sqp(scalar, [-1.0], scalar.algorithm.replace(epsilon=eps))
    assert res.converged
    assert res.p_star[0] == pytest.approx(-eps / np.e, abs=1e-6)
    assert res.margin == pytest.approx(1 - eps / np.e, abs=1e-6)
    assert all(gfun.classify(scalar, h[0]).recovered for h in res.history)
