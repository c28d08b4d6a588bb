"""Algorithms locating the recovery boundary ``G = 0``.

* :func:`boundary_1d` -- Newton on ``G`` along one parameter axis.
* :func:`trace_2d` -- predictor-corrector tracing in a 2-D parameter plane.
* :func:`margin_sqp` -- closest point on ``G = epsilon`` in the ``P`` metric
  via sequential quadratic programming.

All three share :func:`backtrack`: a candidate step is halved until the new
iterate is recovered, so every iterate stays inside the recovery region.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (CorrectorFailed, LineSearchFailed, MaxIterations,
                     SingularNewtonMatrix, StencilLeftRegion, ZeroDerivative,
                     ZeroGradient)
from .gfun import eval_G, fd_steps, grad_G, require_recovered
from .model import Metric
from .options import AlgoOptions

logger = logging.getLogger(__name__)

MAX_FD_SHRINK = 8


@dataclass
class BoundaryPoint:
    p: np.ndarray
    g: float
    g_residual: float
    tangent: np.ndarray | None = None
    iterations: int = 0
    hyperplane_residual: float = 0.0
    history: list = field(default_factory=list)  # (p, G(p)) per iterate, 1-D only


@dataclass
class MarginResult:
    p_star: np.ndarray
    margin: float
    epsilon: float
    converged: bool
    history: list = field(default_factory=list)  # (p, G(p), m) per iterate

    @property
    def iterations(self):
        return max(len(self.history) - 1, 0)


def backtrack(candidate_map, p, member, max_m):
    """Halve the step towards ``candidate_map(p)`` until ``member`` accepts.

    Returns ``(p + 2**-m * (p_tilde - p), m)`` for the smallest accepted
    ``m`` in ``0..max_m``; ``m = 0`` returns ``p_tilde`` itself.
    """
    p = np.asarray(p, dtype=float)
    p_tilde = np.asarray(candidate_map(p) if callable(candidate_map) else candidate_map,
                         dtype=float)
    if member(p_tilde):
        return p_tilde, 0
    step = p_tilde - p
    for m in range(1, int(max_m) + 1):
        q = p + step / 2.0**m
        if member(q):
            return q, m
    raise LineSearchFailed(f"no recovered point within {max_m} halvings from p={p.tolist()}")


class _Evaluator:
    """Caches G evaluations and carries the equilibrium forward as the guess."""

    def __init__(self, model, opts):
        self.model = model
        self.opts = opts
        self.cache = {}
        self.sep_guess = None
        self.evals = 0

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        key = p.tobytes()
        ev = self.cache.get(key)
        if ev is None:
            ev = eval_G(self.model, p, keep_profile=False, sep_guess=self.sep_guess)
            self.evals += 1
            self.cache[key] = ev
            if ev.sep is not None and ev.recovered:
                self.sep_guess = ev.sep.x_star
        return ev

    def member(self, p):
        return self(p).recovered

    def gradient(self, p, g, axes=None, hint=None):
        """Central differences, shrinking the stencil until it stays recovered."""
        h = fd_steps(self.model, p, self.opts)
        if hint is not None and hint > 0 and g > 0:
            # keep the stencil well inside the region near the boundary
            h = np.minimum(h, 0.1 * g / hint)
            h = np.maximum(h, 1e-12 * np.maximum(1.0, np.abs(p)))
        for _ in range(MAX_FD_SHRINK):
            try:
                return grad_G(self.model, p, steps=h, axes=axes, sep_guess=self.sep_guess)
            except StencilLeftRegion:
                h = h / 10.0
        return grad_G(self.model, p, steps=h, axes=axes, sep_guess=self.sep_guess)


def _opts(model, opts):
    return model.algorithm if opts is None else opts


# ---------------------------------------------------------------------------
# one dimension

def boundary_1d(model, p0=None, opts: AlgoOptions | None = None, axis=0) -> BoundaryPoint:
    """Newton iteration on ``G`` along coordinate ``axis``; others stay fixed."""
    opts = _opts(model, opts)
    G = _Evaluator(model, opts)
    p = np.array(model.p0 if p0 is None else p0, dtype=float)
    ev = G(p)
    require_recovered(ev)
    g = ev.g
    history = [(p.copy(), g)]
    dg_prev = None
    for it in range(int(opts.max_iter) + 1):
        if abs(g) <= opts.tol_g:
            return BoundaryPoint(p, g, abs(g), None, it, history=history)
        if it == int(opts.max_iter):
            break
        dg = G.gradient(p, g, axes=[axis], hint=dg_prev)[axis]
        if abs(dg) < 1e-14:
            raise ZeroDerivative(f"dG/dp{axis} vanished at p={p.tolist()}",
                                 BoundaryPoint(p, g, abs(g), None, it, history=history))
        dg_prev = abs(dg)
        cand = p.copy()
        cand[axis] -= g / dg
        try:
            p_new, m = backtrack(cand, p, G.member, opts.max_backtrack)
        except LineSearchFailed as exc:
            exc.partial = BoundaryPoint(p, g, abs(g), None, it, history=history)
            raise
        dp = abs(p_new[axis] - p[axis])
        p, g = p_new, G(p_new).g
        history.append((p.copy(), g))
        logger.debug("boundary_1d it=%d p=%s G=%.3e m=%d", it + 1, p, g, m)
        if dp <= opts.tol_p:
            return BoundaryPoint(p, g, abs(g), None, it + 1, history=history)
    raise MaxIterations(f"boundary_1d did not converge in {opts.max_iter} iterations",
                        BoundaryPoint(p, g, abs(g), None, int(opts.max_iter), history=history))


# ---------------------------------------------------------------------------
# two dimensions

def tangent(w, prev=None, sign=1):
    """Unit vector orthogonal to ``w = (a, b)``: ``sign * (-b, a) / |w|``.

    With a previous tangent the sign is chosen to continue in its direction.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (2,):
        raise ValueError("tangent is defined for 2-D gradients only")
    nrm = np.hypot(w[0], w[1])
    if not nrm > 0:
        raise ZeroGradient("gradient vanished; tangent undefined")
    eta = np.array([-w[1], w[0]]) / nrm
    if prev is not None:
        if float(eta @ np.asarray(prev, dtype=float)) < 0:
            eta = -eta
    elif sign < 0:
        eta = -eta
    return eta


def corrector_update(q, anchor, eta, w, g, kappa):
    """Newton step for ``f(q) = [G(q), (q - anchor).eta - kappa] = 0``.

    ``w`` is the gradient of ``G`` at ``q`` and ``g`` its value.
    """
    q = np.asarray(q, dtype=float)
    Df = np.array([w, eta], dtype=float)
    if abs(np.linalg.det(Df)) < 1e-14 * max(1.0, float(np.linalg.norm(w))):
        raise SingularNewtonMatrix(f"singular corrector matrix at q={q.tolist()}", None)
    f = np.array([g, float((q - anchor) @ eta) - kappa])
    return q - np.linalg.solve(Df, f)


def _seed_on_hyperplane(G, pred, nu, kappa):
    """Recovered point on the line ``pred + s*nu`` close to the boundary."""
    s_out, s_in = 0.0, None
    for j in range(13):
        s = kappa * 2.0 ** (j - 6)
        if G.member(pred + s * nu):
            s_in = s
            break
        s_out = s
    if s_in is None:
        return None
    while s_in - s_out > 1e-4 * kappa:
        mid = 0.5 * (s_in + s_out)
        if G.member(pred + mid * nu):
            s_in = mid
        else:
            s_out = mid
    return pred + s_in * nu


def _project(G, p, g, opts):
    """Newton along the gradient until ``G <= tol_g`` (used to refine a start)."""
    hint = None
    for _ in range(int(opts.max_iter)):
        if g <= opts.tol_g:
            return p, g
        w = G.gradient(p, g, hint=hint)
        nw = float(w @ w)
        if nw == 0:
            raise ZeroGradient(f"gradient vanished at p={p.tolist()}")
        hint = np.sqrt(nw)
        p, _ = backtrack(p - g * w / nw, p, G.member, opts.max_backtrack)
        g = G(p).g
    raise MaxIterations("could not refine the start point onto the boundary")


def trace_2d(model, p_start, opts: AlgoOptions | None = None, n_points=20,
             direction=None) -> list[BoundaryPoint]:
    """Trace ``n_points`` boundary points (the refined start included).

    Each step predicts ``p_hat + kappa*eta`` along the tangent, seeds the
    corrector on the hyperplane ``(p - p_hat).eta = kappa`` and solves
    ``[G(p), (p - p_hat).eta - kappa] = 0`` by Newton with backtracking,
    ``eta`` frozen at the anchor ``p_hat``.
    """
    opts = _opts(model, opts)
    if model.m != 2:
        raise ValueError("trace_2d needs exactly two parameters")
    sign = opts.direction if direction is None else direction
    kappa = opts.kappa
    G = _Evaluator(model, opts)
    p = np.asarray(p_start, dtype=float).copy()
    ev = G(p)
    require_recovered(ev)
    g = ev.g
    if g > 10 * opts.tol_g:
        p, g = _project(G, p, g, opts)
    w = G.gradient(p, g)
    eta = tangent(w, None, sign)
    points = [BoundaryPoint(p.copy(), g, abs(g), eta, 0)]

    for k in range(1, int(n_points)):
        anchor, eta_a, w_a = p.copy(), eta, w
        grad_scale = float(np.linalg.norm(w_a))
        pred = anchor + kappa * eta_a
        if G.member(pred):
            q = pred
        else:
            q = _seed_on_hyperplane(G, pred, w_a / grad_scale, kappa)
            if q is None:
                raise CorrectorFailed(f"no recovered seed on hyperplane at step {k}", k, points)
        gq = G(q).g
        for it in range(int(opts.max_iter) + 1):
            hres = float((q - anchor) @ eta_a - kappa)
            if abs(gq) <= opts.tol_g and abs(hres) <= opts.tol_p:
                break
            if it == int(opts.max_iter):
                raise CorrectorFailed(f"corrector did not converge at step {k}", k, points)
            wq = G.gradient(q, gq, hint=grad_scale)
            try:
                cand = corrector_update(q, anchor, eta_a, wq, gq, kappa)
            except SingularNewtonMatrix as exc:
                exc.partial = points
                raise
            try:
                q, _m = backtrack(cand, q, G.member, opts.max_backtrack)
            except LineSearchFailed:
                raise CorrectorFailed(f"corrector line search failed at step {k}",
                                      k, points) from None
            gq = G(q).g
        p, g = q, gq
        w = G.gradient(p, g, hint=grad_scale)
        eta = tangent(w, eta_a)
        points.append(BoundaryPoint(p.copy(), g, abs(g), eta, it, hres))
        logger.debug("trace_2d point %d p=%s G=%.2e iters=%d", k, p, g, it)
    return points


# ---------------------------------------------------------------------------
# arbitrary dimension

def sqp_step(p, p0, P, w, g, epsilon):
    """Solution of the QP with the constraint ``G = epsilon`` linearised at ``p``.

    ``p0 + [P^-1 w w^T / (w^T P^-1 w)](p - p0) - [P^-1 w / (w^T P^-1 w)](g - eps)``
    """
    P = P.P if isinstance(P, Metric) else np.asarray(P, dtype=float)
    p = np.asarray(p, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise ZeroGradient("gradient of G vanished; QP constraint is degenerate")
    Pw = np.linalg.solve(P, w)
    denom = float(w @ Pw)
    return p0 + Pw * (float(w @ (p - p0)) - (g - epsilon)) / denom


def margin_sqp(model, p0=None, opts: AlgoOptions | None = None, metric=None) -> MarginResult:
    """Closest point to ``p0`` on ``G = epsilon`` in the ``P`` metric."""
    opts = _opts(model, opts)
    metric = model.metric if metric is None else (
        metric if isinstance(metric, Metric) else Metric(metric))
    eps = opts.epsilon
    G = _Evaluator(model, opts)
    p0 = np.array(model.p0 if p0 is None else p0, dtype=float)
    ev0 = G(p0)
    require_recovered(ev0)
    g = ev0.g
    if g <= eps:
        return MarginResult(p0.copy(), 0.0, eps, True, [(p0.copy(), g, None)])
    p = p0.copy()
    history = []
    hint = None
    for _ in range(int(opts.max_iter)):
        w = G.gradient(p, g, hint=hint)
        hint = float(np.linalg.norm(w))
        cand = sqp_step(p, p0, metric, w, g, eps)
        try:
            p_new, m = backtrack(cand, p, G.member, opts.max_backtrack)
        except LineSearchFailed as exc:
            history.append((p.copy(), g, None))
            exc.partial = MarginResult(p.copy(), metric.dist(p, p0), eps, False, history)
            raise
        history.append((p.copy(), g, m))
        step = metric.dist(p_new, p)
        p, g = p_new, G(p_new).g
        logger.debug("margin_sqp p=%s G=%.6e m=%d step=%.3e", p, g, m, step)
        if abs(g - eps) <= opts.tol_g and step <= opts.tol_p:
            history.append((p.copy(), g, None))
            return MarginResult(p.copy(), metric.dist(p, p0), eps, True, history)
    history.append((p.copy(), g, None))
    raise MaxIterations(f"margin_sqp did not converge in {opts.max_iter} iterations",
                        MarginResult(p.copy(), metric.dist(p, p0), eps, False, history))
