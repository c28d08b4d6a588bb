"""Brute-force ground truth built on :func:`~safemargin.gfun.classify` alone.

Nothing here looks at ``G`` or its gradient (except the optional ``G``
column of a grid), so these results can check the boundary algorithms
independently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import gfun
from .errors import InvalidBracket, NoBoundaryFound
from .model import Metric


def _recovered(model, ps, jobs=1, sep_guess=None):
    ps = np.asarray(ps, dtype=float).reshape(-1, model.m)
    return np.array([s.recovered for s in gfun.classify_many(model, ps, jobs, sep_guess)],
                    dtype=bool)


@dataclass
class OracleGrid:
    axes: list  # one 1-D array of lattice coordinates per parameter
    recovered: np.ndarray  # bool, shape = tuple(len(a) for a in axes)
    g: np.ndarray | None = None  # nan where not computed / not recovered

    def points(self):
        return np.array(list(itertools.product(*self.axes)))

    def rows(self):
        """``(p, recovered, G)`` in row-major order."""
        flat_r = self.recovered.ravel()
        flat_g = None if self.g is None else self.g.ravel()
        for k, p in enumerate(self.points()):
            yield p, bool(flat_r[k]), (None if flat_g is None or np.isnan(flat_g[k])
                                       else float(flat_g[k]))


def classify_grid(model, box, res, with_g=False, jobs=1) -> OracleGrid:
    """Classify (and optionally evaluate ``G``) on a regular lattice.

    ``box`` lists ``[lo, hi]`` per parameter and ``res`` the point counts;
    lattice order is row-major with the first parameter varying slowest.
    """
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    res = [int(r) for r in np.atleast_1d(res)]
    if box.shape[0] != model.m or len(res) != model.m:
        raise ValueError(f"box and res need {model.m} axes")
    if any(r < 2 for r in res):
        raise ValueError("res must be >= 2 per axis")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(box, res)]
    pts = np.array(list(itertools.product(*axes)))
    shape = tuple(res)
    if with_g:
        evs = gfun.eval_G_many(model, pts, jobs=jobs)
        rec = np.array([e.recovered for e in evs]).reshape(shape)
        g = np.array([np.nan if e.g is None else e.g for e in evs]).reshape(shape)
        return OracleGrid(axes, rec, g)
    return OracleGrid(axes, _recovered(model, pts, jobs).reshape(shape))


def ray_bisect(model, p_in, p_out, tol=1e-6):
    """Bisect the segment ``[p_in, p_out]`` onto the recovery boundary.

    Returns the recovered end of the final bracket, whose length is at most
    ``tol``.
    """
    p_in = np.asarray(p_in, dtype=float).copy()
    p_out = np.asarray(p_out, dtype=float).copy()
    ends = _recovered(model, [p_in, p_out])
    if not ends[0]:
        raise InvalidBracket(f"p_in={p_in.tolist()} is not recovered")
    if ends[1]:
        raise InvalidBracket(f"p_out={p_out.tolist()} is recovered")
    length = float(np.linalg.norm(p_out - p_in))
    guess = None
    while length > tol * (1 + 1e-12):
        mid = 0.5 * (p_in + p_out)
        st = gfun.classify(model, mid, sep_guess=guess)
        if st.recovered:
            p_in = mid
        else:
            p_out = mid
        length *= 0.5
    return p_in


def fan_directions(metric: Metric, n_rays):
    """Unit directions in the ``P`` metric (``d^T P d = 1``).

    Two parameters: ``n_rays`` equally spaced angles.  Otherwise a fixed
    seeded sample of the sphere.
    """
    m = metric.dim
    if m == 1:
        U = np.array([[1.0], [-1.0]])
    elif m == 2:
        th = 2 * np.pi * np.arange(n_rays) / n_rays
        U = np.column_stack([np.cos(th), np.sin(th)])
    else:
        rng = np.random.default_rng(12345)
        U = rng.standard_normal((n_rays, m))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
    # P = L L^T  ->  d = L^-T u has d^T P d = u^T u = 1
    return np.linalg.solve(metric.chol.T, U.T).T


def brute_margin(model, p0=None, metric=None, n_rays=720, tol=1e-6, max_radius=1.0,
                 levels=12, jobs=1):
    """Margin estimate from a fan of rays bisected onto the boundary.

    Along each ray the radii ``max_radius * 2**-k`` (``k = levels-1 .. 0``)
    are classified until the first non-recovered one, then the bracket is
    bisected to ``tol`` (in the ``P`` metric).  Returns ``(p_b, margin)``.
    """
    metric = model.metric if metric is None else (
        metric if isinstance(metric, Metric) else Metric(metric))
    p0 = np.array(model.p0 if p0 is None else p0, dtype=float)
    if not gfun.classify(model, p0).recovered:
        raise InvalidBracket("p0 is not recovered")
    D = fan_directions(metric, n_rays)
    nr = D.shape[0]
    radii = max_radius * 2.0 ** -np.arange(levels - 1, -1, -1)
    r_in = np.zeros(nr)
    r_out = np.full(nr, np.nan)
    open_ = np.ones(nr, dtype=bool)
    for r in radii:
        idx = np.flatnonzero(open_)
        if idx.size == 0:
            break
        ok = _recovered(model, p0 + r * D[idx], jobs)
        r_in[idx[ok]] = r
        r_out[idx[~ok]] = r
        open_[idx[~ok]] = False
    hit = np.flatnonzero(~np.isnan(r_out))
    if hit.size == 0:
        raise NoBoundaryFound(f"no boundary within radius {max_radius} in any direction")
    lo, hi = r_in[hit].copy(), r_out[hit].copy()
    while True:
        act = np.flatnonzero(hi - lo > tol * (1 + 1e-12))
        if act.size == 0:
            break
        mid = 0.5 * (lo[act] + hi[act])
        ok = _recovered(model, p0 + mid[:, None] * D[hit[act]], jobs)
        lo[act] = np.where(ok, mid, lo[act])
        hi[act] = np.where(ok, hi[act], mid)
    k = int(np.argmin(lo))
    p_b = p0 + lo[k] * D[hit[k]]
    return p_b, float(metric.dist(p_b, p0))
