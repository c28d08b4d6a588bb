"""Recovery classification and the reciprocal trajectory-sensitivity
function ``G(p) = 1 / sup_t ||dx(t)/dp||_1``.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import ode
from .equilibrium import SepInfo, find_sep
from .errors import EquilibriumError, NotRecovered, StencilLeftRegion
from .model import disturbance_many
from .parallel import chunked_map

logger = logging.getLogger(__name__)

RECOVERED = "recovered"
DIVERGED = "diverged"
TIMEOUT = "timeout"
NOSEP = "nosep"

_LABELS = {RECOVERED: "Recovered", DIVERGED: "Diverged", TIMEOUT: "Timeout", NOSEP: "NoSep"}


@dataclass(frozen=True)
class RecoveryStatus:
    kind: str
    t: float | None = None  # t_conv for Recovered, t_div for Diverged
    detail: str = ""

    @property
    def recovered(self):
        return self.kind == RECOVERED

    def __str__(self):
        label = _LABELS[self.kind]
        if self.kind == RECOVERED:
            return f"{label} t_conv={self.t:.6g}"
        if self.kind == DIVERGED:
            return f"{label} t_div={self.t:.6g}"
        return f"{label}" + (f" ({self.detail})" if self.detail else "")


@dataclass
class GEvaluation:
    p: np.ndarray
    g: float | None
    t_hat: float | None
    sup_norm: float | None
    status: RecoveryStatus
    profile: np.ndarray | None = None  # columns t, ||S||_1
    sep: SepInfo | None = None

    @property
    def recovered(self):
        return self.status.recovered


# ---------------------------------------------------------------------------
# observers for the post-disturbance batch run

class _Convergence(ode.StepObserver):
    def __init__(self, xs, conv_tol):
        self.xs = xs
        self.n = xs.shape[1]
        self.tol = conv_tol
        self.t_conv = np.full(xs.shape[0], np.nan)

    def on_step(self, idx, t_old, h, z_old, z_new, K):
        near = np.abs(z_new[:, :self.n] - self.xs[idx]).max(axis=1) <= self.tol
        self.t_conv[idx[near]] = t_old[near] + h[near]
        return near


class _SensitivityPeak(ode.StepObserver):
    """Tracks the running maximum of ``||S||_1`` and the convergence test.

    The continuous extension of the steps on either side of the best sample
    is kept so the supremum can be refined between samples.
    """

    wants_dense = True

    def __init__(self, xs, n, conv_tol, stationary, keep_profile):
        b = xs.shape[0]
        self.xs, self.n, self.tol, self.stationary = xs, n, conv_tol, stationary
        self.best = np.zeros(b)
        self.best_t = np.zeros(b)
        self.since = np.zeros(b, dtype=int)
        self.t_conv = np.full(b, np.nan)
        self.keep_profile = keep_profile
        self.profiles = [[] for _ in range(b)]
        self.before = [None] * b  # step ending at the best sample
        self.after = [None] * b  # step starting at the best sample
        self.need_after = np.ones(b, dtype=bool)

    def on_start(self, z0):
        norms = np.abs(z0[:, self.n:]).sum(axis=1)
        self.best[:] = norms
        if self.keep_profile:
            for i, v in enumerate(norms):
                self.profiles[i].append((0.0, float(v)))

    def on_step(self, idx, t_old, h, z_old, z_new, K):
        t_new = t_old + h
        norms = np.abs(z_new[:, self.n:]).sum(axis=1)
        if self.keep_profile:
            for j, i in enumerate(idx):
                self.profiles[i].append((float(t_new[j]), float(norms[j])))
        for j in np.flatnonzero(self.need_after[idx]):
            i = idx[j]
            self.after[i] = (t_old[j], h[j], z_old[j], K[:, j])
            self.need_after[i] = False
        up = norms > self.best[idx]
        for j in np.flatnonzero(up):
            i = idx[j]
            self.before[i] = (t_old[j], h[j], z_old[j], K[:, j])
            self.after[i] = None
            self.need_after[i] = True
        self.best[idx[up]] = norms[up]
        self.best_t[idx[up]] = t_new[up]
        self.since[idx] = np.where(up, 0, self.since[idx] + 1)
        near = np.abs(z_new[:, :self.n] - self.xs[idx]).max(axis=1) <= self.tol
        first = near & np.isnan(self.t_conv[idx])
        self.t_conv[idx[first]] = t_new[first]
        return near & (self.since[idx] >= self.stationary)

    def refined_peak(self, i):
        """Maximise the continuous extension next to the best sample."""
        best, best_t = float(self.best[i]), float(self.best_t[i])
        n = self.n
        for step in (self.before[i], self.after[i]):
            if step is None:
                continue
            t0, hh, z0, K = step

            def neg_norm(theta, z0=z0, hh=hh, K=K):
                return -np.abs(ode.dense_eval(z0, hh, K, theta)[0, n:]).sum()

            grid = np.linspace(0.0, 1.0, 17)
            vals = np.abs(ode.dense_eval(z0, hh, K, grid)[:, n:]).sum(axis=1)
            j = int(np.argmax(vals))
            lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, 16)]
            res = minimize_scalar(neg_norm, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12})
            cand = [(vals[j], grid[j]), (-res.fun, res.x)]
            v, th = max(cand)
            if v > best:
                best, best_t = float(v), float(t0 + th * hh)
        return best, best_t


# ---------------------------------------------------------------------------
# batch evaluation

def _seps(model, P, guess):
    seps, status = [], []
    for p in P:
        sep, err = None, None
        guesses = [guess] if guess is not None else []
        guesses.append(None)
        for g in guesses:
            try:
                sep = find_sep(model, p, g)
                break
            except EquilibriumError as exc:
                err = exc
        seps.append(sep)
        status.append(None if sep is not None else
                      RecoveryStatus(NOSEP, None, f"{type(err).__name__}: {err}"))
    return seps, status


def _evaluate_chunk(model, P, with_g=False, keep_profile=False, sep_guess=None):
    P = np.asarray(P, dtype=float).reshape(-1, model.m)
    b, n, m = P.shape[0], model.n, model.m
    seps, status = _seps(model, P, sep_guess)
    valid = [i for i in range(b) if seps[i] is not None]
    nosep = b - len(valid)
    if nosep:
        logger.warning("%d of %d parameter point(s) have no stable equilibrium; "
                       "classified as not recovered", nosep, b)
    out_g = [None] * b
    if valid:
        Pv = P[valid]
        sv = [seps[i] for i in valid]
        y, Dy, ok = disturbance_many(model, Pv, sv, with_sens=with_g)
        for k, i in enumerate(valid):
            if not ok[k]:
                status[i] = RecoveryStatus(DIVERGED, 0.0, "fault-on trajectory diverged")
        run = [k for k in range(len(valid)) if ok[k]]
        if run:
            xs = np.stack([sv[k].x_star for k in run])
            opts = model.integrator
            rec = model.recovery
            if with_g:
                z0 = np.hstack([y[run], Dy[run].reshape(len(run), n * m)])
                obs = _SensitivityPeak(xs, n, rec.conv_tol, rec.stationary_steps, keep_profile)
                rhs = ode.sensitivity_rhs(model.field, n, m)
            else:
                z0 = y[run]
                obs = _Convergence(xs, rec.conv_tol)
                rhs = lambda Z, Pp: model.field.f(Z, Pp)  # noqa: E731
            t, _z, reason = ode.run_batch(rhs, z0, Pv[run], opts, state_dim=n, observer=obs)
            for k, r in enumerate(run):
                i = valid[r]
                tc = obs.t_conv[k]
                if not np.isnan(tc):
                    status[i] = RecoveryStatus(RECOVERED, float(tc))
                elif reason[k] == ode.DIVERGED:
                    status[i] = RecoveryStatus(DIVERGED, float(t[k]))
                elif reason[k] in (ode.UNDERFLOW, ode.DOMAIN):
                    status[i] = RecoveryStatus(DIVERGED, float(t[k]), ode.REASON_NAMES[reason[k]])
                else:
                    status[i] = RecoveryStatus(TIMEOUT, float(t[k]))
                if with_g:
                    out_g[i] = _assemble(obs, k, sv[r], status[i], P[i], keep_profile)
    if not with_g:
        return status
    return [out_g[i] if out_g[i] is not None else
            GEvaluation(P[i].copy(), None, None, None, status[i], None, seps[i])
            for i in range(b)]


def _assemble(obs, k, sep, status, p, keep_profile):
    profile = np.array(obs.profiles[k]) if keep_profile else None
    if not status.recovered:
        return GEvaluation(p.copy(), None, None, None, status, profile, sep)
    sup, t_hat = obs.refined_peak(k)
    if keep_profile and sup > float(obs.best[k]):
        # the refined peak becomes part of the sampled profile
        j = int(np.searchsorted(profile[:, 0], t_hat))
        if j < len(profile) and profile[j, 0] == t_hat:
            profile[j, 1] = sup
        else:
            profile = np.insert(profile, j, [t_hat, sup], axis=0)
    floor = float(np.abs(sep.dXdp).sum())
    if floor > sup:
        sup, t_hat = floor, (float(profile[-1, 0]) if profile is not None else t_hat)
    return GEvaluation(p.copy(), 1.0 / sup, t_hat, sup, status, profile, sep)


def classify_many(model, ps, jobs=1, sep_guess=None) -> list[RecoveryStatus]:
    fn = functools.partial(_evaluate_chunk, model, with_g=False, sep_guess=sep_guess)
    return chunked_map(fn, np.asarray(ps, dtype=float).reshape(-1, model.m), jobs)


def eval_G_many(model, ps, jobs=1, keep_profile=False, sep_guess=None) -> list[GEvaluation]:
    fn = functools.partial(_evaluate_chunk, model, with_g=True, keep_profile=keep_profile,
                           sep_guess=sep_guess)
    return chunked_map(fn, np.asarray(ps, dtype=float).reshape(-1, model.m), jobs)


def classify(model, p, sep_guess=None) -> RecoveryStatus:
    """Recovered / Diverged / Timeout / NoSep for a single parameter value."""
    p = np.asarray(p, dtype=float).ravel()
    if not np.isfinite(p).all():
        raise ValueError("p must be finite")
    return _evaluate_chunk(model, p[None, :], sep_guess=sep_guess)[0]


def eval_G(model, p, keep_profile=True, sep_guess=None) -> GEvaluation:
    """Evaluate ``G(p)``; ``g`` is ``None`` unless the system recovers.

    The post-disturbance run stops once the state is within ``conv_tol`` of
    the equilibrium and ``||S||_1`` has not reached a new maximum for
    ``stationary_steps`` accepted steps.  The sampled maximum is refined on
    the continuous extension of the adjacent steps, and ``||dX^s/dp||_1`` (the
    limit of ``||S(t)||_1``) is a floor for the supremum.
    """
    p = np.asarray(p, dtype=float).ravel()
    if not np.isfinite(p).all():
        raise ValueError("p must be finite")
    return _evaluate_chunk(model, p[None, :], with_g=True, keep_profile=keep_profile,
                           sep_guess=sep_guess)[0]


def fd_steps(model, p, opts=None):
    opts = opts or model.algorithm
    return np.maximum(opts.fd_step_abs, opts.fd_step_rel * np.abs(np.asarray(p, dtype=float)))


def grad_G(model, p, steps=None, axes=None, sep_guess=None) -> np.ndarray:
    """Central-difference gradient of ``G``.

    ``steps`` overrides the per-component step ``max(fd_step_abs,
    fd_step_rel*|p_k|)``; ``axes`` restricts the components computed (the
    others are returned as zero).

    Raises
    ------
    StencilLeftRegion
        If any stencil point is not recovered.
    """
    p = np.asarray(p, dtype=float).ravel()
    h = fd_steps(model, p) if steps is None else np.broadcast_to(
        np.asarray(steps, dtype=float), p.shape)
    axes = range(p.size) if axes is None else list(axes)
    pts = []
    for k in axes:
        e = np.zeros_like(p)
        e[k] = h[k]
        pts.extend([p + e, p - e])
    evs = eval_G_many(model, pts, sep_guess=sep_guess)
    bad = [ev.p for ev in evs if not ev.recovered]
    if bad:
        raise StencilLeftRegion(f"{len(bad)} stencil point(s) left the recovery region "
                                f"around p={p.tolist()}", bad)
    grad = np.zeros_like(p)
    for j, k in enumerate(axes):
        grad[k] = (evs[2 * j].g - evs[2 * j + 1].g) / (2.0 * h[k])
    return grad


def require_recovered(ev_or_status, what="starting point"):
    status = getattr(ev_or_status, "status", ev_or_status)
    if not status.recovered:
        raise NotRecovered(f"{what} is not in the recovery region: {status}", status)
