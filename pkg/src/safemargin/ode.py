"""Adaptive Dormand-Prince 5(4) integration of the flow and of the
augmented state + sensitivity system.

All integration runs through :func:`run_batch`, which advances a batch of
independent trajectories, each with its own time and step size.  Single
trajectory helpers are thin wrappers using a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, StepSizeUnderflow
from .options import IntegratorOptions

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40)
# quartic continuous extension (Shampine's coefficients)
DENSE_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_ALPHA = 0.7 / 5  # PI controller gains
_BETA = 0.4 / 5

# termination codes
RUNNING, REACHED_T_MAX, CONVERGED, DIVERGED, UNDERFLOW, DOMAIN = range(6)
REASON_NAMES = {
    REACHED_T_MAX: "reached t_max",
    CONVERGED: "converged",
    DIVERGED: "diverged",
    UNDERFLOW: "step size underflow",
    DOMAIN: "domain error",
}


@dataclass
class Trajectory:
    """Accepted-step samples of a flow; ``t[0] == 0``."""

    t: np.ndarray
    x: np.ndarray
    reason: str

    @property
    def final(self):
        return self.x[-1]


@dataclass
class SensTrajectory(Trajectory):
    """Trajectory together with sensitivity samples ``S[k] = dx(t_k)/dp``."""

    S: np.ndarray


class StepObserver:
    """Hook called after every accepted step of :func:`run_batch`.

    ``on_step`` receives the batch indices that just accepted a step and
    returns a boolean mask (same length) of trajectories that are finished.
    ``wants_dense`` requests the stage derivatives of each accepted step.
    """

    wants_dense = False

    def on_start(self, z0):
        pass

    def on_step(self, idx, t_old, h, z_old, z_new, K):
        return np.zeros(idx.size, dtype=bool)


class _Recorder(StepObserver):
    def __init__(self, stop=None):
        self.ts = [0.0]
        self.zs = []
        self.stop = stop

    def on_start(self, z0):
        self.zs.append(z0[0].copy())

    def on_step(self, idx, t_old, h, z_old, z_new, K):
        t = float(t_old[0] + h[0])
        self.ts.append(t)
        self.zs.append(z_new[0].copy())
        done = False
        if self.stop is not None:
            done = bool(self.stop(t, z_new[0]))
        return np.array([done])


def run_batch(rhs, z0, params, opts: IntegratorOptions, *, state_dim=None,
              t_end=None, observer: StepObserver | None = None):
    """Integrate ``dz/dt = rhs(z, params)`` for a batch of initial states.

    Parameters
    ----------
    rhs : callable
        ``rhs(Z, P) -> dZ`` with ``Z`` of shape ``(b, N)`` and ``P`` of shape
        ``(b, m)`` for any sub-batch ``b``.
    z0 : ndarray, shape (B, N)
    params : ndarray, shape (B, m)
    opts : IntegratorOptions
    state_dim : int, optional
        Leading components checked against ``opts.div_bound``; defaults to
        all of ``N``.
    t_end : float, optional
        Final time; defaults to ``opts.t_max``.
    observer : StepObserver, optional

    Returns
    -------
    t, z, reason : ndarray
        Final times, final states and termination codes per trajectory.
    """
    z = np.array(z0, dtype=float, copy=True)
    params = np.asarray(params, dtype=float)
    nb, N = z.shape
    state_dim = N if state_dim is None else state_dim
    t_end = opts.t_max if t_end is None else float(t_end)
    observer = observer or StepObserver()
    h_min = 1e-14 * t_end

    t = np.zeros(nb)
    h = np.full(nb, min(opts.dt_init, t_end))
    err_prev = np.full(nb, 1e-4)
    reason = np.full(nb, RUNNING)

    with np.errstate(all="ignore"):
        f = rhs(z, params)
        bad = ~np.isfinite(f).all(axis=1)
        reason[bad] = DOMAIN
        observer.on_start(z)
        diverged = ~(np.abs(z[:, :state_dim]).max(axis=1) <= opts.div_bound)
        reason[diverged & (reason == RUNNING)] = DIVERGED

        while True:
            act = np.flatnonzero(reason == RUNNING)
            if act.size == 0:
                break
            ti, zi, fi, Pi = t[act], z[act], f[act], params[act]
            hi = np.minimum(h[act], t_end - ti)
            hc = hi[:, None]
            K = [fi]
            for s in range(1, 6):
                zs = zi.copy()
                for j, a in enumerate(_A[s]):
                    if a != 0.0:
                        zs += hc * (a * K[j])
                K.append(rhs(zs, Pi))
            z_new = zi.copy()
            for j, b in enumerate(_B):
                if b != 0.0:
                    z_new += hc * (b * K[j])
            f_new = rhs(z_new, Pi)
            K.append(f_new)
            errv = np.zeros_like(zi)
            for j, e in enumerate(_E):
                if e != 0.0:
                    errv += e * K[j]
            errv *= hc
            scale = opts.atol + opts.rtol * np.maximum(np.abs(zi).max(axis=1),
                                                       np.abs(z_new).max(axis=1))
            err = np.abs(errv).max(axis=1) / scale
            err[~np.isfinite(err)] = np.inf
            ok = err <= 1.0

            # step size proposal
            with np.errstate(divide="ignore"):
                fac_acc = _SAFETY * err ** (-_ALPHA) * err_prev[act] ** _BETA
                fac_rej = _SAFETY * err ** (-1 / 5)
            fac_acc = np.where(err == 0.0, _MAX_FACTOR, fac_acc)
            fac = np.where(ok, np.clip(fac_acc, _MIN_FACTOR, _MAX_FACTOR),
                           np.clip(fac_rej, _MIN_FACTOR, 1.0))
            fac = np.where(np.isfinite(fac), fac, _MIN_FACTOR)
            h_next = np.minimum(hi * fac, opts.dt_max)

            rej = act[~ok]
            h[rej] = h_next[~ok]
            under = rej[h[rej] < h_min]
            reason[under] = UNDERFLOW

            if ok.any():
                acc = act[ok]
                t_old = ti[ok]
                h_acc = hi[ok]
                z_old = zi[ok]
                zn = z_new[ok]
                t[acc] = t_old + h_acc
                # land exactly on t_end despite rounding
                t[acc] = np.where(t_end - t[acc] <= 1e-12 * t_end, t_end, t[acc])
                z[acc] = zn
                f[acc] = f_new[ok]
                err_prev[acc] = np.maximum(err[ok], 1e-4)
                h[acc] = np.where(h_next[ok] > 0, h_next[ok], h[acc])
                Kacc = np.stack([k[ok] for k in K]) if observer.wants_dense else None
                done = np.asarray(observer.on_step(acc, t_old, h_acc, z_old, zn, Kacc),
                                  dtype=bool)
                div = ~(np.abs(zn[:, :state_dim]).max(axis=1) <= opts.div_bound)
                new_reason = np.where(div, DIVERGED,
                                      np.where(done, CONVERGED,
                                               np.where(t[acc] >= t_end, REACHED_T_MAX,
                                                        RUNNING)))
                reason[acc] = new_reason
    return t, z, reason


def dense_eval(z_old, h, K, theta):
    """Evaluate the continuous extension of one step at fractions ``theta``.

    ``K`` has shape ``(7, N)``; returns an array of shape ``(len(theta), N)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    Q = K.T @ DENSE_P  # (N, 4)
    powers = np.stack([theta, theta**2, theta**3, theta**4])  # (4, T)
    return z_old[None, :] + h * (Q @ powers).T


def _raise_for(reason, t):
    if reason == UNDERFLOW:
        raise StepSizeUnderflow(f"step size underflow at t={t:.6g}")
    if reason == DOMAIN:
        raise DomainError("vector field not finite at the initial state")


def integrate(field, x0, opts: IntegratorOptions, stop=None) -> Trajectory:
    """Integrate ``dx/dt = field(x)`` from ``x0``.

    Stops at ``opts.t_max``, when ``stop(t, x)`` returns true, or when
    ``max|x| > opts.div_bound``.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if not np.isfinite(x0).all():
        raise ValueError("x0 must be finite")

    def rhs(Z, _P):
        return np.stack([np.asarray(field(z), dtype=float) for z in Z])

    rec = _Recorder(stop)
    t, _, reason = run_batch(rhs, x0[None, :], np.zeros((1, 0)), opts, observer=rec)
    _raise_for(reason[0], t[0])
    name = "stopped" if reason[0] == CONVERGED else REASON_NAMES[int(reason[0])]
    return Trajectory(np.array(rec.ts), np.array(rec.zs), name)


def sensitivity_rhs(vf, n, m):
    """Augmented right-hand side ``[f; Jx S + Jp]`` for a compiled field."""

    def rhs(Z, P):
        X = Z[:, :n]
        S = Z[:, n:].reshape(-1, n, m)
        f, Jx, Jp = vf.all(X, P)
        dS = np.matmul(Jx, S) + Jp
        return np.concatenate([f, dS.reshape(-1, n * m)], axis=1)

    return rhs


def integrate_with_sensitivity(model, p, y0, S0, opts: IntegratorOptions | None = None,
                               stop=None) -> SensTrajectory:
    """Integrate the flow and its parameter sensitivity from ``(y0, S0)``.

    ``model`` is a :class:`~safemargin.model.SystemModel` (its post-disturbance
    field is used) or a :class:`~safemargin.model.VectorField`.
    """
    vf = getattr(model, "field", model)
    if opts is None:
        opts = model.integrator
    n, m = vf.n, vf.m
    p = np.asarray(p, dtype=float).ravel()
    y0 = np.asarray(y0, dtype=float).ravel()
    S0 = np.asarray(S0, dtype=float).reshape(n, m)
    if not (np.isfinite(p).all() and np.isfinite(y0).all() and np.isfinite(S0).all()):
        raise ValueError("inputs must be finite")
    z0 = np.concatenate([y0, S0.ravel()])[None, :]
    rec = _Recorder(None if stop is None else (lambda t, z: stop(t, z[:n])))
    t, _, reason = run_batch(sensitivity_rhs(vf, n, m), z0, p[None, :], opts,
                             state_dim=n, observer=rec)
    _raise_for(reason[0], t[0])
    Z = np.array(rec.zs)
    name = "stopped" if reason[0] == CONVERGED else REASON_NAMES[int(reason[0])]
    return SensTrajectory(np.array(rec.ts), Z[:, :n], name, Z[:, n:].reshape(-1, n, m))
