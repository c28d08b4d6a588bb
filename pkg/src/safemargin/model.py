"""System models built from config documents.

A config is a mapping with the sections ``system``, ``disturbance``,
``nominal``, ``metric`` and, optionally, ``integrator``, ``recovery`` and
``algorithm``.  :func:`load_config` reads YAML or JSON files.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import expr as ex
from .errors import ConfigError, DomainError, IntegrationError, MetricNotPD
from .options import AlgoOptions, IntegratorOptions, RecoveryOptions


class VectorField:
    """A field ``f(x, p)`` with exact Jacobians, compiled for batches."""

    def __init__(self, exprs, states, params):
        self.states = list(states)
        self.params = list(params)
        self.n = len(self.states)
        self.m = len(self.params)
        self.exprs = list(exprs)
        self.jac_x = [[ex.diff(e, s) for s in self.states] for e in self.exprs]
        self.jac_p = [[ex.diff(e, q) for q in self.params] for e in self.exprs]
        groups = [self.states, self.params]
        self._f = ex.compile_vectorized([self.exprs], groups)
        self._all = ex.compile_vectorized(
            [self.exprs, [d for row in self.jac_x for d in row],
             [d for row in self.jac_p for d in row]], groups)

    def f(self, X, P):
        return self._f(X, P)[0]

    def all(self, X, P):
        """Return ``f`` ``(B, n)``, ``Jx`` ``(B, n, n)`` and ``Jp`` ``(B, n, m)``."""
        f, jx, jp = self._all(X, P)
        b = X.shape[0]
        return f, jx.reshape(b, self.n, self.n), jp.reshape(b, self.n, self.m)

    def __call__(self, x, p, want_jacobians=False):
        X = np.asarray(x, dtype=float).reshape(1, self.n)
        P = np.asarray(p, dtype=float).reshape(1, self.m)
        with np.errstate(all="ignore"):
            if want_jacobians:
                f, jx, jp = self.all(X, P)
                out = (f[0], jx[0], jp[0])
            else:
                out = (self.f(X, P)[0],)
        if not all(np.isfinite(a).all() for a in out):
            # re-evaluate exactly to report which expression left the domain
            env = dict(zip(self.states, X[0])) | dict(zip(self.params, P[0]))
            for e in self.exprs:
                ex.evaluate(e, env)
            raise DomainError("field evaluation produced a non-finite value")
        return out if want_jacobians else out[0]


@dataclass(frozen=True)
class DisturbanceSpec:
    """Either an algebraic map ``y(p)`` or a fault-on field run for ``duration``."""

    kind: str  # "algebraic" | "fault_on"
    map_exprs: tuple = ()
    map_jac: tuple = ()
    fault_field: VectorField | None = None
    duration: float = 0.0


class Metric:
    """Symmetric positive definite ``P`` defining ``<p, q>_P = p^T P q``."""

    def __init__(self, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ConfigError(f"metric P must be square, got shape {P.shape}")
        if not np.isfinite(P).all():
            raise ConfigError("metric P must be finite")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max())):
            raise MetricNotPD("metric P is not symmetric")
        for k in range(1, P.shape[0] + 1):
            if np.linalg.det(P[:k, :k]) <= 0:
                raise MetricNotPD(f"metric P is not positive definite (leading minor {k})")
        self.P = P
        self.chol = np.linalg.cholesky(P)

    @property
    def dim(self):
        return self.P.shape[0]

    def inner(self, p, q):
        return float(np.asarray(p) @ self.P @ np.asarray(q))

    def norm(self, p):
        p = np.asarray(p, dtype=float)
        return float(np.sqrt(p @ self.P @ p))

    def dist(self, p, q):
        return self.norm(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))

    def solve(self, w):
        return np.linalg.solve(self.P, w)

    def __repr__(self):
        return f"Metric({self.P.tolist()!r})"


@dataclass(frozen=True, eq=False)
class SystemModel:
    states: tuple
    params: tuple
    field: VectorField
    disturbance: DisturbanceSpec
    p0: np.ndarray
    sep_guess: np.ndarray
    metric: Metric
    integrator: IntegratorOptions
    recovery: RecoveryOptions
    algorithm: AlgoOptions
    config: Mapping[str, Any] = field(repr=False, default_factory=dict)

    @property
    def n(self):
        return len(self.states)

    @property
    def m(self):
        return len(self.params)

    def __reduce__(self):
        return (build_model, (copy.deepcopy(dict(self.config)),))

    def with_options(self, **sections):
        """Rebuild with some config sections replaced (or updated)."""
        cfg = copy.deepcopy(dict(self.config))
        for name, val in sections.items():
            if isinstance(val, Mapping) and isinstance(cfg.get(name), Mapping):
                cfg[name] = {**cfg[name], **val}
            else:
                cfg[name] = val
        return build_model(cfg)


# ---------------------------------------------------------------------------
# config handling

def load_config(path) -> dict:
    """Read a YAML or JSON config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _section(cfg, name):
    sec = cfg.get(name)
    if not isinstance(sec, Mapping):
        raise ConfigError(f"missing config section {name!r}")
    return sec


def _need(sec, key, where):
    if key not in sec:
        raise ConfigError(f"missing field {where}.{key}")
    return sec[key]


def _names(v, where):
    if not isinstance(v, list) or not v or not all(isinstance(s, str) for s in v):
        raise ConfigError(f"{where} must be a non-empty list of names")
    if len(set(v)) != len(v):
        raise ConfigError(f"{where} contains duplicates")
    return list(v)


def _vector(v, size, where):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} must be numeric") from exc
    if arr.shape != (size,):
        raise ConfigError(f"{where} must have length {size}, got shape {arr.shape}")
    return arr


def _parse_all(texts, names, where):
    out = []
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            t = str(t)
        try:
            out.append(ex.parse(t, names))
        except (ex.ExprSyntaxError, ex.UnknownVariable) as exc:
            raise ConfigError(f"{where}[{i}]: {exc}") from exc
    return out


def build_model(config: Mapping[str, Any]) -> SystemModel:
    """Parse, differentiate and validate a config document."""
    cfg = dict(config)
    system = _section(cfg, "system")
    states = _names(_need(system, "states", "system"), "system.states")
    params = _names(_need(system, "params", "system.params"), "system.params")
    if set(states) & set(params):
        raise ConfigError("state and parameter names overlap")
    for nm in states + params:
        if nm in ex.FUNCTIONS:
            raise ConfigError(f"name {nm!r} shadows a function")
    n, m = len(states), len(params)
    names = states + params

    field_txt = _need(system, "field", "system")
    if not isinstance(field_txt, list) or len(field_txt) != n:
        raise ConfigError(f"system.field must list {n} expressions (one per state)")
    field_exprs = _parse_all(field_txt, names, "system.field")

    dist = _section(cfg, "disturbance")
    kind = str(_need(dist, "kind", "disturbance")).lower().replace("-", "_")
    if kind in ("algebraic", "map"):
        mtxt = _need(dist, "map", "disturbance")
        if not isinstance(mtxt, list) or len(mtxt) != n:
            raise ConfigError(f"disturbance.map must list {n} expressions")
        mexprs = _parse_all(mtxt, params, "disturbance.map")
        mjac = tuple(tuple(ex.diff(e, q) for q in params) for e in mexprs)
        spec = DisturbanceSpec("algebraic", tuple(mexprs), mjac)
    elif kind in ("fault_on", "faulton", "fault"):
        ftxt = _need(dist, "fault_field", "disturbance")
        if not isinstance(ftxt, list) or len(ftxt) != n:
            raise ConfigError(f"disturbance.fault_field must list {n} expressions")
        fexprs = _parse_all(ftxt, names, "disturbance.fault_field")
        tau = float(_need(dist, "duration", "disturbance"))
        if not tau > 0:
            raise ConfigError("disturbance.duration must be > 0")
        spec = DisturbanceSpec("fault_on", fault_field=VectorField(fexprs, states, params),
                               duration=tau)
    else:
        raise ConfigError(f"unknown disturbance kind {kind!r}")

    nominal = _section(cfg, "nominal")
    p0 = _vector(_need(nominal, "p", "nominal"), m, "nominal.p")
    sep_guess = _vector(nominal.get("sep_guess", [0.0] * n), n, "nominal.sep_guess")

    metric_sec = _section(cfg, "metric")
    metric = Metric(_need(metric_sec, "P", "metric"))
    if metric.dim != m:
        raise ConfigError(f"metric.P must be {m}x{m}")

    recovery = RecoveryOptions.from_dict(cfg.get("recovery"))
    integ = IntegratorOptions.from_dict(cfg.get("integrator"))
    integ = integ.replace(div_bound=recovery.div_bound)
    algo = AlgoOptions.from_dict(cfg.get("algorithm"))

    return SystemModel(
        states=tuple(states), params=tuple(params),
        field=VectorField(field_exprs, states, params),
        disturbance=spec, p0=p0, sep_guess=sep_guess, metric=metric,
        integrator=integ, recovery=recovery, algorithm=algo, config=cfg,
    )


def field_eval(model: SystemModel, x, p, want_jacobians=False):
    """``V_p(x)``, and optionally ``dV/dx`` and ``dV/dp``, at one point."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if not (np.isfinite(x).all() and np.isfinite(p).all()):
        raise ValueError("x and p must be finite")
    return model.field(x, p, want_jacobians)


# ---------------------------------------------------------------------------
# disturbance

def disturbance_eval(model: SystemModel, p, sep=None):
    """Post-disturbance initial condition ``y(p)`` and its derivative ``Dy``.

    For fault-on disturbances ``sep`` must be the
    :class:`~safemargin.equilibrium.SepInfo` of the pre-disturbance
    equilibrium at ``p``.
    """
    p = np.asarray(p, dtype=float).reshape(1, model.m)
    seps = None if sep is None else [sep]
    y, Dy, ok = disturbance_many(model, p, seps, with_sens=True)
    if not ok[0]:
        raise IntegrationError("fault-on trajectory left the divergence bound")
    return y[0], Dy[0]


def disturbance_many(model: SystemModel, P, seps, with_sens=True):
    """Vectorised :func:`disturbance_eval`.

    Returns ``(y, Dy, ok)``; ``Dy`` is ``None`` when ``with_sens`` is false
    and ``ok`` flags fault-on runs that stayed bounded.
    """
    from .ode import REACHED_T_MAX, run_batch, sensitivity_rhs

    P = np.asarray(P, dtype=float)
    b, n, m = P.shape[0], model.n, model.m
    d = model.disturbance
    if d.kind == "algebraic":
        y = np.empty((b, n))
        Dy = np.empty((b, n, m)) if with_sens else None
        for i in range(b):
            env = dict(zip(model.params, P[i]))
            y[i] = [ex.evaluate(e, env) for e in d.map_exprs]
            if with_sens:
                Dy[i] = [[ex.evaluate(de, env) for de in row] for row in d.map_jac]
        return y, Dy, np.ones(b, dtype=bool)

    if seps is None or len(seps) != b:
        raise ValueError("fault-on disturbances need the equilibrium at each p")
    X0 = np.stack([s.x_star for s in seps])
    vf = d.fault_field
    opts = model.integrator
    if with_sens:
        S0 = np.stack([s.dXdp for s in seps]).reshape(b, n * m)
        t, Z, reason = run_batch(sensitivity_rhs(vf, n, m), np.hstack([X0, S0]), P, opts,
                                 state_dim=n, t_end=d.duration)
        return Z[:, :n], Z[:, n:].reshape(b, n, m), reason == REACHED_T_MAX
    t, Z, reason = run_batch(lambda Z_, P_: vf.f(Z_, P_), X0, P, opts, t_end=d.duration)
    return Z, None, reason == REACHED_T_MAX
