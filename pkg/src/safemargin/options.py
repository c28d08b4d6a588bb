"""Run-time settings read from the ``integrator``, ``recovery`` and
``algorithm`` config sections."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


class _FromDict:
    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown {cls.__name__} field(s): {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class IntegratorOptions(_FromDict):
    rtol: float = 1e-9
    atol: float = 1e-11
    dt_init: float = 1e-3
    dt_max: float = 0.25
    t_max: float = 100.0
    div_bound: float = 1e6

    def __post_init__(self):
        for name in ("rtol", "atol", "dt_init", "dt_max", "t_max", "div_bound"):
            v = getattr(self, name)
            _check(isinstance(v, (int, float)) and v > 0, f"integrator.{name} must be > 0")
        _check(self.dt_init <= self.dt_max, "integrator.dt_init must not exceed dt_max")

    def replace(self, **kw):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return type(self)(**d)


@dataclass(frozen=True)
class RecoveryOptions(_FromDict):
    conv_tol: float = 1e-4
    div_bound: float = 1e6
    # accepted steps without a new sensitivity maximum before G is final
    stationary_steps: int = 50

    def __post_init__(self):
        _check(self.conv_tol > 0, "recovery.conv_tol must be > 0")
        _check(self.div_bound > 0, "recovery.div_bound must be > 0")
        _check(self.stationary_steps >= 1, "recovery.stationary_steps must be >= 1")


@dataclass(frozen=True)
class AlgoOptions(_FromDict):
    """Settings of the boundary algorithms.

    ``epsilon`` is the G level targeted by the closest-point search and
    ``kappa`` the predictor step of the 2-D tracer.
    """

    epsilon: float = 1e-3
    kappa: float = 0.05
    tol_g: float = 1e-6
    tol_p: float = 1e-6
    max_iter: int = 60
    max_backtrack: int = 40
    fd_step_rel: float = 1e-6
    fd_step_abs: float = 1e-7
    direction: int = 1

    def __post_init__(self):
        _check(self.epsilon > 0, "algorithm.epsilon must be > 0")
        _check(self.kappa > 0, "algorithm.kappa must be > 0")
        _check(self.tol_g > 0 and self.tol_p > 0, "algorithm tolerances must be > 0")
        _check(int(self.max_iter) >= 1, "algorithm.max_iter must be >= 1")
        _check(0 <= int(self.max_backtrack) <= 60, "algorithm.max_backtrack must be in [0, 60]")
        _check(self.fd_step_rel >= 0 and self.fd_step_abs > 0, "fd steps must be positive")
        _check(self.direction in (1, -1), "algorithm.direction must be +1 or -1")

    def replace(self, **kw):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return type(self)(**d)
