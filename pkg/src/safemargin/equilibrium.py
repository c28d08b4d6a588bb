"""Stable equilibrium location, certification and parameter sensitivity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (DomainError, NewtonDiverged, NotHyperbolic, NotStable,
                     SingularJacobian)

NEWTON_TOL = 1e-10
HYPERBOLICITY_MARGIN = 1e-8
MAX_NEWTON = 100
MAX_HALVINGS = 30


@dataclass(frozen=True)
class SepInfo:
    x_star: np.ndarray
    eigenvalues: np.ndarray
    dXdp: np.ndarray
    residual: float


def _residual(model, x, p):
    try:
        f = model.field(x, p)
    except DomainError:
        return None, np.inf
    return f, float(np.abs(f).max())


def find_sep(model, p, guess=None) -> SepInfo:
    """Damped Newton solve of ``V_p(x) = 0`` followed by a stability check.

    Raises
    ------
    NewtonDiverged, SingularJacobian, NotStable, NotHyperbolic
    """
    p = np.asarray(p, dtype=float).ravel()
    x = np.array(model.sep_guess if guess is None else guess, dtype=float).ravel()
    if not np.isfinite(x).all():
        raise ValueError("guess must be finite")
    f, res = _residual(model, x, p)
    if f is None:
        raise NewtonDiverged("field undefined at the initial guess")
    for _ in range(MAX_NEWTON):
        if res <= NEWTON_TOL:
            break
        _, Jx, _ = model.field(x, p, True)
        try:
            dx = np.linalg.solve(Jx, -f)
        except np.linalg.LinAlgError:
            raise SingularJacobian(f"singular state Jacobian at x={x}") from None
        if not np.isfinite(dx).all():
            raise SingularJacobian(f"singular state Jacobian at x={x}")
        step = 1.0
        for _h in range(MAX_HALVINGS + 1):
            x_try = x + step * dx
            f_try, res_try = _residual(model, x_try, p)
            if res_try < res:
                break
            step *= 0.5
        else:
            raise NewtonDiverged(f"no residual decrease from x={x} (|V|={res:.3g})")
        x, f, res = x_try, f_try, res_try
    else:
        if res > NEWTON_TOL:
            raise NewtonDiverged(f"no convergence in {MAX_NEWTON} iterations (|V|={res:.3g})")

    _, Jx, Jp = model.field(x, p, True)
    eig = np.linalg.eigvals(Jx)
    re = eig.real
    if np.any(np.abs(re) < HYPERBOLICITY_MARGIN):
        raise NotHyperbolic(f"equilibrium {x} has eigenvalues near the imaginary axis: {eig}")
    if re.max() > -HYPERBOLICITY_MARGIN:
        raise NotStable(f"equilibrium {x} is unstable: {eig}")
    try:
        dXdp = -np.linalg.solve(Jx, Jp)
    except np.linalg.LinAlgError:
        raise SingularJacobian(f"singular state Jacobian at x={x}") from None
    return SepInfo(x_star=x, eigenvalues=eig, dXdp=dXdp, residual=res)
