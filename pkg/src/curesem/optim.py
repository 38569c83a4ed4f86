"""Derivative-free maximization and finite-difference derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from ._kernels import PY_CALLBACK, objective, pop_callback, push_callback
from .errors import DomainError, SingularInformationError

__all__ = [
    "OptimConfig",
    "OptimReport",
    "maximize",
    "numeric_gradient",
    "numeric_hessian",
    "covariance_from_hessian",
]


@dataclass(frozen=True)
class OptimConfig:
    ftol: float = 1e-8
    xtol: float = 1e-6
    max_evals: int = 5000
    rel_step: float = 0.05
    abs_step: float = 0.05


@dataclass(frozen=True)
class OptimReport:
    argmax: np.ndarray
    value: float
    iterations: int
    evaluations: int
    converged: bool


@njit(cache=True)
def _finite_or_inf(value):
    return value if np.isfinite(value) else np.inf


@njit(cache=True)
def _nelder_mead(kind, free_idx, base, a, b, c, start, ftol, xtol, max_evals,
                 rel_step, abs_step):
    n = start.size
    simplex = np.empty((n + 1, n))
    for i in range(n + 1):
        simplex[i] = start
    for j in range(n):
        simplex[j + 1, j] = start[j] * (1.0 + rel_step) if start[j] != 0.0 else abs_step
    # minimize the negated objective
    fvals = np.empty(n + 1)
    for i in range(n + 1):
        fvals[i] = _finite_or_inf(-objective(kind, simplex[i], free_idx, base, a, b, c))
    f_start = fvals[0]
    evals = n + 1
    iterations = 0
    converged = False
    while evals < max_evals:
        order = np.argsort(fvals, kind="mergesort")
        simplex = simplex[order]
        fvals = fvals[order]
        spread = fvals[n] - fvals[0]
        if np.isfinite(spread) and spread < ftol:
            if np.max(np.abs(simplex[1:] - simplex[0])) <= xtol:
                converged = True
                break
        iterations += 1
        centroid = np.zeros(n)
        for i in range(n):
            centroid += simplex[i]
        centroid /= n
        worst = simplex[n].copy()
        xr = centroid + (centroid - worst)
        fr = _finite_or_inf(-objective(kind, xr, free_idx, base, a, b, c))
        evals += 1
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = _finite_or_inf(-objective(kind, xe, free_idx, base, a, b, c))
            evals += 1
            if fe < fr:
                simplex[n] = xe
                fvals[n] = fe
            else:
                simplex[n] = xr
                fvals[n] = fr
            continue
        if fr < fvals[n - 1]:
            simplex[n] = xr
            fvals[n] = fr
            continue
        if fr < fvals[n]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = _finite_or_inf(-objective(kind, xc, free_idx, base, a, b, c))
            evals += 1
            if fc <= fr:
                simplex[n] = xc
                fvals[n] = fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = _finite_or_inf(-objective(kind, xc, free_idx, base, a, b, c))
            evals += 1
            if fc < fvals[n]:
                simplex[n] = xc
                fvals[n] = fc
                continue
        for i in range(1, n + 1):
            simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
            fvals[i] = _finite_or_inf(-objective(kind, simplex[i], free_idx, base, a, b, c))
        evals += n
    best = np.argmin(fvals)
    if fvals[best] <= f_start:
        return simplex[best].copy(), -fvals[best], iterations, evals, converged
    return start.copy(), -f_start, iterations, evals, converged


_EMPTY_I = np.zeros(0, dtype=np.int64)
_EMPTY_F = np.zeros(0)


def run_kernel(kind, start, cfg=None, free_idx=_EMPTY_I, base=_EMPTY_F,
               a=_EMPTY_F, b=_EMPTY_F, c=_EMPTY_F) -> OptimReport:
    """Nelder-Mead over one of the compiled objectives in ``_kernels``."""
    cfg = cfg or OptimConfig()
    start = np.array(start, dtype=float).reshape(-1)
    argmax, value, iterations, evals, converged = _nelder_mead(
        kind, free_idx, base, a, b, c, start,
        cfg.ftol, cfg.xtol, cfg.max_evals, cfg.rel_step, cfg.abs_step,
    )
    return OptimReport(argmax, float(value), int(iterations), int(evals), bool(converged))


def maximize(f: Callable, start, cfg: OptimConfig | None = None) -> OptimReport:
    """Nelder-Mead simplex ascent of ``f`` from ``start``.

    Reflection, expansion, contraction and shrink coefficients are
    1, 2, 0.5 and 0.5. The initial simplex perturbs each coordinate by 5%
    (0.05 absolute for zero coordinates). Iteration stops once the spread of
    simplex values is below ``ftol`` and every vertex lies within ``xtol`` of
    the best one, or after ``max_evals`` evaluations; running out of budget
    sets ``converged=False`` rather than raising. Non-finite values of ``f``
    rank below every finite value. The returned value is never below
    ``f(start)``.
    """
    push_callback(f)
    try:
        return run_kernel(PY_CALLBACK, start, cfg)
    finally:
        pop_callback()


def _steps(z, rel, floor):
    return np.maximum(floor, rel * np.abs(z))


def numeric_gradient(f: Callable, z, rel: float = 1e-5, floor: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with step ``max(floor, rel * |z_j|)``."""
    z = np.array(z, dtype=float)
    h = _steps(z, rel, floor)
    grad = np.empty(z.size)
    for j in range(z.size):
        e = np.zeros(z.size)
        e[j] = h[j]
        hi, lo = f(z + e), f(z - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise DomainError(f"objective is not finite around coordinate {j}")
        grad[j] = (hi - lo) / (2 * h[j])
    return grad


def numeric_hessian(f: Callable, theta, rel: float = 1e-4, floor: float = 1e-4,
                    positive=None) -> np.ndarray:
    """Central second differences, symmetrized.

    ``positive`` marks coordinates that must stay positive; their steps are
    capped at a quarter of the coordinate value.
    """
    x = np.array(theta, dtype=float)
    p = x.size
    h = _steps(x, rel, floor)
    if positive is not None:
        pos = np.asarray(positive, dtype=bool)
        h = np.where(pos, np.minimum(h, 0.25 * np.abs(x)), h)

    def ev(dx):
        v = f(x + dx)
        if not np.isfinite(v):
            raise DomainError("objective is not finite at a Hessian probe point")
        return v

    f0 = ev(np.zeros(p))
    hess = np.empty((p, p))
    eye = np.diag(h)
    for i in range(p):
        fp, fm = ev(eye[i]), ev(-eye[i])
        hess[i, i] = (fp - 2 * f0 + fm) / h[i] ** 2
        for j in range(i):
            fpp = ev(eye[i] + eye[j])
            fpm = ev(eye[i] - eye[j])
            fmp = ev(-eye[i] + eye[j])
            fmm = ev(-eye[i] - eye[j])
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * h[i] * h[j])
    return 0.5 * (hess + hess.T)


def covariance_from_hessian(hessian) -> np.ndarray:
    """``(-H)^-1``; raises ``SingularInformationError`` if it does not exist."""
    info = -np.asarray(hessian, dtype=float)
    if not np.all(np.isfinite(info)):
        raise SingularInformationError("information matrix has non-finite entries")
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError(str(exc)) from exc
    if not np.all(np.isfinite(cov)):
        raise SingularInformationError("information matrix inverse is not finite")
    return 0.5 * (cov + cov.T)
