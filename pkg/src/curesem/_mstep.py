"""Block maximizers shared by the EM and SEM M-steps.

Both complete-data criteria split into a logistic-regression part in beta and
a lifetime part in (alpha, k, lambda), so each block is maximized on its own.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .ew import EwParams
from .optim import OptimConfig, run_kernel

EW_INDEX = {"alpha": 0, "k": 1, "lambda": 2}


def free_indices(fixed) -> np.ndarray:
    fixed = fixed or {}
    return np.array([i for name, i in EW_INDEX.items() if name not in fixed], dtype=np.int64)


def impose(ew: EwParams, fixed) -> EwParams:
    if not fixed:
        return ew
    vals = list(ew.as_tuple())
    for name, value in fixed.items():
        vals[EW_INDEX[name]] = value
    return EwParams(*vals)


def logistic_value(design, response, beta):
    eta = design @ beta
    return float(response @ eta - np.sum(np.logaddexp(0.0, eta)))


def fit_logistic(design, response, beta_start, max_iter=100, tol=1e-10):
    """Newton-Raphson for sum(r * eta - log(1 + exp(eta))) with step halving.

    ``response`` may be fractional. The criterion is concave, so the result is
    the global maximizer whenever one exists.
    """
    beta = np.array(beta_start, dtype=float)
    value = logistic_value(design, response, beta)
    for _ in range(max_iter):
        eta = design @ beta
        prob = np.exp(-np.logaddexp(0.0, -eta))
        grad = design.T @ (response - prob)
        info = (design * (prob * (1.0 - prob))[:, None]).T @ design
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        scale = 1.0
        while scale > 1e-8:
            cand = beta + scale * step
            cand_value = logistic_value(design, response, cand)
            if cand_value >= value - 1e-12:
                break
            scale *= 0.5
        else:
            break
        beta, value = cand, cand_value
        if np.max(np.abs(scale * step)) < tol or np.max(np.abs(beta)) > 1e3:
            break
    return beta


def maximize_ew_em(ew_start: EwParams, log_t_events, log_t_censored, weights,
                   fixed=None, cfg: OptimConfig | None = None) -> EwParams:
    """Maximize sum log f(t_events) + sum w log S(t_censored) over the free EW parameters."""
    idx = free_indices(fixed)
    if idx.size == 0:
        return ew_start
    base = np.log(ew_start.as_tuple())
    rep = run_kernel(K.EM_EW, base[idx], cfg, idx, base,
                     log_t_events, log_t_censored, weights)
    out = base.copy()
    out[idx] = rep.argmax
    return EwParams(*np.exp(out))


def maximize_ew_complete(ew_start: EwParams, log_y, fixed=None,
                         cfg: OptimConfig | None = None, profile: bool = True) -> EwParams:
    """Maximum-likelihood EW fit to fully observed lifetimes.

    With ``profile`` and alpha free, alpha is profiled out in closed form and
    the simplex search runs over the remaining free parameters only.
    """
    fixed = fixed or {}
    idx = free_indices(fixed)
    if idx.size == 0:
        return ew_start
    base = np.log(ew_start.as_tuple())
    if profile and "alpha" not in fixed:
        rest = idx[idx != 0]
        if rest.size == 0:
            alpha = K.profile_alpha(ew_start.k, ew_start.lam, log_y)
            return EwParams(alpha, ew_start.k, ew_start.lam)
        rep = run_kernel(K.PROFILE_EW, base[rest], cfg, rest, base, log_y)
        out = base.copy()
        out[rest] = rep.argmax
        k, lam = math.exp(out[1]), math.exp(out[2])
        return EwParams(K.profile_alpha(k, lam, log_y), k, lam)
    rep = run_kernel(K.COMPLETE_EW, base[idx], cfg, idx, base, log_y)
    out = base.copy()
    out[idx] = rep.argmax
    return EwParams(*np.exp(out))
