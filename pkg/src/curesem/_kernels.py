"""Compiled objective kernels for the M-step blocks.

Every objective shares one signature ``(kind, v, free_idx, base, a, b, c)`` so
that a single cached Nelder-Mead core can dispatch on ``kind``. ``v`` holds the
free coordinates, ``base`` the full vector of log EW parameters
(log alpha, log k, log lambda) into which ``v`` is scattered at ``free_idx``.
"""

import math

import numpy as np
from numba import njit, objmode

PY_CALLBACK = 0
EM_EW = 1  # a: log event times, b: log censored times, c: censored weights
COMPLETE_EW = 2  # a: log lifetimes
PROFILE_EW = 3  # a: log lifetimes; alpha profiled out, v covers (k, lambda)

LOG2 = math.log(2.0)

_callbacks = []


def push_callback(f):
    _callbacks.append(f)


def pop_callback():
    _callbacks.pop()


def _invoke_callback(v):
    value = float(_callbacks[-1](v))
    return value if math.isfinite(value) else -math.inf


@njit(cache=True)
def log_fw(z):
    """log(1 - exp(-z))."""
    if z < LOG2:
        return math.log(-math.expm1(-z))
    return math.log1p(-math.exp(-z))


@njit(cache=True)
def logsf_z(z, alpha):
    if z > math.log(alpha) + 40.0:
        return math.log(alpha) - z
    s = -math.expm1(alpha * log_fw(z))
    if s <= 0.0:
        return -math.inf
    return math.log(s)


@njit(cache=True)
def _scatter(v, free_idx, base):
    p = base.copy()
    for j in range(free_idx.size):
        p[free_idx[j]] = v[j]
    return p


@njit(cache=True)
def em_ew_value(alpha, k, lam, lt1, lt0, w0):
    llam = math.log(lam)
    const = math.log(alpha * k / lam)
    s = 0.0
    for i in range(lt1.size):
        u = lt1[i] - llam
        z = math.exp(k * u)
        if z == 0.0:
            return -math.inf
        s += const + (k - 1.0) * u - z + (alpha - 1.0) * log_fw(z)
    for i in range(lt0.size):
        if w0[i] > 0.0:
            s += w0[i] * logsf_z(math.exp(k * (lt0[i] - llam)), alpha)
    return s


@njit(cache=True)
def complete_ew_value(alpha, k, lam, ly):
    llam = math.log(lam)
    const = math.log(alpha * k / lam)
    s = 0.0
    for i in range(ly.size):
        u = ly[i] - llam
        z = math.exp(k * u)
        if z == 0.0:
            return -math.inf
        s += const + (k - 1.0) * u - z + (alpha - 1.0) * log_fw(z)
    return s


@njit(cache=True)
def profile_alpha(k, lam, ly):
    """Closed-form alpha maximizing the complete-data EW likelihood at fixed (k, lambda)."""
    llam = math.log(lam)
    acc = 0.0
    for i in range(ly.size):
        z = math.exp(k * (ly[i] - llam))
        if z == 0.0:
            return math.inf
        acc += log_fw(z)
    if acc >= 0.0:
        return math.inf
    return -ly.size / acc


@njit(cache=True)
def profiled_value(k, lam, ly):
    """Complete-data EW log-likelihood with alpha at its profile maximizer, in one pass."""
    llam = math.log(lam)
    su = 0.0
    sz = 0.0
    sf = 0.0
    for i in range(ly.size):
        u = ly[i] - llam
        z = math.exp(k * u)
        if z == 0.0:
            return -math.inf
        su += u
        sz += z
        sf += log_fw(z)
    if not sf < 0.0:
        return -math.inf
    n = ly.size
    alpha = -n / sf
    return n * math.log(alpha * k / lam) + (k - 1.0) * su - sz + (alpha - 1.0) * sf


@njit(cache=True)
def objective(kind, v, free_idx, base, a, b, c):
    if kind == PY_CALLBACK:
        with objmode(value="float64"):
            value = _invoke_callback(v)
        return value
    p = _scatter(v, free_idx, base)
    for j in range(3):
        if not (-700.0 < p[j] < 700.0):
            return -math.inf
    alpha = math.exp(p[0])
    k = math.exp(p[1])
    lam = math.exp(p[2])
    if kind == EM_EW:
        out = em_ew_value(alpha, k, lam, a, b, c)
    elif kind == COMPLETE_EW:
        out = complete_ew_value(alpha, k, lam, a)
    else:
        out = profiled_value(k, lam, a)
    if math.isnan(out):
        return -math.inf
    return out
