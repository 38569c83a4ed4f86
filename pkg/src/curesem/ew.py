"""Exponentiated-Weibull (EW) lifetime distribution.

The density is

    f(y) = (a k / lam) (y/lam)^(k-1) exp(-(y/lam)^k) [1 - exp(-(y/lam)^k)]^(a-1)

with shapes ``alpha`` and ``k`` and scale ``lam``. All functions accept scalars
or arrays for the time argument and return a float for scalar input.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import (
    DegenerateTruncationError,
    DomainError,
    HazardOverflowError,
    NonConvergenceError,
)

__all__ = [
    "EwParams",
    "HazardShape",
    "ew_pdf",
    "ew_logpdf",
    "ew_cdf",
    "ew_survival",
    "ew_logsf",
    "ew_hazard",
    "ew_quantile",
    "ew_isf",
    "ew_raw_moment",
    "hazard_shape",
    "ew_sample",
    "ew_sample_truncated",
]

MOMENT_MAX_TERMS = 100_000


@dataclass(frozen=True)
class EwParams:
    """EW parameters; ``lam`` is the scale, ``alpha`` and ``k`` the shapes."""

    alpha: float
    k: float
    lam: float

    def __post_init__(self):
        for name in ("alpha", "k", "lam"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"EW parameter {name} must be positive and finite, got {value!r}")
            object.__setattr__(self, name, float(value))

    def as_tuple(self):
        return (self.alpha, self.k, self.lam)


class HazardShape(enum.Enum):
    CONSTANT = "constant"
    INCREASING = "increasing"
    DECREASING = "decreasing"
    BATHTUB = "bathtub"
    UNIMODAL = "unimodal"
    BATHTUB_OR_INCREASING = "bathtub or increasing"
    UNIMODAL_OR_DECREASING = "unimodal or decreasing"


def _positive(y):
    arr = np.asarray(y, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("EW functions are defined for y > 0 only")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _log_fw(z):
    """log(1 - exp(-z)) without cancellation at either end."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(z < math.log(2.0), np.log(-np.expm1(-z)), np.log1p(-np.exp(-z)))


def _zscore(y, p):
    return (y / p.lam) ** p.k


def ew_logpdf(y, p: EwParams):
    y = _positive(y)
    z = _zscore(y, p)
    out = (
        math.log(p.alpha * p.k / p.lam)
        + (p.k - 1.0) * np.log(y / p.lam)
        - z
        + (p.alpha - 1.0) * _log_fw(z)
    )
    return _out(out, y)


def ew_pdf(y, p: EwParams):
    """Density of the EW distribution."""
    return _out(np.exp(ew_logpdf(y, p)), np.asarray(y))


def ew_logcdf(y, p: EwParams):
    y = _positive(y)
    return _out(p.alpha * _log_fw(_zscore(y, p)), y)


def ew_cdf(y, p: EwParams):
    """Distribution function ``[1 - exp(-(y/lam)^k)]^alpha``."""
    return _out(np.exp(ew_logcdf(y, p)), np.asarray(y))


def ew_survival(y, p: EwParams):
    y = _positive(y)
    return _out(-np.expm1(p.alpha * _log_fw(_zscore(y, p))), y)


def ew_logsf(y, p: EwParams):
    """Log survival, accurate deep in the right tail.

    Once ``alpha * exp(-z)`` is negligible the survival is ``alpha * exp(-z)`` to
    double precision, which keeps the log finite where the survival itself
    underflows.
    """
    y = _positive(y)
    z = _zscore(y, p)
    tail = z > math.log(p.alpha) + 40.0
    with np.errstate(divide="ignore"):
        body = np.log(-np.expm1(p.alpha * _log_fw(np.where(tail, 1.0, z))))
    return _out(np.where(tail, math.log(p.alpha) - z, body), y)


def ew_hazard(y, p: EwParams):
    """Hazard ``pdf / survival``.

    Raises ``HazardOverflowError`` when the survival underflows to zero.
    """
    sf = np.asarray(ew_survival(y, p))
    if np.any(sf <= 0):
        raise HazardOverflowError("survival underflowed to 0; hazard is not representable")
    return _out(np.asarray(ew_pdf(y, p)) / sf, np.asarray(y))


def _from_log_fw_power(log_fw):
    """Map log(1 - exp(-z)) back to z."""
    log_fw = np.asarray(log_fw, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(log_fw < -math.log(2.0), -np.log1p(-np.exp(log_fw)),
                        -np.log(-np.expm1(log_fw)))


def ew_quantile(u, p: EwParams):
    """Inverse distribution function ``lam * (-log(1 - u^(1/alpha)))^(1/k)``."""
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("quantile level must lie in (0, 1)")
    z = _from_log_fw_power(np.log(u) / p.alpha)
    return _out(p.lam * z ** (1.0 / p.k), u)


def _isf_from_log(log_s, p: EwParams):
    # cdf = 1 - s, so log F_w = log1p(-s) / alpha; deep tail inverts log S = log alpha - z
    log_s = np.asarray(log_s, dtype=float)
    tail = log_s < -40.0
    log_fw = np.log1p(-np.exp(np.where(tail, -1.0, log_s))) / p.alpha
    z = np.where(tail, math.log(p.alpha) - log_s, _from_log_fw_power(log_fw))
    return p.lam * z ** (1.0 / p.k)


def ew_isf(s, p: EwParams):
    """Inverse survival function; precise for small survival levels."""
    s = np.asarray(s, dtype=float)
    if np.any(~((s > 0) & (s < 1))):
        raise DomainError("survival level must lie in (0, 1)")
    return _out(_isf_from_log(np.log(s), p), s)


def ew_raw_moment(q: int, p: EwParams, tol: float = 1e-12) -> float:
    """Raw moment E[Y^q].

    Uses the finite binomial sum when ``alpha`` is a whole number and the
    infinite series otherwise, truncated at the first term below ``tol`` in
    absolute value.
    """
    if q < 0 or int(q) != q:
        raise DomainError("moment order must be a nonnegative integer")
    if q == 0:
        return 1.0
    a = p.alpha
    expo = -q / p.k - 1.0
    lead = a * math.exp(q * math.log(p.lam) + gammaln(q / p.k + 1.0))
    if float(a).is_integer():
        m = int(a) - 1
        total = sum(
            math.comb(m, i) * (-1) ** i * (i + 1) ** expo for i in range(m + 1)
        )
        return lead * total
    total = 0.0
    coef = 1.0  # (a-1)(a-2)...(a-i) (-1)^i / i!
    for i in range(MOMENT_MAX_TERMS):
        if i > 0:
            coef *= -(a - i) / i
        term = coef * (i + 1) ** expo
        total += term
        if abs(term) < tol:
            return lead * total
    raise NonConvergenceError(
        f"moment series did not reach tol={tol} within {MOMENT_MAX_TERMS} terms"
    )


def hazard_shape(p: EwParams) -> HazardShape:
    """Classify the hazard pattern from the two shape parameters."""
    a, k = p.alpha, p.k
    if a == 1.0 and k == 1.0:
        return HazardShape.CONSTANT
    if a == 1.0:
        return HazardShape.INCREASING if k > 1 else HazardShape.DECREASING
    if k == 1.0:
        # alpha < 1 with k = 1 is decreasing, not constant
        return HazardShape.INCREASING if a > 1 else HazardShape.DECREASING
    if k > 1 and a > 1:
        return HazardShape.INCREASING
    if k < 1 and a < 1:
        return HazardShape.DECREASING
    ka = k * a
    if k > 1:
        # the alpha < 1 row: bathtub when k*alpha < 1, increasing when >= 1
        return HazardShape.BATHTUB if ka < 1 else HazardShape.INCREASING
    return HazardShape.UNIMODAL if ka > 1 else HazardShape.DECREASING


def _open_unit(rng, size):
    u = rng.random(size)
    zero = u == 0.0
    while np.any(zero):
        u = np.where(zero, rng.random(size), u)
        zero = u == 0.0
    return u


def ew_sample(rng: np.random.Generator, p: EwParams, size=None):
    """Inverse-transform draws from the EW distribution."""
    u = _open_unit(rng, size)
    return _out(_isf_from_log(np.log(u), p), u)


def ew_sample_truncated(rng: np.random.Generator, p: EwParams, lower, size=None):
    """Draw from the EW distribution conditioned on ``Y > lower``.

    ``S(Y) / S(lower)`` is uniform on (0, 1), so the draw is the inverse
    survival of ``S(lower) * V``. ``lower`` may be an array matching ``size``.
    """
    lower = _positive(lower)
    if size is None and lower.ndim:
        size = lower.shape
    log_s0 = np.asarray(ew_logsf(lower, p))
    if np.any(~np.isfinite(log_s0)):
        raise DegenerateTruncationError("survival at the truncation point is numerically zero")
    v = _open_unit(rng, size)
    y = _isf_from_log(log_s0 + np.log(v), p)
    y = np.maximum(y, np.nextafter(lower, np.inf))
    return _out(y, v)
