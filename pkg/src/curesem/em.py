"""EM algorithm for the Bernoulli cure-rate model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _mstep
from .errors import CuresemError
from .ew import ew_logpdf, ew_logsf
from .model import INFEASIBLE, Dataset, Theta, observed_loglik, pop_log_survival
from .optim import OptimConfig

__all__ = [
    "EmConfig",
    "EmTrace",
    "EmResult",
    "e_step",
    "q_function",
    "m_step",
    "fit_em",
    "relative_change",
    "divergence_reason",
]

BETA_LIMIT = 50.0
EW_LIMITS = (1e-6, 1e6)


@dataclass(frozen=True)
class EmConfig:
    epsilon: float = 0.001
    max_iters: int = 500
    optim: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class EmTrace:
    """Iterates, observed log-likelihoods and relative changes, iteration 0 first."""

    names: list
    thetas: list = field(default_factory=list)
    logliks: list = field(default_factory=list)
    changes: list = field(default_factory=list)

    def append(self, theta: Theta, loglik: float, change: float):
        self.thetas.append(theta.vector)
        self.logliks.append(loglik)
        self.changes.append(change)

    def __len__(self):
        return len(self.thetas)

    def header(self):
        return ["iter", *self.names, "loglik", "max_rel_change"]

    def rows(self):
        for r, (vec, ll, ch) in enumerate(zip(self.thetas, self.logliks, self.changes)):
            yield [r, *vec, ll, ch]


@dataclass
class EmResult:
    theta: Theta
    trace: EmTrace
    converged: bool
    divergent: bool
    reason: str
    iterations: int

    @property
    def loglik(self) -> float:
        return self.trace.logliks[-1]


def e_step(theta_r: Theta, data: Dataset) -> np.ndarray:
    """Posterior susceptibility probabilities.

    Exactly 1 for observed events; ``1 - pi0 / S_p(t)`` for censored records.
    """
    w = np.ones(data.n)
    cz = data.censored
    if np.any(cz):
        eta = data.design[cz] @ theta_r.beta
        log_sp = pop_log_survival(theta_r, data.t[cz], data.x[cz])
        log_pi0 = -np.logaddexp(0.0, eta)
        w[cz] = np.clip(-np.expm1(log_pi0 - log_sp), 0.0, 1.0)
    return w


def q_function(theta: Theta, weights, data: Dataset) -> float:
    """Expected complete-data log-likelihood given posterior weights.

    Censored records contribute ``(1 - w) log pi0 + w log(S_p - pi0)`` where
    ``S_p - pi0 = (1 - pi0) S(t)``.
    """
    weights = np.asarray(weights, dtype=float)
    eta = data.design @ theta.beta
    soft = np.logaddexp(0.0, eta)
    ev, cz = data.events, data.censored
    with np.errstate(all="ignore"):
        total = np.sum(eta[ev] - soft[ev] + ew_logpdf(data.t[ev], theta.ew)) if np.any(ev) else 0.0
        if np.any(cz):
            w = weights[cz]
            log_s = ew_logsf(data.t[cz], theta.ew)
            sus = np.where(w > 0, w * (eta[cz] - soft[cz] + log_s), 0.0)
            total += np.sum((1.0 - w) * -soft[cz] + sus)
    total = float(total)
    return total if np.isfinite(total) else INFEASIBLE


def m_step(theta_r: Theta, weights, data: Dataset, fixed=None,
           cfg: OptimConfig | None = None) -> Theta:
    """Maximize ``q_function`` blockwise: logistic part in beta, lifetime part in EW."""
    weights = np.asarray(weights, dtype=float)
    beta = _mstep.fit_logistic(data.design, weights, theta_r.beta)
    ev, cz = data.events, data.censored
    ew = _mstep.maximize_ew_em(
        _mstep.impose(theta_r.ew, fixed),
        np.log(data.t[ev]),
        np.log(data.t[cz]),
        np.ascontiguousarray(weights[cz]),
        fixed,
        cfg,
    )
    return Theta(beta, ew)


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """Largest relative coordinate change; absolute change where the old value is 0."""
    diff = np.abs(new - old)
    denom = np.abs(old)
    return float(np.max(np.where(denom > 0, diff / np.where(denom > 0, denom, 1.0), diff)))


def divergence_reason(theta: Theta, loglik: float) -> str:
    """Empty string for an acceptable iterate, else why it counts as divergent."""
    if not np.isfinite(loglik) or loglik <= INFEASIBLE:
        return "non-finite log-likelihood"
    if np.any(np.abs(theta.beta) > BETA_LIMIT):
        return "regression coefficient out of range"
    lo, hi = EW_LIMITS
    if any(not (lo <= v <= hi) for v in theta.ew.as_tuple()):
        return "lifetime parameter out of range"
    return ""


def fit_em(data: Dataset, start: Theta, cfg: EmConfig | None = None, fixed=None) -> EmResult:
    """Alternate E- and M-steps until the largest relative parameter change is below epsilon.

    ``fixed`` pins EW parameters by name (``alpha``, ``k``, ``lambda``).
    """
    cfg = cfg or EmConfig()
    theta = Theta(start.beta, _mstep.impose(start.ew, fixed))
    trace = EmTrace(theta.names())
    ll = observed_loglik(theta, data)
    trace.append(theta, ll, float("nan"))
    reason = divergence_reason(theta, ll)
    if reason:
        return EmResult(theta, trace, False, True, "start: " + reason, 0)
    converged = False
    r = 0
    for r in range(1, cfg.max_iters + 1):
        w = e_step(theta, data)
        try:
            new = m_step(theta, w, data, fixed, cfg.optim)
        except (CuresemError, ValueError) as exc:
            reason = f"M-step failed: {exc}"
            break
        ll = observed_loglik(new, data)
        change = relative_change(new.vector, theta.vector)
        trace.append(new, ll, change)
        theta = new
        reason = divergence_reason(theta, ll)
        if reason:
            break
        if change < cfg.epsilon:
            converged = True
            break
    else:
        reason = "iteration limit reached"
    return EmResult(theta, trace, converged, not converged, reason, r)
