"""Stochastic EM (SEM) for the Bernoulli cure-rate model.

Each iteration imputes the latent cure status of every censored record and,
for records imputed as susceptible, a lifetime beyond the censoring time. The
pseudo-complete log-likelihood then separates into a logistic regression on
the imputed statuses and a complete-sample EW fit, maximized blockwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _mstep
from .em import EmConfig, EmResult, divergence_reason, fit_em
from .errors import CuresemError, DegenerateTruncationError
from .ew import _isf_from_log, ew_logpdf, ew_logsf, ew_sample_truncated
from .model import (
    INFEASIBLE,
    Dataset,
    SurvivalRecord,
    Theta,
    observed_loglik,
    pop_log_survival,
)
from .optim import OptimConfig

__all__ = [
    "CURED",
    "Selection",
    "LifetimeScheme",
    "SemConfig",
    "PseudoRecord",
    "PseudoSample",
    "SemChain",
    "SemResult",
    "draw_cure_status",
    "impute_lifetime",
    "s_step",
    "pseudo_complete_loglik",
    "sem_m_step",
    "fit_sem",
]


class _Cured:
    """Lifetime placeholder for an individual imputed as cured."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CURED"

    def __reduce__(self):
        return (_Cured, ())


CURED = _Cured()


class Selection(enum.Enum):
    MAX_LOGLIK = "maxloglik"
    POST_BURNIN_AVERAGE = "average"
    SEM_THEN_EM = "sem-em"


class LifetimeScheme(enum.Enum):
    INVERSE_CDF = "a"
    BERNOULLI_THEN_TRUNCATED = "b"


@dataclass(frozen=True)
class SemConfig:
    total_iters: int = 1500
    burn_in: int = 500
    selection: Selection = Selection.MAX_LOGLIK
    scheme: LifetimeScheme = LifetimeScheme.INVERSE_CDF
    seed: int | None = None
    optim: OptimConfig = field(default_factory=OptimConfig)
    em: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be at least 1")
        if not 0 <= self.burn_in < self.total_iters:
            raise ValueError("burn_in must satisfy 0 <= burn_in < total_iters")
        object.__setattr__(self, "selection", Selection(self.selection))
        object.__setattr__(self, "scheme", LifetimeScheme(self.scheme))


class PseudoRecord(NamedTuple):
    y_star: object  # float, or CURED
    delta: int
    x: tuple
    eta: int


@dataclass(frozen=True)
class PseudoSample:
    """Array form of a pseudo-complete sample.

    ``y`` is meaningful only where ``eta == 1``; cured entries hold NaN and are
    never read by the likelihood.
    """

    y: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    eta: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n), self.x])

    def records(self) -> list[PseudoRecord]:
        return [
            PseudoRecord(float(self.y[i]) if self.eta[i] else CURED, int(self.delta[i]),
                         tuple(self.x[i]), int(self.eta[i]))
            for i in range(self.n)
        ]

    @classmethod
    def from_records(cls, records: Sequence[PseudoRecord]) -> "PseudoSample":
        eta = np.array([int(r.eta) for r in records], dtype=np.int8)
        y = np.array([np.nan if r.y_star is CURED else float(r.y_star) for r in records])
        if np.any(eta.astype(bool) == np.isnan(y)):
            raise ValueError("eta must be 1 exactly when y_star is a lifetime")
        x = np.array([tuple(np.atleast_1d(r.x)) for r in records], dtype=float)
        delta = np.array([int(r.delta) for r in records], dtype=np.int8)
        return cls(y, delta, x.reshape(len(records), -1), eta)


def _susceptible_prob(theta: Theta, t, x):
    eta = theta.beta[0] + np.asarray(x, dtype=float).reshape(np.size(t), -1) @ theta.beta[1:]
    log_sp = np.asarray(pop_log_survival(theta, t, np.asarray(x, dtype=float).reshape(np.size(t), -1)))
    log_pi0 = -np.logaddexp(0.0, eta)
    return np.clip(-np.expm1(log_pi0 - log_sp), 0.0, 1.0)


def draw_cure_status(rng: np.random.Generator, theta_r: Theta, rec: SurvivalRecord) -> int:
    """1 for an observed event; otherwise Bernoulli with probability ``1 - pi0 / S_p(t)``."""
    if rec.delta == 1:
        return 1
    p = float(_susceptible_prob(theta_r, np.array([rec.t]), np.atleast_1d(rec.x))[0])
    return int(rng.random() < p)


def _inverse_cdf_draw(rng, theta: Theta, t, x):
    # u ~ U(0, b) and S_p(y) = S_p(t) (1 - u), rearranged as S(y) = S(t) (1 - u / b)
    b = _susceptible_prob(theta, t, x)
    u = b * rng.random(np.size(t))
    ratio = np.where(b > 0, u / np.where(b > 0, b, 1.0), 0.0)
    log_s0 = np.asarray(ew_logsf(t, theta.ew))
    if np.any(~np.isfinite(log_s0)):
        raise DegenerateTruncationError("survival at the censoring time is numerically zero")
    y = _isf_from_log(log_s0 + np.log1p(-ratio), theta.ew)
    return np.maximum(y, np.nextafter(t, np.inf))


def impute_lifetime(rng: np.random.Generator, theta_r: Theta, rec: SurvivalRecord,
                    eta: int, scheme=LifetimeScheme.INVERSE_CDF):
    """Pseudo lifetime for one record.

    Observed events keep their time and imputed cures get ``CURED``. A censored
    susceptible record receives a draw above ``t``: scheme ``a`` inverts the
    improper conditional cdf at ``u ~ U(0, b)``; scheme ``b`` first draws
    ``m ~ Bernoulli(nu / (1 + nu))`` and returns a truncated EW draw when
    ``m = 1``, ``CURED`` otherwise.
    """
    scheme = LifetimeScheme(scheme)
    if rec.delta == 1:
        return float(rec.t)
    if not eta:
        return CURED
    t = np.array([rec.t], dtype=float)
    x = np.atleast_1d(np.asarray(rec.x, dtype=float))
    if scheme is LifetimeScheme.INVERSE_CDF:
        return float(_inverse_cdf_draw(rng, theta_r, t, x)[0])
    lin = theta_r.beta[0] + x @ theta_r.beta[1:]
    if rng.random() >= np.exp(-np.logaddexp(0.0, -lin)):
        return CURED
    return float(ew_sample_truncated(rng, theta_r.ew, rec.t))


def s_step(rng: np.random.Generator, theta_r: Theta, data: Dataset,
           scheme=LifetimeScheme.INVERSE_CDF) -> PseudoSample:
    """Vectorized S-step over a whole dataset."""
    scheme = LifetimeScheme(scheme)
    eta = np.ones(data.n, dtype=np.int8)
    y = data.t.copy()
    cz = np.flatnonzero(data.censored)
    if cz.size:
        t0, x0 = data.t[cz], data.x[cz]
        p = _susceptible_prob(theta_r, t0, x0)
        sus = rng.random(cz.size) < p
        idx, ts, xs = cz[sus], t0[sus], x0[sus]
        if idx.size:
            if scheme is LifetimeScheme.INVERSE_CDF:
                y[idx] = _inverse_cdf_draw(rng, theta_r, ts, xs)
            else:
                lin = theta_r.beta[0] + xs @ theta_r.beta[1:]
                m = rng.random(idx.size) < np.exp(-np.logaddexp(0.0, -lin))
                draws = ew_sample_truncated(rng, theta_r.ew, ts, size=idx.size)
                y[idx] = np.where(m, draws, np.nan)
                sus[sus] = m
        cured = cz[~sus]
        eta[cured] = 0
        y[cured] = np.nan
    return PseudoSample(y, data.delta.copy(), data.x.copy(), eta)


def _as_sample(pseudo) -> PseudoSample:
    return pseudo if isinstance(pseudo, PseudoSample) else PseudoSample.from_records(list(pseudo))


def pseudo_complete_loglik(theta: Theta, pseudo) -> float:
    """Complete-data log-likelihood of a pseudo sample.

    Susceptible records contribute ``x'beta - log(1 + e^{x'beta}) + log f(y*)``;
    cured records contribute ``-log(1 + e^{x'beta})``.
    """
    ps = _as_sample(pseudo)
    lin = ps.design @ theta.beta
    soft = np.logaddexp(0.0, lin)
    sus = ps.eta == 1
    with np.errstate(all="ignore"):
        total = float(np.sum(lin[sus]) - np.sum(soft))
        if np.any(sus):
            total += float(np.sum(ew_logpdf(ps.y[sus], theta.ew)))
    return total if np.isfinite(total) else INFEASIBLE


def sem_m_step(theta_prev: Theta, pseudo, fixed=None, cfg: OptimConfig | None = None) -> Theta:
    """Blockwise maximizer of ``pseudo_complete_loglik``, warm-started at ``theta_prev``."""
    ps = _as_sample(pseudo)
    beta = _mstep.fit_logistic(ps.design, ps.eta.astype(float), theta_prev.beta)
    log_y = np.ascontiguousarray(np.log(ps.y[ps.eta == 1]))
    if log_y.size == 0:
        raise DegenerateTruncationError("no susceptible records in the pseudo sample")
    ew = _mstep.maximize_ew_complete(_mstep.impose(theta_prev.ew, fixed), log_y, fixed, cfg)
    return Theta(beta, ew)


@dataclass
class SemChain:
    """Iterates 1..R with their observed log-likelihoods."""

    names: list
    thetas: np.ndarray
    logliks: np.ndarray

    def __len__(self):
        return self.logliks.size

    def header(self):
        return ["iter", *self.names, "loglik"]

    def rows(self):
        for r in range(len(self)):
            yield [r + 1, *self.thetas[r], self.logliks[r]]


@dataclass
class SemResult:
    theta: Theta
    chain: SemChain
    divergent: bool
    reason: str
    selected_iteration: int | None
    loglik: float
    em: EmResult | None = None

    @property
    def converged(self) -> bool:
        return not self.divergent


def fit_sem(data: Dataset, start: Theta, cfg: SemConfig | None = None, fixed=None,
            rng: np.random.Generator | None = None) -> SemResult:
    """Run ``cfg.total_iters`` S- and M-steps from ``start`` and select an estimate.

    ``rng`` overrides ``cfg.seed``. ``selected_iteration`` is 1-based and is
    ``None`` for the averaged estimate.
    """
    cfg = cfg or SemConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    theta = Theta(start.beta, _mstep.impose(start.ew, fixed))
    names = theta.names()
    R = cfg.total_iters
    thetas = np.full((R, len(names)), np.nan)
    logliks = np.full(R, INFEASIBLE)
    reason = divergence_reason(theta, observed_loglik(theta, data))
    done = 0
    if reason:
        reason = "start: " + reason
    else:
        for r in range(R):
            try:
                pseudo = s_step(rng, theta, data, cfg.scheme)
                theta = sem_m_step(theta, pseudo, fixed, cfg.optim)
            except (CuresemError, ValueError) as exc:
                reason = f"iteration {r + 1} failed: {exc}"
                break
            thetas[r] = theta.vector
            logliks[r] = observed_loglik(theta, data)
            done = r + 1
            if r >= cfg.burn_in:
                bad = divergence_reason(theta, logliks[r])
                if bad:
                    reason = f"iteration {r + 1}: {bad}"
                    break
    chain = SemChain(names, thetas[:done], logliks[:done])
    if reason:
        last = Theta.from_vector(thetas[done - 1]) if done else theta
        return SemResult(last, chain, True, reason, done or None, observed_loglik(last, data))

    post = slice(cfg.burn_in, R)
    if cfg.selection is Selection.POST_BURNIN_AVERAGE:
        est = Theta.from_vector(np.mean(thetas[post], axis=0))
        ll = observed_loglik(est, data)
        bad = divergence_reason(est, ll)
        return SemResult(est, chain, bool(bad), bad, None, ll)
    if cfg.selection is Selection.MAX_LOGLIK:
        j = cfg.burn_in + int(np.argmax(logliks[post]))
        return SemResult(Theta.from_vector(thetas[j]), chain, False, "", j + 1, float(logliks[j]))
    window = slice(0, cfg.burn_in) if cfg.burn_in > 0 else slice(0, R)
    j = int(np.argmax(logliks[window]))
    em = fit_em(data, Theta.from_vector(thetas[j]), cfg.em, fixed)
    return SemResult(em.theta, chain, em.divergent, em.reason, j + 1, em.loglik, em)
