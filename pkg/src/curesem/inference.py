"""Standard errors, Wald and delta-method intervals, likelihood-ratio tests and AIC.

Uncertainty is taken from the numerical Hessian of the observed-data
log-likelihood, evaluated on the original parameter scale at the reported
estimate. Parameters pinned by a sub-model are excluded from the Hessian and
reported with zero standard error.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2, norm

from .em import EmConfig, fit_em
from .errors import DomainError, NestingError, SingularInformationError
from .ew import EwParams
from .model import Dataset, Theta, cure_rate, observed_loglik
from .optim import covariance_from_hessian, numeric_hessian
from .sem import SemConfig, fit_sem

__all__ = [
    "SubModel",
    "Intervals",
    "CureRateEstimate",
    "FitResult",
    "LrtResult",
    "aic",
    "observed_hessian",
    "wald_intervals",
    "cure_rate_ci",
    "summarize_fit",
    "fit_submodel",
    "fit_all_submodels",
    "lrt",
    "comparison_table",
]

NESTING_SLACK = 1e-6


class SubModel(enum.Enum):
    EW = "EW"
    EXPONENTIAL = "Exponential"
    RAYLEIGH = "Rayleigh"
    WEIBULL = "Weibull"
    GENERALIZED_EXPONENTIAL = "GE"
    BURR_X = "BurrX"

    @property
    def fixed(self) -> dict:
        return dict(_CONSTRAINTS[self])

    def free_ew(self) -> int:
        return 3 - len(_CONSTRAINTS[self])

    def q(self, d: int) -> int:
        """Number of free parameters with ``d`` covariates."""
        return d + 1 + self.free_ew()

    def constrain(self, ew: EwParams) -> EwParams:
        vals = dict(zip(("alpha", "k", "lambda"), ew.as_tuple()))
        vals.update(self.fixed)
        return EwParams(vals["alpha"], vals["k"], vals["lambda"])


_CONSTRAINTS = {
    SubModel.EW: {},
    SubModel.EXPONENTIAL: {"alpha": 1.0, "k": 1.0},
    SubModel.RAYLEIGH: {"alpha": 1.0, "k": 2.0},
    SubModel.WEIBULL: {"alpha": 1.0},
    SubModel.GENERALIZED_EXPONENTIAL: {"k": 1.0},
    SubModel.BURR_X: {"k": 2.0},
}


def aic(loglik: float, q: int) -> float:
    return -2.0 * loglik + 2.0 * q


@dataclass(frozen=True)
class Intervals:
    """Wald intervals; ``degenerate`` marks zero-variance coordinates."""

    estimate: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    degenerate: np.ndarray

    def __len__(self):
        return self.estimate.size

    def contains(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)


@dataclass(frozen=True)
class CureRateEstimate:
    x: tuple
    estimate: float
    se: float
    ci90: tuple
    ci95: tuple


def _free_mask(theta: Theta, fixed) -> np.ndarray:
    fixed = fixed or {}
    names = theta.names()
    return np.array([name not in fixed for name in names])


def observed_hessian(theta: Theta, data: Dataset, fixed=None) -> np.ndarray:
    """Hessian of the observed log-likelihood over the free parameters, original scale."""
    full = theta.vector
    free = _free_mask(theta, fixed)
    positive = np.zeros(full.size, dtype=bool)
    positive[-3:] = True

    def f(v):
        vec = full.copy()
        vec[free] = v
        if np.any(vec[-3:] <= 0):
            return -np.inf
        return observed_loglik(Theta.from_vector(vec), data)

    return numeric_hessian(f, full[free], positive=positive[free])


def _covariance(hessian=None, cov=None) -> np.ndarray:
    if cov is not None:
        return np.asarray(cov, dtype=float)
    if hessian is None:
        raise ValueError("either hessian or cov is required")
    return covariance_from_hessian(hessian)


def wald_intervals(estimate, hessian=None, level: float = 0.95, positive=None,
                   cov=None) -> Intervals:
    """``estimate +/- z sqrt(diag((-H)^-1))``, lower bounds of positive coordinates clipped at 0.

    A covariance matrix may be passed instead of the Hessian.
    """
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    est = np.asarray(estimate, dtype=float)
    var = np.diag(_covariance(hessian, cov)).copy()
    if np.any(var < -1e-12 * np.maximum(1.0, np.abs(est))):
        raise SingularInformationError("negative variance; information is not positive definite")
    var = np.maximum(var, 0.0)
    se = np.sqrt(var)
    half = norm.ppf(0.5 + level / 2.0) * se
    lower, upper = est - half, est + half
    if positive is not None:
        lower = np.where(np.asarray(positive, dtype=bool), np.maximum(lower, 0.0), lower)
    return Intervals(est, se, lower, upper, level, se == 0.0)


def cure_rate_ci(theta_hat: Theta, hessian=None, x=(), level: float = 0.95,
                 cov=None) -> tuple:
    """Delta-method ``(estimate, se, (lower, upper))`` for the cure rate at ``x``.

    The covariance's leading ``d + 1`` rows and columns must be the beta block.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pi0 = cure_rate(theta_hat, x)
    sigma = _covariance(hessian, cov)
    p = theta_hat.beta.size
    g = -pi0 * (1.0 - pi0) * np.concatenate([[1.0], x])
    var = float(g @ sigma[:p, :p] @ g)
    se = float(np.sqrt(max(var, 0.0)))
    half = norm.ppf(0.5 + level / 2.0) * se
    return pi0, se, (max(pi0 - half, 0.0), min(pi0 + half, 1.0))


@dataclass
class FitResult:
    model: SubModel
    theta: Theta
    loglik: float
    q: int
    engine: str
    divergent: bool = False
    reason: str = ""
    cov: np.ndarray | None = None
    ci90: Intervals | None = None
    ci95: Intervals | None = None
    cure_rates: list = field(default_factory=list)

    @property
    def aic(self) -> float:
        return aic(self.loglik, self.q)

    @property
    def se(self) -> np.ndarray:
        if self.ci95 is None:
            return np.full(self.theta.vector.size, np.nan)
        return self.ci95.se

    @property
    def has_uncertainty(self) -> bool:
        return self.ci95 is not None


def summarize_fit(data: Dataset, theta: Theta, model: SubModel = SubModel.EW,
                  engine: str = "em", divergent: bool = False, reason: str = "",
                  loglik: float | None = None, groups=None) -> FitResult:
    """Attach Hessian-based uncertainty to a point estimate.

    Pinned sub-model parameters get zero standard error and a point interval.
    A singular or non-finite Hessian leaves the intervals unset and records
    the reason.
    """
    ll = observed_loglik(theta, data) if loglik is None else loglik
    res = FitResult(model, theta, ll, model.q(theta.d), engine, divergent, reason)
    free = _free_mask(theta, model.fixed)
    try:
        cov_free = covariance_from_hessian(observed_hessian(theta, data, model.fixed))
    except (SingularInformationError, DomainError) as exc:
        res.reason = (reason + "; " if reason else "") + f"no standard errors: {exc}"
        return res
    p = free.size
    cov = np.zeros((p, p))
    cov[np.ix_(free, free)] = cov_free
    positive = np.zeros(p, dtype=bool)
    positive[-3:] = True
    try:
        res.ci90 = wald_intervals(theta.vector, level=0.90, positive=positive, cov=cov)
        res.ci95 = wald_intervals(theta.vector, level=0.95, positive=positive, cov=cov)
    except SingularInformationError as exc:
        res.reason = (reason + "; " if reason else "") + f"no standard errors: {exc}"
        return res
    res.cov = cov
    rows = data.groups() if groups is None else np.atleast_2d(np.asarray(groups, dtype=float))
    for x in rows:
        est, se, ci95 = cure_rate_ci(theta, x=x, level=0.95, cov=cov)
        _, _, ci90 = cure_rate_ci(theta, x=x, level=0.90, cov=cov)
        res.cure_rates.append(CureRateEstimate(tuple(x), est, se, ci90, ci95))
    return res


def fit_submodel(data: Dataset, tag: SubModel, start: Theta, engine: str = "em",
                 em_cfg: EmConfig | None = None, sem_cfg: SemConfig | None = None,
                 rng: np.random.Generator | None = None, uncertainty: bool = True) -> FitResult:
    """Fit with the sub-model's parameters pinned; only free parameters move."""
    tag = SubModel(tag)
    fixed = tag.fixed
    start = Theta(start.beta, tag.constrain(start.ew))
    if engine == "em":
        out = fit_em(data, start, em_cfg, fixed)
        theta, div, why, ll = out.theta, out.divergent, out.reason, out.loglik
    elif engine == "sem":
        out = fit_sem(data, start, sem_cfg, fixed, rng=rng)
        theta, div, why, ll = out.theta, out.divergent, out.reason, out.loglik
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if not uncertainty or div:
        return FitResult(tag, theta, ll, tag.q(theta.d), engine, div, why)
    return summarize_fit(data, theta, tag, engine, div, why, ll)


def fit_all_submodels(data: Dataset, start: Theta, engine: str = "em",
                      models=tuple(SubModel), em_cfg: EmConfig | None = None,
                      sem_cfg: SemConfig | None = None, seed: int | None = None,
                      uncertainty: bool = True) -> dict:
    """Fit every requested model; the EW fit is repeated from each sub-model optimum.

    The restart keeps the EW log-likelihood at or above every sub-model's, as
    nesting requires, even when the EW surface has several local maxima.
    """
    models = [SubModel(m) for m in models]
    rngs = np.random.default_rng(seed).spawn(2 * len(models))
    fits = {}
    for i, m in enumerate(models):
        fits[m] = fit_submodel(data, m, start, engine, em_cfg, sem_cfg, rngs[i], uncertainty=False)
    if SubModel.EW in fits:
        best = fits[SubModel.EW]
        for i, m in enumerate(models):
            sub = fits[m]
            if m is SubModel.EW or sub.divergent:
                continue
            if best.divergent or sub.loglik > best.loglik + NESTING_SLACK:
                alt = fit_submodel(data, SubModel.EW, sub.theta, engine, em_cfg, sem_cfg,
                                   rngs[len(models) + i], uncertainty=False)
                if not alt.divergent and (best.divergent or alt.loglik > best.loglik):
                    best = alt
        fits[SubModel.EW] = best
    if uncertainty:
        for m, f in fits.items():
            if not f.divergent:
                fits[m] = summarize_fit(data, f.theta, m, engine, False, f.reason, f.loglik)
    return fits


@dataclass(frozen=True)
class LrtResult:
    statistic: float
    df: int
    p_value: float


def lrt(full: FitResult, null: FitResult, q_star: int | None = None) -> LrtResult:
    """Wilks test of ``null`` within ``full``: ``Lambda = 2 (l_full - l_null)`` on ``q_star`` df."""
    if q_star is None:
        q_star = full.q - null.q
    if q_star < 1:
        raise NestingError("the null model must have fewer free parameters")
    if null.loglik > full.loglik + NESTING_SLACK:
        raise NestingError(
            f"null log-likelihood {null.loglik:.6f} exceeds full {full.loglik:.6f}"
        )
    stat = max(2.0 * (full.loglik - null.loglik), 0.0)
    return LrtResult(stat, int(q_star), float(chi2.sf(stat, q_star)))


def comparison_table(fits: dict) -> tuple[list, list]:
    """Header and rows of the model-comparison report, one row per model."""
    any_fit = next(iter(fits.values()))
    names = any_fit.theta.names()
    header = ["model", *names, *[f"se_{n}" for n in names], "loglik", "q", "aic",
              "lrt_stat", "df", "p_value", "status"]
    full = fits.get(SubModel.EW)
    rows = []
    for m, f in fits.items():
        stat = df = p = float("nan")
        status = "diverged: " + f.reason if f.divergent else (f.reason or "ok")
        if m is not SubModel.EW and full is not None and not full.divergent and not f.divergent:
            try:
                t = lrt(full, f)
                stat, df, p = t.statistic, t.df, t.p_value
            except NestingError as exc:
                status = str(exc)
        rows.append([m.value, *f.theta.vector, *f.se, f.loglik, f.q, f.aic, stat, df, p, status])
    return header, rows
