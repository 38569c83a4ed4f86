"""Monte Carlo harness: designs, data generation and study summaries.

Covariates are group labels ``x = 1..4``. Regression coefficients follow from
the cure rates fixed for the first and last group, and each group's
exponential censoring rate is solved so the expected censoring proportion
matches its target.
"""

from __future__ import annotations

import enum
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.optimize import bisect

from .em import EmConfig, fit_em
from .errors import ConfigError, DomainError, NonConvergenceError
from .ew import EwParams, ew_sample
from .inference import SubModel, fit_submodel, lrt, summarize_fit
from .model import Dataset, Theta, cure_rate
from .sem import SemConfig, fit_sem

__all__ = [
    "GROUPS",
    "SETTINGS",
    "CURE_LEVELS",
    "InitPolicy",
    "OutlierSpec",
    "SimDesign",
    "ReplicateFit",
    "MetricRow",
    "McSummary",
    "StudyConfig",
    "solve_betas",
    "implied_cure_rates",
    "solve_gamma",
    "group_sizes",
    "generate_dataset",
    "initial_theta",
    "run_mc_study",
    "run_mc_studies",
    "run_robust_initials",
    "run_outlier_study",
    "run_discrimination_study",
    "load_design",
]

GROUPS = (1.0, 2.0, 3.0, 4.0)

# lifetime settings (alpha, k, lambda)
SETTINGS = {
    1: EwParams(2.0, 1.0, 1.5),
    2: EwParams(1.0, 2.0, 1.5),
    3: EwParams(1.0, 1.5, 0.5),
}

# (pi01, pi04) and per-group censoring proportions
CURE_LEVELS = {
    "low": ((0.40, 0.10), (0.50, 0.40, 0.30, 0.20)),
    "high": ((0.50, 0.20), (0.65, 0.50, 0.40, 0.30)),
}

GAMMA_BRACKET = (1e-8, 1e8)


def _logit_odds(p):
    return math.log(1.0 / p - 1.0)


def solve_betas(pi01: float, pi04: float, x_first: float = 1.0, x_last: float = 4.0):
    """Coefficients giving cure rates ``pi01`` at ``x_first`` and ``pi04`` at ``x_last``."""
    if not (0 < pi04 <= pi01 < 1):
        raise DomainError("cure rates must satisfy 0 < pi04 <= pi01 < 1")
    b1 = (_logit_odds(pi04) - _logit_odds(pi01)) / (x_last - x_first)
    b0 = _logit_odds(pi01) - b1 * x_first
    return b0, b1


def implied_cure_rates(beta0: float, beta1: float, groups=GROUPS) -> tuple:
    return tuple(float(1.0 / (1.0 + math.exp(beta0 + beta1 * x))) for x in groups)


def _exposure(gamma: float, ew: EwParams) -> float:
    # E[S(C)] for C ~ Exp(gamma), after substituting u = gamma * x
    a, k, lam = ew.as_tuple()

    def integrand(u):
        if u <= 0:
            return 1.0
        z = (u / (gamma * lam)) ** k
        log_fw = math.log(-math.expm1(-z)) if z < 0.6931471805599453 else math.log1p(-math.exp(-z))
        return -math.expm1(a * log_fw) * math.exp(-u)

    val, _ = quad(integrand, 0.0, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def solve_gamma(p: float, pi0: float, ew: EwParams) -> float:
    """Exponential censoring rate with expected censoring proportion ``p``.

    Solves ``p = pi0 + (1 - pi0) * E[S(C)]``, ``C ~ Exp(gamma)``, by bisection
    on ``log gamma``.
    """
    if not (0 < pi0 < p < 1):
        raise DomainError("need 0 < pi0 < p < 1 for a censoring rate to exist")
    target = (p - pi0) / (1.0 - pi0)
    lo, hi = (math.log(g) for g in GAMMA_BRACKET)

    def gap(lg):
        return _exposure(math.exp(lg), ew) - target

    if gap(lo) > 0 or gap(hi) < 0:
        raise NonConvergenceError(
            f"no censoring rate in {GAMMA_BRACKET} gives censoring proportion {p}"
        )
    return math.exp(bisect(gap, lo, hi, xtol=1e-11, rtol=4 * np.finfo(float).eps, maxiter=200))


class InitPolicy(enum.Enum):
    NEAR_TRUE = "near"
    FAR = "far"


@dataclass(frozen=True)
class OutlierSpec:
    fraction: float = 0.05
    pi01: float = 0.40
    pi04: float = 0.10
    censoring: tuple = (0.50, 0.40, 0.30, 0.20)
    ew: EwParams = EwParams(1.0, 0.3, 1.0)


@dataclass(frozen=True)
class SimDesign:
    n: int = 400
    pi01: float = 0.40
    pi04: float = 0.10
    censoring: tuple = (0.50, 0.40, 0.30, 0.20)
    ew: EwParams = SETTINGS[1]
    replicates: int = 100
    seed: int = 2024
    init_policy: InitPolicy = InitPolicy.NEAR_TRUE
    outliers: OutlierSpec | None = None
    sizes: tuple | None = None
    name: str = "design"

    def problems(self) -> list[str]:
        """Human-readable validation failures; empty when the design is usable."""
        out = []
        if self.n < len(GROUPS):
            out.append(f"n: must be at least {len(GROUPS)}")
        if self.replicates < 0:
            out.append("replicates: must be nonnegative")
        if not (0 < self.pi04 < self.pi01 < 1):
            out.append("pi01/pi04: need 0 < pi04 < pi01 < 1")
        if len(self.censoring) != len(GROUPS):
            out.append(f"censoring: need {len(GROUPS)} proportions")
        elif not out:
            for j, (p, pi0) in enumerate(zip(self.censoring, self.true_cure_rates)):
                if not (pi0 < p < 1):
                    out.append(
                        f"censoring[{j}]: proportion {p} must exceed the cure rate "
                        f"{pi0:.3f} (censoring-rate equation has no root otherwise)"
                    )
        if self.sizes is not None and (len(self.sizes) != len(GROUPS) or sum(self.sizes) != self.n):
            out.append("sizes: need one size per group summing to n")
        if self.outliers is not None:
            o = self.outliers
            if not (0 <= o.fraction < 1):
                out.append("outliers.fraction: must lie in [0, 1)")
            if not (0 < o.pi04 < o.pi01 < 1):
                out.append("outliers.pi01/pi04: need 0 < pi04 < pi01 < 1")
            else:
                rates = implied_cure_rates(*solve_betas(o.pi01, o.pi04))
                for j, (p, pi0) in enumerate(zip(o.censoring, rates)):
                    if not (pi0 < p < 1):
                        out.append(f"outliers.censoring[{j}]: must exceed the cure rate {pi0:.3f}")
        return out

    def validate(self) -> "SimDesign":
        probs = self.problems()
        if probs:
            raise ConfigError(probs)
        return self

    @property
    def beta(self) -> tuple:
        return solve_betas(self.pi01, self.pi04)

    @property
    def true_theta(self) -> Theta:
        return Theta(self.beta, self.ew)

    @property
    def true_cure_rates(self) -> tuple:
        return implied_cure_rates(*self.beta)

    def gammas(self) -> tuple:
        return tuple(solve_gamma(p, pi0, self.ew)
                     for p, pi0 in zip(self.censoring, self.true_cure_rates))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ew"] = {"alpha": self.ew.alpha, "k": self.ew.k, "lambda": self.ew.lam}
        d["init_policy"] = self.init_policy.value
        if self.outliers is not None:
            o = self.outliers
            d["outliers"]["ew"] = {"alpha": o.ew.alpha, "k": o.ew.k, "lambda": o.ew.lam}
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "SimDesign":
        raw = dict(raw)
        problems = []
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known - {"setting", "cure", "study"}
        problems += [f"{k}: unknown field" for k in sorted(extra)]
        kwargs = {k: v for k, v in raw.items() if k in known}
        try:
            if "setting" in raw:
                kwargs.setdefault("ew", SETTINGS[int(raw["setting"])])
            if "cure" in raw:
                (p1, p4), cens = CURE_LEVELS[str(raw["cure"]).lower()]
                kwargs.setdefault("pi01", p1)
                kwargs.setdefault("pi04", p4)
                kwargs.setdefault("censoring", cens)
        except (KeyError, ValueError) as exc:
            problems.append(f"setting/cure: unknown value {exc}")
        try:
            if isinstance(kwargs.get("ew"), dict):
                kwargs["ew"] = _ew_from_dict(kwargs["ew"])
            if "init_policy" in kwargs:
                kwargs["init_policy"] = InitPolicy(kwargs["init_policy"])
            if isinstance(kwargs.get("outliers"), dict):
                o = dict(kwargs["outliers"])
                if isinstance(o.get("ew"), dict):
                    o["ew"] = _ew_from_dict(o["ew"])
                if "censoring" in o:
                    o["censoring"] = tuple(o["censoring"])
                kwargs["outliers"] = OutlierSpec(**o)
            for key in ("censoring", "sizes"):
                if kwargs.get(key) is not None:
                    kwargs[key] = tuple(kwargs[key])
        except (TypeError, ValueError, DomainError) as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError(problems)
        try:
            design = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError([str(exc)]) from exc
        return design.validate()


def _ew_from_dict(d: dict) -> EwParams:
    try:
        return EwParams(float(d["alpha"]), float(d["k"]), float(d["lambda"]))
    except KeyError as exc:
        raise ValueError(f"ew: missing {exc.args[0]}") from exc


def load_design(path) -> SimDesign:
    """Read a JSON study file into a validated design."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return SimDesign.from_dict(raw)


def group_sizes(n: int, sizes=None) -> tuple:
    """Equal group sizes with the remainder assigned round-robin from group 1."""
    if sizes is not None:
        return tuple(int(s) for s in sizes)
    g = len(GROUPS)
    return tuple(n // g + (1 if j < n % g else 0) for j in range(g))


def _draw_block(rng, x, pi0, gamma, ew):
    m = x.size
    susceptible = rng.random(m) < 1.0 - pi0
    c = rng.exponential(1.0 / gamma)
    y = np.asarray(ew_sample(rng, ew, m))
    t = np.where(susceptible, np.minimum(y, c), c)
    delta = (susceptible & (y <= c)).astype(np.int8)
    return t, delta


def generate_dataset(design: SimDesign, rng: np.random.Generator, gammas=None) -> Dataset:
    """One simulated sample.

    Each record draws its cure status, an exponential censoring time and an EW
    lifetime; cured records are censored at ``C``, susceptible ones observe
    ``min(Y, C)``. With outliers configured, a random subset of
    ``round(fraction * n)`` records is drawn from the outlier setting instead.
    """
    sizes = group_sizes(design.n, design.sizes)
    x = np.repeat(np.array(GROUPS), sizes)
    gam = np.asarray(design.gammas() if gammas is None else gammas)
    gidx = np.repeat(np.arange(len(GROUPS)), sizes)
    pi0 = np.asarray(design.true_cure_rates)[gidx]
    t, delta = _draw_block(rng, x, pi0, gam[gidx], design.ew)
    o = design.outliers
    if o is not None and o.fraction > 0:
        n_out = int(round(o.fraction * design.n))
        pick = np.sort(rng.choice(design.n, size=n_out, replace=False))
        o_rates = np.asarray(implied_cure_rates(*solve_betas(o.pi01, o.pi04)))
        o_gam = np.array([solve_gamma(p, r, o.ew) for p, r in zip(o.censoring, o_rates)])
        gi = gidx[pick]
        t[pick], delta[pick] = _draw_block(rng, x[pick], o_rates[gi], o_gam[gi], o.ew)
    return Dataset(t, delta, x)


def initial_theta(truth: Theta, policy: InitPolicy, rng: np.random.Generator) -> Theta:
    """Perturbed start: within 10% of the truth, or 50-75% away from it."""
    vec = truth.vector
    while True:
        if InitPolicy(policy) is InitPolicy.NEAR_TRUE:
            factor = rng.uniform(0.9, 1.1, vec.size)
        else:
            factor = 1.0 + rng.choice([-1.0, 1.0], vec.size) * rng.uniform(0.5, 0.75, vec.size)
        cand = vec * factor
        if np.all(cand[-3:] > 0):
            return Theta.from_vector(cand)


@dataclass(frozen=True)
class StudyConfig:
    em: EmConfig = field(default_factory=EmConfig)
    sem: SemConfig = field(default_factory=SemConfig)
    workers: int | None = None


@dataclass
class ReplicateFit:
    """Per-replicate record for one engine; arrays cover (params..., cure rates...)."""

    replicate: int
    divergent: bool
    reason: str
    estimate: np.ndarray
    se: np.ndarray
    hit90: np.ndarray
    hit95: np.ndarray


def _replicate_streams(seed: int, k: int):
    ss = np.random.SeedSequence(seed + k)
    data_ss, init_ss, sem_ss = ss.spawn(3)
    return (np.random.default_rng(data_ss), np.random.default_rng(init_ss),
            np.random.default_rng(sem_ss))


def _truth_vector(design: SimDesign) -> np.ndarray:
    return np.concatenate([design.true_theta.vector, design.true_cure_rates])


def _evaluate(data, design, engine, start, cfg: StudyConfig, sem_rng, k) -> ReplicateFit:
    p = len(design.true_theta.vector) + len(GROUPS)
    nan = np.full(p, np.nan)
    if engine == "em":
        out = fit_em(data, start, cfg.em)
        theta, div, why, ll = out.theta, out.divergent, out.reason, out.loglik
    elif engine == "sem":
        out = fit_sem(data, start, cfg.sem, rng=sem_rng)
        theta, div, why, ll = out.theta, out.divergent, out.reason, out.loglik
    else:
        raise ValueError(f"unknown engine {engine!r}")
    est = np.concatenate([theta.vector, [cure_rate(theta, [x]) for x in GROUPS]])
    if div:
        return ReplicateFit(k, True, why, est, nan, nan, nan)
    fit = summarize_fit(data, theta, SubModel.EW, engine, loglik=ll,
                        groups=np.array(GROUPS).reshape(-1, 1))
    if not fit.has_uncertainty:
        return ReplicateFit(k, True, fit.reason, est, nan, nan, nan)
    truth = _truth_vector(design)
    se = np.concatenate([fit.ci95.se, [c.se for c in fit.cure_rates]])
    lo90 = np.concatenate([fit.ci90.lower, [c.ci90[0] for c in fit.cure_rates]])
    hi90 = np.concatenate([fit.ci90.upper, [c.ci90[1] for c in fit.cure_rates]])
    lo95 = np.concatenate([fit.ci95.lower, [c.ci95[0] for c in fit.cure_rates]])
    hi95 = np.concatenate([fit.ci95.upper, [c.ci95[1] for c in fit.cure_rates]])
    return ReplicateFit(k, False, "", est, se,
                        (lo90 <= truth) & (truth <= hi90), (lo95 <= truth) & (truth <= hi95))


def _run_replicate(args):
    design, engines, cfg, k, gammas = args
    data_rng, init_rng, sem_rng = _replicate_streams(design.seed, k)
    data = generate_dataset(design, data_rng, gammas)
    start = initial_theta(design.true_theta, design.init_policy, init_rng)
    return {e: _evaluate(data, design, e, start, cfg, sem_rng, k) for e in engines}


@dataclass(frozen=True)
class MetricRow:
    name: str
    truth: float
    mean: float
    sd: float
    mean_se: float
    bias: float
    rmse: float
    cp90: float
    cp95: float


@dataclass
class McSummary:
    engine: str
    design: SimDesign
    replicates: list
    rows: list

    @property
    def n_replicates(self) -> int:
        return len(self.replicates)

    @property
    def n_converged(self) -> int:
        return sum(not r.divergent for r in self.replicates)

    @property
    def divergence_pct(self) -> float:
        if not self.replicates:
            return 100.0
        return 100.0 * (self.n_replicates - self.n_converged) / self.n_replicates

    def row(self, name: str) -> MetricRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def estimates(self) -> np.ndarray:
        """Replicate-by-quantity matrix with NaN rows for divergent replicates."""
        p = len(self.rows)
        out = np.full((self.n_replicates, p), np.nan)
        for i, r in enumerate(self.replicates):
            if not r.divergent:
                out[i] = r.estimate
        return out

    @staticmethod
    def header() -> list:
        return ["engine", "quantity", "truth", "mean", "sd", "mean_se", "bias", "rmse",
                "cp90", "cp95", "n_converged", "divergence_pct"]

    def table_rows(self) -> list:
        return [[self.engine, r.name, r.truth, r.mean, r.sd, r.mean_se, r.bias, r.rmse,
                 r.cp90, r.cp95, self.n_converged, self.divergence_pct] for r in self.rows]


def _quantity_names(design: SimDesign) -> list:
    return design.true_theta.names() + [f"pi0{j + 1}" for j in range(len(GROUPS))]


def summarize_replicates(design: SimDesign, engine: str, fits: list) -> McSummary:
    names = _quantity_names(design)
    truth = _truth_vector(design)
    ok = [f for f in fits if not f.divergent]
    rows = []
    for j, name in enumerate(names):
        if not ok:
            rows.append(MetricRow(name, truth[j], *([float("nan")] * 7)))
            continue
        est = np.array([f.estimate[j] for f in ok])
        err = est - truth[j]
        rows.append(MetricRow(
            name, float(truth[j]), float(est.mean()),
            float(est.std(ddof=1)) if est.size > 1 else float("nan"),
            float(np.mean([f.se[j] for f in ok])),
            float(err.mean()), float(np.sqrt(np.mean(err ** 2))),
            float(np.mean([f.hit90[j] for f in ok])),
            float(np.mean([f.hit95[j] for f in ok])),
        ))
    return McSummary(engine, design, list(fits), rows)


def _workers(cfg: StudyConfig) -> int:
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    cap = os.environ.get("CURESEM_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError([f"CURESEM_THREADS: not an integer ({cap!r})"])
    return n


def run_mc_studies(design: SimDesign, engines=("sem", "em"),
                   cfg: StudyConfig | None = None) -> dict:
    """Fit every replicate with each engine on the same data and starting values."""
    cfg = cfg or StudyConfig()
    design.validate()
    engines = tuple(engines)
    gammas = design.gammas()
    jobs = [(design, engines, cfg, k, gammas) for k in range(design.replicates)]
    workers = min(_workers(cfg), max(1, len(jobs)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replicate, jobs))
    else:
        results = [_run_replicate(j) for j in jobs]
    return {e: summarize_replicates(design, e, [r[e] for r in results]) for e in engines}


def run_mc_study(design: SimDesign, engine: str = "sem", cfg: StudyConfig | None = None) -> McSummary:
    return run_mc_studies(design, (engine,), cfg)[engine]


def run_robust_initials(design: SimDesign, cfg: StudyConfig | None = None) -> dict:
    """Both engines from identical far starting values; returns ``{engine: McSummary}``."""
    return run_mc_studies(replace(design, init_policy=InitPolicy.FAR), ("sem", "em"), cfg)


def run_outlier_study(design: SimDesign, outliers: OutlierSpec | None = None,
                      cfg: StudyConfig | None = None) -> dict:
    """Contaminated samples scored against the uncontaminated truth."""
    if outliers is not None:
        design = replace(design, outliers=outliers)
    elif design.outliers is None:
        design = replace(design, outliers=OutlierSpec())
    return run_mc_studies(design, ("sem", "em"), cfg)


# true lifetime models of the discrimination study: (alpha, k)
DISCRIMINATION_TRUTHS = {
    SubModel.EXPONENTIAL: (1.0, 1.0),
    SubModel.RAYLEIGH: (1.0, 2.0),
    SubModel.WEIBULL: (1.0, 1.5),
    SubModel.GENERALIZED_EXPONENTIAL: (2.0, 1.0),
    SubModel.BURR_X: (2.0, 2.0),
}


def _discrimination_replicate(args):
    design, truth, nulls, engine, cfg, k, gammas, level = args
    data_rng, init_rng, sem_rng = _replicate_streams(design.seed, k)
    data = generate_dataset(design, data_rng, gammas)
    start = initial_theta(design.true_theta, InitPolicy.NEAR_TRUE, init_rng)
    rngs = sem_rng.spawn(len(nulls) + 1)
    kw = dict(engine=engine, em_cfg=cfg.em, sem_cfg=cfg.sem, uncertainty=False)
    fits = {m: fit_submodel(data, m, start, rng=rngs[i + 1], **kw) for i, m in enumerate(nulls)}
    full = fit_submodel(data, SubModel.EW, start, rng=rngs[0], **kw)
    for m, f in fits.items():
        if f.divergent or full.divergent or f.loglik <= full.loglik:
            continue
        alt = fit_submodel(data, SubModel.EW, f.theta, rng=rngs[0], **kw)
        if not alt.divergent and (full.divergent or alt.loglik > full.loglik):
            full = alt
    out = {}
    for m, f in fits.items():
        if f.divergent or full.divergent:
            out[m] = None
        else:
            out[m] = lrt(full, f).p_value < level
    return out


def run_discrimination_study(n: int = 400, lam: float = 2.5, cure: str = "low",
                             replicates: int = 1000, seed: int = 2024, engine: str = "sem",
                             truths=None, nulls=None, level: float = 0.05,
                             cfg: StudyConfig | None = None) -> dict:
    """Likelihood-ratio rejection rates for each (true model, null model) pair.

    ``nulls`` maps each true model to the sub-models tested against EW (all
    five by default). Returns ``{true: {null: (rate, n_used)}}``; replicates
    where either fit diverges are left out of that pair's rate.
    """
    cfg = cfg or StudyConfig()
    truths = list(truths or DISCRIMINATION_TRUTHS)
    (p1, p4), cens = CURE_LEVELS[cure]
    out = {}
    for t in truths:
        a, k = DISCRIMINATION_TRUTHS[SubModel(t)]
        design = SimDesign(n=n, pi01=p1, pi04=p4, censoring=cens, ew=EwParams(a, k, lam),
                           replicates=replicates, seed=seed, name=f"lrt-{SubModel(t).value}")
        design.validate()
        tested = list((nulls or {}).get(t, [m for m in DISCRIMINATION_TRUTHS]))
        gammas = design.gammas()
        jobs = [(design, t, tested, engine, cfg, kk, gammas, level) for kk in range(replicates)]
        workers = min(_workers(cfg), max(1, len(jobs)))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                res = list(pool.map(_discrimination_replicate, jobs))
        else:
            res = [_discrimination_replicate(j) for j in jobs]
        out[SubModel(t)] = {}
        for m in tested:
            flags = [r[m] for r in res if r[m] is not None]
            rate = float(np.mean(flags)) if flags else float("nan")
            out[SubModel(t)][m] = (rate, len(flags))
    return out
