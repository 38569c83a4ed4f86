"""Bernoulli (mixture) cure-rate population model.

A fraction ``pi0(x) = 1 / (1 + exp(x'beta))`` of the population is immune; the
remainder has exponentiated-Weibull lifetimes. Covariates enter only through
the cure-rate link.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DomainError
from .ew import EwParams, ew_logpdf, ew_logsf

__all__ = [
    "Theta",
    "SurvivalRecord",
    "Dataset",
    "INFEASIBLE",
    "nu",
    "cure_rate",
    "pop_survival",
    "pop_density",
    "pop_log_survival",
    "pop_log_density",
    "observed_loglik",
    "loglik_terms",
]

# Returned by likelihood evaluations at infeasible parameters; keeps optimizer
# comparisons ordered where -inf or NaN would not.
INFEASIBLE = -1e308

EW_NAMES = ("alpha", "k", "lambda")


@dataclass(frozen=True)
class Theta:
    """Full parameter vector: regression coefficients (intercept first) and EW parameters."""

    beta: np.ndarray
    ew: EwParams

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if beta.size == 0 or not np.all(np.isfinite(beta)):
            raise DomainError("beta must be a nonempty finite vector")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def d(self) -> int:
        return self.beta.size - 1

    @property
    def vector(self) -> np.ndarray:
        """(beta_0..beta_d, alpha, k, lambda)."""
        return np.concatenate([self.beta, self.ew.as_tuple()])

    @classmethod
    def from_vector(cls, vec) -> "Theta":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:-3], EwParams(*vec[-3:]))

    def to_z(self) -> np.ndarray:
        """Unconstrained coordinates (beta, log alpha, log k, log lambda)."""
        return np.concatenate([self.beta, np.log(self.ew.as_tuple())])

    @classmethod
    def from_z(cls, z) -> "Theta":
        z = np.asarray(z, dtype=float)
        return cls(z[:-3], EwParams(*np.exp(z[-3:])))

    def names(self) -> list[str]:
        return [f"beta{j}" for j in range(self.beta.size)] + list(EW_NAMES)

    def __eq__(self, other):
        return isinstance(other, Theta) and np.array_equal(self.vector, other.vector)

    def __hash__(self):
        return hash(tuple(self.vector))


class SurvivalRecord(NamedTuple):
    t: float
    delta: int
    x: tuple


@dataclass(frozen=True)
class Dataset:
    """Immutable right-censored sample.

    ``x`` holds the covariates without the intercept column, shape (n, d).
    """

    t: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    covariate_names: tuple = ("group",)
    n_dropped: int = 0
    _design: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(-1)
        delta = np.array(self.delta).reshape(-1)
        x = np.array(self.x, dtype=float)
        if t.size == 0:
            raise DomainError("dataset must contain at least one record")
        if x.ndim == 1:
            x = x.reshape(t.size, -1)
        if x.shape[0] != t.size or delta.size != t.size:
            raise DomainError("t, delta and x must have the same number of rows")
        if np.any(~(t > 0)) or not np.all(np.isfinite(t)):
            raise DomainError("observed times must be positive and finite")
        if not np.all((delta == 0) | (delta == 1)):
            raise DomainError("delta must be 0 or 1")
        delta = delta.astype(np.int8)
        names = tuple(self.covariate_names)
        if len(names) != x.shape[1]:
            names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
        design = np.column_stack([np.ones(t.size), x])
        for arr in (t, delta, x, design):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "_design", design)

    @classmethod
    def from_records(cls, records: Sequence[SurvivalRecord], **kwargs) -> "Dataset":
        records = list(records)
        if not records:
            raise DomainError("dataset must contain at least one record")
        t = [r.t for r in records]
        delta = [r.delta for r in records]
        x = [tuple(np.atleast_1d(r.x)) for r in records]
        if len({len(row) for row in x}) != 1:
            raise DomainError("all records must share the covariate dimension")
        return cls(t, delta, np.array(x, dtype=float).reshape(len(records), -1), **kwargs)

    def __len__(self):
        return self.t.size

    def __iter__(self) -> Iterator[SurvivalRecord]:
        for i in range(self.t.size):
            yield SurvivalRecord(float(self.t[i]), int(self.delta[i]), tuple(self.x[i]))

    @property
    def records(self) -> list[SurvivalRecord]:
        return list(self)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def design(self) -> np.ndarray:
        """Covariates with a leading intercept column, shape (n, d + 1)."""
        return self._design

    @property
    def events(self) -> np.ndarray:
        return self.delta == 1

    @property
    def censored(self) -> np.ndarray:
        return self.delta == 0

    def groups(self) -> np.ndarray:
        """Distinct covariate rows in sorted order."""
        return np.unique(self.x, axis=0)

    def subset(self, mask) -> "Dataset":
        return Dataset(self.t[mask], self.delta[mask], self.x[mask], self.covariate_names)


def _linear_predictor(theta: Theta, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    scalar = x.ndim <= 1
    x2 = x.reshape(1, -1) if scalar else x
    if x2.shape[1] != theta.d:
        raise DomainError(
            f"covariate dimension {x2.shape[1]} does not match beta dimension {theta.d}"
        )
    eta = theta.beta[0] + x2 @ theta.beta[1:]
    return eta[0] if scalar else eta


def _out(value, scalar):
    return float(value) if scalar else value


def nu(theta: Theta, x):
    """``exp(beta_0 + sum_j beta_j x_j)``."""
    eta = _linear_predictor(theta, x)
    return _out(np.exp(eta), np.ndim(eta) == 0)


def cure_rate(theta: Theta, x):
    """Cure probability ``1 / (1 + nu)``."""
    eta = _linear_predictor(theta, x)
    return _out(np.exp(-np.logaddexp(0.0, eta)), np.ndim(eta) == 0)


def pop_log_survival(theta: Theta, t, x):
    eta = _linear_predictor(theta, x)
    log_s = np.asarray(ew_logsf(t, theta.ew))
    # S_p = (1 + nu S) / (1 + nu)
    out = np.logaddexp(0.0, eta + log_s) - np.logaddexp(0.0, eta)
    return _out(out, np.ndim(out) == 0)


def pop_survival(theta: Theta, t, x):
    """Population survival ``pi0 + (1 - pi0) S(t)``."""
    out = np.exp(pop_log_survival(theta, t, x))
    return _out(out, np.ndim(out) == 0)


def pop_log_density(theta: Theta, t, x):
    eta = _linear_predictor(theta, x)
    out = eta - np.logaddexp(0.0, eta) + np.asarray(ew_logpdf(t, theta.ew))
    return _out(out, np.ndim(out) == 0)


def pop_density(theta: Theta, t, x):
    """Population density ``(1 - pi0) f(t)``."""
    out = np.exp(pop_log_density(theta, t, x))
    return _out(out, np.ndim(out) == 0)


def loglik_terms(theta: Theta, data: Dataset) -> np.ndarray:
    """Per-record log-likelihood contributions (log density or log survival)."""
    eta = data.design @ theta.beta
    soft = np.logaddexp(0.0, eta)
    ev = data.events
    out = np.empty(data.n)
    out[ev] = eta[ev] - soft[ev] + ew_logpdf(data.t[ev], theta.ew)
    cz = ~ev
    out[cz] = np.logaddexp(0.0, eta[cz] + ew_logsf(data.t[cz], theta.ew)) - soft[cz]
    return out


def observed_loglik(theta: Theta, data: Dataset) -> float:
    """Observed-data log-likelihood with no additive constant.

    Returns ``INFEASIBLE`` when any contribution is not finite.
    """
    with np.errstate(all="ignore"):
        total = float(np.sum(loglik_terms(theta, data)))
    return total if np.isfinite(total) else INFEASIBLE
