"""Dataset ingestion, Kaplan-Meier estimation and starting values from data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _mstep
from .errors import DataFormatError, DomainError, InitialValueError
from .ew import EwParams
from .model import Dataset, Theta, observed_loglik
from .simulation import solve_betas

__all__ = [
    "read_dataset",
    "KmCurve",
    "kaplan_meier",
    "InitPolicyResult",
    "psi_transform",
    "initial_values",
]

COLUMNS = ("time", "delta", "group")


def _data_lines(fh):
    for lineno, line in enumerate(fh, start=1):
        if line.lstrip().startswith("#") or not line.strip():
            continue
        yield lineno, line


def read_dataset(path) -> Dataset:
    """Read a ``time,delta,group`` CSV file.

    Lines starting with ``#`` are comments. Rows whose group cell is empty are
    dropped and counted in ``Dataset.n_dropped``; any other malformed row
    raises ``DataFormatError`` with its line number.
    """
    t, delta, x = [], [], []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        lines = list(_data_lines(fh))
    if not lines:
        raise DataFormatError("file has no header row")
    numbers = [n for n, _ in lines]
    reader = csv.reader(line for _, line in lines)
    header = [h.strip().lower() for h in next(reader)]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise DataFormatError(f"missing column(s) {', '.join(missing)}", numbers[0])
    col = {c: header.index(c) for c in COLUMNS}
    for lineno, row in zip(numbers[1:], reader):
        if len(row) < len(header):
            raise DataFormatError(f"expected {len(header)} fields, found {len(row)}", lineno)
        cells = {c: row[i].strip() for c, i in col.items()}
        if cells["group"] == "":
            dropped += 1
            continue
        try:
            ti = float(cells["time"])
        except ValueError:
            raise DataFormatError(f"time {cells['time']!r} is not a number", lineno) from None
        if not (ti > 0 and math.isfinite(ti)):
            raise DataFormatError(f"time must be positive and finite, got {cells['time']}", lineno)
        try:
            di = float(cells["delta"])
        except ValueError:
            raise DataFormatError(f"delta {cells['delta']!r} is not a number", lineno) from None
        if di not in (0.0, 1.0):
            raise DataFormatError(f"delta must be 0 or 1, got {cells['delta']}", lineno)
        try:
            xi = float(cells["group"])
        except ValueError:
            raise DataFormatError(f"group {cells['group']!r} is not a number", lineno) from None
        t.append(ti)
        delta.append(int(di))
        x.append(xi)
    if not t:
        raise DataFormatError("no usable records")
    return Dataset(t, delta, np.array(x).reshape(-1, 1), ("group",), dropped)


@dataclass(frozen=True)
class KmCurve:
    """Product-limit estimate at the distinct event times.

    ``group`` is the stratum label, or None for the pooled curve.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    group: float | None = None

    def __call__(self, t, left: bool = False):
        """Step-function value at ``t``; ``left`` gives the value just before ``t``."""
        t = np.asarray(t, dtype=float)
        side = "left" if left else "right"
        idx = np.searchsorted(self.times, t, side=side)
        surv = np.concatenate([[1.0], self.survival])
        out = surv[idx]
        return float(out) if out.ndim == 0 else out


def _product_limit(t, delta, group=None) -> KmCurve:
    times = np.unique(t[delta == 1])
    at_risk = np.array([np.sum(t >= s) for s in times], dtype=float)
    events = np.array([np.sum((t == s) & (delta == 1)) for s in times], dtype=float)
    surv = np.cumprod(1.0 - events / at_risk) if times.size else np.zeros(0)
    return KmCurve(times, surv, at_risk, events, group)


def kaplan_meier(data: Dataset, stratify: bool = False):
    """Pooled curve, or a list of per-group curves (sorted by group) with ``stratify``.

    Tied event times are handled together; censorings tied with an event count
    as still at risk at that time.
    """
    if not stratify:
        return _product_limit(data.t, data.delta)
    if data.d != 1:
        raise DomainError("stratification needs a single group covariate")
    g = data.x[:, 0]
    return [_product_limit(data.t[g == v], data.delta[g == v], float(v)) for v in np.unique(g)]


@dataclass(frozen=True)
class InitPolicyResult:
    theta0: Theta
    c1: float
    c4: float
    alpha0: float
    slope: float
    intercept: float
    n_points: int
    k0: float
    lambda0: float


def _km_at_events(data: Dataset, stratify: bool) -> np.ndarray:
    ev = data.events
    if not stratify:
        return np.asarray(kaplan_meier(data)(data.t[ev], left=True))
    out = np.empty(int(ev.sum()))
    g = data.x[ev, 0]
    te = data.t[ev]
    for curve in kaplan_meier(data, stratify=True):
        m = g == curve.group
        out[m] = curve(te[m], left=True)
    return out


def psi_transform(survival, alpha0: float):
    """``log(-log(1 - (1 - S)^(1/alpha0)))``; linear in ``log t`` with slope ``k`` for exact EW survival.

    Undefined (NaN or infinite) where ``S`` is 0 or 1.
    """
    s = np.asarray(survival, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(-np.log1p(-np.power(1.0 - s, 1.0 / alpha0)))


def initial_values(data: Dataset, alpha0: float = 2.0, c1: float | None = None,
                   c4: float | None = None, stratify: bool = False) -> InitPolicyResult:
    """Two-step starting values from data.

    Regression coefficients solve ``pi0 = c1`` at the lowest group and
    ``pi0 = c4`` at the highest, by default the two groups' censoring
    proportions. For the lifetime, ``psi = log(-log(1 - (1 - S_km)^(1/alpha0)))``
    at the event times is regressed on ``log t``, giving slope ``k0`` and
    intercept ``-k0 log lambda0``; an EW fit to the event times started at
    ``(alpha0, k0, lambda0)`` then gives the lifetime start.
    """
    if alpha0 <= 0:
        raise InitialValueError("alpha0 must be positive")
    if data.d != 1:
        raise InitialValueError("the heuristic needs a single group covariate")
    if int(data.events.sum()) < 3:
        raise InitialValueError("need at least 3 uncensored records")
    g = data.x[:, 0]
    lo, hi = g.min(), g.max()
    if lo == hi:
        raise InitialValueError("need at least two distinct groups")
    if c1 is None:
        c1 = float(np.mean(data.delta[g == lo] == 0))
    if c4 is None:
        c4 = float(np.mean(data.delta[g == hi] == 0))
    if not (0 < c4 < c1 < 1):
        raise InitialValueError(
            f"cure guesses must satisfy 0 < c4 < c1 < 1, got c1={c1:.3f}, c4={c4:.3f}"
        )
    beta = solve_betas(c1, c4, lo, hi)

    s_hat = _km_at_events(data, stratify)
    t_ev = data.t[data.events]
    psi = psi_transform(s_hat, alpha0)
    ok = np.isfinite(psi)
    if np.unique(t_ev[ok]).size < 2:
        raise InitialValueError("fewer than 2 event times give a defined transform")
    slope, intercept = np.polyfit(np.log(t_ev[ok]), psi[ok], 1)
    if not slope > 0:
        raise InitialValueError(f"non-positive shape from the regression (slope {slope:.4g})")
    k0 = float(slope)
    lam0 = float(math.exp(-intercept / slope))
    start = EwParams(alpha0, k0, lam0)
    ew = _mstep.maximize_ew_complete(start, np.log(t_ev), profile=False)
    theta0 = Theta(beta, ew)
    if observed_loglik(theta0, data) <= -1e300:
        theta0 = Theta(beta, start)
    return InitPolicyResult(theta0, c1, c4, alpha0, float(slope), float(intercept),
                            int(ok.sum()), k0, lam0)
