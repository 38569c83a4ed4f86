"""CSV writers with reproducibility headers, and the report tables built on them."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .inference import FitResult
from .model import Theta, pop_survival

__all__ = [
    "config_hash",
    "write_csv",
    "fit_table",
    "survival_table",
    "km_table",
]


def config_hash(config) -> str:
    """Short SHA-256 digest of a JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def write_csv(path, header, rows, meta: dict) -> Path:
    """Write ``rows`` under ``# key: value`` comment lines; always records the version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = {"curesem_version": __version__, **meta}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for k, v in lines.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def fit_table(fit: FitResult):
    """Estimates, SEs and 90/95% intervals for parameters, then per-group cure rates."""
    header = ["quantity", "estimate", "se", "ci90_lower", "ci90_upper", "ci95_lower", "ci95_upper"]
    rows = []
    names = fit.theta.names()
    nan = float("nan")
    for j, name in enumerate(names):
        if fit.has_uncertainty:
            rows.append([name, fit.theta.vector[j], fit.ci95.se[j], fit.ci90.lower[j],
                         fit.ci90.upper[j], fit.ci95.lower[j], fit.ci95.upper[j]])
        else:
            rows.append([name, fit.theta.vector[j], nan, nan, nan, nan, nan])
    for c in fit.cure_rates:
        label = "pi0[" + ",".join(_fmt(v) for v in c.x) + "]"
        rows.append([label, c.estimate, c.se, *c.ci90, *c.ci95])
    rows.append(["loglik", fit.loglik, nan, nan, nan, nan, nan])
    rows.append(["aic", fit.aic, nan, nan, nan, nan, nan])
    return header, rows


def survival_table(theta: Theta, times, groups):
    """Population survival at each time for each covariate row."""
    times = np.unique(np.asarray(times, dtype=float))
    header = ["time", "group", "survival"]
    rows = []
    for x in np.atleast_2d(groups):
        s = np.atleast_1d(pop_survival(theta, times, np.tile(x, (times.size, 1))))
        label = ",".join(_fmt(v) for v in x)
        rows.extend([t, label, v] for t, v in zip(times, s))
    return header, rows


def km_table(curves):
    """``time,survival[,group]`` rows from one curve or a list of stratified curves."""
    if not isinstance(curves, (list, tuple)):
        return ["time", "survival"], [[t, s] for t, s in zip(curves.times, curves.survival)]
    rows = []
    for c in curves:
        rows.extend([t, s, c.group] for t, s in zip(c.times, c.survival))
    return ["time", "survival", "group"], rows
