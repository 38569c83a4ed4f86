"""Command-line interface.

Subcommands: ``fit``, ``discriminate``, ``simulate`` and ``gen-data``. Every
CSV written carries comment lines with the seed, a configuration hash and the
package version. Exit status is 0 on success, 2 for configuration or input
errors and 3 when an estimation run diverges.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import initial_values, kaplan_meier, read_dataset
from .em import EmConfig, fit_em
from .errors import ConfigError, CuresemError, DataFormatError, InitialValueError
from .ew import EwParams
from .inference import SubModel, comparison_table, fit_all_submodels, summarize_fit
from .output import config_hash, fit_table, km_table, survival_table, write_csv
from .sem import LifetimeScheme, SemConfig, Selection, fit_sem
from .simulation import (
    CURE_LEVELS,
    InitPolicy,
    SimDesign,
    StudyConfig,
    generate_dataset,
    run_discrimination_study,
    run_mc_studies,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

STUDIES = ("main", "initials", "outliers", "discrimination")


def _engine_args(p: argparse.ArgumentParser, engines=("em", "sem", "both"), default="both"):
    p.add_argument("--engine", choices=engines, default=default)
    p.add_argument("--seed", type=int, default=2024, help="base random seed (default 2024)")
    p.add_argument("--iters", type=int, default=1500, help="SEM iterations R (default 1500)")
    p.add_argument("--burn-in", type=int, default=500, help="SEM burn-in R* (default 500)")
    p.add_argument("--selection", choices=[s.value for s in Selection], default="maxloglik")
    p.add_argument("--scheme", choices=[s.value for s in LifetimeScheme], default="a")
    p.add_argument("--epsilon", type=float, default=0.001, help="EM tolerance (default 0.001)")
    p.add_argument("--max-iters", type=int, default=500, help="EM iteration cap (default 500)")
    p.add_argument("--out", default="curesem_out", help="output directory")


def _start_args(p: argparse.ArgumentParser):
    p.add_argument("--alpha0", type=float, default=2.0, help="alpha used by the start heuristic")
    p.add_argument("--c1", type=float, default=None,
                   help="cure guess for the lowest group (default: its censoring proportion)")
    p.add_argument("--c4", type=float, default=None,
                   help="cure guess for the highest group (default: its censoring proportion)")
    p.add_argument("--stratified-km", action="store_true",
                   help="use per-group Kaplan-Meier curves in the start heuristic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curesem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"curesem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the EW cure model to a time,delta,group CSV")
    p.add_argument("data")
    _engine_args(p)
    _start_args(p)

    p = sub.add_parser("discriminate", help="fit EW and its five sub-models; LRT and AIC")
    p.add_argument("data")
    _engine_args(p, ("em", "sem"), "em")
    _start_args(p)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    p.add_argument("config")
    _engine_args(p)
    p.add_argument("--study", choices=STUDIES, default=None,
                   help="study type (default: the config's 'study' field, else main)")
    p.add_argument("--replicates", type=int, default=None, help="override the config's count")

    p = sub.add_parser("gen-data", help="write one simulated dataset and its true parameters")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="default: the config's seed")
    p.add_argument("--out", default="simulated.csv", help="output CSV path")
    return parser


def _configs(args):
    em = EmConfig(epsilon=args.epsilon, max_iters=args.max_iters)
    try:
        sem = SemConfig(total_iters=args.iters, burn_in=args.burn_in,
                        selection=Selection(args.selection), scheme=LifetimeScheme(args.scheme),
                        seed=args.seed, em=em)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    return em, sem


def _run_meta(args, extra=None) -> dict:
    # the output location does not affect results
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "out"}
    if extra:
        cfg.update(extra)
    return {"seed": getattr(args, "seed", None), "config_hash": config_hash(cfg),
            "command": args.command}


def _engines(choice):
    return ("em", "sem") if choice == "both" else (choice,)


def cmd_fit(args) -> int:
    data = read_dataset(args.data)
    init = initial_values(data, args.alpha0, args.c1, args.c4, stratify=args.stratified_km)
    em_cfg, sem_cfg = _configs(args)
    out = Path(args.out)
    meta = _run_meta(args)
    meta["n_records"] = data.n
    meta["n_dropped"] = data.n_dropped
    meta["start"] = " ".join(format(v, ".6g") for v in init.theta0.vector)
    write_csv(out / "km.csv", *km_table(kaplan_meier(data, stratify=True)), meta)
    status = EXIT_OK
    for engine in _engines(args.engine):
        if engine == "em":
            res = fit_em(data, init.theta0, em_cfg)
            write_csv(out / "em_trace.csv", res.trace.header(), res.trace.rows(), meta)
        else:
            res = fit_sem(data, init.theta0, sem_cfg)
            write_csv(out / "sem_trace.csv", res.chain.header(), res.chain.rows(), meta)
        fit = summarize_fit(data, res.theta, SubModel.EW, engine, res.divergent, res.reason,
                            res.loglik)
        fmeta = {**meta, "engine": engine, "loglik": format(fit.loglik, ".6f"),
                 "aic": format(fit.aic, ".6f"), "status": fit.reason or "ok"}
        write_csv(out / f"fit_{engine}.csv", *fit_table(fit), fmeta)
        write_csv(out / f"survival_{engine}.csv",
                  *survival_table(fit.theta, data.t, data.groups()), fmeta)
        print(f"{engine}: loglik {fit.loglik:.3f}  AIC {fit.aic:.3f}  "
              + "  ".join(f"{n}={v:.4f}" for n, v in zip(fit.theta.names(), fit.theta.vector)))
        if res.divergent:
            print(f"{engine}: diverged ({res.reason})", file=sys.stderr)
            status = EXIT_DIVERGED
    return status


def cmd_discriminate(args) -> int:
    data = read_dataset(args.data)
    init = initial_values(data, args.alpha0, args.c1, args.c4, stratify=args.stratified_km)
    em_cfg, sem_cfg = _configs(args)
    fits = fit_all_submodels(data, init.theta0, args.engine, em_cfg=em_cfg, sem_cfg=sem_cfg,
                             seed=args.seed)
    header, rows = comparison_table(fits)
    write_csv(Path(args.out) / "discrimination.csv", header, rows, _run_meta(args))
    usable = {m: f for m, f in fits.items() if not f.divergent}
    for m, f in fits.items():
        state = "diverged" if f.divergent else f"loglik {f.loglik:.3f}  AIC {f.aic:.3f}"
        print(f"{m.value:>12}: {state}")
    if not usable:
        print("every model diverged", file=sys.stderr)
        return EXIT_DIVERGED
    best = min(usable.values(), key=lambda f: f.aic)
    print(f"best by AIC: {best.model.value}")
    return EXIT_OK


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return raw


DISCRIMINATION_FIELDS = {"n", "lambda", "cure", "replicates", "seed", "study", "name"}


def cmd_simulate(args) -> int:
    raw = _load_json(args.config)
    study = args.study or raw.get("study", "main")
    if study not in STUDIES:
        raise ConfigError([f"study: unknown study {study!r}"])
    if args.replicates is not None:
        raw["replicates"] = args.replicates
    em_cfg, sem_cfg = _configs(args)
    cfg = StudyConfig(em=em_cfg, sem=sem_cfg)
    out = Path(args.out)
    meta = {"seed": raw.get("seed"), "config_hash": config_hash({"config": raw, "study": study,
            "iters": args.iters, "burn_in": args.burn_in, "selection": args.selection,
            "scheme": args.scheme, "epsilon": args.epsilon, "max_iters": args.max_iters}),
            "study": study}

    if study == "discrimination":
        extra = set(raw) - DISCRIMINATION_FIELDS
        if extra:
            raise ConfigError([f"{k}: unknown field" for k in sorted(extra)])
        engine = "em" if args.engine == "both" else args.engine
        cure = str(raw.get("cure", "low")).lower()
        if cure not in CURE_LEVELS:
            raise ConfigError([f"cure: unknown level {cure!r}"])
        res = run_discrimination_study(n=int(raw.get("n", 400)), lam=float(raw.get("lambda", 2.5)),
                                       cure=cure, replicates=int(raw.get("replicates", 1000)),
                                       seed=int(raw.get("seed", 2024)), engine=engine, cfg=cfg)
        rows = [[t.value, m.value, rate, used] for t, d in res.items() for m, (rate, used) in d.items()]
        write_csv(out / "discrimination_study.csv", ["true_model", "null_model", "rejection_rate",
                                                     "replicates_used"], rows, {**meta, "engine": engine})
        for r in rows:
            print(f"true {r[0]:>12}  null {r[1]:>12}  rejection {r[2]:.3f}")
        return EXIT_OK

    design = SimDesign.from_dict(raw)
    engines = _engines(args.engine)
    if study == "initials":
        design = replace(design, init_policy=InitPolicy.FAR)
        engines = ("sem", "em")
    elif study == "outliers":
        if design.outliers is None:
            raise ConfigError(["outliers: the outlier study needs an 'outliers' block"])
        engines = ("sem", "em")
    summaries = run_mc_studies(design, engines, cfg)
    rows = [row for s in summaries.values() for row in s.table_rows()]
    write_csv(out / f"study_{study}.csv", summaries[engines[0]].header(), rows, meta)
    if study == "initials":
        write_csv(out / "divergence.csv", ["engine", "replicates", "divergent", "divergence_pct"],
                  [[e, s.n_replicates, s.n_replicates - s.n_converged, s.divergence_pct]
                   for e, s in summaries.items()], meta)
    for e, s in summaries.items():
        print(f"{e}: {s.n_converged}/{s.n_replicates} converged "
              f"(divergence {s.divergence_pct:.1f}%)")
        for r in s.rows:
            print(f"  {r.name:>7}  truth {r.truth:8.4f}  mean {r.mean:8.4f}  bias {r.bias:8.4f}  "
                  f"rmse {r.rmse:7.4f}  cp90 {r.cp90:5.3f}  cp95 {r.cp95:5.3f}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    raw = _load_json(args.config)
    raw.pop("study", None)
    design = SimDesign.from_dict(raw)
    seed = design.seed if args.seed is None else args.seed
    gammas = design.gammas()
    data = generate_dataset(design, np.random.default_rng(seed), gammas)
    meta = {"seed": seed, "config_hash": config_hash(design.to_dict())}
    out = Path(args.out)
    write_csv(out, ["time", "delta", "group"],
              [[t, int(d), x[0]] for t, d, x in zip(data.t, data.delta, data.x)], meta)
    truth = {
        **meta,
        "curesem_version": __version__,
        "design": design.to_dict(),
        "beta": list(design.beta),
        "cure_rates": list(design.true_cure_rates),
        "gamma": list(gammas),
    }
    sidecar = out.with_name(out.name + ".truth.json")
    sidecar.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out} ({data.n} records) and {sidecar}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "discriminate": cmd_discriminate, "simulate": cmd_simulate,
            "gen-data": cmd_gen_data}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InitialValueError as exc:
        print(f"error: starting values: {exc} (see --alpha0, --c1, --c4)", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_CONFIG
    except CuresemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
