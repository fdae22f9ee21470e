"""Command-line interface: `finpop fit`, `finpop simulate`, `finpop ppc`.

Every output artifact embeds the tool version, the full effective
configuration (flags override the JSON config file), and the master seed, so
any run can be reproduced bit-identically from its own output. Exit codes:
0 success, 2 usage/config/schema errors, 3 runtime estimation failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, fields, replace

from . import __version__
from .errors import (ConvergenceError, DomainError, EmptyCellError,
                     EstimationError, FinpopError, LinkageError, ParseError,
                     SchemaError)
from .frames import CovariateSchema, load_population, load_sample, transform_outcome

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_CONFIG_ERRORS = (SchemaError, ParseError, DomainError, json.JSONDecodeError,
                  OSError, ValueError)
_RUNTIME_ERRORS = (EstimationError, LinkageError, EmptyCellError,
                   ConvergenceError, FinpopError)


def _fail(code, msg):
    print("finpop: error: %s" % msg, file=sys.stderr)
    return code


def _load_config(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise SchemaError("config file must contain a JSON object")
    return cfg


def _schema_from_config(cfg, need_outcome):
    try:
        return CovariateSchema(
            discrete_names=tuple(cfg.get("discrete", ())),
            continuous_names=tuple(cfg.get("continuous", ())),
            outcome_name=cfg.get("outcome", "y") if need_outcome else None,
            id_name=cfg.get("id"))
    except TypeError as exc:
        raise SchemaError("bad schema declaration in config: %s" % exc) from None


def _sampler_config(cfg, args):
    from .samplers import SamplerConfig
    allowed = {f.name for f in fields(SamplerConfig)}
    overrides = {k: v for k, v in cfg.get("sampler", {}).items()}
    unknown = set(overrides) - allowed
    if unknown:
        raise SchemaError("unknown sampler config keys: %s" % sorted(unknown))
    sc = SamplerConfig(**overrides)
    if getattr(args, "seed", None) is not None:  # flags beat config
        sc = replace(sc, seed=args.seed)
    return sc


def _load_pair(args, cfg):
    pop_schema = _schema_from_config(cfg, need_outcome=False)
    population = load_population(args.population, pop_schema)
    samp_schema = _schema_from_config(cfg, need_outcome=True)
    sample = load_sample(args.sample, samp_schema, population)
    transform = args.transform or cfg.get("transform", "none")
    sample = transform_outcome(sample, transform)
    return population, sample, transform


def cmd_fit(args) -> int:
    from .estimators import ALL_METHODS, SubpopulationFilter, estimate
    try:
        if args.method not in ALL_METHODS:
            raise SchemaError("unknown method %r" % args.method)
        cfg = _load_config(args.config)
        population, sample, transform = _load_pair(args, cfg)
        sc = _sampler_config(cfg, args)
        subpop = SubpopulationFilter.parse(args.subpop) if args.subpop else None
    except _CONFIG_ERRORS as exc:
        return _fail(EXIT_CONFIG, exc)
    try:
        summary = estimate(args.method, population, sample, cfg=sc, subpop=subpop)
    except _RUNTIME_ERRORS as exc:
        return _fail(EXIT_RUNTIME, exc)
    out = summary.to_dict()
    out["version"] = __version__
    out["config"] = {"sampler": asdict(sc), "transform": transform,
                     "method": args.method, "subpop": args.subpop}
    out["seed"] = sc.seed
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if args.dump_draws:
        _dump_draws(args, population, sample, sc, subpop)
    return EXIT_OK


def _dump_draws(args, population, sample, sc, subpop):
    """Raw posterior mean draws, one row per retained iteration."""
    from .estimators import BAYES_METHODS, posterior_draws
    if args.method not in BAYES_METHODS:
        raise EstimationError("--dump-draws requires a posterior method")
    draws = posterior_draws(args.method, population, sample, cfg=sc, subpop=subpop)
    with open(args.dump_draws, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "Q_draw", "sigma"])
        for t, (q, s) in enumerate(zip(draws.Q, draws.sigma)):
            w.writerow([t, repr(float(q)), repr(float(s))])


def cmd_simulate(args) -> int:
    from .simlab import SCENARIOS, feasible_methods, run_study
    try:
        cfg = _load_config(args.config)
        sc = _sampler_config(cfg, args)
        spec = SCENARIOS.get(args.scenario)
        if spec is None:
            raise SchemaError("unknown scenario %r (use s1..s4)" % args.scenario)
        methods = tuple(m.strip().lower() for m in args.methods.split(",") if m.strip())
        if not methods:
            raise SchemaError("no methods given")
        bad = set(methods) - set(feasible_methods(spec))
        if bad:
            raise SchemaError(
                "methods %s are not feasible for %s: post-stratification and "
                "raking need low-dimensional covariate cells (p=%d here)"
                % (sorted(bad), spec.id, spec.p))
        seed = args.seed if args.seed is not None else 0
    except _CONFIG_ERRORS as exc:
        return _fail(EXIT_CONFIG, exc)
    try:
        metrics = run_study(spec, methods, args.replicates, seed,
                            cfg=sc, jobs=args.jobs)
    except _RUNTIME_ERRORS as exc:
        return _fail(EXIT_RUNTIME, exc)
    out = metrics.to_dict()
    out["version"] = __version__
    out["config"] = {"sampler": asdict(sc), "scenario": args.scenario,
                     "replicates": args.replicates, "methods": list(methods),
                     "jobs": args.jobs}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if args.csv:
        metrics.dump_csv(args.csv)
    return EXIT_OK


def cmd_ppc(args) -> int:
    import numpy as np
    from .diagnostics import ppc
    from .samplers import derive_seed, fit_bart, fit_sbart
    try:
        cfg = _load_config(args.config)
        population, sample, transform = _load_pair(args, cfg)
        sc = _sampler_config(cfg, args)
        if args.method not in ("bart", "sbart"):
            raise SchemaError("ppc supports methods bart and sbart")
    except _CONFIG_ERRORS as exc:
        return _fail(EXIT_CONFIG, exc)
    try:
        fitter = fit_sbart if args.method == "sbart" else fit_bart
        fit = fitter(population, sample, sc)
        rng = np.random.default_rng(derive_seed(sc.seed, 999))
        result = ppc(sample, fit, rng)
    except _RUNTIME_ERRORS as exc:
        return _fail(EXIT_RUNTIME, exc)
    result.dump_csv(args.out)
    summary = json.loads(result.summary_json())
    summary["version"] = __version__
    summary["config"] = {"sampler": asdict(sc), "transform": transform,
                         "method": args.method}
    summary["seed"] = sc.seed
    with open(args.summary, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="finpop",
        description="Finite-population mean estimation from non-random samples.")
    ap.add_argument("--version", action="version", version="finpop %s" % __version__)
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="estimate a (sub)population mean from CSV data")
    fit.add_argument("--population", required=True)
    fit.add_argument("--sample", required=True)
    fit.add_argument("--config", help="JSON file: schema + sampler overrides")
    fit.add_argument("--method", required=True,
                     help="raw | ps | raking | bart | bart-p | sbart | sbart-p")
    fit.add_argument("--out", required=True, help="output JSON path")
    fit.add_argument("--subpop", help='filter like "Z1>=1" restricting the estimand')
    fit.add_argument("--transform", choices=("none", "log1p"))
    fit.add_argument("--seed", type=int)
    fit.add_argument("--dump-draws", help="also write per-iteration draws CSV here")
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run a multi-replicate scenario study")
    sim.add_argument("--scenario", required=True, help="s1 | s2 | s3 | s4")
    sim.add_argument("--replicates", type=int, required=True)
    sim.add_argument("--methods", required=True, help="comma-separated method list")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--config", help="JSON file with sampler overrides")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--out", required=True, help="study JSON path")
    sim.add_argument("--csv", help="optional per-replicate estimates CSV")
    sim.set_defaults(func=cmd_simulate)

    pc = sub.add_parser("ppc", help="posterior predictive check of a model fit")
    pc.add_argument("--population", required=True)
    pc.add_argument("--sample", required=True)
    pc.add_argument("--config", help="JSON file: schema + sampler overrides")
    pc.add_argument("--method", default="sbart", help="bart | sbart")
    pc.add_argument("--out", required=True, help="pairs CSV path")
    pc.add_argument("--summary", required=True, help="p-value summary JSON path")
    pc.add_argument("--transform", choices=("none", "log1p"))
    pc.add_argument("--seed", type=int)
    pc.set_defaults(func=cmd_ppc)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
