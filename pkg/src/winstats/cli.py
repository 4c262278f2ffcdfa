"""Command-line entry point: ``analyze``, ``simulate`` and ``truth``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources

from . import __version__
from .estimators import METHODS, fit_working_models
from .inference import InferenceError, infer, pvr
from .logit_fit import FitError
from .polr_fit import FEATURE_KINDS
from .sim_engine import (
    MIN_TRUTH_DRAWS,
    ConfigError,
    DgpSpec,
    SimulationError,
    load_config,
    mc_truth,
    run_experiment,
)
from .trial_data import HIGHER_BETTER, LOWER_BETTER, DataError, load_csv, recode_direction, validate

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_SIM = 0, 2, 3, 4
SCHEMA_VERSION = 1
SIG_DIGITS = 8


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisRequest:
    data: str
    outcome: str
    treatment: str
    direction: str = HIGHER_BETTER
    methods: tuple = METHODS
    ps_covariates: tuple = ()
    om_covariates: tuple = ()
    feature_map: str = "linear"
    conf_level: float = 0.95
    output_format: str = "text"
    levels: str | None = None
    n_levels: int | None = None
    log_wr: bool = False

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise UsageError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(m.lower() for m in METHODS)}")
        if not 0 < self.conf_level < 1:
            raise UsageError("confidence level must lie in (0, 1)")


def _round(v):
    if v is None:
        return None
    return float(f"{v:.{SIG_DIGITS}g}")


def _methods_arg(text: str):
    return tuple(m.strip().upper() for m in text.split(",") if m.strip())


def _cols_arg(text: str | None):
    if not text:
        return ()
    return tuple(c.strip() for c in text.split(",") if c.strip())


def run_analysis(req: AnalysisRequest) -> dict:
    """Estimates, SEs, CIs and PVR for every requested method as a plain dict."""
    covs = tuple(dict.fromkeys(req.ps_covariates + req.om_covariates))
    ds = load_csv(req.data, req.outcome, req.treatment, covs, levels=req.levels,
                  n_levels=req.n_levels)
    report = validate(ds)
    if not report.ok:
        raise DataError("; ".join(report.errors))
    ds = recode_direction(ds, req.direction)
    ps_idx = [covs.index(c) for c in req.ps_covariates]
    om_idx = [covs.index(c) for c in req.om_covariates]
    models = fit_working_models(ds, req.methods, ps_columns=ps_idx, om_columns=om_idx,
                                feature_map=req.feature_map)
    results = {}
    for m in dict.fromkeys(("UNADJ",) + req.methods):
        results[m] = infer(ds, m, models, req.conf_level, log_wr=req.log_wr)[0]
    base = results["UNADJ"]
    rows = []
    for m in req.methods:
        est = results[m]
        wr = {"est": None, "se": None, "lcl": None, "ucl": None, "pvr": None,
              "note": est.wr_note}
        if est.wr_defined and est.var_wr is not None:
            wr.update(est=est.wr, se=est.se_wr, lcl=est.ci_wr[0], ucl=est.ci_wr[1])
            if base.se_wr:
                wr["pvr"] = pvr(base.se_wr, est.se_wr)
        wd = {"est": est.wd, "se": est.se_wd, "lcl": est.ci_wd[0], "ucl": est.ci_wd[1],
              "pvr": pvr(base.se_wd, est.se_wd) if base.se_wd else None}
        rows.append({
            "method": m,
            "tau1": _round(est.tau1),
            "tau_neg1": _round(est.tau_neg1),
            "WR": {k: (_round(v) if k != "note" else v) for k, v in wr.items()},
            "WD": {k: _round(v) for k, v in wd.items()},
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "n": ds.n, "n_treated": ds.n1, "n_control": ds.n0, "n_levels": ds.n_levels,
        "direction": req.direction,
        "conf_level": req.conf_level,
        "ci_scale_wr": "log" if req.log_wr else "natural",
        "propensity_covariates": list(req.ps_covariates),
        "outcome_covariates": list(req.om_covariates),
        "feature_map": req.feature_map,
        "warnings": report.warnings,
        "results": rows,
    }


def format_table(doc: dict) -> str:
    head = f"{'Estimand':<8} {'Method':<6} {'EST':>9} {'SE':>9} {'LCL':>9} {'UCL':>9} {'PVR(%)':>8}"
    lines = [f"n = {doc['n']} (treated {doc['n_treated']}, control {doc['n_control']}), "
             f"L = {doc['n_levels']}, {doc['conf_level']:.0%} intervals", head, "-" * len(head)]

    def num(v, w, d):
        return f"{'-':>{w}}" if v is None else f"{v:>{w}.{d}f}"

    for estimand in ("WR", "WD"):
        for r in doc["results"]:
            e = r[estimand]
            if estimand == "WR" and e.get("note"):
                lines.append(f"{estimand:<8} {r['method']:<6} {'undefined':>9}  ({e['note']})")
                continue
            lines.append(f"{estimand:<8} {r['method']:<6} {num(e['est'], 9, 3)} {num(e['se'], 9, 3)} "
                         f"{num(e['lcl'], 9, 3)} {num(e['ucl'], 9, 3)} {num(e['pvr'], 8, 1)}")
    return "\n".join(lines)


def cmd_analyze(args) -> int:
    try:
        covs = _cols_arg(args.covariates)
        req = AnalysisRequest(
            data=args.data, outcome=args.outcome, treatment=args.treatment,
            direction=args.direction, methods=_methods_arg(args.methods),
            ps_covariates=_cols_arg(args.ps_covariates) or covs,
            om_covariates=_cols_arg(args.om_covariates) or covs,
            feature_map=args.feature_map, conf_level=args.conf_level,
            output_format=args.format, levels=args.levels, n_levels=args.n_levels,
            log_wr=args.log_wr,
        )
        doc = run_analysis(req)
    except (UsageError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitError, InferenceError, ZeroDivisionError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    for w in doc["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    text = json.dumps(doc, indent=2, sort_keys=True) if args.format == "json" else format_table(doc)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def resolve_config(path: str) -> str:
    """Return ``path``, falling back to a config bundled with the package."""
    if os.path.exists(path):
        return path
    bundled = resources.files("winstats") / "configs" / os.path.basename(path)
    return str(bundled) if bundled.is_file() else path


def cmd_simulate(args) -> int:
    try:
        cfg = load_config(resolve_config(args.config), reps=args.reps, seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        report = run_experiment(cfg)
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    csv_path, json_path = report.write(args.out)
    tab = report.table()
    cols = ["model", "pi", "n", "method", "estimand", "rel_bias_pct", "var_ratio",
            "coverage", "rel_eff", "mcsd", "aese"]
    print(tab[cols].to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_truth(args) -> int:
    if args.draws < MIN_TRUTH_DRAWS:
        print(f"error: --draws must be at least {MIN_TRUTH_DRAWS}", file=sys.stderr)
        return EXIT_INPUT
    try:
        spec = DgpSpec(args.model, args.pi)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    tv = mc_truth(spec, args.draws, seed=args.seed)
    print(json.dumps({
        "model": args.model, "pi": args.pi, "draws": tv.draws, "seed": args.seed,
        "tau1": tv.tau1, "tau_neg1": tv.tau_neg1, "wr": tv.wr, "wd": tv.wd,
        "se": {"tau1": tv.se_tau1, "tau_neg1": tv.se_tau_neg1, "wr": tv.se_wr, "wd": tv.se_wd},
    }, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="winstats", description=__doc__)
    p.add_argument("--version", action="version", version=f"winstats {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate WR/WD for a trial dataset")
    a.add_argument("data", help="CSV file with a header row")
    a.add_argument("--outcome", required=True)
    a.add_argument("--treatment", required=True)
    a.add_argument("--covariates", help="comma-separated; default for both working models")
    a.add_argument("--ps-covariates", help="propensity model covariates (overrides --covariates)")
    a.add_argument("--om-covariates", help="outcome model covariates (overrides --covariates)")
    a.add_argument("--feature-map", choices=FEATURE_KINDS, default="linear")
    a.add_argument("--methods", default="unadj,ipw,ow,aipw,aow")
    a.add_argument("--direction", choices=(HIGHER_BETTER, LOWER_BETTER), default=HIGHER_BETTER)
    a.add_argument("--levels", help="ordering of string outcome values, e.g. 'bad<ok<good'")
    a.add_argument("--n-levels", type=int, help="declared number of levels for 1..L outcomes")
    a.add_argument("--conf-level", type=float, default=0.95)
    a.add_argument("--log-wr", action="store_true", help="build WR intervals on the log scale")
    a.add_argument("--format", choices=("text", "json"), default="text")
    a.add_argument("--output", help="write the report here instead of stdout")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a simulation experiment from a config file")
    s.add_argument("config")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--out", default="simulation_report", help="output path prefix")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("truth", help="Monte Carlo true WR/WD for a simulation DGP")
    t.add_argument("--model", choices=("quadratic", "interaction"), default="quadratic")
    t.add_argument("--pi", type=float, default=0.5)
    t.add_argument("--draws", type=int, default=2_000_000)
    t.add_argument("--seed", type=int, default=1)
    t.set_defaults(func=cmd_truth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
