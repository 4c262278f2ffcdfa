"""Data-generating processes, Monte Carlo truth and the replication harness."""

from __future__ import annotations

import configparser
import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .estimators import AUGMENTED, METHODS, WorkingModels, estimate
from .inference import InferenceError, infer
from .logit_fit import FitError, fit_logistic
from .polr_fit import category_probs, fit_proportional_odds
from .trial_data import DataError, TrialDataset

MODELS = ("quadratic", "interaction")
SIGNS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
COV_MEANS = np.array([1.0, 0.9, 0.8, 0.75, 0.5, 0.25])
COV_SDS = np.array([0.3, 0.4, 0.5])
MIN_TRUTH_DRAWS = 100_000
MAX_FAIL_RATE = 0.05
TRUTH_CHUNK = 250_000


class ConfigError(ValueError):
    """Experiment configuration is malformed."""


class SimulationError(RuntimeError):
    """Too many replicates failed."""


@dataclass(frozen=True)
class DgpSpec:
    """Outcome DGP and design.

    ``heterogeneity`` scales the arm-specific slope multiplier
    ``0.5 + heterogeneity * z``; ``delta`` defaults to 1 (quadratic) or 2
    (interaction).
    """

    model: str = "quadratic"
    pi: float = 0.5
    n: int = 400
    alpha10: float = 1.0
    alpha20: float = 0.05
    delta: float | None = None
    heterogeneity: float = 0.5

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if not 0 < self.pi < 1:
            raise ConfigError(f"pi must lie in (0, 1), got {self.pi}")
        if not self.alpha10 > self.alpha20:
            raise ConfigError("alpha10 must exceed alpha20")
        if self.n < 1:
            raise ConfigError("n must be positive")

    @property
    def effect(self) -> float:
        if self.delta is not None:
            return self.delta
        return 1.0 if self.model == "quadratic" else 2.0

    def gamma(self, z: int) -> np.ndarray:
        return SIGNS * (0.5 + self.heterogeneity * z)


def interaction_coefs(g: np.ndarray) -> np.ndarray:
    """Pairwise coefficients for ``j < k`` in ``itertools.combinations`` order."""
    out = []
    for j, k in itertools.combinations(range(len(g)), 2):
        prod = g[j] * g[k]
        if prod > 0:
            out.append(g[j] + g[k])
        elif prod < 0:
            out.append(0.25 * prod)
        else:
            out.append(0.0)
    return np.array(out)


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Three normal and three Bernoulli covariates, independent columns."""
    x = np.empty((n, 6))
    x[:, :3] = COV_MEANS[:3] + COV_SDS * rng.standard_normal((n, 3))
    x[:, 3:] = rng.random((n, 3)) < COV_MEANS[3:]
    return x


def linear_predictor(x, spec: DgpSpec, z: int) -> np.ndarray:
    """Covariate part of both cumulative logits, treatment effect included."""
    g = spec.gamma(z)
    lp = x @ g
    if spec.model == "quadratic":
        lp = lp + (x**2) @ (2.0 * g)
    else:
        pairs = itertools.combinations(range(x.shape[1]), 2)
        prods = np.column_stack([x[:, j] * x[:, k] for j, k in pairs])
        lp = lp + prods @ interaction_coefs(g)
    return lp + spec.effect * z


def level_probs(x, spec: DgpSpec, z: int) -> np.ndarray:
    """n x 3 matrix of category probabilities for arm ``z``."""
    lp = linear_predictor(x, spec, z)
    ge2 = expit(spec.alpha10 + lp)
    ge3 = expit(spec.alpha20 + lp)
    return np.column_stack([1.0 - ge2, ge2 - ge3, ge3])


def _draw_levels(p, rng):
    u = rng.random(p.shape[0])
    return 1 + (u >= p[:, 0]).astype(np.int64) + (u >= p[:, 0] + p[:, 1]).astype(np.int64)


def gen_potential_outcomes(x, spec: DgpSpec, rng: np.random.Generator):
    """Independent draws of ``Y(0)`` and ``Y(1)`` in ``{1, 2, 3}`` given ``x``."""
    y0 = _draw_levels(level_probs(x, spec, 0), rng)
    y1 = _draw_levels(level_probs(x, spec, 1), rng)
    return y0, y1


@dataclass(frozen=True)
class TruthValues:
    tau1: float
    tau_neg1: float
    wr: float
    wd: float
    draws: int
    se_tau1: float
    se_tau_neg1: float
    se_wr: float
    se_wd: float
    p0: tuple = ()
    p1: tuple = ()

    @property
    def tie(self) -> float:
        return 1.0 - self.tau1 - self.tau_neg1


def _below(v):
    return np.cumsum(v, axis=-1) - v


def _above(v):
    return v.sum(axis=-1, keepdims=True) - np.cumsum(v, axis=-1)


def mc_truth(spec: DgpSpec, draws: int = 2_000_000, rng: np.random.Generator | None = None,
             seed: int = 0) -> TruthValues:
    """Marginal level probabilities of ``Y(0)``, ``Y(1)`` averaged over covariate draws.

    Conditional probabilities are averaged exactly per draw (no outcome
    sampling), so the only Monte Carlo error comes from the covariates.
    Standard errors use the linearisation of each functional in the two
    marginal probability vectors.
    """
    if draws < MIN_TRUTH_DRAWS:
        raise ConfigError(f"truth needs at least {MIN_TRUTH_DRAWS} draws, got {draws}")
    if rng is None:
        rng = np.random.default_rng(seed)
    s0 = np.zeros(3)
    s1 = np.zeros(3)
    chunks = []
    done = 0
    while done < draws:
        m = min(TRUTH_CHUNK, draws - done)
        x = gen_covariates(m, rng)
        p0 = level_probs(x, spec, 0)
        p1 = level_probs(x, spec, 1)
        s0 += p0.sum(axis=0)
        s1 += p1.sum(axis=0)
        chunks.append((p0, p1))
        done += m
    P0, P1 = s0 / draws, s1 / draws
    t1 = float(P1 @ _below(P0))
    tm = float(P1 @ _above(P0))
    # per-draw linearised contributions
    acc = np.zeros((4, 4))
    for p0, p1 in chunks:
        d1 = (p1 - P1) @ _below(P0) + (p0 - P0) @ _above(P1)
        dm = (p1 - P1) @ _above(P0) + (p0 - P0) @ _below(P1)
        dwr = d1 / tm - t1 * dm / tm**2
        D = np.column_stack([d1, dm, dwr, d1 - dm])
        acc += D.T @ D
    se = np.sqrt(np.diag(acc) / (draws - 1) / draws)
    return TruthValues(t1, tm, t1 / tm, t1 - tm, draws, *map(float, se),
                       p0=tuple(map(float, P0)), p1=tuple(map(float, P1)))


# ---------------------------------------------------------------------------
# experiment configuration

@dataclass(frozen=True)
class ExperimentConfig:
    models: tuple = ("quadratic",)
    pis: tuple = (0.5,)
    ns: tuple = (400,)
    reps: int = 1000
    seed: int = 20240101
    methods: tuple = METHODS
    outcome_models: tuple = ("correct",)
    truth_draws: int = 2_000_000
    truth_seed: int = 1
    conf_level: float = 0.95
    threads: int = 1
    variances: bool = True

    def __post_init__(self):
        for m in self.models:
            if m not in MODELS:
                raise ConfigError(f"unknown model {m!r}")
        for p in self.pis:
            if not 0 < p < 1:
                raise ConfigError(f"pi must lie in (0, 1), got {p}")
        for n in self.ns:
            if n < 10:
                raise ConfigError(f"sample size must be at least 10, got {n}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        for o in self.outcome_models:
            if o not in ("correct", "mis"):
                raise ConfigError(f"outcome model spec must be 'correct' or 'mis', got {o!r}")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.truth_draws < MIN_TRUTH_DRAWS:
            raise ConfigError(f"truth_draws must be at least {MIN_TRUTH_DRAWS}")
        if not 0 < self.conf_level < 1:
            raise ConfigError("conf_level must lie in (0, 1)")

    def cells(self):
        return [DgpSpec(m, p, n) for m in self.models for p in self.pis for n in self.ns]

    def labels(self):
        """Estimator labels; augmented methods get a ``-mis`` twin when requested."""
        out = []
        for m in self.methods:
            if m in AUGMENTED:
                out.extend(m if o == "correct" else f"{m}-mis" for o in self.outcome_models)
            else:
                out.append(m)
        return tuple(out)


def _split(value: str):
    return [v.strip() for v in value.replace("\n", ",").split(",") if v.strip()]


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an INI file with an ``[experiment]`` section; ``None`` overrides are ignored."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if "experiment" not in cp:
        raise ConfigError("config needs an [experiment] section")
    sec = cp["experiment"]
    known = {"model", "pi", "n", "reps", "seed", "methods", "outcome_models",
             "truth_draws", "truth_seed", "conf_level", "threads", "variances"}
    unknown = set(sec) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    try:
        if "model" in sec:
            kw["models"] = tuple(s.lower() for s in _split(sec["model"]))
        if "pi" in sec:
            kw["pis"] = tuple(float(s) for s in _split(sec["pi"]))
        if "n" in sec:
            kw["ns"] = tuple(int(s) for s in _split(sec["n"]))
        if "methods" in sec:
            kw["methods"] = tuple(s.upper() for s in _split(sec["methods"]))
        if "outcome_models" in sec:
            kw["outcome_models"] = tuple(s.lower() for s in _split(sec["outcome_models"]))
        for key in ("reps", "seed", "truth_draws", "truth_seed", "threads"):
            if key in sec:
                kw[key] = int(float(sec[key])) if key == "truth_draws" else int(sec[key])
        if "conf_level" in sec:
            kw["conf_level"] = float(sec["conf_level"])
        if "variances" in sec:
            kw["variances"] = sec.getboolean("variances")
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# replicates

def replicate_rng(seed: int, cell: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, cell, rep]))


def draw_dataset(spec: DgpSpec, rng: np.random.Generator) -> TrialDataset:
    x = gen_covariates(spec.n, rng)
    z = (rng.random(spec.n) < spec.pi).astype(np.int64)
    y0, y1 = gen_potential_outcomes(x, spec, rng)
    return TrialDataset(y=np.where(z == 1, y1, y0), z=z, x=x, n_levels=3)


def _nan_record(labels):
    return {lab: np.full(8, np.nan) for lab in labels}


def run_replicate(spec: DgpSpec, cfg: ExperimentConfig, cell: int, rep: int):
    """One replicate; returns ``(ok, message, {label: values})``.

    Values per label are ``wr, wd, var_wr, var_wd, cover_wr, cover_wd`` and,
    for UNADJ only, the U-statistic route's ``var_wr, var_wd`` (else nan).
    """
    labels = cfg.labels()
    rng = replicate_rng(cfg.seed, cell, rep)
    try:
        ds = draw_dataset(spec, rng)
        need_ps = any(m != "UNADJ" for m in cfg.methods)
        pm = fit_logistic(ds.x, ds.z) if need_ps else None
        outcome = {}
        if any(m in AUGMENTED for m in cfg.methods):
            for o in cfg.outcome_models:
                fm = spec.model if o == "correct" else "linear"
                om = fit_proportional_odds(ds.x, ds.z, ds.y, fm, n_levels=3)
                outcome[o] = WorkingModels(pm, om, category_probs(om, ds.x))
        base = WorkingModels(pm)
        truth = _TRUTH_CACHE.get(cell)
        rec = {}
        for lab in labels:
            meth, _, mis = lab.partition("-")
            models = outcome["mis" if mis else "correct"] if meth in AUGMENTED else base
            vals = np.full(8, np.nan)
            if cfg.variances:
                est, _ = infer(ds, meth, models, cfg.conf_level)
            else:
                est = estimate(ds, meth, models)
            if not est.wr_defined:
                raise InferenceError(f"{lab}: win ratio undefined")
            vals[0], vals[1] = est.wr, est.wd
            if cfg.variances:
                vals[2], vals[3] = est.var_wr, est.var_wd
                if truth is not None:
                    vals[4] = float(est.ci_wr[0] <= truth.wr <= est.ci_wr[1])
                    vals[5] = float(est.ci_wd[0] <= truth.wd <= est.ci_wd[1])
                if meth == "UNADJ":
                    bl, _ = infer(ds, meth, models, cfg.conf_level, route="bebu_lachin")
                    vals[6], vals[7] = bl.var_wr, bl.var_wd
            rec[lab] = vals
        return True, "", rec
    except (FitError, InferenceError, DataError, ZeroDivisionError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        return False, f"{type(exc).__name__}: {exc}", _nan_record(labels)


# truth values by cell index, shared with worker processes through the initializer
_TRUTH_CACHE: dict = {}


def _init_worker(truths):
    _TRUTH_CACHE.clear()
    _TRUTH_CACHE.update(truths)


def _job(args):
    spec, cfg, cell, rep = args
    return run_replicate(spec, cfg, cell, rep)


# ---------------------------------------------------------------------------
# aggregation and reporting

METRIC_COLUMNS = ("model", "pi", "n", "method", "estimand", "truth", "mean_est",
                  "rel_bias_pct", "mc_var", "mean_est_var", "var_ratio", "coverage",
                  "rel_eff", "mcsd", "aese", "aese_ustat", "pvr", "reps_ok", "reps_failed")


@dataclass
class SimulationReport:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    truths: dict = field(default_factory=dict)  # model -> TruthValues
    failures: dict = field(default_factory=dict)  # cell label -> list of messages

    def table(self):
        import pandas as pd

        return pd.DataFrame(self.rows, columns=METRIC_COLUMNS)

    def get(self, model, pi, n, method, estimand) -> dict:
        for r in self.rows:
            if (r["model"], r["pi"], r["n"], r["method"], r["estimand"]) == (model, pi, n, method, estimand):
                return r
        raise KeyError((model, pi, n, method, estimand))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        cfg = asdict(self.config)
        doc = {
            "schema_version": 1,
            "config": cfg,
            "truth": {m: asdict(t) for m, t in self.truths.items()},
            "failures": self.failures,
            "rows": [{c: _json_val(r[c]) for c in METRIC_COLUMNS} for r in self.rows],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def write(self, out_prefix):
        d = os.path.dirname(os.fspath(out_prefix))
        if d:
            os.makedirs(d, exist_ok=True)
        with open(f"{out_prefix}.csv", "w", newline="") as fh:
            fh.write(self.to_csv())
        with open(f"{out_prefix}.json", "w") as fh:
            fh.write(self.to_json())
        return f"{out_prefix}.csv", f"{out_prefix}.json"


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _json_val(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def _nanmean(a):
    a = a[~np.isnan(a)]
    return float(a.mean()) if a.size else math.nan


def aggregate_cell(spec: DgpSpec, truth: TruthValues, labels, recs, n_failed):
    """Metric rows for one cell from the successful replicate records."""
    rows = []
    stacked = {lab: np.array([r[lab] for r in recs]) for lab in labels}
    ok = len(recs)
    base = {}
    for est_idx, estimand in enumerate(("WR", "WD")):
        true = truth.wr if estimand == "WR" else truth.wd
        for lab in labels:
            a = stacked[lab]
            vals = a[:, est_idx]
            mc_var = float(vals.var(ddof=1)) if ok > 1 else math.nan
            ev = a[:, 2 + est_idx]
            mean_ev = _nanmean(ev)
            aese = _nanmean(np.sqrt(ev))
            row = {
                "model": spec.model, "pi": spec.pi, "n": spec.n, "method": lab,
                "estimand": estimand, "truth": float(true),
                "mean_est": float(vals.mean()),
                "rel_bias_pct": float((vals.mean() - true) / true * 100),
                "mc_var": mc_var, "mean_est_var": mean_ev,
                "var_ratio": mean_ev / mc_var if mc_var > 0 else math.nan,
                "coverage": _nanmean(a[:, 4 + est_idx]),
                "rel_eff": math.nan, "mcsd": math.sqrt(mc_var) if mc_var >= 0 else math.nan,
                "aese": aese, "aese_ustat": _nanmean(np.sqrt(a[:, 6 + est_idx])),
                "pvr": math.nan, "reps_ok": ok, "reps_failed": n_failed,
            }
            if lab == "UNADJ":
                base[estimand] = row
            rows.append(row)
    for row in rows:
        b = base.get(row["estimand"])
        if b is None:
            continue
        if row["mc_var"] > 0:
            row["rel_eff"] = b["mc_var"] / row["mc_var"]
        if b["aese"] > 0 and not math.isnan(row["aese"]):
            row["pvr"] = (b["aese"] ** 2 - row["aese"] ** 2) / b["aese"] ** 2 * 100
    return rows


def truth_for(model: str, cfg: ExperimentConfig) -> TruthValues:
    return mc_truth(DgpSpec(model), cfg.truth_draws, seed=cfg.truth_seed)


def run_experiment(cfg: ExperimentConfig, truths: dict | None = None, progress=None) -> SimulationReport:
    """Run every cell of ``cfg``; raises :class:`SimulationError` when more than
    5% of a cell's replicates fail.

    ``truths`` may supply precomputed :class:`TruthValues` keyed by model.
    Results do not depend on ``cfg.threads``.
    """
    truths = dict(truths or {})
    for m in cfg.models:
        if m not in truths:
            truths[m] = truth_for(m, cfg)
    cells = cfg.cells()
    by_cell = {i: truths[s.model] for i, s in enumerate(cells)}
    labels = cfg.labels()
    report = SimulationReport(cfg, truths=truths)
    jobs = [(s, cfg, i, r) for i, s in enumerate(cells) for r in range(cfg.reps)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(cfg.threads, initializer=_init_worker, initargs=(by_cell,)) as ex:
            results = list(ex.map(_job, jobs, chunksize=max(1, len(jobs) // (8 * cfg.threads))))
    else:
        _init_worker(by_cell)
        results = []
        for k, job in enumerate(jobs):
            results.append(_job(job))
            if progress is not None:
                progress(k + 1, len(jobs))
    for i, spec in enumerate(cells):
        chunk = results[i * cfg.reps:(i + 1) * cfg.reps]
        recs = [rec for ok, _, rec in chunk if ok]
        msgs = [f"rep {r}: {msg}" for r, (ok, msg, _) in enumerate(chunk) if not ok]
        key = f"{spec.model}/pi={spec.pi}/n={spec.n}"
        if msgs:
            report.failures[key] = msgs
        if len(msgs) > MAX_FAIL_RATE * cfg.reps:
            raise SimulationError(
                f"{key}: {len(msgs)} of {cfg.reps} replicates failed "
                f"(limit {MAX_FAIL_RATE:.0%}); first: {msgs[0]}"
            )
        report.rows.extend(aggregate_cell(spec, truths[spec.model], labels, recs, len(msgs)))
    return report

