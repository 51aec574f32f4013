"""Multi-seed experiment suites at desk scale: smoking table, GWAS table, masking."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import factor as fm
from .check import CheckConfig, run_check
from .metrics import EvalTable, average_tables, make_table
from .outcome import ON_RECONSTRUCTED, ON_Z, OutcomeModelSpec
from .pipeline import (PipelineConfig, estimate_with_fit, mask_causes_experiment, no_control, oracle,
                       run, uncertainty)
from .rng import RngStream
from .simulate import GwasSimConfig, TwoCauseSimConfig, simulate_gwas, simulate_two_cause

SMOKING_PENALTY = 1.0


def ordered_map(fn, items, threads: int = 1):
    """``map`` whose output order (and so every artifact) ignores the thread count."""
    items = list(items)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


@dataclass(frozen=True)
class SmokingSuiteConfig:
    n: int = 2000
    seeds: int = 20
    samples: int = 20
    holdout: float = 0.5
    penalty: float = SMOKING_PENALTY
    link: str = "quadratic"
    dependent_cause: bool = False
    seed: int = 0


def smoking_table(seed: int, cfg: SmokingSuiteConfig = SmokingSuiteConfig(), return_runs: bool = False):
    """Evaluation rows for one simulated study: baselines plus every
    (factor model, conditioning) pair, with the assignment check flag.

    With ``return_runs`` also returns the raw coefficient draws and truth.
    """
    stream = RngStream(cfg.seed).child("smoking", seed)
    d, truth = simulate_two_cause(
        TwoCauseSimConfig(n=cfg.n, link=cfg.link, dependent_cause=cfg.dependent_cause), stream.child("sim"))
    base_spec = OutcomeModelSpec(penalty=cfg.penalty)
    runs = [
        {"label": "No control", "samples": no_control(d, base_spec).beta},
        {"label": "Oracle (confounder)", "samples": oracle(d, truth.confounder, base_spec).beta},
    ]
    check_cfg = CheckConfig(holdout=cfg.holdout)
    for name, spec in (("Linear", fm.LinearFactorSpec(k=1)), ("Quadratic", fm.QuadraticFactorSpec(k=1))):
        report = run_check(spec, d, check_cfg, stream.child("check", name))
        fit = fm.fit(spec, d, None, rng=stream.child("fit", name))
        for cond, tag in ((ON_Z, "z"), (ON_RECONSTRUCTED, "a(z)")):
            ospec = OutcomeModelSpec(conditioning=cond, penalty=cfg.penalty)
            unc = uncertainty(d, fit, ospec, cfg.samples, stream.child("unc", name, tag))
            runs.append({"label": f"{name} {tag}", "samples": unc.samples, "check": report.passed,
                         "score": report.score})
    table = make_table(runs, truth.beta, metadata={"seed": seed, "n": cfg.n})
    table.metadata["scores"] = {r["label"]: r["score"] for r in runs if "score" in r}
    return (table, runs, truth) if return_runs else table


def smoking_suite(cfg: SmokingSuiteConfig = SmokingSuiteConfig(), threads: int = 1):
    tables = ordered_map(lambda s: smoking_table(s, cfg), range(cfg.seeds), threads)
    return tables, average_tables(tables, {"suite": "smoking", "n": cfg.n})


@dataclass(frozen=True)
class GwasSuiteConfig:
    n: int = 1000
    m: int = 500
    k: int = 10
    seeds: int = 20
    snr: str = "low"
    generators: tuple = ("bn", "psd:0.01", "psd:0.1", "psd:0.5", "psd:1", "spatial:0.1",
                         "spatial:0.25", "spatial:0.5", "spatial:1")
    conditioning: str = ON_RECONSTRUCTED
    penalty: float = None
    check: bool = True
    seed: int = 0


def gwas_sim_config(generator: str, cfg: GwasSuiteConfig, seed: int) -> GwasSimConfig:
    kind, _, param = generator.partition(":")
    kw = {"generator": kind, "n": cfg.n, "m": cfg.m, "snr": cfg.snr, "seed": seed}
    if kind == "psd" and param:
        kw["alpha"] = float(param)
    if kind == "spatial" and param:
        kw["tau"] = float(param)
    return GwasSimConfig(**kw)


def gwas_table(generator: str, seed: int, cfg: GwasSuiteConfig = GwasSuiteConfig()) -> EvalTable:
    stream = RngStream(cfg.seed).child("gwas", generator, seed)
    d, truth = simulate_gwas(gwas_sim_config(generator, cfg, seed), stream.child("sim"))
    ospec = OutcomeModelSpec(conditioning=cfg.conditioning, penalty=cfg.penalty)
    pcfg = PipelineConfig(outcome=ospec, outcome_check=False)
    spec = fm.PoissonFactorSpec(k=cfg.k)
    if cfg.check:
        est = run(d, [spec], pcfg, stream.child("pipeline"))
        flag = est.passed
    else:
        fit = fm.fit(spec, d, None, rng=stream.child("pipeline", "refit", 0))
        est = estimate_with_fit(d, fit, pcfg, stream.child("pipeline"), contrasts=[])
        flag = None
    runs = [
        {"label": "No control", "samples": no_control(d, ospec).beta},
        {"label": "Oracle (groups)", "samples": oracle(d, truth.confounder, ospec).beta},
        {"label": f"Deconfounder PF(K={cfg.k})", "samples": est.beta, "check": flag},
    ]
    return make_table(runs, truth.beta, metadata={"generator": generator, "seed": seed})


def gwas_suite(cfg: GwasSuiteConfig = GwasSuiteConfig(), threads: int = 1):
    """One averaged table per generator."""
    jobs = [(g, s) for g in cfg.generators for s in range(cfg.seeds)]
    tables = ordered_map(lambda job: gwas_table(job[0], job[1], cfg), jobs, threads)
    out = {}
    for g in cfg.generators:
        per = [t for t, (gg, _) in zip(tables, jobs) if gg == g]
        out[g] = (per, average_tables(per, {"suite": "gwas", "generator": g}))
    return out


@dataclass(frozen=True)
class MaskingSuiteConfig:
    n: int = 1000
    m: int = 500
    k: int = 10
    seeds: int = 10
    percents: tuple = (0.0, 25.0, 50.0, 75.0)
    generator: str = "bn"
    snr: str = "low"
    conditioning: str = ON_RECONSTRUCTED
    penalty: float = None
    check: bool = False
    seed: int = 0


def masking_seed(seed: int, cfg: MaskingSuiteConfig = MaskingSuiteConfig()):
    stream = RngStream(cfg.seed).child("masking", seed)
    gcfg = gwas_sim_config(cfg.generator, GwasSuiteConfig(n=cfg.n, m=cfg.m, snr=cfg.snr), seed)
    d, truth = simulate_gwas(gcfg, stream.child("sim"))
    pcfg = PipelineConfig(outcome=OutcomeModelSpec(conditioning=cfg.conditioning, penalty=cfg.penalty),
                          outcome_check=False)
    return mask_causes_experiment(d, truth, cfg.percents, [fm.PoissonFactorSpec(k=cfg.k)], pcfg,
                                  stream.child("experiment"), check=cfg.check)


def masking_suite(cfg: MaskingSuiteConfig = MaskingSuiteConfig(), threads: int = 1):
    """Per-seed rows plus the pooled Spearman correlation of ratio against percent."""
    per_seed = ordered_map(lambda s: masking_seed(s, cfg), range(cfg.seeds), threads)
    pct = np.array([r.percent for rows in per_seed for r in rows])
    ratio = np.array([r.ratio for rows in per_seed for r in rows])
    rho = float(stats.spearmanr(pct, ratio).statistic) if len(set(pct)) > 1 else float("nan")
    means = {p: float(ratio[pct == p].mean()) for p in cfg.percents}
    return per_seed, rho, means


def masking_csv(per_seed, means=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if means is not None:
        w.writerow(["percent", "mean_ratio"])
        for p, r in means.items():
            w.writerow([f"{p:g}", repr(r)])
        return buf.getvalue()
    w.writerow(["seed", "percent", "kept", "rmse_deconfounder", "rmse_no_control", "ratio"])
    for s, rows in enumerate(per_seed):
        for r in rows:
            w.writerow([s, f"{r.percent:g}", r.kept, repr(r.rmse_deconfounder), repr(r.rmse_no_control),
                        repr(r.ratio)])
    return buf.getvalue()


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
