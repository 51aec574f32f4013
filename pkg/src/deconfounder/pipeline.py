"""The deconfounder end to end: check candidates, build the substitute
confounder, fit the outcome model, estimate effects and their spread."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import factor as fm
from .check import CheckConfig, CheckReport, check_outcome, run_check
from .data import Dataset
from .errors import DeconfounderError, SpecError
from .metrics import rmse
from .outcome import (NO_CONTROL, OutcomeFit, OutcomeModelSpec, average_effect, build_design,
                      fit_outcome)
from .rng import RngLike, as_stream


@dataclass(frozen=True)
class PipelineConfig:
    check: CheckConfig = CheckConfig()
    outcome: OutcomeModelSpec = OutcomeModelSpec()
    samples: int = 0
    sample_scale: float = 1.0
    refit: bool = True
    outcome_check: bool = True
    overlap_floor: float = 1e-4
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.samples == 1 or self.samples < 0:
            raise SpecError("uncertainty needs samples >= 2 (or 0 to skip)")


@dataclass
class UncertaintySummary:
    samples: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    failed: int = 0

    def to_dict(self, names=()) -> dict:
        names = list(names) or [f"b{j}" for j in range(self.mean.shape[0])]
        return {
            "draws": int(self.samples.shape[0]),
            "samples": self.samples.tolist(),
            "failed": self.failed,
            "coefficients": {n: {"mean": float(m), "variance": float(v), "q025": float(lo),
                                 "q975": float(hi)}
                             for n, m, v, lo, hi in zip(names, self.mean, self.variance,
                                                        self.q025, self.q975)},
        }


@dataclass
class OverlapDiagnostics:
    kind: str
    quantiles: dict
    row_mean: np.ndarray
    floor: float
    warning: bool
    predictive_variance: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "quantiles": self.quantiles, "floor": self.floor,
               "warning": self.warning}
        if self.predictive_variance is not None:
            out["predictive_variance_median"] = float(np.median(self.predictive_variance))
        return out


@dataclass
class DeconfounderEstimate:
    spec: fm.FactorModelSpec
    check: Optional[CheckReport]
    passed: bool
    candidates: list
    factor_fit: fm.FactorFit
    outcome_fit: OutcomeFit
    outcome_check: Optional[CheckReport]
    effects: dict
    uncertainty: Optional[UncertaintySummary]
    overlap: OverlapDiagnostics
    design_names: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def beta(self) -> np.ndarray:
        return self.outcome_fit.beta

    def to_dict(self) -> dict:
        out = {
            "accepted": self.spec.to_dict(),
            "passed": self.passed,
            "check_score": None if self.check is None else self.check.score,
            "candidates": self.candidates,
            "outcome": self.outcome_fit.to_dict(),
            "outcome_check_score": None if self.outcome_check is None else self.outcome_check.score,
            "effects": self.effects,
            "overlap": self.overlap.to_dict(),
            **self.extra,
        }
        if self.uncertainty is not None:
            lo, hi = self.outcome_fit.blocks["causes"]
            out["uncertainty"] = self.uncertainty.to_dict(self.outcome_fit.names[lo:hi])
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def overlap_diagnostics(fit: fm.FactorFit, floor: float = 1e-4) -> OverlapDiagnostics:
    """Spread of A_ij | z_i at the posterior means: variance (real) or entropy (counts)."""
    z = fit.posterior_means()
    spread = np.asarray(fit.conditional_spread(z), dtype=float)
    qs = np.quantile(spread, [0.0, 0.25, 0.5, 0.75, 1.0])
    quantiles = {k: float(v) for k, v in zip(("min", "q25", "median", "q75", "max"), qs)}
    pred = None
    if isinstance(fit, fm.GaussianFactorFit):
        L = fit.loadings
        pred = fit.noise_var + np.einsum("jk,ikl,jl->ij", L, fit.covs, L).mean(axis=1)
    return OverlapDiagnostics(fit.spread_kind, quantiles, spread.mean(axis=1), float(floor),
                              bool(quantiles["median"] < floor), pred)


def unit_contrasts(d: Dataset) -> list:
    """One contrast per cause: a = e_j versus a' = 0."""
    eye = np.eye(d.m)
    return [(name, eye[j], np.zeros(d.m)) for j, name in enumerate(d.cause_names)]


def _outcome_stage(d, fit, spec, z, contrasts):
    design = build_design(d, fit, spec, z=z)
    ofit = fit_outcome(design, d.outcome, spec)
    effects = {name: average_effect(ofit, a, ap, context=design) for name, a, ap in contrasts}
    return design, ofit, effects


def run(d: Dataset, candidates, cfg: PipelineConfig = PipelineConfig(), rng: RngLike = None,
        contrasts=None) -> DeconfounderEstimate:
    """Algorithm 1: accept the first candidate whose check passes, else the best scorer."""
    candidates = list(candidates)
    if not candidates:
        raise SpecError("need at least one candidate factor model")
    stream = as_stream(rng, cfg.seed)
    chosen = None
    summaries, errors = [], []
    for idx, spec in enumerate(candidates):
        try:
            report, masked = run_check(spec, d, cfg.check, stream.child("check", idx),
                                       threads=cfg.threads, return_fit=True)
        except (DeconfounderError, ArithmeticError) as exc:
            errors.append(f"{spec.label()}: {exc}")
            summaries.append({"spec": spec.to_text(), "error": str(exc)})
            continue
        summaries.append({"spec": spec.to_text(), "score": report.score, "passed": report.passed})
        if chosen is None or report.score > chosen[1].score:
            chosen = (idx, report, masked)
        if report.passed:
            chosen = (idx, report, masked)
            break
    if chosen is None:
        raise DeconfounderError("every candidate failed to fit: " + "; ".join(errors))
    idx, report, fit = chosen
    spec = candidates[idx]
    if cfg.refit:
        fit = fm.fit(spec, d, None, rng=stream.child("refit", idx))
    return estimate_with_fit(d, fit, cfg, stream, contrasts, report, summaries)


def estimate_with_fit(d: Dataset, fit, cfg: PipelineConfig = PipelineConfig(), rng: RngLike = None,
                      contrasts=None, report=None, summaries=None) -> DeconfounderEstimate:
    """Outcome stage for an already-fitted factor model (no assignment check)."""
    stream = as_stream(rng, cfg.seed)
    contrasts = unit_contrasts(d) if contrasts is None else contrasts
    z = fit.posterior_means()
    design, ofit, effects = _outcome_stage(d, fit, cfg.outcome, z, contrasts)
    ocheck = None
    if cfg.outcome_check and cfg.outcome.conditioning != NO_CONTROL:
        ocheck = check_outcome(cfg.outcome, d, fit, z, cfg.check, stream.child("outcome-check"))
    unc = None
    if cfg.samples >= 2:
        unc = uncertainty(d, fit, cfg.outcome, cfg.samples, stream.child("uncertainty"),
                          scale=cfg.sample_scale, threads=cfg.threads)
    return DeconfounderEstimate(
        fit.spec, report, bool(report.passed) if report is not None else False, summaries or [],
        fit, ofit, ocheck, effects, unc, overlap_diagnostics(fit, cfg.overlap_floor), design.names,
        extra={"conditioning": cfg.outcome.conditioning})


def uncertainty(d: Dataset, fit, outcome_spec: OutcomeModelSpec, s: int, rng: RngLike = None,
                scale: float = 1.0, threads: int = 1) -> UncertaintySummary:
    """Refit the outcome model on ``s`` posterior draws of z; summarize the cause coefficients.

    ``scale`` shrinks each draw toward the posterior mean (1 = the posterior itself).
    """
    if s < 2:
        raise SpecError("uncertainty needs s >= 2")
    stream = as_stream(rng)

    def one(k):
        gen = stream.child("draw", k).generator()
        z = fit.sample_rows(gen, scale=scale)
        try:
            design = build_design(d, fit, outcome_spec, z=z)
            return fit_outcome(design, d.outcome, outcome_spec).beta
        except (DeconfounderError, ArithmeticError):
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            betas = list(pool.map(one, range(s)))
    else:
        betas = [one(k) for k in range(s)]
    good = [b for b in betas if b is not None]
    failed = s - len(good)
    if failed > 0.1 * s or len(good) < 2:
        raise DeconfounderError(f"{failed} of {s} outcome refits failed")
    B = np.array(good)
    return UncertaintySummary(B, B.mean(axis=0), B.var(axis=0), np.quantile(B, 0.025, axis=0),
                              np.quantile(B, 0.975, axis=0), failed)


def no_control(d: Dataset, spec: OutcomeModelSpec = OutcomeModelSpec()) -> OutcomeFit:
    """Baseline: outcome regressed on the causes (and covariates) only."""
    spec = OutcomeModelSpec(NO_CONTROL, spec.include_covariates, spec.family, spec.penalty,
                            spec.tol, spec.max_iter)
    return fit_outcome(build_design(d, None, spec), d.outcome, spec)


def oracle(d: Dataset, confounder, spec: OutcomeModelSpec = OutcomeModelSpec()) -> OutcomeFit:
    """Baseline: outcome regressed on the causes plus the true confounder."""
    return fit_outcome(build_design(d, None, spec, confounder=confounder), d.outcome, spec)


@dataclass
class MaskingRow:
    percent: float
    kept: int
    rmse_deconfounder: float
    rmse_no_control: float

    @property
    def ratio(self) -> float:
        return self.rmse_deconfounder / self.rmse_no_control


def mask_causes_experiment(d: Dataset, truth, percents, candidates, cfg: PipelineConfig = PipelineConfig(),
                           rng: RngLike = None, check: bool = True) -> list:
    """Drop a share of cause columns at random, rerun, and compare RMSEs.

    The pipeline stream is the same for every percent, so 0% reproduces the
    unmasked run. ``check=False`` uses the first candidate without a check.
    """
    stream = as_stream(rng, cfg.seed)
    beta = np.asarray(truth.beta, dtype=float) * getattr(truth, "effect_sign", 1)
    rows = []
    for pct in percents:
        if not 0 <= pct < 100:
            raise SpecError("mask percent must lie in [0, 100)")
        drop = int(round(pct / 100.0 * d.m))
        if drop:
            gen = stream.child("mask", str(float(pct))).generator()
            keep = np.sort(gen.choice(d.m, size=d.m - drop, replace=False))
        else:
            keep = np.arange(d.m)
        sub = d.select_causes(keep) if drop else d
        if check:
            est = run(sub, candidates, cfg, stream.child("run"))
        else:
            fit = fm.fit(candidates[0], sub, None, rng=stream.child("run", "refit", 0))
            est = estimate_with_fit(sub, fit, cfg, stream.child("run"), contrasts=[])
        base = no_control(sub, cfg.outcome)
        rows.append(MaskingRow(float(pct), int(keep.size), rmse(est.beta, beta[keep]),
                               rmse(base.beta, beta[keep])))
    return rows


def config_to_dict(cfg: PipelineConfig) -> dict:
    return asdict(cfg)
