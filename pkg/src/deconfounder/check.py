"""Held-out predictive checks for assignment (factor) and outcome models."""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import factor as fm
from .data import Dataset, HoldoutMask, split_holdout
from .errors import SpecError
from .rng import RngLike, as_stream

MEAN = "mean"
POOLED = "pooled"


@dataclass(frozen=True)
class CheckConfig:
    holdout: float = 0.2
    replicates: int = 100
    z_samples: int = 100
    threshold: float = 0.1
    aggregation: str = MEAN
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise SpecError("threshold must lie in (0, 1)")
        if self.replicates < 10:
            raise SpecError("need at least 10 replicates")
        if self.z_samples < 1:
            raise SpecError("need at least one z sample")
        if not 0 < self.holdout < 1:
            raise SpecError("holdout fraction must lie in (0, 1)")
        if self.aggregation not in (MEAN, POOLED):
            raise SpecError(f"aggregation must be {MEAN!r} or {POOLED!r}")


@dataclass
class CheckReport:
    """Per-row observed statistics and scores plus the aggregate verdict.

    Rows without held-out entries carry NaN and are counted in ``skipped``.
    """

    t_obs: np.ndarray
    scores: np.ndarray
    t_rep: np.ndarray
    score: float
    passed: bool
    threshold: float
    aggregation: str
    skipped: int
    label: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_replicates: bool = False) -> dict:
        out = {
            "label": self.label,
            "score": self.score,
            "passed": self.passed,
            "threshold": self.threshold,
            "aggregation": self.aggregation,
            "skipped": self.skipped,
            "t_obs": _nan_list(self.t_obs),
            "scores": _nan_list(self.scores),
            "extra": self.extra,
        }
        if include_replicates:
            out["t_rep"] = [_nan_list(r) for r in self.t_rep]
        return out

    def to_json(self, include_replicates: bool = False) -> str:
        return json.dumps(self.to_dict(include_replicates), sort_keys=True, indent=1)

    def write_csv(self, path, replicates_path=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["individual", "t_obs", "score"])
            for i, (t, s) in enumerate(zip(self.t_obs, self.scores)):
                w.writerow([i, repr(float(t)), repr(float(s))])
        if replicates_path is not None:
            with open(replicates_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["individual", "replicate", "t_rep"])
                for i, row in enumerate(self.t_rep):
                    if np.all(np.isnan(row)):
                        continue
                    for r, t in enumerate(row):
                        w.writerow([i, r, repr(float(t))])


def _nan_list(x):
    return [None if np.isnan(v) else float(v) for v in np.asarray(x, dtype=float)]


def tail_score(t_rep, t_obs) -> float:
    """P(t_rep < t_obs) with ties counted as one half."""
    t_rep = np.asarray(t_rep)
    return float(np.mean(t_rep < t_obs) + 0.5 * np.mean(t_rep == t_obs))


def aggregate(t_obs, t_rep, scores, how: str) -> float:
    ok = ~np.isnan(scores)
    if not ok.any():
        raise SpecError("no individual has held-out entries")
    if how == MEAN:
        return float(scores[ok].mean())
    return tail_score(t_rep[ok].sum(axis=0), t_obs[ok].sum())


def row_stream(stream, values, held):
    """Per-row substream keyed by row content, so scores follow rows under permutation."""
    digest = hashlib.sha256(np.ascontiguousarray(values, dtype=float).tobytes()
                            + np.ascontiguousarray(held, dtype=bool).tobytes()).hexdigest()
    return stream.child("row", digest)


def _score_row(fit, i, a, held, cfg, stream):
    idx = np.flatnonzero(held)
    gen = row_stream(stream, a, held).generator()
    post = fit.row_posterior(i)
    zs = post.sample(cfg.z_samples, gen)
    t_obs = float(fm.held_loglik(fit, zs, idx, a[idx]))
    z_rep = post.sample(cfg.replicates, gen)
    a_rep = fit.sample_entries(z_rep, idx, gen)
    t_rep = fm.held_loglik(fit, zs, idx, a_rep)
    return t_obs, t_rep


def score_fit(fit, causes, mask, cfg: CheckConfig = CheckConfig(), rng: RngLike = None,
              threads: int = 1, label: str = "") -> CheckReport:
    """Score an already-fitted model on the held-out entries ``mask``."""
    A = np.asarray(causes.causes if isinstance(causes, Dataset) else causes, dtype=float)
    held = mask.mask if isinstance(mask, HoldoutMask) else np.asarray(mask, dtype=bool)
    n = A.shape[0]
    stream = as_stream(rng, cfg.seed).child("check-replicates")
    rows = [i for i in range(n) if held[i].any()]

    def work(i):
        return _score_row(fit, i, A[i], held[i], cfg, stream)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, rows))
    else:
        results = [work(i) for i in rows]

    t_obs = np.full(n, np.nan)
    t_rep = np.full((n, cfg.replicates), np.nan)
    scores = np.full(n, np.nan)
    for i, (to, tr) in zip(rows, results):
        t_obs[i] = to
        t_rep[i] = tr
        scores[i] = tail_score(tr, to)
    score = aggregate(t_obs, t_rep, scores, cfg.aggregation)
    return CheckReport(t_obs, scores, t_rep, score, score > cfg.threshold, cfg.threshold,
                       cfg.aggregation, n - len(rows), label)


def run_check(spec, d, cfg: CheckConfig = CheckConfig(), rng: RngLike = None, mask=None,
              threads: int = 1, return_fit: bool = False):
    """Hold out entries, fit ``spec`` on the rest, and score the held-out entries."""
    stream = as_stream(rng, cfg.seed)
    A = d.causes if isinstance(d, Dataset) else np.asarray(d, dtype=float)
    if mask is None:
        mask = split_holdout(A, cfg.holdout, stream.child("holdout"))
    fit = fm.fit(spec, d, mask, rng=stream.child("fit"))
    report = score_fit(fit, A, mask, cfg, stream, threads=threads, label=spec.label())
    report.extra["holdout"] = cfg.holdout
    report.extra["seed"] = stream.seed
    report.extra["converged"] = fit.converged
    return (report, fit) if return_fit else report


def check_outcome(outcome_spec, d: Dataset, fit=None, z=None, cfg: CheckConfig = CheckConfig(),
                  rng: RngLike = None, confounder=None) -> CheckReport:
    """Predictive check of an outcome model on held-out rows.

    The outcome model is fit on a random ``1 - holdout`` share of rows. Each
    held-out row's discrepancy is its log-likelihood under the fitted model;
    replicates come from the fitted model's predictive distribution.
    """
    from .outcome import build_design, fit_outcome

    if d.outcome is None:
        raise SpecError("dataset has no outcome")
    stream = as_stream(rng, cfg.seed).child("outcome-check")
    gen = stream.child("split").generator()
    test = gen.random(d.n) < cfg.holdout
    if test.sum() == 0 or test.sum() == d.n:
        raise SpecError("holdout split left no training or no test rows")
    design = build_design(d, fit, outcome_spec, z=z, confounder=confounder)
    y = np.asarray(d.outcome, dtype=float)
    ofit = fit_outcome(design.rows(~test), y[~test], outcome_spec)
    te = np.flatnonzero(test)
    X_te = design.rows(te)
    t_obs_te = ofit.logpdf(X_te, y[te])
    rep_gen = stream.child("replicates").generator()
    y_rep = np.stack([ofit.sample(X_te, rep_gen) for _ in range(cfg.replicates)])
    t_rep_te = np.stack([ofit.logpdf(X_te, yr) for yr in y_rep]).T
    n = d.n
    t_obs = np.full(n, np.nan)
    t_rep = np.full((n, cfg.replicates), np.nan)
    scores = np.full(n, np.nan)
    t_obs[te] = t_obs_te
    t_rep[te] = t_rep_te
    for i in te:
        scores[i] = tail_score(t_rep[i], t_obs[i])
    score = aggregate(t_obs, t_rep, scores, cfg.aggregation)
    report = CheckReport(t_obs, scores, t_rep, score, score > cfg.threshold, cfg.threshold,
                         cfg.aggregation, int(n - te.size), label=f"outcome({outcome_spec.conditioning})")
    report.extra["heldout_loglik"] = float(t_obs_te.mean())
    return report


def config_to_dict(cfg: CheckConfig) -> dict:
    return asdict(cfg)
