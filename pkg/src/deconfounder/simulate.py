"""Semi-synthetic benchmarks with known causal coefficients.

Two families: a smoking-style study where one unobserved confounder drives
two (or three) observed causes, and GWAS-style genotypes with population
structure (Balding-Nichols, PSD admixture, spatial).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import BINARY, COUNT, REAL, Dataset
from .errors import DataValidationError, SpecError
from .kernels import kmeans_assign
from .rng import RngLike, as_stream

F_CLIP = 1e-4
SNR_PROFILES = {"low": (0.1, 0.2, 0.7), "high": (0.4, 0.4, 0.2)}
HAPMAP_PROPORTIONS = (60 / 210, 60 / 210, 90 / 210)


@dataclass
class SimTruth:
    """Ground truth behind a simulated dataset.

    ``beta`` lists the true coefficient of every observed cause. For binary
    GWAS traits ``effect_sign`` is -1: the trait probability is
    1 / (1 + exp(+eta)), so a logistic fit recovers ``-beta`` up to scale.
    """

    beta: np.ndarray
    cause_names: tuple
    confounder: np.ndarray
    params: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)
    effect_sign: int = 1

    def to_dict(self) -> dict:
        out = {
            "beta": {n: float(b) for n, b in zip(self.cause_names, self.beta)},
            "cause_names": list(self.cause_names),
            "effect_sign": self.effect_sign,
            "params": self.params,
            "confounder": np.asarray(self.confounder, dtype=float).tolist(),
        }
        for key in ("groups", "tau2"):
            if key in self.arrays:
                out[key] = np.asarray(self.arrays[key]).tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "SimTruth":
        # JSON object order is not preserved under sort_keys; the list is
        names = tuple(data.get("cause_names", data["beta"]))
        arrays = {k: np.asarray(data[k]) for k in ("groups", "tau2") if k in data}
        return cls(np.array([data["beta"][n] for n in names], dtype=float), names,
                   np.asarray(data.get("confounder", []), dtype=float), data.get("params", {}),
                   arrays, int(data.get("effect_sign", 1)))

    @classmethod
    def load(cls, path) -> "SimTruth":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _std(x, axis=0):
    return np.std(x, axis=axis)


def _standardize(x):
    sd = _std(x)
    if np.any(sd == 0):
        raise DataValidationError("simulated column has zero variance")
    return (x - x.mean(axis=0)) / sd


# ---------------------------------------------------------------------------
# smoking-style two-cause study


@dataclass(frozen=True)
class TwoCauseSimConfig:
    n: int = 9708
    link: str = "quadratic"
    dependent_cause: bool = False
    noise_sd: float = 1.0
    link_slope: float = 1.0
    link_quadratic: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.n < 10:
            raise SpecError("n must be >= 10")
        if self.link not in ("linear", "quadratic"):
            raise SpecError("link must be 'linear' or 'quadratic'")
        if self.noise_sd < 0:
            raise SpecError("noise_sd must be >= 0")


def simulate_two_cause(cfg: TwoCauseSimConfig = TwoCauseSimConfig(), rng: RngLike = None):
    """Return ``(Dataset, SimTruth)``; the confounder (age) is not among the causes.

    Causes and the confounder are standardized before the outcome is drawn,
    so ``beta`` is on the standardized scale. The outcome itself is left
    unstandardized so the coefficients stay exactly known.
    """
    stream = as_stream(rng, cfg.seed)
    g = stream.child("two-cause").generator()
    n = cfg.n
    age = g.standard_normal(n)
    quad = cfg.link_quadratic if cfg.link == "quadratic" else 0.0
    link = cfg.link_slope * age + quad * age**2
    mar = link + cfg.noise_sd * g.standard_normal(n)
    exp_ = link + cfg.noise_sd * g.standard_normal(n)
    cols = [mar, exp_]
    names = ["mar", "exp"]
    if cfg.dependent_cause:
        cols.append(mar + g.standard_normal(n))
        names.append("marplus")
    causes = _standardize(np.column_stack(cols))
    age = _standardize(age[:, None])[:, 0]
    beta = g.standard_normal(len(names))
    beta_age = float(g.standard_normal())
    y = causes @ beta + beta_age * age + g.standard_normal(n)
    d = Dataset(causes, y, cause_kinds=(REAL,) * len(names), cause_names=tuple(names))
    truth = SimTruth(beta, tuple(names), age,
                     params={**asdict(cfg), "beta_age": beta_age, "seed": stream.seed})
    return d, truth


# ---------------------------------------------------------------------------
# GWAS-style genotypes


@dataclass(frozen=True)
class GwasSimConfig:
    generator: str = "bn"
    n: int = 1000
    m: int = 500
    d: int = 3
    alpha: float = 0.5
    tau: float = 0.5
    snr: str = "low"
    family: str = "real"
    causal_fraction: float = 0.01
    causal_sd: float = 0.5
    groups: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.generator not in ("bn", "psd", "spatial"):
            raise SpecError("generator must be bn, psd or spatial")
        if self.n < 10 or self.m < 10:
            raise SpecError("n and m must be >= 10")
        if self.d != 3:
            raise SpecError("the structure dimension is fixed at d = 3")
        if not (self.alpha > 0 and self.tau > 0):
            raise SpecError("alpha and tau must be > 0")
        if self.snr not in SNR_PROFILES:
            raise SpecError(f"snr must be one of {sorted(SNR_PROFILES)}")
        if self.family not in ("real", "binary"):
            raise SpecError("family must be real or binary")

    @property
    def shares(self):
        return SNR_PROFILES[self.snr]


@dataclass
class GenotypeSim:
    """Genotypes ``A`` (n x m), per-SNP structure loadings ``gamma`` (m x d),
    per-individual structure ``S`` (d x n) and allele frequencies ``F`` (n x m)."""

    A: np.ndarray
    gamma: np.ndarray
    S: np.ndarray
    F: np.ndarray


def balding_nichols(p, fst, size, gen):
    """Beta(p (1 - F) / F, (1 - p) (1 - F) / F) draws, one row per (p, F) pair."""
    p = np.asarray(p, dtype=float)[:, None]
    fst = np.asarray(fst, dtype=float)[:, None]
    scale = (1 - fst) / fst
    return gen.beta(p * scale, (1 - p) * scale, size=(p.shape[0], size))


def load_pfst(path) -> np.ndarray:
    """Read a two-column ``p,fst`` CSV of allele frequencies and F_ST values."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["p", "fst"]:
            raise SpecError("p/fst table must have header 'p,fst'")
        for k, row in enumerate(reader, start=2):
            try:
                p, f = float(row["p"]), float(row["fst"])
            except (TypeError, ValueError):
                raise SpecError(f"bad number on line {k} of {path}") from None
            if not (0 < p < 1 and 0 < f < 1):
                raise SpecError(f"line {k}: need 0 < p < 1 and 0 < fst < 1")
            rows.append((p, f))
    if not rows:
        raise SpecError("p/fst table is empty")
    return np.array(rows)


def simulate_genotypes(cfg: GwasSimConfig = GwasSimConfig(), rng: RngLike = None,
                       pfst: Optional[np.ndarray] = None) -> GenotypeSim:
    stream = as_stream(rng, cfg.seed).child("genotypes")
    g_gamma = stream.child("gamma").generator()
    g_s = stream.child("structure").generator()
    n, m, d = cfg.n, cfg.m, cfg.d
    if cfg.generator in ("bn", "psd"):
        if pfst is None:
            p = g_gamma.uniform(0.05, 0.95, size=m)
            fst = g_gamma.uniform(0.01, 0.2, size=m)
        else:
            pick = g_gamma.integers(0, len(pfst), size=m)
            p, fst = pfst[pick, 0], pfst[pick, 1]
        gamma = balding_nichols(p, fst, d, g_gamma)
        if cfg.generator == "bn":
            S = np.eye(d)[:, g_s.choice(d, size=n, p=HAPMAP_PROPORTIONS)]
        else:
            S = g_s.dirichlet(np.full(d, cfg.alpha), size=n).T
    else:
        gamma = np.column_stack([0.9 * g_gamma.uniform(0, 0.5, size=(m, 2)), np.full(m, 0.05)])
        S = np.vstack([g_s.beta(cfg.tau, cfg.tau, size=(2, n)), np.ones((1, n))])
    F = np.clip((gamma @ S).T, F_CLIP, 1 - F_CLIP)
    A = stream.child("binomial").generator().binomial(2, F)
    return GenotypeSim(A, gamma, S, F)


def _kmeans_pp(X, k, gen):
    n = X.shape[0]
    centers = [X[gen.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = gen.integers(n) if total <= 0 else gen.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(X, k, gen, restarts: int = 20, max_iter: int = 300):
    """Lloyd's algorithm from k-means++ starts; returns (labels 0..k-1, centers, inertia)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < k:
        raise SpecError(f"need at least {k} points for {k} clusters")
    best = None
    for _ in range(restarts):
        C = _kmeans_pp(X, k, gen)
        labels, dist = kmeans_assign(X, C)
        for _ in range(max_iter):
            newC = C.copy()
            for c in range(k):
                members = labels == c
                if members.any():
                    newC[c] = X[members].mean(axis=0)
            new_labels, dist = kmeans_assign(X, newC)
            C = newC
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        inertia = float(dist.sum())
        if best is None or inertia < best[2]:
            best = (labels, C, inertia)
    return best


def assign_groups(S, k: int = 3, rng: RngLike = None, restarts: int = 20) -> np.ndarray:
    """K-means on the columns of S (one per individual); labels in 1..k."""
    if k < 2:
        raise SpecError("need k >= 2 groups")
    gen = as_stream(rng).child("kmeans").generator()
    labels, _, _ = kmeans(np.asarray(S, dtype=float).T, k, gen, restarts=restarts)
    return labels + 1


def simulate_trait(A, groups, cfg: GwasSimConfig = GwasSimConfig(), rng: RngLike = None):
    """Return ``(y, parts)`` where parts holds beta, signal, lambda, eps, tau2."""
    stream = as_stream(rng, cfg.seed).child("trait")
    g = stream.generator()
    A = np.asarray(A, dtype=float)
    groups = np.asarray(groups)
    n, m = A.shape
    if groups.shape != (n,):
        raise SpecError("need one group label per individual")
    n_causal = math.ceil(round(cfg.causal_fraction * m, 9))
    beta = np.zeros(m)
    beta[:n_causal] = g.normal(0.0, cfg.causal_sd, size=n_causal)
    labels = np.unique(groups)
    tau2 = 1.0 / g.gamma(3.0, 1.0, size=len(labels))
    sd_i = np.sqrt(tau2[np.searchsorted(labels, groups)])
    eps = sd_i * g.standard_normal(n)
    lam = groups.astype(float)
    signal = A @ beta
    nu_gene, nu_conf, nu_noise = cfg.shares
    sd_sig = _std(signal)
    if not sd_sig > 0:
        raise DataValidationError("SNP signal has zero variance; increase m or change the seed")
    if not _std(lam) > 0:
        raise DataValidationError("all individuals fell in one group; change the seed")
    lam = (sd_sig / math.sqrt(nu_gene)) * (math.sqrt(nu_conf) / _std(lam)) * lam
    eps = (sd_sig / math.sqrt(nu_gene)) * (math.sqrt(nu_noise) / _std(eps)) * eps
    eta = signal + lam + eps
    if cfg.family == "real":
        y = eta
    else:
        prob = 1.0 / (1.0 + np.exp(eta))
        y = (stream.child("bernoulli").generator().random(n) < prob).astype(float)
    return y, {"beta": beta, "signal": signal, "lambda": lam, "eps": eps, "tau2": tau2}


def simulate_gwas(cfg: GwasSimConfig = GwasSimConfig(), rng: RngLike = None,
                  pfst: Optional[np.ndarray] = None):
    """Genotypes, groups and trait in one call; returns ``(Dataset, SimTruth)``."""
    stream = as_stream(rng, cfg.seed)
    geno = simulate_genotypes(cfg, stream, pfst=pfst)
    groups = assign_groups(geno.S, cfg.groups, stream)
    y, parts = simulate_trait(geno.A, groups, cfg, stream)
    names = tuple(f"snp{j}" for j in range(cfg.m))
    d = Dataset(geno.A.astype(float), y, cause_kinds=(COUNT,) * cfg.m, cause_names=names)
    truth = SimTruth(
        parts["beta"], names, parts["lambda"],
        params={**asdict(cfg), "shares": list(cfg.shares), "seed": stream.seed,
                "pfst": "uniform surrogate" if pfst is None else "user table"},
        arrays={"groups": groups, "tau2": parts["tau2"], "gamma": geno.gamma, "S": geno.S,
                "F": geno.F, "signal": parts["signal"], "eps": parts["eps"]},
        effect_sign=-1 if cfg.family == "binary" else 1)
    return d, truth


def outcome_kind(cfg: GwasSimConfig) -> str:
    return BINARY if cfg.family == "binary" else REAL
