"""Shared machinery for fitted factor models: posteriors, validation, JSON."""

from __future__ import annotations

import json

import numpy as np

from ..data import Dataset, HoldoutMask
from ..errors import DivergenceError, SpecError
from .specs import FactorModelSpec, spec_from_dict

FORMAT = "deconfounder.factor-fit"
VERSION = 1


class LatentPosterior:
    """Posterior (or approximate posterior) of one individual's latent vector."""

    mean: np.ndarray

    @property
    def k(self) -> int:
        return self.mean.shape[0]

    def _draw(self, s, gen):
        raise NotImplementedError

    def sample(self, s: int, gen: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """``s`` iid draws, shape (s, k).

        ``scale`` shrinks each draw toward the posterior mean; 0 collapses the
        posterior to its mean, 1 leaves it untouched.
        """
        if s < 1:
            raise ValueError("sample count must be >= 1")
        draws = self._draw(int(s), gen)
        if scale != 1.0:
            draws = self.mean + scale * (draws - self.mean)
        return draws


class GaussianPosterior(LatentPosterior):
    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)

    def _draw(self, s, gen):
        chol = np.linalg.cholesky(self.cov)
        return self.mean + gen.standard_normal((s, self.k)) @ chol.T


class GammaPosterior(LatentPosterior):
    """Independent Gamma(shape, rate) components."""

    def __init__(self, shape, rate):
        self.shape = np.asarray(shape, dtype=float)
        self.rate = np.asarray(rate, dtype=float)
        self.mean = self.shape / self.rate

    @property
    def cov(self):
        return np.diag(self.shape / self.rate**2)

    def _draw(self, s, gen):
        return gen.gamma(self.shape, 1.0 / self.rate, size=(s, self.k))


class GridPosterior(LatentPosterior):
    """Discrete posterior over fixed latent nodes."""

    def __init__(self, nodes, weights):
        self.nodes = np.asarray(nodes, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.mean = self.weights @ self.nodes

    @property
    def cov(self):
        centered = self.nodes - self.mean
        return (centered * self.weights[:, None]).T @ centered

    def _draw(self, s, gen):
        cdf = np.cumsum(self.weights)
        idx = np.searchsorted(cdf, gen.random(s) * cdf[-1], side="right")
        return self.nodes[np.minimum(idx, len(cdf) - 1)]


def observed_matrix(causes, mask=None):
    """Return (A, M, kinds): float data, 1.0 where observed, and column kinds."""
    kinds = None
    if isinstance(causes, Dataset):
        kinds = causes.cause_kinds
        causes = causes.causes
    A = np.array(causes, dtype=float)
    if A.ndim != 2:
        raise SpecError("causes must be a 2-d matrix")
    if isinstance(mask, HoldoutMask):
        mask = mask.mask
    if mask is None:
        M = np.ones_like(A)
    else:
        held = np.asarray(mask, dtype=bool)
        if held.shape != A.shape:
            raise SpecError("holdout mask shape does not match the causes")
        M = (~held).astype(float)
    if not np.all(np.isfinite(A[M > 0])):
        raise SpecError("observed causes must be finite")
    A = np.where(M > 0, A, 0.0)
    return A, M, kinds


def check_compatible(spec: FactorModelSpec, A, M, kinds) -> None:
    m = A.shape[1]
    if spec.k >= m:
        raise SpecError(f"{spec.label()}: latent dimension must be below the number of causes ({m})")
    if kinds is not None:
        bad = sorted({k for k in kinds if k not in spec.allowed_kinds})
        if bad:
            raise SpecError(
                f"{spec.variant} requires {'/'.join(spec.allowed_kinds)} causes; got {', '.join(bad)}")
    if "real" not in spec.allowed_kinds:
        obs = A[M > 0]
        if np.any(obs < 0) or np.any(obs != np.round(obs)):
            raise SpecError(f"{spec.variant} requires non-negative integer causes")


def check_finite(value: float, iteration: int, what: str = "objective") -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite {what} at iteration {iteration}", iteration=iteration)


def converged(trace, tol) -> bool:
    if len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    return abs(cur - prev) <= tol * max(abs(prev), 1e-300)


class FactorFit:
    """A fitted factor model of the assigned causes.

    Subclasses hold per-cause parameters and per-individual posterior
    summaries for the rows the model was fit on. Training data stays attached
    (not serialized) so posteriors can be recomputed for those rows.
    """

    spec: FactorModelSpec

    def __init__(self, spec, trace, converged_flag, n_iter, n, m):
        self.spec = spec
        self.trace = np.asarray(trace, dtype=float)
        self.converged = bool(converged_flag)
        self.n_iter = int(n_iter)
        self.n = int(n)
        self.m = int(m)
        self._A = None
        self._M = None

    @property
    def k(self) -> int:
        return self.spec.k

    def attach_data(self, A, M):
        self._A = np.asarray(A, dtype=float)
        self._M = np.asarray(M, dtype=float)
        return self

    # -- per-row posteriors -------------------------------------------------
    def row_posterior(self, i: int) -> LatentPosterior:
        raise NotImplementedError

    def posterior_means(self) -> np.ndarray:
        raise NotImplementedError

    def sample_rows(self, gen, scale: float = 1.0) -> np.ndarray:
        """One posterior draw of z_i for every training row, shape (n, k)."""
        raise NotImplementedError

    def infer_z(self, a_row, observed=None) -> LatentPosterior:
        raise NotImplementedError

    # -- generative side ----------------------------------------------------
    def reconstruct(self, z) -> np.ndarray:
        raise NotImplementedError

    def entry_logpdf_mean(self, z_samples, idx, values) -> np.ndarray:
        """Average over z samples of log p(values[..., h] | z) for causes ``idx``."""
        raise NotImplementedError

    def sample_entries(self, z, idx, gen) -> np.ndarray:
        """Draw causes ``idx`` given each row of ``z``; shape (len(z), len(idx))."""
        raise NotImplementedError

    def conditional_spread(self, z) -> np.ndarray:
        """Variance (real models) or entropy (count models) of A_ij | z_i."""
        raise NotImplementedError

    spread_kind = "variance"

    # -- serialization ------------------------------------------------------
    def _params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "spec": self.spec.to_dict(),
            "n": self.n,
            "m": self.m,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "trace": self.trace.tolist(),
            "params": {k: np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
                       for k, v in self._params().items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def _from_params(cls, spec, params, trace, conv, n_iter, n, m):
        raise NotImplementedError


def _check_row(fit: FactorFit, a_row, observed):
    a = np.asarray(a_row, dtype=float).reshape(-1)
    if a.shape[0] != fit.m:
        raise SpecError(f"expected a cause vector of length {fit.m}, got {a.shape[0]}")
    obs = np.ones(fit.m, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    if obs.shape != a.shape:
        raise SpecError("observed mask must match the cause vector")
    if not obs.any():
        raise SpecError("cannot infer z from a row with no observed causes")
    return np.where(obs, a, 0.0)[None, :], obs.astype(float)[None, :]


def fit_from_dict(data: dict) -> FactorFit:
    from . import FIT_TYPES

    if data.get("format") != FORMAT:
        raise SpecError("not a factor-fit document")
    if data.get("version") != VERSION:
        raise SpecError(f"unsupported factor-fit version {data.get('version')}")
    spec = spec_from_dict(data["spec"])
    params = {k: np.asarray(v, dtype=float) if isinstance(v, list) else v
              for k, v in data["params"].items()}
    return FIT_TYPES[spec.variant]._from_params(
        spec, params, data["trace"], data["converged"], data["n_iter"], data["n"], data["m"])
