"""Factor models of the assigned causes."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..rng import as_stream
from .base import (FactorFit, GammaPosterior, GaussianPosterior, GridPosterior, LatentPosterior,
                   check_compatible, fit_from_dict, observed_matrix)
from .gaussian import GaussianFactorFit, fit_gaussian
from .lfa import LFAFit, fit_lfa
from .poisson import PoissonFactorFit, fit_poisson
from .quadratic import QuadraticFactorFit, fit_quadratic
from .specs import (SPEC_TYPES, FactorModelSpec, LFASpec, LinearFactorSpec, PoissonFactorSpec,
                    PPCASpec, QuadraticFactorSpec, parse_factor_spec, spec_from_dict)

FIT_TYPES = {
    "ppca": GaussianFactorFit,
    "linear": GaussianFactorFit,
    "quadratic": QuadraticFactorFit,
    "pf": PoissonFactorFit,
    "lfa": LFAFit,
}

_FITTERS = {
    "ppca": lambda spec, A, M, gen: fit_gaussian(spec, A, M, gen, intercept=False),
    "linear": lambda spec, A, M, gen: fit_gaussian(spec, A, M, gen, intercept=True),
    "quadratic": fit_quadratic,
    "pf": fit_poisson,
    "lfa": fit_lfa,
}


def fit(spec: FactorModelSpec, causes, mask=None, rng=None) -> FactorFit:
    """Fit ``spec`` to a cause matrix (or Dataset), skipping held-out entries.

    ``mask`` is a boolean matrix (True = held out) or a HoldoutMask. ``rng``
    defaults to a stream seeded by ``spec.seed``.
    """
    A, M, kinds = observed_matrix(causes, mask)
    check_compatible(spec, A, M, kinds)
    gen = as_stream(rng, spec.seed).child("factor-fit", spec.variant).generator()
    return _FITTERS[spec.variant](spec, A, M, gen)


def infer_z(fit: FactorFit, a_row, observed=None) -> LatentPosterior:
    return fit.infer_z(a_row, observed)


def reconstruct_causes(fit: FactorFit, z) -> np.ndarray:
    """E[A | z] under the fitted model."""
    return fit.reconstruct(z)


def sample_z(posterior: LatentPosterior, s: int, rng=None, scale: float = 1.0) -> np.ndarray:
    return posterior.sample(s, as_stream(rng).generator(), scale=scale)


def held_loglik(fit: FactorFit, z_samples, idx, values) -> np.ndarray:
    """t(a_held) = E_z[log p(a_held | z)] summed over the held entries.

    ``values`` may carry leading replicate axes; the result drops the last axis.
    """
    idx = np.asarray(idx, dtype=np.int64)
    return np.asarray(fit.entry_logpdf_mean(np.atleast_2d(z_samples), idx, values)).sum(axis=-1)


def save_fit(fit: FactorFit, path) -> None:
    Path(path).write_text(fit.to_json() + "\n")


def load_fit(path) -> FactorFit:
    return fit_from_dict(json.loads(Path(path).read_text()))


__all__ = [
    "FIT_TYPES", "SPEC_TYPES", "FactorFit", "FactorModelSpec", "GammaPosterior", "GaussianFactorFit",
    "GaussianPosterior", "GridPosterior", "LFAFit", "LFASpec", "LatentPosterior", "LinearFactorSpec",
    "PPCASpec", "PoissonFactorFit", "PoissonFactorSpec", "QuadraticFactorFit", "QuadraticFactorSpec",
    "fit", "fit_from_dict", "held_loglik", "infer_z", "load_fit", "parse_factor_spec",
    "reconstruct_causes", "sample_z", "save_fit", "spec_from_dict",
]
