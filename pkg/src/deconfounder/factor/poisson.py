"""Poisson factorization with Gamma priors, fit by coordinate-ascent VI.

Uses the usual auxiliary-multinomial augmentation in matrix form: with
G_z = exp(E log z) and G_t = exp(E log theta), the optimal multinomial
weights never need to be materialized, only S = G_z G_t^T.
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, gammaln

from ..kernels import poisson_entropy
from .base import FactorFit, GammaPosterior, _check_row, check_finite, converged


def _geo(shape, rate):
    return np.exp(digamma(shape) - np.log(rate))


def _gamma_kl_terms(shape, rate, a0, a1):
    """Sum of E_q[log p] - E_q[log q] for independent Gamma factors."""
    elog = digamma(shape) - np.log(rate)
    ex = shape / rate
    lp = a0 * np.log(a1) - gammaln(a0) + (a0 - 1) * elog - a1 * ex
    lq = shape * np.log(rate) - gammaln(shape) + (shape - 1) * elog - rate * ex
    return float((lp - lq).sum())


def _ratio(A, M, S):
    return np.where((M > 0) & (A > 0), A / np.where(S > 0, S, 1.0), 0.0)


def elbo(A, M, shp_z, rte_z, shp_t, rte_t, a0, a1, lgam_const=None) -> float:
    S = _geo(shp_z, rte_z) @ _geo(shp_t, rte_t).T
    Ez = shp_z / rte_z
    Et = shp_t / rte_t
    obs = M > 0
    loglik = np.where(obs & (A > 0), A * np.log(np.where(S > 0, S, 1.0)), 0.0).sum()
    loglik -= float(((M @ Et) * Ez).sum())
    if lgam_const is None:
        lgam_const = float(gammaln(A[obs] + 1).sum())
    return float(loglik - lgam_const
                 + _gamma_kl_terms(shp_z, rte_z, a0, a1) + _gamma_kl_terms(shp_t, rte_t, a0, a1))


def fit_poisson(spec, A, M, gen):
    n, m = A.shape
    K = spec.k
    a0, a1 = spec.shape, spec.rate
    shp_z = a0 * gen.uniform(0.9, 1.1, size=(n, K))
    rte_z = a1 * gen.uniform(0.9, 1.1, size=(n, K))
    shp_t = a0 * gen.uniform(0.9, 1.1, size=(m, K))
    rte_t = a1 * gen.uniform(0.9, 1.1, size=(m, K))
    obs = M > 0
    MA = np.where(obs, A, 0.0)
    full = bool(obs.all())
    lgam_const = float(gammaln(A[obs] + 1).sum())

    def exposure(W, Mx):
        # sum over observed partners of E[w]; a plain column sum when nothing is held out
        return np.broadcast_to(W.sum(axis=0), (Mx.shape[0], W.shape[1])) if full else Mx @ W

    Gz, Gt = _geo(shp_z, rte_z), _geo(shp_t, rte_t)
    S = Gz @ Gt.T
    trace = []
    done = False
    for it in range(spec.max_iter):
        shp_z = a0 + Gz * ((MA / S) @ Gt)
        rte_z = a1 + exposure(shp_t / rte_t, M)
        Gz = _geo(shp_z, rte_z)
        S = Gz @ Gt.T
        shp_t = a0 + Gt * ((MA / S).T @ Gz)
        rte_t = a1 + exposure(shp_z / rte_z, M.T)
        Gt = _geo(shp_t, rte_t)
        S = Gz @ Gt.T
        Ez, Et = shp_z / rte_z, shp_t / rte_t
        expected = float((Ez.sum(axis=0) * Et.sum(axis=0)).sum()) if full else float(((M @ Et) * Ez).sum())
        value = float((MA * np.log(S)).sum() - expected - lgam_const
                      + _gamma_kl_terms(shp_z, rte_z, a0, a1) + _gamma_kl_terms(shp_t, rte_t, a0, a1))
        check_finite(value, it, "ELBO")
        trace.append(value)
        if converged(trace, spec.tol):
            done = True
            break
    fit = PoissonFactorFit(spec, trace, done, len(trace), n, m,
                           shape_z=shp_z, rate_z=rte_z, shape_t=shp_t, rate_t=rte_t)
    return fit.attach_data(A, M)


class PoissonFactorFit(FactorFit):
    """Variational Gamma posteriors for z (n, K) and theta (m, K)."""

    spread_kind = "entropy"

    def __init__(self, spec, trace, conv, n_iter, n, m, *, shape_z, rate_z, shape_t, rate_t):
        super().__init__(spec, trace, conv, n_iter, n, m)
        K = spec.k
        self.shape_z = np.asarray(shape_z, dtype=float).reshape(n, K)
        self.rate_z = np.asarray(rate_z, dtype=float).reshape(n, K)
        self.shape_t = np.asarray(shape_t, dtype=float).reshape(m, K)
        self.rate_t = np.asarray(rate_t, dtype=float).reshape(m, K)

    @property
    def theta(self):
        """Posterior-mean loadings used as the point estimate of theta."""
        return self.shape_t / self.rate_t

    def row_posterior(self, i):
        return GammaPosterior(self.shape_z[i], self.rate_z[i])

    def posterior_means(self):
        return self.shape_z / self.rate_z

    def sample_rows(self, gen, scale=1.0):
        draws = gen.gamma(self.shape_z, 1.0 / self.rate_z)
        if scale != 1.0:
            mean = self.posterior_means()
            draws = mean + scale * (draws - mean)
        return draws

    def infer_z(self, a_row, observed=None, max_iter=500, tol=1e-10):
        a, obs = _check_row(self, a_row, observed)
        a0, a1 = self.spec.shape, self.spec.rate
        Gt = _geo(self.shape_t, self.rate_t)
        rte = a1 + obs @ self.theta
        shp = np.full_like(rte, a0)
        for _ in range(max_iter):
            R = _ratio(a, obs, _geo(shp, rte) @ Gt.T)
            new = a0 + _geo(shp, rte) * (R @ Gt)
            delta = np.abs(new - shp).max()
            shp = new
            if delta < tol:
                break
        return GammaPosterior(shp[0], rte[0])

    def reconstruct(self, z):
        return np.asarray(z, dtype=float) @ self.theta.T

    def entry_logpdf_mean(self, z_samples, idx, values):
        mu = np.asarray(z_samples, dtype=float) @ self.theta[idx].T
        with np.errstate(divide="ignore"):
            elog = np.log(mu).mean(axis=0)
        x = np.asarray(values, dtype=float)
        bad = (x < 0) | (x != np.round(x))
        with np.errstate(invalid="ignore"):
            out = np.where(x > 0, x * elog, 0.0) - mu.mean(axis=0) - gammaln(np.where(bad, 0, x) + 1)
        return np.where(bad, -np.inf, out)

    def sample_entries(self, z, idx, gen):
        mu = np.asarray(z, dtype=float) @ self.theta[idx].T
        return gen.poisson(mu).astype(float)

    def conditional_spread(self, z):
        return poisson_entropy(np.atleast_2d(z) @ self.theta.T)

    def _params(self):
        return {"shape_z": self.shape_z, "rate_z": self.rate_z,
                "shape_t": self.shape_t, "rate_t": self.rate_t}

    @classmethod
    def _from_params(cls, spec, params, trace, conv, n_iter, n, m):
        return cls(spec, trace, conv, n_iter, n, m, **params)
