"""Probabilistic PCA and the linear factor model (PPCA with intercepts), fit by EM."""

from __future__ import annotations

import math

import numpy as np

from ..kernels import gaussian_estep
from .base import FactorFit, GaussianPosterior, _check_row, check_finite, converged

NOISE_FLOOR = 1e-10
_LOG_2PI = math.log(2.0 * math.pi)


def marginal_loglik(A, M, loadings, offsets, noise_var, prior_var) -> float:
    """Log-likelihood of the observed entries with z integrated out."""
    return float(gaussian_estep(A, M, loadings, offsets, noise_var, prior_var)[2].sum())


def marginal_loglik_grad(A, M, loadings, offsets, noise_var, prior_var) -> np.ndarray:
    """Gradient of :func:`marginal_loglik` with respect to the loadings (m, K).

    Uses the Fisher identity: the gradient of the marginal equals the
    posterior expectation of the complete-data gradient.
    """
    means, covs, _ = gaussian_estep(A, M, loadings, offsets, noise_var, prior_var)
    Ezz = covs + means[:, :, None] * means[:, None, :]
    R = M * (A - offsets)
    K = loadings.shape[1]
    G = (M.T @ Ezz.reshape(len(A), K * K)).reshape(-1, K, K)
    return (R.T @ means - np.einsum("jkl,jl->jk", G, loadings)) / noise_var


def _mstep(A, M, means, covs, intercept, prev):
    n, K = means.shape
    if intercept:
        Ef = np.hstack([means, np.ones((n, 1))])
        Eff = np.zeros((n, K + 1, K + 1))
        Eff[:, :K, :K] = covs + means[:, :, None] * means[:, None, :]
        Eff[:, :K, K] = Eff[:, K, :K] = means
        Eff[:, K, K] = 1.0
    else:
        Ef = means
        Eff = covs + means[:, :, None] * means[:, None, :]
    p = Ef.shape[1]
    G = (M.T @ Eff.reshape(n, p * p)).reshape(-1, p, p)
    c = (M * A).T @ Ef
    W = prev.copy()
    ok = M.sum(axis=0) > 0
    W[ok] = np.linalg.solve(G[ok], c[ok][:, :, None])[:, :, 0]
    return W, G, c


def _split(W, K, intercept):
    if intercept:
        return W[:, :K], W[:, K]
    return W, np.zeros(W.shape[0])


def fit_gaussian(spec, A, M, gen, intercept: bool):
    n, m = A.shape
    K = spec.k
    nobs = M.sum(axis=0)
    colmean = np.where(nobs > 0, (M * A).sum(axis=0) / np.maximum(nobs, 1), 0.0)
    b = colmean if intercept else np.zeros(m)
    if spec.init == "pca":
        filled = np.where(M > 0, A - b, 0.0)
        _, s, vt = np.linalg.svd(filled, full_matrices=False)
        L = vt[:K].T * (s[:K] / math.sqrt(n * spec.prior_var))
    else:
        L = gen.uniform(-0.1, 0.1, size=(m, K))
    W = np.hstack([L, b[:, None]]) if intercept else L
    if spec.learn_noise:
        resid = np.where(M > 0, A - b, 0.0)
        sigma2 = max(float((resid**2).sum() / max(M.sum(), 1)), 1e-6)
    else:
        sigma2 = float(spec.noise_var)

    trace = []
    done = False
    for it in range(spec.max_iter):
        L, b = _split(W, K, intercept)
        means, covs, ll = gaussian_estep(A, M, L, b, sigma2, spec.prior_var)
        total = float(ll.sum())
        check_finite(total, it)
        trace.append(total)
        if converged(trace, spec.tol):
            done = True
            break
        W, G, c = _mstep(A, M, means, covs, intercept, W)
        if spec.learn_noise:
            ss = float((M * A * A).sum() - 2.0 * (W * c).sum()
                       + np.einsum("jp,jpq,jq->", W, G, W))
            sigma2 = max(ss / M.sum(), NOISE_FLOOR)
    if not done:
        L, b = _split(W, K, intercept)
        means, covs, ll = gaussian_estep(A, M, L, b, sigma2, spec.prior_var)
        trace.append(float(ll.sum()))
        done = converged(trace, spec.tol)
    L, b = _split(W, K, intercept)
    fit = GaussianFactorFit(spec, trace, done, len(trace), n, m,
                            loadings=L, offsets=b, noise_var=sigma2,
                            means=means, covs=covs)
    return fit.attach_data(A, M)


class GaussianFactorFit(FactorFit):
    """Fitted PPCA / linear factor model; exact Gaussian posteriors."""

    def __init__(self, spec, trace, conv, n_iter, n, m, *, loadings, offsets, noise_var, means, covs):
        super().__init__(spec, trace, conv, n_iter, n, m)
        self.loadings = np.asarray(loadings, dtype=float).reshape(m, spec.k)
        self.offsets = np.asarray(offsets, dtype=float).reshape(m)
        self.noise_var = float(noise_var)
        self.means = np.asarray(means, dtype=float).reshape(n, spec.k)
        self.covs = np.asarray(covs, dtype=float).reshape(n, spec.k, spec.k)

    @property
    def prior_var(self):
        return self.spec.prior_var

    def row_posterior(self, i):
        return GaussianPosterior(self.means[i], self.covs[i])

    def posterior_means(self):
        return self.means

    def sample_rows(self, gen, scale=1.0):
        chol = np.linalg.cholesky(self.covs)
        eps = gen.standard_normal(self.means.shape)
        return self.means + scale * np.einsum("ikl,il->ik", chol, eps)

    def infer_z(self, a_row, observed=None):
        a, obs = _check_row(self, a_row, observed)
        means, covs, _ = gaussian_estep(a, obs, self.loadings, self.offsets,
                                        self.noise_var, self.prior_var)
        return GaussianPosterior(means[0], covs[0])

    def reconstruct(self, z):
        return np.asarray(z, dtype=float) @ self.loadings.T + self.offsets

    def _entry_means(self, z, idx):
        return np.asarray(z, dtype=float) @ self.loadings[idx].T + self.offsets[idx]

    def entry_logpdf_mean(self, z_samples, idx, values):
        mu = self._entry_means(z_samples, idx)
        e1 = mu.mean(axis=0)
        e2 = (mu * mu).mean(axis=0)
        x = np.asarray(values, dtype=float)
        return -0.5 * (_LOG_2PI + math.log(self.noise_var)) - (x * x - 2 * x * e1 + e2) / (2 * self.noise_var)

    def sample_entries(self, z, idx, gen):
        mu = self._entry_means(z, idx)
        return mu + math.sqrt(self.noise_var) * gen.standard_normal(mu.shape)

    def conditional_spread(self, z):
        z = np.atleast_2d(z)
        return np.full((z.shape[0], self.m), self.noise_var)

    def marginal_loglik(self, A, M=None):
        M = np.ones_like(A, dtype=float) if M is None else M
        return marginal_loglik(A, M, self.loadings, self.offsets, self.noise_var, self.prior_var)

    def _params(self):
        return {"loadings": self.loadings, "offsets": self.offsets, "noise_var": self.noise_var,
                "means": self.means, "covs": self.covs}

    @classmethod
    def _from_params(cls, spec, params, trace, conv, n_iter, n, m):
        return cls(spec, trace, conv, n_iter, n, m, **params)
