"""Quadratic factor model fit by EM over a fixed latent grid.

The latent prior N(0, I) is replaced by its restriction to a regular grid on
[-grid_limit, grid_limit]^k, which makes the E-step exact and the EM trace
monotone. The M-step is weighted least squares on features [1, z, z**2].
"""

from __future__ import annotations

import math

import numpy as np

from ..kernels import grid_estep, grid_log_weights
from .base import FactorFit, GridPosterior, _check_row, check_finite, converged
from .gaussian import NOISE_FLOOR

_LOG_2PI = math.log(2.0 * math.pi)


def latent_grid(k: int, points: int, limit: float):
    """Grid nodes (G, k) and normalized log prior weights (G,)."""
    axis = np.linspace(-limit, limit, points)
    X = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
    lp = -0.5 * (X * X).sum(axis=1)
    lp -= np.logaddexp.reduce(lp)
    return X, lp


def features(z) -> np.ndarray:
    """[1, z, z**2] per row."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return np.hstack([np.ones((z.shape[0], 1)), z, z * z])


def fit_quadratic(spec, A, M, gen):
    n, m = A.shape
    X, logprior = latent_grid(spec.k, spec.points_per_axis(), spec.grid_limit)
    F = features(X)
    p = F.shape[1]
    nobs = M.sum(axis=0)
    colmean = np.where(nobs > 0, (M * A).sum(axis=0) / np.maximum(nobs, 1), 0.0)
    # start the linear terms on the leading principal directions; from a tiny
    # random start EM idles on a near-symmetric plateau and stops there
    filled = np.where(M > 0, A - colmean, 0.0)
    _, s, vt = np.linalg.svd(filled, full_matrices=False)
    lead = vt[:spec.k].T * (s[:spec.k] / np.sqrt(n))
    W = np.hstack([colmean[:, None], lead, np.zeros((m, spec.k))])
    W[:, 1:] += gen.uniform(-0.1, 0.1, size=(m, p - 1))
    if spec.learn_noise:
        resid = np.where(M > 0, A - colmean, 0.0)
        sigma2 = max(float((resid**2).sum() / max(M.sum(), 1)), 1e-6)
    else:
        sigma2 = float(spec.noise_var)

    trace = []
    done = False
    ok = nobs > 0
    for it in range(spec.max_iter):
        ll, Ef, Eff, zmean, zcov = grid_estep(A, M, F @ W.T, F, X, logprior, sigma2)
        total = float(ll.sum())
        check_finite(total, it)
        trace.append(total)
        if converged(trace, spec.tol):
            done = True
            break
        G = (M.T @ Eff.reshape(n, p * p)).reshape(m, p, p)
        c = (M * A).T @ Ef
        # tiny ridge guards columns whose posterior features are collinear
        G_ok = G[ok] + 1e-12 * np.eye(p)
        W[ok] = np.linalg.solve(G_ok, c[ok][:, :, None])[:, :, 0]
        if spec.learn_noise:
            ss = float((M * A * A).sum() - 2.0 * (W * c).sum() + np.einsum("jp,jpq,jq->", W, G, W))
            sigma2 = max(ss / M.sum(), NOISE_FLOOR)
    if not done:
        ll, Ef, Eff, zmean, zcov = grid_estep(A, M, F @ W.T, F, X, logprior, sigma2)
        trace.append(float(ll.sum()))
        done = converged(trace, spec.tol)
    fit = QuadraticFactorFit(spec, trace, done, len(trace), n, m,
                             coef=W, noise_var=sigma2, means=zmean, covs=zcov)
    return fit.attach_data(A, M)


class QuadraticFactorFit(FactorFit):
    """Per-cause coefficients ``coef[j] = [eta0, eta1 (k), eta2 (k)]``."""

    def __init__(self, spec, trace, conv, n_iter, n, m, *, coef, noise_var, means, covs):
        super().__init__(spec, trace, conv, n_iter, n, m)
        k = spec.k
        self.coef = np.asarray(coef, dtype=float).reshape(m, 1 + 2 * k)
        self.noise_var = float(noise_var)
        self.means = np.asarray(means, dtype=float).reshape(n, k)
        self.covs = np.asarray(covs, dtype=float).reshape(n, k, k)
        self._grid = latent_grid(k, spec.points_per_axis(), spec.grid_limit)

    @property
    def intercepts(self):
        return self.coef[:, 0]

    @property
    def linear_coef(self):
        return self.coef[:, 1:1 + self.k]

    @property
    def quadratic_coef(self):
        return self.coef[:, 1 + self.k:]

    def _weights(self, A, M):
        X, logprior = self._grid
        Mu = features(X) @ self.coef.T
        lw, _ = grid_log_weights(A, M, Mu, logprior, self.noise_var)
        lw -= lw.max(axis=1, keepdims=True)
        w = np.exp(lw)
        return w / w.sum(axis=1, keepdims=True)

    def _require_data(self):
        if self._A is None:
            raise RuntimeError("training data not attached; call attach_data(A, M)")

    def row_posterior(self, i):
        self._require_data()
        w = self._weights(self._A[i:i + 1], self._M[i:i + 1])[0]
        return GridPosterior(self._grid[0], w)

    def posterior_means(self):
        return self.means

    def sample_rows(self, gen, scale=1.0):
        self._require_data()
        X = self._grid[0]
        out = np.empty((self.n, self.k))
        step = max(1, 2_000_000 // len(X))
        for start in range(0, self.n, step):
            sl = slice(start, min(self.n, start + step))
            cdf = np.cumsum(self._weights(self._A[sl], self._M[sl]), axis=1)
            u = gen.random(cdf.shape[0])[:, None]
            idx = np.minimum((cdf < u).sum(axis=1), len(X) - 1)
            out[sl] = X[idx]
        if scale != 1.0:
            out = self.means + scale * (out - self.means)
        return out

    def infer_z(self, a_row, observed=None):
        a, obs = _check_row(self, a_row, observed)
        return GridPosterior(self._grid[0], self._weights(a, obs)[0])

    def reconstruct(self, z):
        z = np.asarray(z, dtype=float)
        out = features(z.reshape(-1, self.k)) @ self.coef.T
        return out[0] if z.ndim == 1 else out

    def _entry_means(self, z, idx):
        return features(np.asarray(z).reshape(-1, self.k)) @ self.coef[idx].T

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

    def _params(self):
        return {"coef": self.coef, "noise_var": self.noise_var, "means": self.means, "covs": self.covs}

    @classmethod
    def _from_params(cls, spec, params, trace, conv, n_iter, n, m):
        return cls(spec, trace, conv, n_iter, n, m, **params)
