"""Logistic factor analysis for genotype-like counts.

a_ij ~ Binomial(trials, sigmoid(pi_ij)), pi_ij ~ N(z_i . theta_j + b_j, link_var),
z_i ~ N(0, I). The link noise is integrated with Gauss-Hermite quadrature.
Fitting is MAP by alternating damped Newton steps on the rows (z) and the
columns (theta, b), each with backtracking so the objective never decreases.
The posterior over z_i is the Laplace approximation at the mode.
"""

from __future__ import annotations

import math

import numpy as np

from ..kernels import binomial_gh
from .base import FactorFit, GaussianPosterior, _check_row, check_finite, converged

# weak N(0, 1/PARAM_PENALTY) prior on theta and b keeps columns with no
# variation (e.g. monomorphic SNPs) from drifting to infinity
PARAM_PENALTY = 1e-4
_MAX_HALVINGS = 30


def gauss_hermite(q: int):
    """Nodes and log weights of a ``q``-point rule for E[f(e)], e ~ N(0, 1)."""
    x, w = np.polynomial.hermite_e.hermegauss(q)
    return x, np.log(w / w.sum())


class _Lik:
    def __init__(self, spec):
        self.trials = spec.trials
        self.link_sd = math.sqrt(spec.link_var)
        self.nodes, self.logw = gauss_hermite(spec.quad_points)

    def __call__(self, A, M, Eta):
        return binomial_gh(A, M, Eta, self.trials, self.link_sd, self.nodes, self.logw)


def _row_objective(ll, Z):
    return ll.sum(axis=1) - 0.5 * (Z * Z).sum(axis=1)


def _col_objective(ll, W):
    return ll.sum(axis=0) - 0.5 * PARAM_PENALTY * (W * W).sum(axis=1)


def _z_step(lik, A, M, Z, Theta, b, lr):
    """One damped Newton step on every row of Z with per-row backtracking."""
    K = Z.shape[1]
    Eta = Z @ Theta.T + b
    ll, d1, d2 = lik(A, M, Eta)
    cur = _row_objective(ll, Z)
    grad = d1 @ Theta - Z
    outer = (Theta[:, :, None] * Theta[:, None, :]).reshape(-1, K * K)
    negH = np.eye(K) - (d2 @ outer).reshape(-1, K, K)
    step = lr * np.linalg.solve(negH, grad[:, :, None])[:, :, 0]
    todo = np.ones(len(Z), dtype=bool)
    for _ in range(_MAX_HALVINGS):
        cand = Z[todo] + step[todo]
        ll_c = lik(A[todo], M[todo], cand @ Theta.T + b)[0]
        better = _row_objective(ll_c, cand) >= cur[todo]
        rows = np.flatnonzero(todo)
        Z[rows[better]] = cand[better]
        todo[rows[better]] = False
        if not todo.any():
            break
        step *= 0.5
    return Z


def _col_step(lik, A, M, Z, W, lr, intercept):
    """One damped Newton step on every column's (theta_j, b_j)."""
    n, K = Z.shape
    Zt = np.hstack([Z, np.ones((n, 1))]) if intercept else Z
    p = Zt.shape[1]
    Eta = Zt @ W.T
    ll, d1, d2 = lik(A, M, Eta)
    cur = _col_objective(ll, W)
    grad = d1.T @ Zt - PARAM_PENALTY * W
    outer = (Zt[:, :, None] * Zt[:, None, :]).reshape(n, p * p)
    negH = PARAM_PENALTY * np.eye(p) - (d2.T @ outer).reshape(-1, p, p)
    step = lr * np.linalg.solve(negH, grad[:, :, None])[:, :, 0]
    todo = np.ones(len(W), dtype=bool)
    for _ in range(_MAX_HALVINGS):
        cand = W[todo] + step[todo]
        ll_c = lik(A[:, todo], M[:, todo], Zt @ cand.T)[0]
        better = _col_objective(ll_c, cand) >= cur[todo]
        cols = np.flatnonzero(todo)
        W[cols[better]] = cand[better]
        todo[cols[better]] = False
        if not todo.any():
            break
        step *= 0.5
    return W


def _laplace(lik, A, M, Z, Theta, b):
    K = Z.shape[1]
    _, _, d2 = lik(A, M, Z @ Theta.T + b)
    outer = (Theta[:, :, None] * Theta[:, None, :]).reshape(-1, K * K)
    negH = np.eye(K) - (d2 @ outer).reshape(-1, K, K)
    return np.linalg.inv(negH)


def _objective(lik, A, M, Z, Theta, b):
    ll = lik(A, M, Z @ Theta.T + b)[0]
    W = np.hstack([Theta, b[:, None]])
    return float(ll.sum() - 0.5 * (Z * Z).sum() - 0.5 * PARAM_PENALTY * (W * W).sum())


def _svd_init(A, M, K, trials):
    n, m = A.shape
    nobs = np.maximum(M.sum(axis=0), 1)
    freq = np.clip((M * A).sum(axis=0) / nobs / trials, 0.01, 0.99)
    b = np.log(freq / (1 - freq))
    centered = np.where(M > 0, A - trials * freq, 0.0)
    sd = np.sqrt(trials * freq * (1 - freq))
    U, s, Vt = np.linalg.svd(centered / sd, full_matrices=False)
    Z = U[:, :K] * math.sqrt(n)
    # map standardized-scale loadings onto the logit scale
    Theta = (Vt[:K].T * s[:K] / math.sqrt(n)) / sd[:, None]
    return Z, Theta, b


def fit_lfa(spec, A, M, gen):
    n, m = A.shape
    K = spec.k
    if np.any(A[M > 0] > spec.trials):
        from ..errors import SpecError
        raise SpecError(f"lfa causes must lie in 0..{spec.trials}")
    lik = _Lik(spec)
    Z, Theta, b = _svd_init(A, M, K, spec.trials)
    # break exact ties of the deterministic start
    Z = Z + 1e-3 * gen.standard_normal(Z.shape)
    if not spec.intercept:
        b = np.zeros(m)
    trace = [_objective(lik, A, M, Z, Theta, b)]
    done = False
    for it in range(spec.max_iter):
        Z = _z_step(lik, A, M, Z, Theta, b, spec.learning_rate)
        W = np.hstack([Theta, b[:, None]]) if spec.intercept else Theta.copy()
        W = _col_step(lik, A, M, Z, W, spec.learning_rate, spec.intercept)
        Theta = W[:, :K].copy()
        if spec.intercept:
            b = W[:, K].copy()
        value = _objective(lik, A, M, Z, Theta, b)
        check_finite(value, it)
        trace.append(value)
        if converged(trace, spec.tol):
            done = True
            break
    covs = _laplace(lik, A, M, Z, Theta, b)
    fit = LFAFit(spec, trace, done, len(trace) - 1, n, m,
                 loadings=Theta, offsets=b, means=Z, covs=covs)
    return fit.attach_data(A, M)


class LFAFit(FactorFit):
    spread_kind = "entropy"

    def __init__(self, spec, trace, conv, n_iter, n, m, *, loadings, offsets, means, covs):
        super().__init__(spec, trace, conv, n_iter, n, m)
        K = spec.k
        self.loadings = np.asarray(loadings, dtype=float).reshape(m, K)
        self.offsets = np.asarray(offsets, dtype=float).reshape(m)
        self.means = np.asarray(means, dtype=float).reshape(n, K)
        self.covs = np.asarray(covs, dtype=float).reshape(n, K, K)
        self._lik = _Lik(spec)

    def row_posterior(self, i):
        return GaussianPosterior(self.means[i], self.covs[i])

    def posterior_means(self):
        return self.means

    def sample_rows(self, gen, scale=1.0):
        chol = np.linalg.cholesky(self.covs)
        eps = gen.standard_normal(self.means.shape)
        return self.means + scale * np.einsum("ikl,il->ik", chol, eps)

    def infer_z(self, a_row, observed=None, max_iter=100, tol=1e-10):
        a, obs = _check_row(self, a_row, observed)
        z = np.zeros((1, self.k))
        for _ in range(max_iter):
            prev = z.copy()
            z = _z_step(self._lik, a, obs, z, self.loadings, self.offsets, 1.0)
            if np.abs(z - prev).max() < tol:
                break
        cov = _laplace(self._lik, a, obs, z, self.loadings, self.offsets)
        return GaussianPosterior(z[0], cov[0])

    def _eta(self, z, idx=slice(None)):
        return np.asarray(z, dtype=float) @ self.loadings[idx].T + self.offsets[idx]

    def _table(self, eta):
        """log p(v | eta) for v = 0..trials, shape (trials + 1,) + eta.shape."""
        eta2 = np.atleast_2d(eta)
        ones = np.ones_like(eta2)
        out = [self._lik(np.full_like(eta2, v), ones, eta2)[0] for v in range(self.spec.trials + 1)]
        return np.stack(out).reshape((self.spec.trials + 1,) + np.shape(eta))

    def reconstruct(self, z):
        lik = self._lik
        eta = self._eta(z)
        x = eta[..., None] + lik.link_sd * lik.nodes
        p = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.spec.trials * (p @ np.exp(lik.logw))

    def entry_logpdf_mean(self, z_samples, idx, values):
        table = self._table(self._eta(z_samples, idx)).mean(axis=1)
        x = np.asarray(values, dtype=float)
        bad = (x < 0) | (x > self.spec.trials) | (x != np.round(x))
        v = np.where(bad, 0, x).astype(np.int64)
        cols = np.broadcast_to(np.arange(table.shape[1]), v.shape)
        return np.where(bad, -np.inf, table[v, cols])

    def sample_entries(self, z, idx, gen):
        eta = self._eta(z, idx)
        pi = eta + self._lik.link_sd * gen.standard_normal(eta.shape)
        p = 0.5 * (1.0 + np.tanh(0.5 * pi))
        return gen.binomial(self.spec.trials, p).astype(float)

    def conditional_spread(self, z):
        table = self._table(self._eta(np.atleast_2d(z)))
        return -(np.exp(table) * table).sum(axis=0)

    def _params(self):
        return {"loadings": self.loadings, "offsets": self.offsets, "means": self.means, "covs": self.covs}

    @classmethod
    def _from_params(cls, spec, params, trace, conv, n_iter, n, m):
        return cls(spec, trace, conv, n_iter, n, m, **params)
