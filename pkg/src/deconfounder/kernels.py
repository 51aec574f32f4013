"""Per-row numeric kernels with a numba path and a pure-numpy path.

Every public function here dispatches on :func:`deconfounder._accel.backend`.
Both paths compute the same quantities; they agree to rounding error, not
bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import backend, njit

_LOG_2PI = math.log(2.0 * math.pi)
_ROW_CHUNK_ELEMS = 2_000_000


def _chunks(n, per_row):
    step = max(1, _ROW_CHUNK_ELEMS // max(1, per_row))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


# ---------------------------------------------------------------------------
# masked linear-Gaussian posterior (PPCA / linear factor E-step)


@njit
def _gaussian_estep_nb(A, M, L, offsets, sigma2, prior_var):
    n, m = A.shape
    K = L.shape[1]
    means = np.zeros((n, K))
    covs = np.zeros((n, K, K))
    ll = np.zeros(n)
    P = np.empty((K, K))
    h = np.empty(K)
    for i in range(n):
        for k in range(K):
            h[k] = 0.0
            for l in range(K):
                P[k, l] = 0.0
            P[k, k] = 1.0 / prior_var
        rr = 0.0
        nobs = 0.0
        for j in range(m):
            if M[i, j] > 0.0:
                r = A[i, j] - offsets[j]
                rr += r * r
                nobs += 1.0
                for k in range(K):
                    h[k] += L[j, k] * r / sigma2
                    for l in range(K):
                        P[k, l] += L[j, k] * L[j, l] / sigma2
        C = np.linalg.cholesky(P)
        logdet = 0.0
        for k in range(K):
            logdet += 2.0 * math.log(C[k, k])
        cov = np.linalg.inv(P)
        quad = 0.0
        for k in range(K):
            s = 0.0
            for l in range(K):
                s += cov[k, l] * h[l]
                covs[i, k, l] = cov[k, l]
            means[i, k] = s
            quad += h[k] * s
        ll[i] = -0.5 * (nobs * (math.log(2.0 * math.pi) + math.log(sigma2))
                        + K * math.log(prior_var) + logdet + rr / sigma2 - quad)
    return means, covs, ll


def _gaussian_estep_np(A, M, L, offsets, sigma2, prior_var):
    n, m = A.shape
    K = L.shape[1]
    R = M * (A - offsets)
    outer = (L[:, :, None] * L[:, None, :]).reshape(m, K * K)
    P = (M @ outer).reshape(n, K, K) / sigma2 + np.eye(K) / prior_var
    h = R @ L / sigma2
    chol = np.linalg.cholesky(P)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    covs = np.linalg.inv(P)
    means = np.einsum("ikl,il->ik", covs, h)
    nobs = M.sum(axis=1)
    rr = (R * R).sum(axis=1)
    quad = (h * means).sum(axis=1)
    ll = -0.5 * (nobs * (_LOG_2PI + np.log(sigma2)) + K * np.log(prior_var)
                 + logdet + rr / sigma2 - quad)
    return means, covs, ll


def gaussian_estep(A, M, L, offsets, sigma2, prior_var):
    """Posterior of z_i under a ~ N(L z + offsets, sigma2 I), z ~ N(0, prior_var I).

    Only entries with ``M[i, j] > 0`` enter row i. Returns posterior means
    (n, K), covariances (n, K, K) and the per-row marginal log-likelihood of
    the observed entries.
    """
    args = (np.ascontiguousarray(A, dtype=float), np.ascontiguousarray(M, dtype=float),
            np.ascontiguousarray(L, dtype=float), np.ascontiguousarray(offsets, dtype=float),
            float(sigma2), float(prior_var))
    if backend() == "numba":
        return _gaussian_estep_nb(*args)
    return _gaussian_estep_np(*args)


# ---------------------------------------------------------------------------
# discrete-grid posterior (quadratic factor E-step)


@njit(fastmath=True)
def _grid_estep_nb(A, M, MuT, F, X, logprior, sigma2):
    n, m = A.shape
    G, p = F.shape
    d = X.shape[1]
    ll = np.zeros(n)
    Ef = np.zeros((n, p))
    Eff = np.zeros((n, p, p))
    zmean = np.zeros((n, d))
    zcov = np.zeros((n, d, d))
    lw = np.empty(G)
    inv2s = 0.5 / sigma2
    for i in range(n):
        nobs = 0.0
        for g in range(G):
            lw[g] = logprior[g]
        for j in range(m):
            if M[i, j] > 0.0:
                nobs += 1.0
                a = A[i, j]
                for g in range(G):
                    r = a - MuT[j, g]
                    lw[g] -= inv2s * r * r
        mx = lw[0]
        for g in range(1, G):
            if lw[g] > mx:
                mx = lw[g]
        tot = 0.0
        for g in range(G):
            # weights below exp(-40) of the mode are dropped
            lw[g] = math.exp(lw[g] - mx) if lw[g] - mx > -40.0 else 0.0
            tot += lw[g]
        ll[i] = mx + math.log(tot) - 0.5 * nobs * (math.log(2.0 * math.pi) + math.log(sigma2))
        for g in range(G):
            if lw[g] == 0.0:
                continue
            w = lw[g] / tot
            for a_ in range(p):
                fa = w * F[g, a_]
                Ef[i, a_] += fa
                for b in range(a_, p):
                    Eff[i, a_, b] += fa * F[g, b]
            for a_ in range(d):
                xa = w * X[g, a_]
                zmean[i, a_] += xa
                for b in range(a_, d):
                    zcov[i, a_, b] += xa * X[g, b]
        for a_ in range(p):
            for b in range(a_ + 1, p):
                Eff[i, b, a_] = Eff[i, a_, b]
        for a_ in range(d):
            for b in range(a_, d):
                zcov[i, a_, b] -= zmean[i, a_] * zmean[i, b]
                zcov[i, b, a_] = zcov[i, a_, b]
    return ll, Ef, Eff, zmean, zcov


def grid_log_weights(A, M, Mu, logprior, sigma2):
    """Unnormalized log posterior weights (n, G) plus the observed-count constant."""
    Ma = M * A
    quad = ((Ma * A).sum(axis=1)[:, None] - 2.0 * Ma @ Mu.T + M @ (Mu * Mu).T)
    lw = logprior[None, :] - 0.5 * quad / sigma2
    const = -0.5 * M.sum(axis=1) * (_LOG_2PI + np.log(sigma2))
    return lw, const


def _grid_estep_np(A, M, Mu, F, X, logprior, sigma2):
    n = A.shape[0]
    G, p = F.shape
    d = X.shape[1]
    FF = (F[:, :, None] * F[:, None, :]).reshape(G, p * p)
    XX = (X[:, :, None] * X[:, None, :]).reshape(G, d * d)
    ll = np.empty(n)
    Ef = np.empty((n, p))
    Eff = np.empty((n, p, p))
    zmean = np.empty((n, d))
    zcov = np.empty((n, d, d))
    for sl in _chunks(n, G):
        lw, const = grid_log_weights(A[sl], M[sl], Mu, logprior, sigma2)
        mx = lw.max(axis=1, keepdims=True)
        w = np.exp(lw - mx)
        tot = w.sum(axis=1, keepdims=True)
        w /= tot
        ll[sl] = mx[:, 0] + np.log(tot[:, 0]) + const
        Ef[sl] = w @ F
        Eff[sl] = (w @ FF).reshape(-1, p, p)
        zm = w @ X
        zmean[sl] = zm
        zcov[sl] = (w @ XX).reshape(-1, d, d) - zm[:, :, None] * zm[:, None, :]
    return ll, Ef, Eff, zmean, zcov


def grid_estep(A, M, Mu, F, X, logprior, sigma2):
    """Posterior over a fixed grid of latent nodes.

    ``Mu[g, j]`` is the mean of cause j at node g, ``F`` the per-node feature
    rows, ``X`` the node coordinates. Returns the per-row log marginal, the
    posterior expectations of f and f f^T, and posterior mean/cov of z.
    """
    args = tuple(np.ascontiguousarray(x, dtype=float) for x in (A, M, Mu, F, X, logprior))
    if backend() == "numba":
        A_, M_, Mu_, F_, X_, lp_ = args
        return _grid_estep_nb(A_, M_, np.ascontiguousarray(Mu_.T), F_, X_, lp_, float(sigma2))
    return _grid_estep_np(*args, float(sigma2))


# ---------------------------------------------------------------------------
# binomial likelihood with Gaussian link noise, integrated by Gauss-Hermite


@njit
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit
def _binomial_gh_nb(A, M, Eta, trials, link_sd, nodes, logw):
    n, m = A.shape
    Q = nodes.shape[0]
    ll = np.zeros((n, m))
    d1 = np.zeros((n, m))
    d2 = np.zeros((n, m))
    lq = np.empty(Q)
    pq = np.empty(Q)
    for i in range(n):
        for j in range(m):
            if M[i, j] <= 0.0:
                continue
            a = A[i, j]
            lc = math.lgamma(trials + 1.0) - math.lgamma(a + 1.0) - math.lgamma(trials - a + 1.0)
            mx = -np.inf
            for q in range(Q):
                x = Eta[i, j] + link_sd * nodes[q]
                pq[q] = 1.0 / (1.0 + math.exp(-x)) if x > -700.0 else 0.0
                lq[q] = logw[q] + lc - a * _softplus(-x) - (trials - a) * _softplus(x)
                if lq[q] > mx:
                    mx = lq[q]
            tot = 0.0
            for q in range(Q):
                lq[q] = math.exp(lq[q] - mx)
                tot += lq[q]
            ll[i, j] = mx + math.log(tot)
            g1 = 0.0
            g2 = 0.0
            curv = 0.0
            for q in range(Q):
                r = lq[q] / tot
                s = a - trials * pq[q]
                g1 += r * s
                g2 += r * s * s
                curv += r * trials * pq[q] * (1.0 - pq[q])
            d1[i, j] = g1
            d2[i, j] = g2 - g1 * g1 - curv
    return ll, d1, d2


def _softplus_np(x):
    return np.logaddexp(0.0, x)


def _binomial_gh_np(A, M, Eta, trials, link_sd, nodes, logw):
    from scipy.special import gammaln

    n, m = A.shape
    ll = np.zeros((n, m))
    d1 = np.zeros((n, m))
    d2 = np.zeros((n, m))
    Q = nodes.shape[0]
    for sl in _chunks(n, m * Q):
        a = A[sl][:, :, None]
        x = Eta[sl][:, :, None] + link_sd * nodes
        p = 0.5 * (1.0 + np.tanh(0.5 * x))
        lc = gammaln(trials + 1.0) - gammaln(a + 1.0) - gammaln(trials - a + 1.0)
        lq = logw + lc - a * _softplus_np(-x) - (trials - a) * _softplus_np(x)
        mx = lq.max(axis=2, keepdims=True)
        e = np.exp(lq - mx)
        tot = e.sum(axis=2, keepdims=True)
        r = e / tot
        s = a - trials * p
        g1 = (r * s).sum(axis=2)
        g2 = (r * s * s).sum(axis=2)
        curv = (r * trials * p * (1.0 - p)).sum(axis=2)
        obs = M[sl] > 0
        ll[sl] = np.where(obs, mx[:, :, 0] + np.log(tot[:, :, 0]), 0.0)
        d1[sl] = np.where(obs, g1, 0.0)
        d2[sl] = np.where(obs, g2 - g1 * g1 - curv, 0.0)
    return ll, d1, d2


def binomial_gh(A, M, Eta, trials, link_sd, nodes, logw):
    """log p(a | eta) for a ~ Binomial(trials, sigmoid(eta + link_sd * e)), e ~ N(0, 1).

    ``nodes``/``logw`` are a normalized quadrature rule for N(0, 1). Returns
    the entrywise log-likelihood and its first and second derivatives with
    respect to eta; unobserved entries (``M == 0``) are zero.
    """
    args = (np.ascontiguousarray(A, dtype=float), np.ascontiguousarray(M, dtype=float),
            np.ascontiguousarray(Eta, dtype=float), float(trials), float(link_sd),
            np.ascontiguousarray(nodes, dtype=float), np.ascontiguousarray(logw, dtype=float))
    if backend() == "numba":
        return _binomial_gh_nb(*args)
    return _binomial_gh_np(*args)


# ---------------------------------------------------------------------------
# k-means assignment step


@njit
def _kmeans_assign_nb(X, C):
    n, d = X.shape
    k = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = np.inf
        arg = 0
        for c in range(k):
            s = 0.0
            for t in range(d):
                diff = X[i, t] - C[c, t]
                s += diff * diff
            if s < best:
                best = s
                arg = c
        labels[i] = arg
        dist[i] = best
    return labels, dist


def _kmeans_assign_np(X, C):
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels.astype(np.int64), d2[np.arange(X.shape[0]), labels]


def kmeans_assign(X, C):
    """Nearest-center labels and squared distances (ties go to the lower index)."""
    X = np.ascontiguousarray(X, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    if backend() == "numba":
        return _kmeans_assign_nb(X, C)
    return _kmeans_assign_np(X, C)


# ---------------------------------------------------------------------------
# Poisson entropy


@njit
def _poisson_entropy_nb(rates):
    out = np.zeros(rates.shape[0])
    for e in range(rates.shape[0]):
        lam = rates[e]
        if lam <= 0.0:
            continue
        half = 12.0 * math.sqrt(lam) + 12.0
        lo = max(0, int(lam - half))
        hi = int(lam + half) + 1
        loglam = math.log(lam)
        h = 0.0
        for k in range(lo, hi + 1):
            lp = k * loglam - lam - math.lgamma(k + 1.0)
            h -= math.exp(lp) * lp
        out[e] = h
    return out


def _poisson_entropy_np(rates):
    from scipy.special import gammaln

    out = np.zeros(rates.shape[0])
    pos = np.flatnonzero(rates > 0)
    if pos.size == 0:
        return out
    lam = rates[pos]
    half = 12.0 * np.sqrt(lam) + 12.0
    lo = np.maximum(0, (lam - half).astype(np.int64))
    width = int((2 * half).max()) + 3
    for sl in _chunks(lam.size, width):
        k = lo[sl, None] + np.arange(width)[None, :]
        lp = k * np.log(lam[sl, None]) - lam[sl, None] - gammaln(k + 1.0)
        out[pos[sl]] = -(np.exp(lp) * lp).sum(axis=1)
    return out


def poisson_entropy(rates):
    """Entropy (nats) of Poisson(rate) for each entry of ``rates``."""
    r = np.ascontiguousarray(rates, dtype=float)
    flat = r.reshape(-1)
    if backend() == "numba":
        out = _poisson_entropy_nb(flat)
    else:
        out = _poisson_entropy_np(flat)
    return out.reshape(r.shape)
