"""Outcome regressions on the causes plus substitute-confounder features."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit

from .data import Dataset
from .errors import ConvergenceError, RankDeficiencyError, SpecError

GAUSSIAN = "gaussian"
LOGISTIC = "logistic"
ON_Z = "z"
ON_RECONSTRUCTED = "reconstructed"
NO_CONTROL = "none"
DEFAULT_PENALTY_PER_ROW = 0.1
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class OutcomeModelSpec:
    """How the outcome model is built and fit.

    ``penalty=None`` means ``0.1 * n`` for the n rows being fit.
    """

    conditioning: str = ON_Z
    include_covariates: bool = True
    family: str = GAUSSIAN
    penalty: Optional[float] = None
    tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        if self.conditioning not in (ON_Z, ON_RECONSTRUCTED, NO_CONTROL):
            raise SpecError(f"unknown conditioning {self.conditioning!r}")
        if self.family not in (GAUSSIAN, LOGISTIC):
            raise SpecError(f"unknown outcome family {self.family!r}")
        if self.penalty is not None and not self.penalty >= 0:
            raise SpecError("penalty must be >= 0")

    def penalty_for(self, n: int) -> float:
        return DEFAULT_PENALTY_PER_ROW * n if self.penalty is None else float(self.penalty)


@dataclass(frozen=True)
class DesignMatrix:
    """Regression inputs with named column blocks; ``causes`` always comes first."""

    values: np.ndarray
    names: tuple
    blocks: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def block(self, name) -> np.ndarray:
        lo, hi = self.blocks.get(name, (0, 0))
        return self.values[:, lo:hi]

    def rows(self, idx) -> "DesignMatrix":
        return DesignMatrix(self.values[idx], self.names, self.blocks)

    def with_causes(self, a) -> "DesignMatrix":
        """Every row's cause block replaced by the vector ``a``."""
        lo, hi = self.blocks["causes"]
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.shape[0] != hi - lo:
            raise SpecError(f"cause vector length {a.shape[0]} != {hi - lo}")
        values = self.values.copy()
        values[:, lo:hi] = a
        return DesignMatrix(values, self.names, self.blocks)


def _blocks(parts):
    values, names, blocks, start = [], [], {}, 0
    for label, mat, cols in parts:
        mat = np.asarray(mat, dtype=float)
        if mat.ndim == 1:
            mat = mat[:, None]
        values.append(mat)
        names.extend(cols)
        blocks[label] = (start, start + mat.shape[1])
        start += mat.shape[1]
    return DesignMatrix(np.hstack(values), tuple(names), blocks)


def build_design(d: Dataset, fit=None, spec: OutcomeModelSpec = OutcomeModelSpec(), z=None,
                 confounder=None) -> DesignMatrix:
    """Columns ``[causes | z or a_hat(z) | covariates]``.

    ``z`` holds per-row substitute-confounder values (posterior means or a
    posterior draw). ``confounder`` bypasses the factor model and uses the
    given matrix directly, which is how oracle baselines are built.
    """
    parts = [("causes", d.causes, list(d.cause_names))]
    if confounder is not None:
        c = np.asarray(confounder, dtype=float).reshape(d.n, -1)
        parts.append(("confounder", c, [f"c{k}" for k in range(c.shape[1])]))
    elif spec.conditioning != NO_CONTROL:
        if z is None:
            if fit is None:
                raise SpecError("conditioning on the substitute confounder needs z or a fit")
            z = fit.posterior_means()
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != d.n:
            raise SpecError(f"z has {z.shape[0]} rows, dataset has {d.n}")
        if spec.conditioning == ON_Z:
            parts.append(("confounder", z, [f"z{k}" for k in range(z.shape[1])]))
        else:
            if fit is None:
                raise SpecError("reconstructed conditioning needs a factor fit")
            ahat = np.asarray(fit.reconstruct(z)).reshape(d.n, -1)
            if ahat.shape[1] != d.m:
                raise SpecError("reconstruction width does not match the causes")
            parts.append(("confounder", ahat, [f"ahat_{c}" for c in d.cause_names]))
    if spec.include_covariates and d.covariates is not None and d.covariates.shape[1]:
        parts.append(("covariates", d.covariates, list(d.covariate_names)))
    return _blocks(parts)


def _as_matrix(design):
    if isinstance(design, DesignMatrix):
        return design.values, design.names, design.blocks
    X = np.asarray(design, dtype=float)
    if X.ndim != 2:
        raise SpecError("design must be a 2-d matrix")
    p = X.shape[1]
    return X, tuple(f"x{j}" for j in range(p)), {"causes": (0, p)}


@dataclass(frozen=True)
class OutcomeFit:
    family: str
    intercept: float
    coef: np.ndarray
    names: tuple
    blocks: dict
    penalty: float
    noise_var: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def _block(self, name):
        lo, hi = self.blocks.get(name, (0, 0))
        return self.coef[lo:hi]

    @property
    def beta(self):
        return self._block("causes")

    @property
    def gamma(self):
        return self._block("confounder")

    @property
    def delta(self):
        return self._block("covariates")

    def linear_predictor(self, design) -> np.ndarray:
        X, _, _ = _as_matrix(design)
        if X.shape[1] != self.coef.shape[0]:
            raise SpecError(f"design has {X.shape[1]} columns, fit expects {self.coef.shape[0]}")
        return self.intercept + X @ self.coef

    def predict(self, design) -> np.ndarray:
        eta = self.linear_predictor(design)
        return expit(eta) if self.family == LOGISTIC else eta

    def logpdf(self, design, y) -> np.ndarray:
        eta = self.linear_predictor(design)
        y = np.asarray(y, dtype=float)
        if self.family == LOGISTIC:
            return y * log_expit(eta) + (1 - y) * log_expit(-eta)
        return -0.5 * (_LOG_2PI + math.log(self.noise_var)) - (y - eta) ** 2 / (2 * self.noise_var)

    def sample(self, design, gen) -> np.ndarray:
        mu = self.predict(design)
        if self.family == LOGISTIC:
            return (gen.random(mu.shape) < mu).astype(float)
        return mu + math.sqrt(self.noise_var) * gen.standard_normal(mu.shape)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "intercept": self.intercept,
            "coefficients": {n: float(c) for n, c in zip(self.names, self.coef)},
            "names": list(self.names),
            "blocks": {k: list(v) for k, v in self.blocks.items()},
            "penalty": self.penalty,
            "noise_var": self.noise_var,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "OutcomeFit":
        names = tuple(data["names"])
        return cls(data["family"], float(data["intercept"]),
                   np.array([data["coefficients"][n] for n in names]), names,
                   {k: tuple(v) for k, v in data["blocks"].items()}, float(data["penalty"]),
                   data.get("noise_var"), dict(data.get("diagnostics", {})))


def _check_inputs(X, y):
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] < 1:
        raise SpecError("need at least one row")
    if y.shape[0] != X.shape[0]:
        raise SpecError(f"design has {X.shape[0]} rows, outcome has {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise SpecError("design and outcome must be finite")
    return y


def fit_ridge(design, y, penalty: float) -> OutcomeFit:
    """Minimize ||y - b0 - D w||^2 + penalty ||w||^2 with b0 unpenalized."""
    X, names, blocks = _as_matrix(design)
    y = _check_inputs(X, y)
    if penalty < 0:
        raise SpecError("penalty must be >= 0")
    n, p = X.shape
    xbar, ybar = X.mean(axis=0), y.mean()
    Xc, yc = X - xbar, y - ybar
    if penalty == 0 and np.linalg.matrix_rank(Xc) < p:
        raise RankDeficiencyError("design is rank deficient (after centering); use penalty > 0")
    try:
        if p <= n or penalty == 0:
            w = linalg.solve(Xc.T @ Xc + penalty * np.eye(p), Xc.T @ yc, assume_a="pos")
        else:
            w = Xc.T @ linalg.solve(Xc @ Xc.T + penalty * np.eye(n), yc, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"normal equations are singular ({exc}); use penalty > 0") from exc
    b0 = float(ybar - xbar @ w)
    resid = yc - Xc @ w
    noise_var = max(float(resid @ resid) / n, 1e-12)
    return OutcomeFit(GAUSSIAN, b0, w, names, blocks, float(penalty), noise_var,
                      {"rss": float(resid @ resid)})


def logistic_objective(params, X, y, penalty) -> float:
    """sum_i log p(y_i | x_i) - penalty/2 ||w||^2 with params = [b0, w]."""
    eta = params[0] + X @ params[1:]
    return float((y * log_expit(eta) + (1 - y) * log_expit(-eta)).sum()
                 - 0.5 * penalty * params[1:] @ params[1:])


def logistic_gradient(params, X, y, penalty) -> np.ndarray:
    r = y - expit(params[0] + X @ params[1:])
    g = np.empty_like(params)
    g[0] = r.sum()
    g[1:] = X.T @ r - penalty * params[1:]
    return g


def fit_logistic(design, y, penalty: float, tol: float = 1e-8, max_iter: int = 100) -> OutcomeFit:
    """Newton's method with step halving on the penalized Bernoulli log-likelihood."""
    X, names, blocks = _as_matrix(design)
    y = _check_inputs(X, y)
    if not np.all((y == 0) | (y == 1)):
        raise SpecError("logistic outcome must be 0/1")
    if penalty < 0:
        raise SpecError("penalty must be >= 0")
    n, p = X.shape
    X1 = np.hstack([np.ones((n, 1)), X])
    reg = np.full(p + 1, float(penalty))
    reg[0] = 0.0
    params = np.zeros(p + 1)
    ybar = y.mean()
    if 0 < ybar < 1:
        params[0] = math.log(ybar / (1 - ybar))
    obj = logistic_objective(params, X, y, penalty)
    grad = logistic_gradient(params, X, y, penalty)
    it = 0
    while np.abs(grad).max() >= tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"logistic fit did not converge in {max_iter} iterations "
                f"(max |grad| = {np.abs(grad).max():.3g}); possible separation, use penalty > 0")
        prob = expit(X1 @ params)
        H = (X1 * (prob * (1 - prob))[:, None]).T @ X1 + np.diag(reg)
        try:
            step = linalg.solve(H, grad, assume_a="pos")
        except linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = params + t * step
            new = logistic_objective(cand, X, y, penalty)
            if new >= obj or t < 1e-10:
                break
            t *= 0.5
        if new < obj:
            break
        params, obj = cand, new
        grad = logistic_gradient(params, X, y, penalty)
        it += 1
    if penalty == 0:
        eta = X1 @ params
        # every row on the right side of the boundary means the data are
        # separable and the unpenalized maximum does not exist
        fitted = np.where(y == 1, eta, -eta)
        if np.all(fitted > 0):
            raise ConvergenceError("outcome is perfectly separated; use penalty > 0")
    if np.abs(grad).max() >= max(tol, 1e-6):
        raise ConvergenceError(f"logistic fit stalled with max |grad| = {np.abs(grad).max():.3g}")
    return OutcomeFit(LOGISTIC, float(params[0]), params[1:], names, blocks, float(penalty), None,
                      {"iterations": it, "max_abs_grad": float(np.abs(grad).max())})


def fit_outcome(design, y, spec: OutcomeModelSpec) -> OutcomeFit:
    n = np.shape(design.values if isinstance(design, DesignMatrix) else design)[0]
    penalty = spec.penalty_for(n)
    if spec.family == LOGISTIC:
        return fit_logistic(design, y, penalty, tol=spec.tol, max_iter=spec.max_iter)
    return fit_ridge(design, y, penalty)


def average_effect(fit: OutcomeFit, a, a_prime, context: Optional[DesignMatrix] = None) -> float:
    """E[y | do(a)] - E[y | do(a')].

    Linear family: beta . (a - a'). Logistic family: the mean difference of
    predicted probabilities over the rows of ``context`` (the empirical
    distribution of the confounder and covariate columns).
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    a_prime = np.asarray(a_prime, dtype=float).reshape(-1)
    m = fit.beta.shape[0]
    if a.shape[0] != m or a_prime.shape[0] != m:
        raise SpecError(f"cause vectors must have length {m}")
    if fit.family == GAUSSIAN:
        return float(fit.beta @ (a - a_prime))
    if context is None:
        raise SpecError("the logistic family needs context rows for the Monte Carlo average")
    return float(np.mean(fit.predict(context.with_causes(a)) - fit.predict(context.with_causes(a_prime))))


def heldout_outcome_loglik(fit: OutcomeFit, design, y) -> float:
    """Mean per-row log-likelihood of test rows."""
    return float(np.mean(fit.logpdf(design, y)))


def outcome_fit_json(fit: OutcomeFit) -> str:
    return fit.to_json()


def spec_to_dict(spec: OutcomeModelSpec) -> dict:
    return asdict(spec)
