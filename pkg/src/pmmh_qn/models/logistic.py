"""
Bayesian logistic regression with correlated stratified sub-sampling.
"""

import numpy as np
from scipy.special import expit, log_expit, ndtr

from .base import ModelHandle, TargetEvaluation

_LOG_2PI = np.log(2.0 * np.pi)


def logit_subsample(T, N, u_sub):
    """Stratified sub-sample of ``N`` row indices (0-based) out of ``T``.

    The normals in ``u_sub`` are mapped to uniforms with the standard normal
    CDF. Stratum ``i`` picks the first row ``j`` with ``(j + 1) / T`` at or above
    ``(v_i + i) / N``, capped at the last row, so an index may repeat.
    """
    u_sub = np.asarray(u_sub, dtype=float)
    if N > T:
        raise ValueError(f"sub-sample size {N} exceeds data size {T}")
    if u_sub.size != N:
        raise ValueError(f"expected {N} auxiliary variables, got {u_sub.size}")
    return _stratified_indices(T, ndtr(u_sub))


def _stratified_indices(T, v):
    N = v.size
    w = np.arange(1, T + 1) / T
    thresholds = (v + np.arange(N)) / N
    return np.minimum(np.searchsorted(w, thresholds, side="left"), T - 1)


def logit_evaluate(y, X, beta, index=None, rescale=True, with_hessian=False):
    """Log-target, gradient and (optionally) Hessian on the rows in ``index``.

    ``index=None`` uses all rows. With ``rescale`` the sub-sample sums are
    multiplied by ``T / len(index)``. The prior is ``beta_l ~ N(0, 1)``.
    """
    beta = np.asarray(beta, dtype=float)
    T = y.shape[0]
    if index is not None:
        X = X[index]
        y = y[index]
    scale = T / y.shape[0] if rescale else 1.0
    z = X @ beta
    loglik = y @ z + log_expit(-z).sum()
    p = expit(z)
    grad = X.T @ (y - p)
    logtarget = scale * loglik - 0.5 * (beta.size * _LOG_2PI + beta @ beta)
    grad = scale * grad - beta
    hess = None
    if with_hessian:
        hess = -scale * (X.T * (p * (1.0 - p))) @ X - np.eye(beta.size)
    return TargetEvaluation(float(logtarget), grad, hess)


def logit_simulate(T, beta, seed=None):
    """Synthetic data set with standard normal covariates and an intercept column."""
    beta = np.asarray(beta, dtype=float)
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(T), rng.standard_normal((T, beta.size - 1))])
    y = (rng.random(T) < expit(X @ beta)).astype(float)
    return y, X


class LogisticModel(ModelHandle):
    """``N`` is the sub-sample size; ``exact=True`` evaluates on all rows."""

    has_hessian = True

    def __init__(self, y, X, N=None, exact=False, rescale=True):
        self.y = np.asarray(y, dtype=float)
        self.X = np.asarray(X, dtype=float)
        self.T, self.n_theta = self.X.shape
        self.N = self.T if N is None else N
        self.exact = exact or self.N == self.T
        self.rescale = rescale
        self.n_u = 0 if self.exact else self.N
        self.param_names = tuple(f"beta{i}" for i in range(self.n_theta))

    def subsample(self, u):
        return None if self.exact else logit_subsample(self.T, self.N, u)

    def evaluate(self, theta, u, with_hessian=False):
        return logit_evaluate(self.y, self.X, theta, self.subsample(u), self.rescale,
                              with_hessian)

    def full_hessian(self, theta):
        """Exact Hessian of the expected sub-sample log-target.

        With rescaling this is the full-data Hessian; without it the
        likelihood part shrinks by ``N / T``, like the sub-sample sums.
        """
        hess = logit_evaluate(self.y, self.X, theta, None, with_hessian=True).hess
        if self.rescale or self.exact:
            return hess
        eye = np.eye(self.n_theta)
        return (self.N / self.T) * (hess + eye) - eye
