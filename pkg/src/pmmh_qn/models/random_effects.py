"""
Random effects model ``x_t ~ N(mu, sigma^2)``, ``y_t | x_t ~ N(x_t, 1)``.

The chain runs on ``(mu, log sigma)``. The likelihood is estimated by
importance sampling with the latent prior as instrumental distribution, so
the auxiliary block holds ``T * N`` standard normals.
"""

import numpy as np
from scipy.special import logsumexp

from .base import ModelHandle, TargetEvaluation

_LOG_2PI = np.log(2.0 * np.pi)
_LOG_2_OVER_PI = np.log(2.0 / np.pi)


def re_simulate(T, mu, sigma, seed=None):
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    x = mu + sigma * rng.standard_normal(T)
    return x + rng.standard_normal(T)


def log_prior(theta):
    """``mu ~ N(0, 1)`` and half-Cauchy(0, 1) on ``sigma``, natural density."""
    mu, sigma = theta[0], np.exp(theta[1])
    return -0.5 * (_LOG_2PI + mu * mu) + _LOG_2_OVER_PI - np.log1p(sigma * sigma)


def _prior_jacobian_grad(theta):
    mu, sigma = theta[0], np.exp(theta[1])
    s2 = sigma * sigma
    # d/d log(sigma) of [-log(1 + sigma^2)] plus the log-Jacobian log(sigma)
    return np.array([-mu, 1.0 - 2.0 * s2 / (1.0 + s2)])


def re_is_evaluate(y, theta, u, N, score="fisher"):
    """Correlated importance-sampling estimate of the log-target.

    ``score="fisher"`` returns the self-normalised estimate of the score of the
    latent model (Fisher identity); ``score="pathwise"`` returns the exact
    derivative of the log-likelihood estimate at fixed ``u``.
    """
    y = np.asarray(y, dtype=float)
    T = y.size
    u = np.asarray(u, dtype=float)
    if u.size != N * T:
        raise ValueError(f"auxiliary block must hold N*T = {N * T} values, got {u.size}")
    U = u.reshape(T, N)
    mu, sigma = theta[0], np.exp(theta[1])
    x = mu + sigma * U
    resid = y[:, None] - x
    logW = -0.5 * (_LOG_2PI + resid * resid)
    lse = logsumexp(logW, axis=1)
    loglik = lse.sum() - T * np.log(N)
    w = np.exp(logW - lse[:, None])
    if score == "fisher":
        g_mu = (w * U).sum() / sigma
        g_sig = (w * (U * U - 1.0)).sum()
    elif score == "pathwise":
        g_mu = (w * resid).sum()
        g_sig = (w * resid * sigma * U).sum()
    else:
        raise ValueError(f"unknown score estimator {score!r}")
    grad = np.array([g_mu, g_sig]) + _prior_jacobian_grad(theta)
    return TargetEvaluation(float(log_prior(theta) + loglik), grad)


def re_exact_evaluate(y, theta):
    """Closed-form log-target using ``y_t ~ N(mu, sigma^2 + 1)``."""
    y = np.asarray(y, dtype=float)
    mu, sigma = theta[0], np.exp(theta[1])
    v = 1.0 + sigma * sigma
    r = y - mu
    loglik = -0.5 * (y.size * (_LOG_2PI + np.log(v)) + (r @ r) / v)
    g_mu = r.sum() / v
    g_sig = (-0.5 * y.size / v + 0.5 * (r @ r) / v ** 2) * 2.0 * sigma * sigma
    grad = np.array([g_mu, g_sig]) + _prior_jacobian_grad(theta)
    return TargetEvaluation(float(log_prior(theta) + loglik), grad)


class RandomEffectsModel(ModelHandle):
    n_theta = 2
    param_names = ("mu", "sigma")

    def __init__(self, y, N=100, exact=False, score="fisher"):
        self.y = np.asarray(y, dtype=float)
        self.T = self.y.size
        self.N = N
        self.exact = exact
        self.score = score
        self.n_u = 0 if exact else N * self.T

    def evaluate(self, theta, u, with_hessian=False):
        if self.exact:
            return re_exact_evaluate(self.y, theta)
        return re_is_evaluate(self.y, theta, u, self.N, self.score)

    def to_natural(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.array([theta[0], np.exp(theta[1])])

    def to_unconstrained(self, params):
        params = np.asarray(params, dtype=float)
        return np.array([params[0], np.log(params[1])])

    def log_jacobian(self, theta):
        return float(theta[1])

    def default_theta0(self):
        return self.to_unconstrained([1.0, 0.2])
