"""
Stochastic volatility model with leverage.

    x_0 ~ N(mu, sigma_v^2 / (1 - phi^2))
    y_t | x_t ~ N(0, exp(x_t))
    x_{t+1} | x_t, y_t ~ N(mu + phi (x_t - mu) + rho sigma_v exp(-x_t / 2) y_t,
                           sigma_v^2 (1 - rho^2))

The chain runs on ``(mu, atanh phi, log sigma_v, atanh rho)``. The
likelihood is estimated with a bootstrap particle filter driven by an
``(N + 1) x (T + 1)`` block of normals: row 0 feeds systematic resampling
through the normal CDF, rows 1..N drive the particles.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr
from scipy.stats import norm

from .base import ModelHandle, TargetEvaluation

_LOG_2PI = np.log(2.0 * np.pi)

PHI_PRIOR = (0.95, 0.05)
RHO_PRIOR = (0.0, 1.0)
SIGMA_PRIOR = (2.0, 10.0)  # shape, rate


def _tn_log_norm(mean, sd):
    return np.log(norm.cdf((1 - mean) / sd) - norm.cdf((-1 - mean) / sd))


_PHI_LOGZ = _tn_log_norm(*PHI_PRIOR)
_RHO_LOGZ = _tn_log_norm(*RHO_PRIOR)


def _log_sech2(x):
    ax = np.abs(x)
    return 2.0 * (np.log(2.0) - ax - np.log1p(np.exp(-2.0 * ax)))


def natural_params(theta):
    mu, phi_t, sig_t, rho_t = theta
    return mu, np.tanh(phi_t), np.exp(sig_t), np.tanh(rho_t)


def sv_simulate(T, params, seed=None):
    """Simulate ``x_{0:T}`` and ``y_{1:T}`` for natural ``params = (mu, phi, sigma_v, rho)``."""
    mu, phi, sigma_v, rho = params
    if not (abs(phi) < 1 and sigma_v > 0 and abs(rho) < 1):
        raise ValueError(f"parameters outside the model domain: {params}")
    rng = np.random.default_rng(seed)
    x = np.empty(T + 1)
    y = np.empty(T)
    x[0] = mu + sigma_v / np.sqrt(1 - phi ** 2) * rng.standard_normal()
    # y_t is emitted from x_t and feeds the leverage term of x_{t+1}; the first
    # transition has no preceding observation.
    y_prev = 0.0
    x_prev = x[0]
    s = np.sqrt(1 - rho ** 2)
    for t in range(1, T + 1):
        x[t] = (mu + phi * (x_prev - mu) + rho * sigma_v * np.exp(-0.5 * x_prev) * y_prev
                + sigma_v * s * rng.standard_normal())
        y[t - 1] = np.exp(0.5 * x[t]) * rng.standard_normal()
        x_prev, y_prev = x[t], y[t - 1]
    return x, y


def log_prior(theta):
    mu, phi, sigma_v, rho = natural_params(theta)
    lp = -0.5 * (_LOG_2PI + mu * mu)
    m, sd = PHI_PRIOR
    lp += -0.5 * (_LOG_2PI + ((phi - m) / sd) ** 2) - np.log(sd) - _PHI_LOGZ
    m, sd = RHO_PRIOR
    lp += -0.5 * (_LOG_2PI + ((rho - m) / sd) ** 2) - np.log(sd) - _RHO_LOGZ
    a, b = SIGMA_PRIOR
    lp += a * np.log(b) + (a - 1) * np.log(sigma_v) - b * sigma_v  # lgamma(2) = 0
    return lp


def log_jacobian(theta):
    return _log_sech2(theta[1]) + theta[2] + _log_sech2(theta[3])


def _prior_jacobian_grad(theta):
    mu, phi, sigma_v, rho = natural_params(theta)
    d_phi = 1 - phi ** 2
    d_rho = 1 - rho ** 2
    a, b = SIGMA_PRIOR
    return np.array([
        -mu,
        -(phi - PHI_PRIOR[0]) / PHI_PRIOR[1] ** 2 * d_phi - 2 * phi,
        (a - 1) - b * sigma_v + 1.0,
        -(rho - RHO_PRIOR[0]) / RHO_PRIOR[1] ** 2 * d_rho - 2 * rho,
    ])


def systematic_resample(w, ubar):
    """Ancestor indices from thresholds ``(ubar + i) / N`` against ``cumsum(w)``."""
    N = w.size
    cdf = np.cumsum(w)
    idx = np.searchsorted(cdf, (ubar + np.arange(N)) / N, side="right")
    return np.minimum(idx, N - 1)


@dataclass
class ParticleSystem:
    """Output of one filter run. Row ``t`` of ``ancestors`` maps particles at
    time ``t`` to their parents at ``t - 1``; ``weights[t]`` are normalised."""

    loglik: float
    particles: np.ndarray
    ancestors: np.ndarray
    weights: np.ndarray
    orders: np.ndarray
    grad_pathwise: np.ndarray = None


def sv_bpf_run(y, theta, u, N, sort=True, pathwise=False):
    """Correlated bootstrap particle filter; returns the full particle system."""
    y = np.asarray(y, dtype=float)
    T = y.size
    u = np.asarray(u, dtype=float)
    if u.size != (N + 1) * (T + 1):
        raise ValueError(f"auxiliary block must hold (N+1)(T+1) = {(N + 1) * (T + 1)} values")
    U = u.reshape(N + 1, T + 1)
    mu, phi, sigma_v, rho = natural_params(theta)
    y_prev = np.concatenate([[0.0], y[:-1]])
    sd0 = sigma_v / np.sqrt(1 - phi ** 2)
    sd = sigma_v * np.sqrt(1 - rho ** 2)

    X = np.empty((T + 1, N))
    A = np.zeros((T + 1, N), dtype=np.intp)
    W = np.empty((T + 1, N))
    orders = np.zeros((T + 1, N), dtype=np.intp)
    X[0] = mu + sd0 * U[1:, 0]
    W[0] = 1.0 / N
    A[0] = np.arange(N)
    orders[0] = np.arange(N)
    loglik = 0.0

    if pathwise:
        # tangents dx/dtheta in unconstrained coordinates
        dX = np.column_stack([np.ones(N), phi * (X[0] - mu), X[0] - mu, np.zeros(N)])
        grad = np.zeros(4)

    for t in range(1, T + 1):
        a = systematic_resample(W[t - 1], ndtr(U[0, t]))
        xp = X[t - 1, a]
        lev = np.exp(-0.5 * xp) * y_prev[t - 1]
        eps = U[1:, t]
        xt = mu + phi * (xp - mu) + rho * sigma_v * lev + sd * eps
        if sort:
            order = np.argsort(xt, kind="stable")
        else:
            order = np.arange(N)
        xt = xt[order]
        a = a[order]
        X[t] = xt
        A[t] = a
        orders[t] = order
        logW = -0.5 * (_LOG_2PI + xt + y[t - 1] ** 2 * np.exp(-xt))
        lse = logsumexp(logW)
        if not np.isfinite(lse):
            return ParticleSystem(-np.inf, X, A, W, orders)
        loglik += lse - np.log(N)
        W[t] = np.exp(logW - lse)

        if pathwise:
            xp_s, lev_s, eps_s = xp[order], lev[order], eps[order]
            dxp = dX[a]
            slope = phi - 0.5 * rho * sigma_v * lev_s
            direct = np.column_stack([
                np.full(N, 1.0 - phi),
                (xp_s - mu) * (1 - phi ** 2),
                rho * sigma_v * lev_s + sd * eps_s,
                (sigma_v * lev_s - sigma_v * rho / np.sqrt(1 - rho ** 2) * eps_s) * (1 - rho ** 2),
            ])
            dX = slope[:, None] * dxp + direct
            dlogW = -0.5 + 0.5 * y[t - 1] ** 2 * np.exp(-xt)
            grad += (W[t] * dlogW) @ dX

    out = ParticleSystem(loglik, X, A, W, orders)
    if pathwise:
        out.grad_pathwise = grad
    return out


def _lineages(system, lag):
    """States ``x_{t-1}, x_t`` along the ancestry of the time-``min(t + lag, T)``
    particles, with the matching smoothing weights, for ``t = 0..T``."""
    X, A, W = system.particles, system.ancestors, system.weights
    T, N = X.shape[0] - 1, X.shape[1]
    x_cur = np.empty((T + 1, N))
    x_prev = np.empty((T + 1, N))
    w = np.empty((T + 1, N))
    for t in range(T + 1):
        kappa = min(t + lag, T)
        idx = np.arange(N)
        for s in range(kappa, t, -1):
            idx = A[s, idx]
        x_cur[t] = X[t, idx]
        x_prev[t] = X[t - 1, A[t, idx]] if t > 0 else np.nan
        w[t] = W[kappa]
    return x_prev, x_cur, w


def _complete_data_terms(x_prev, x_cur, y, theta):
    """Per-step log transition densities and their unconstrained scores.

    Row 0 is the initial state, rows ``1..T`` the transitions.
    """
    mu, phi, sigma_v, rho = natural_params(theta)
    y_prev = np.concatenate([[0.0], y[:-1]])[:, None]
    xp, xc = x_prev[1:], x_cur[1:]
    Q = 1.0 / (sigma_v ** 2 * (1 - rho ** 2))
    e = np.exp(-0.5 * xp) * y_prev
    G = xc - mu - phi * (xp - mu) - rho * sigma_v * e
    logp = -0.5 * (_LOG_2PI - np.log(Q) + Q * G * G)
    scores = np.stack([
        Q * G * (1 - phi),
        Q * G * (xp - mu) * (1 - phi ** 2),
        Q * G * (G + sigma_v * rho * e) - 1.0,
        rho - Q * rho * G * G + G * e / sigma_v,
    ])
    x0 = x_cur[0]
    v0 = sigma_v ** 2 / (1 - phi ** 2)
    d0 = x0 - mu
    logp0 = -0.5 * (_LOG_2PI + np.log(v0) + d0 * d0 / v0)
    scores0 = np.stack([d0 / v0, -phi + phi * d0 * d0 / v0, -1.0 + d0 * d0 / v0, np.zeros_like(x0)])
    return logp0, scores0, logp, scores


def fixed_lag_score(system, y, theta, lag):
    """Fixed-lag smoothed score of the complete-data log-likelihood."""
    x_prev, x_cur, w = _lineages(system, lag)
    _, s0, _, s = _complete_data_terms(x_prev, x_cur, y, theta)
    return (s0 * w[0]).sum(axis=1) + (s * w[1:]).sum(axis=(1, 2))


def fixed_lag_expected_loglik(system, y, theta_eval, lag):
    """Smoothed expectation of ``log p(x_{0:T}, y | theta_eval)`` over the
    particle system (observation terms dropped, they do not depend on theta).

    Its gradient in ``theta_eval`` at the parameters that produced ``system``
    is :func:`fixed_lag_score`.
    """
    x_prev, x_cur, w = _lineages(system, lag)
    lp0, _, lp, _ = _complete_data_terms(x_prev, x_cur, y, theta_eval)
    return (lp0 * w[0]).sum() + (lp * w[1:]).sum()


def sv_bpf_evaluate(y, theta, u, N, lag=10, score="fisher", sort=True):
    """Log-target estimate and gradient for the stochastic volatility model.

    ``score="fisher"`` smooths the complete-data score with a fixed lag;
    ``score="pathwise"`` differentiates the likelihood estimate at fixed ``u``.
    """
    theta = np.asarray(theta, dtype=float)
    system = sv_bpf_run(y, theta, u, N, sort=sort, pathwise=(score == "pathwise"))
    if not np.isfinite(system.loglik):
        return TargetEvaluation(-np.inf, np.zeros(4))
    if score == "fisher":
        g = fixed_lag_score(system, y, theta, lag)
    elif score == "pathwise":
        g = system.grad_pathwise
    else:
        raise ValueError(f"unknown score estimator {score!r}")
    logtarget = log_prior(theta) + system.loglik
    return TargetEvaluation(float(logtarget), g + _prior_jacobian_grad(theta))


def log_returns(prices):
    """Percentage log-returns ``100 (log s_t - log s_{t-1})``."""
    return 100.0 * np.diff(np.log(np.asarray(prices, dtype=float)))


class StochasticVolatilityModel(ModelHandle):
    n_theta = 4
    param_names = ("mu", "phi", "sigma_v", "rho")

    def __init__(self, y, N=75, lag=10, score="fisher"):
        self.y = np.asarray(y, dtype=float)
        self.T = self.y.size
        self.N = N
        self.lag = lag
        self.score = score
        self.n_u = (N + 1) * (self.T + 1)

    def evaluate(self, theta, u, with_hessian=False):
        return sv_bpf_evaluate(self.y, theta, u, self.N, self.lag, self.score)

    def log_target(self, theta, u):
        theta = np.asarray(theta, dtype=float)
        loglik = sv_bpf_run(self.y, theta, u, self.N).loglik
        return float(log_prior(theta) + loglik) if np.isfinite(loglik) else -np.inf

    def to_natural(self, theta):
        return np.array(natural_params(np.asarray(theta, dtype=float)))

    def to_unconstrained(self, params):
        mu, phi, sigma_v, rho = params
        return np.array([mu, np.arctanh(phi), np.log(sigma_v), np.arctanh(rho)])

    def log_jacobian(self, theta):
        return float(log_jacobian(theta))

    def default_theta0(self):
        return self.to_unconstrained([2.0, 0.9, 0.4, -0.2])
