"""
Proposal distributions for the parameters and the auxiliary variables.
"""

from collections import deque
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import hessian
from .hessian import ContractError, SecantPair

QN_METHODS = ("SR1", "LS", "BFGS")

_LOG_2PI = np.log(2.0 * np.pi)


class ConfigurationError(ValueError):
    """Raised for out-of-range tuning constants."""


@dataclass(frozen=True)
class GaussianProposal:
    """Multivariate normal ``N(mean, covariance)``.

    ``random_walk`` marks a proposal centred on the current state; its reverse
    density is then evaluated with the mean moved to the candidate, which
    makes the forward/reverse ratio one. ``corrected`` records whether the
    covariance went through a spectral correction that changed it.
    """

    mean: np.ndarray
    covariance: np.ndarray
    random_walk: bool = False
    corrected: bool = False
    _chol: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ContractError(f"covariance {cov.shape} does not match mean {mean.shape}")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ContractError("proposal covariance is not positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self):
        return self.mean.size

    def sample(self, rng):
        return self.mean + self._chol @ rng.standard_normal(self.dim)

    def log_density(self, x, mean=None):
        mean = self.mean if mean is None else mean
        diff = np.atleast_1d(np.asarray(x, dtype=float)) - mean
        if diff.shape != self.mean.shape:
            raise ContractError("point and proposal dimensions differ")
        if self.dim == 1:
            z = diff / self._chol[0, 0]
        else:
            z = np.linalg.solve(self._chol, diff)
        half_logdet = np.log(np.diag(self._chol)).sum()
        return -0.5 * (self.dim * _LOG_2PI + z @ z) - half_logdet

    def log_ratio(self, current, candidate):
        """``log q(current | candidate) - log q(candidate | current)``."""
        if self.random_walk:
            return 0.0
        return self.log_density(current) - self.log_density(candidate)


def qn_log_density(proposal, x):
    return proposal.log_density(x)


def gaussian_product(first, second):
    """Normalised product of two Gaussian densities (precisions add)."""
    P1 = np.linalg.inv(first.covariance)
    P2 = np.linalg.inv(second.covariance)
    cov = np.linalg.inv(P1 + P2)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (P1 @ first.mean + P2 @ second.mean)
    return GaussianProposal(mean, cov, corrected=first.corrected or second.corrected)


def cn_propose_aux(u, sigma_u, fresh):
    """Crank-Nicolson move ``sqrt(1 - sigma_u^2) u + sigma_u * fresh``."""
    if not 0.0 <= sigma_u <= 1.0:
        raise ConfigurationError(f"sigma_u must lie in [0, 1], got {sigma_u}")
    if np.shape(u) != np.shape(fresh):
        raise ContractError("auxiliary blocks differ in length")
    return np.sqrt(1.0 - sigma_u ** 2) * u + sigma_u * fresh


def langevin_statistics(theta, grad, H, eps):
    """Euler step of the preconditioned Langevin diffusion.

    Mean ``theta + eps^2 / 2 * H @ grad`` and covariance ``eps^2 * H``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    mean = theta + 0.5 * eps ** 2 * (H @ grad)
    return GaussianProposal(mean, eps ** 2 * H)


class WindowEntry(NamedTuple):
    theta: np.ndarray
    logtarget: float
    grad_main: np.ndarray
    grad_aux: np.ndarray


class MemoryWindow:
    """The last ``M`` chain states, ordered oldest to newest."""

    def __init__(self, M, entries=()):
        if M < 1:
            raise ConfigurationError("memory length must be at least one")
        self.M = M
        self._entries = deque(maxlen=M)
        for entry in entries:
            self.append(*entry)

    def append(self, theta, logtarget, grad_main, grad_aux):
        self._entries.append(WindowEntry(theta, float(logtarget), grad_main, grad_aux))

    @property
    def entries(self):
        return list(self._entries)

    def __len__(self):
        return len(self._entries)

    @property
    def oldest(self):
        return self._entries[0]

    @property
    def newest(self):
        return self._entries[-1]

    def unique_sorted(self):
        """Distinct states sorted by ascending log-target (ties keep window order)."""
        seen = {}
        for entry in self._entries:
            seen.setdefault(entry.theta.tobytes(), entry)
        return sorted(seen.values(), key=lambda e: e.logtarget)


def window_pairs(entries):
    """Secant pairs between consecutive entries, on the negative log-target."""
    S, Y = _window_arrays(entries)
    return [SecantPair(S[:, j], Y[:, j]) for j in range(S.shape[1])]


def _window_arrays(entries):
    thetas = np.array([e.theta for e in entries])
    grads = np.array([e.grad_aux for e in entries])
    S = np.diff(thetas, axis=0)
    Y = -np.diff(grads, axis=0)
    keep = np.sqrt(np.einsum("ij,ij->i", S, S)) >= hessian.MIN_STEP_NORM
    return S[keep].T, Y[keep].T


def estimate_covariance(entries, method, Lambda, lam=0.1, h0_scale=hessian.DEFAULT_H0_SCALE,
                        grad_at_center=None):
    """Uncorrected quasi-Newton estimate of the negative inverse Hessian.

    Returns ``None`` when the entries do not yield a usable estimate.
    """
    S, Y = _window_arrays(entries)
    if S.shape[1] == 0:
        return None
    if grad_at_center is None:
        grad_at_center = entries[0].grad_aux
    try:
        if method == "SR1":
            est = hessian.sr1_from_arrays(S, Y, grad_at_center, h0_scale)
        elif method == "LS":
            est = hessian.ls_from_arrays(S, Y, lam, Lambda)
        elif method == "BFGS":
            est = hessian.bfgs_from_arrays(S, Y, h0_scale, grad_at_center)
        else:
            raise ConfigurationError(f"unknown quasi-Newton method {method!r}")
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(est.matrix)):
        return None
    return est


def qn_propose(window, method, eps, Lambda, delta, lam=0.1,
               lambda_min=hessian.DEFAULT_LAMBDA_MIN, h0_scale=hessian.DEFAULT_H0_SCALE):
    """Quasi-Newton proposal built from a memory window.

    The proposal is centred on the oldest state in the window and uses its
    main-stream gradient for the drift; the curvature estimate uses the
    auxiliary-stream gradients of the distinct states sorted by log-target.
    With fewer than two distinct states a random walk ``N(newest, delta)`` is
    returned instead. ``delta`` may be a scalar, a vector of variances or a
    covariance matrix.
    """
    if method not in QN_METHODS:
        raise ConfigurationError(f"unknown quasi-Newton method {method!r}")
    if len(window) == 0:
        raise ContractError("memory window is empty")
    n = window.newest.theta.size
    fallback_cov = _as_covariance(delta, n)
    entries = window.unique_sorted()
    est = None
    if len(entries) >= 2:
        center = window.oldest
        est = estimate_covariance(entries, method, Lambda, lam, h0_scale, center.grad_aux)
    if est is None:
        return GaussianProposal(window.newest.theta, fallback_cov, random_walk=True)
    fixed = hessian.spectral_correct(est.matrix, lambda_min, source=est.source)
    sigma = fixed.matrix
    mean = center.theta + 0.5 * eps ** 2 * (sigma @ center.grad_main)
    proposal = GaussianProposal(mean, eps ** 2 * sigma, corrected=fixed.corrected)
    if method == "SR1":
        trust = GaussianProposal(center.theta, Lambda)
        proposal = gaussian_product(proposal, trust)
    return proposal


def _as_covariance(delta, n):
    delta = np.asarray(delta, dtype=float)
    if delta.ndim == 0:
        return float(delta) * np.eye(n)
    if delta.ndim == 1:
        return np.diag(delta)
    return delta


@dataclass(frozen=True)
class StepSizeState:
    eps: float
    k: int = 0
    alpha_star: float = 0.25
    eta: float = 0.5

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError("step size must be positive")
        if not 0.0 < self.eta < 1.0:
            raise ConfigurationError("decay exponent must lie in (0, 1)")


def adapt_step_size(state, alpha_prev):
    """Robbins-Monro update ``log eps <- log eps + k^-eta (alpha - alpha*)``."""
    if not 0.0 <= alpha_prev <= 1.0:
        raise ConfigurationError(f"acceptance probability {alpha_prev} outside [0, 1]")
    k = state.k + 1
    eps = state.eps * np.exp(k ** (-state.eta) * (alpha_prev - state.alpha_star))
    return replace(state, eps=float(eps), k=k)
