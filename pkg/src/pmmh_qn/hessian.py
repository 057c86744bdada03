"""
Limited-memory estimates of the negative inverse Hessian of a log-target.

All estimators work in the minimisation convention: a secant pair holds a
parameter step ``s`` and the matching change ``g`` in the gradient of the
*negative* log-target, so that an exact estimate ``H`` satisfies ``H g = s``
and is positive definite for a log-concave target. The result can be used
directly as a proposal covariance after :func:`spectral_correct`.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SR1_SKIP_THRESHOLD = 1e-8
MIN_STEP_NORM = 1e-12
DEFAULT_LAMBDA_MIN = 1e-6
DEFAULT_H0_SCALE = 0.01

SOURCES = ("SR1", "LS", "BFGS", "FALLBACK")


class ContractError(ValueError):
    """Raised when inputs violate the shape or domain contract of an estimator."""


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when the unregularised least-squares system has no unique solution."""


@dataclass(frozen=True)
class SecantPair:
    """Parameter difference ``s`` and gradient difference ``g`` of one step."""

    s: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.s, dtype=float))
        g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if s.shape != g.shape or s.ndim != 1:
            raise ContractError(f"secant pair shapes differ: {s.shape} vs {g.shape}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "g", g)


@dataclass(frozen=True)
class HessianEstimate:
    matrix: np.ndarray
    corrected: bool = False
    source: str = "FALLBACK"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ContractError(f"unknown estimate source {self.source!r}")


def secant_pairs(thetas, grads, min_step=MIN_STEP_NORM):
    """Build consecutive secant pairs from ordered points.

    ``grads`` are gradients of the negative log-target at ``thetas``. Pairs whose
    parameter step is shorter than ``min_step`` (repeated states after a
    rejection) are dropped.
    """
    thetas = np.asarray(thetas, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if thetas.shape != grads.shape:
        raise ContractError("thetas and grads must have the same shape")
    ds = np.diff(thetas, axis=0)
    dg = np.diff(grads, axis=0)
    keep = np.linalg.norm(ds, axis=1) >= min_step
    return [SecantPair(s, g) for s, g in zip(ds[keep], dg[keep])]


def _stack(pairs: Sequence[SecantPair]):
    if len(pairs) == 0:
        raise ContractError("window of secant pairs is empty")
    S = np.stack([p.s for p in pairs], axis=1)
    Y = np.stack([p.g for p in pairs], axis=1)
    return S, Y


def _check_square(H, n):
    if H.shape != (n, n):
        raise ContractError(f"matrix of shape {H.shape} does not match dimension {n}")


def _initial_scale(grad_at_center, h0_scale):
    norm = np.sqrt(grad_at_center @ grad_at_center)
    if norm == 0.0 or not np.isfinite(norm):
        return h0_scale
    return h0_scale / norm


def sr1_update(H, s, g, r=SR1_SKIP_THRESHOLD):
    """One symmetric rank-one update of the inverse Hessian ``H``.

    The update is skipped (``H`` returned unchanged) when the denominator
    ``(s - H g)^T g`` is smaller than ``r * ||s - H g|| * ||g||`` in magnitude.
    """
    H = np.asarray(H, dtype=float)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if s.shape != g.shape:
        raise ContractError(f"secant pair shapes differ: {s.shape} vs {g.shape}")
    _check_square(H, s.shape[0])
    return _sr1_step(H, s, g, r)


def _sr1_step(H, s, g, r):
    v = s - H @ g
    denom = v @ g
    if denom == 0.0 or abs(denom) < r * np.sqrt((v @ v) * (g @ g)):
        return H
    return H + np.outer(v, v) / denom


def sr1_estimate(pairs, grad_at_center, h0_scale=DEFAULT_H0_SCALE, r=SR1_SKIP_THRESHOLD):
    """Limited-memory SR1 estimate started from a gradient-scaled identity."""
    S, Y = _stack(pairs)
    return sr1_from_arrays(S, Y, grad_at_center, h0_scale, r)


def sr1_from_arrays(S, Y, grad_at_center, h0_scale=DEFAULT_H0_SCALE, r=SR1_SKIP_THRESHOLD):
    """As :func:`sr1_estimate`, with steps and gradient changes as matrix columns."""
    n = S.shape[0]
    H = _initial_scale(grad_at_center, h0_scale) * np.eye(n)
    for j in range(S.shape[1]):
        H = _sr1_step(H, S[:, j], Y[:, j], r)
    return HessianEstimate(0.5 * (H + H.T), source="SR1")


def ls_estimate(pairs, lam, Lambda):
    """Regularised least-squares fit of ``H Y = S`` shrunk towards ``Lambda``.

    Solves ``(lam I + Y Y^T) H = lam Lambda + Y S^T``.
    """
    S, Y = _stack(pairs)
    return ls_from_arrays(S, Y, lam, Lambda)


def ls_from_arrays(S, Y, lam, Lambda):
    if lam < 0:
        raise ContractError("regularisation strength must be non-negative")
    n = S.shape[0]
    Lambda = np.asarray(Lambda, dtype=float)
    _check_square(Lambda, n)
    # stacked least squares avoids squaring the conditioning of Y
    lhs, rhs = Y.T, S.T
    if lam > 0:
        root = np.sqrt(lam)
        lhs = np.vstack([lhs, root * np.eye(n)])
        rhs = np.vstack([rhs, root * Lambda])
    H, _, rank, _ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if rank < n:
        raise SingularSystemError("gradient differences do not span the parameter space")
    return HessianEstimate(0.5 * (H + H.T), source="LS")


def bfgs_estimate(pairs, h0_scale, grad_at_center, damping=0.2):
    """Damped BFGS (Powell) estimate of the inverse Hessian.

    A direct Hessian approximation ``B`` is updated with the damped secant
    vector ``r = tau g + (1 - tau) B s``, which keeps ``B`` positive definite
    even for pairs with ``s^T g <= 0``. The inverse of ``B`` is returned.
    """
    S, Y = _stack(pairs)
    return bfgs_from_arrays(S, Y, h0_scale, grad_at_center, damping)


def bfgs_from_arrays(S, Y, h0_scale, grad_at_center, damping=0.2):
    n = S.shape[0]
    B = np.eye(n) / _initial_scale(grad_at_center, h0_scale)
    for j in range(S.shape[1]):
        s, g = S[:, j], Y[:, j]
        Bs = B @ s
        sBs = s @ Bs
        if sBs <= 0.0:
            continue
        sg = s @ g
        if sg >= damping * sBs:
            r = g
            sr = sg
        else:
            tau = (1.0 - damping) * sBs / (sBs - sg)
            r = tau * g + (1.0 - tau) * Bs
            sr = s @ r
        B = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / sr
    H = np.linalg.inv(B)
    return HessianEstimate(0.5 * (H + H.T), source="BFGS")


def spectral_correct(H, lambda_min=DEFAULT_LAMBDA_MIN, source="FALLBACK"):
    """Map every eigenvalue to ``max(lambda_min, |eigenvalue|)``."""
    if lambda_min <= 0:
        raise ContractError("lambda_min must be positive")
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.T)
    eigval, eigvec = np.linalg.eigh(H)
    fixed = np.maximum(lambda_min, np.abs(eigval))
    if np.array_equal(fixed, eigval):
        return HessianEstimate(H, corrected=False, source=source)
    out = (eigvec * fixed) @ eigvec.T
    return HessianEstimate(0.5 * (out + out.T), corrected=True, source=source)
