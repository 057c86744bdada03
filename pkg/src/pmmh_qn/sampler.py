"""
Markov chain drivers.

:func:`run_qn_chain` is the sliding-window correlated sampler used in
practice. :func:`run_product_chain` runs the exact memory-augmented scheme
over ``M`` copies of a noise-free target and serves as a validity check.
"""

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import hessian
from .proposals import (
    QN_METHODS,
    GaussianProposal,
    MemoryWindow,
    StepSizeState,
    _as_covariance,
    adapt_step_size,
    cn_propose_aux,
    langevin_statistics,
    qn_propose,
)

LAMBDA_JITTER = 1e-8
# keeps adapted step sizes representable when the target rate is unreachable
STEP_BOUNDS = (1e-8, 1e8)


class EstimatorFailure(RuntimeError):
    """The log-target estimate at the initial state is not finite."""


@dataclass
class ChainState:
    theta: np.ndarray
    u: np.ndarray
    u_aux: Optional[np.ndarray]
    logtarget: float
    grad_main: np.ndarray
    grad_aux: np.ndarray
    hess: Optional[np.ndarray] = None


@dataclass
class ChainTrace:
    """Per-iteration record of a chain; row ``k - 1`` holds iteration ``k``.

    ``theta`` is stored in unconstrained coordinates.
    """

    theta: np.ndarray
    logtarget: np.ndarray
    alpha: np.ndarray
    accepted: np.ndarray
    corrected: np.ndarray
    epsilon: np.ndarray
    param_names: tuple = ()
    wall_time: float = 0.0
    grad_main: Optional[np.ndarray] = field(default=None, repr=False)
    grad_aux: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def empty(cls, K, n, param_names=(), store_gradients=False):
        grads = (np.zeros((K, n)), np.zeros((K, n))) if store_gradients else (None, None)
        return cls(np.zeros((K, n)), np.zeros(K), np.zeros(K), np.zeros(K, dtype=bool),
                   np.zeros(K, dtype=bool), np.zeros(K), tuple(param_names), 0.0, *grads)

    def __len__(self):
        return self.theta.shape[0]

    @property
    def k(self):
        return np.arange(1, len(self) + 1)

    @property
    def n_theta(self):
        return self.theta.shape[1]

    def columns(self):
        names = self.param_names or tuple(f"theta_{i + 1}" for i in range(self.n_theta))
        return ["k", *names, "logtarget", "alpha", "accepted", "corrected", "epsilon"]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for i in range(len(self)):
                writer.writerow([i + 1, *(f"{v:.17g}" for v in self.theta[i]),
                                 f"{self.logtarget[i]:.17g}", f"{self.alpha[i]:.17g}",
                                 int(self.accepted[i]), int(self.corrected[i]),
                                 f"{self.epsilon[i]:.17g}"])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n = len(header) - 6
        data = np.array([[float(v) for v in row] for row in body]).reshape(len(body), n + 6)
        return cls(data[:, 1:1 + n].copy(), data[:, 1 + n].copy(), data[:, 2 + n].copy(),
                   data[:, 3 + n].astype(bool), data[:, 4 + n].astype(bool),
                   data[:, 5 + n].copy(), tuple(header[1:1 + n]))


def accept_ratio(current, candidate, logq_fwd, logq_rev, log_jacobian):
    """Metropolis-Hastings acceptance probability; 0 for a non-finite candidate."""
    if not np.isfinite(candidate.logtarget):
        return 0.0
    log_r = candidate.logtarget - current.logtarget + logq_rev - logq_fwd + log_jacobian
    if np.isnan(log_r):
        return 0.0
    return 1.0 if log_r >= 0.0 else float(np.exp(log_r))


class _Candidate:
    __slots__ = ("logtarget",)

    def __init__(self, logtarget):
        self.logtarget = logtarget


def _newton_covariance(hess, lambda_min):
    """Spectrally corrected ``-inv(hess)`` for the second-order Langevin move."""
    try:
        raw = -np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        raw = np.zeros_like(hess)
    raw = 0.5 * (raw + raw.T)
    return hessian.spectral_correct(raw, lambda_min, source="FALLBACK")


def run_qn_chain(model, config, seed, theta0=None, store_gradients=False):
    """Run one chain with the method named by ``config.method``.

    Quasi-Newton methods carry two auxiliary streams: the main stream drives
    the log-target and drift gradient, the second stream feeds the secant
    pairs. The gradient of the second stream is only needed for accepted
    states, so it is evaluated lazily.
    """
    method = config.method
    rng = np.random.default_rng(seed)
    n = model.n_theta
    K, M = config.K, config.M
    qn = method in QN_METHODS
    use_hess = method == "pmMH2"
    if use_hess and not model.has_hessian:
        raise ValueError(f"{type(model).__name__} provides no Hessian for pmMH2")

    if theta0 is None:
        theta0 = (model.to_unconstrained(config.theta0) if config.theta0 is not None
                  else model.default_theta0())
    theta = np.array(theta0, dtype=float).reshape(n)
    delta_cov = _as_covariance(config.init_delta, n)
    Lambda = delta_cov.copy()
    fixed_cov = (_as_covariance(config.proposal_cov, n) if config.proposal_cov is not None
                 else delta_cov)

    u = rng.standard_normal(model.n_u)
    u_aux = rng.standard_normal(model.n_u) if qn else None
    ev = model.evaluate(theta, u, with_hessian=use_hess)
    if not np.isfinite(ev.logtarget):
        raise EstimatorFailure(f"non-finite log-target {ev.logtarget} at initial state {theta}")
    grad_aux = model.evaluate(theta, u_aux).grad if qn else ev.grad
    state = ChainState(theta, u, u_aux, ev.logtarget, ev.grad, grad_aux, ev.hess)
    newton = _newton_covariance(state.hess, config.lambda_min) if use_hess else None

    window = MemoryWindow(M)
    window.append(theta, state.logtarget, state.grad_main, state.grad_aux)
    step = StepSizeState(config.initial_step, 0, config.target_acceptance, config.eta)
    trace = ChainTrace.empty(K, n, model.param_names, store_gradients)
    sigma_u = config.sigma_u
    adapt = config.adapt_step
    burnin = config.burnin

    start = time.perf_counter()
    for k in range(1, K + 1):
        eps = step.eps
        u_new = cn_propose_aux(state.u, sigma_u, rng.standard_normal(model.n_u))
        if qn:
            u_aux_new = cn_propose_aux(state.u_aux, sigma_u, rng.standard_normal(model.n_u))
            if k < M:
                proposal = GaussianProposal(state.theta, delta_cov, random_walk=True)
            else:
                proposal = qn_propose(window, method, eps, Lambda, delta_cov, config.lam,
                                      config.lambda_min, config.h0_scale)
        elif method == "pmMH0":
            proposal = GaussianProposal(state.theta, eps ** 2 * fixed_cov, random_walk=True)
        elif method == "pmMH1":
            proposal = langevin_statistics(state.theta, state.grad_main, fixed_cov, eps)
        else:
            proposal = langevin_statistics(state.theta, state.grad_main, newton.matrix, eps)

        candidate = proposal.sample(rng)
        ev = model.evaluate(candidate, u_new, with_hessian=use_hess)
        alpha = 0.0
        cand_newton = None
        if np.isfinite(ev.logtarget):
            if method == "pmMH1":
                reverse = langevin_statistics(candidate, ev.grad, fixed_cov, eps)
                log_q = reverse.log_density(state.theta) - proposal.log_density(candidate)
            elif method == "pmMH2":
                cand_newton = _newton_covariance(ev.hess, config.lambda_min)
                reverse = langevin_statistics(candidate, ev.grad, cand_newton.matrix, eps)
                log_q = reverse.log_density(state.theta) - proposal.log_density(candidate)
            else:
                log_q = proposal.log_ratio(state.theta, candidate)
            alpha = accept_ratio(state, _Candidate(ev.logtarget), 0.0, log_q,
                                 model.log_jacobian_ratio(candidate, state.theta))
        accepted = rng.random() <= alpha and alpha > 0.0

        if accepted:
            grad_aux = model.evaluate(candidate, u_aux_new).grad if qn else ev.grad
            state = ChainState(candidate, u_new, u_aux_new if qn else None, ev.logtarget,
                               ev.grad, grad_aux, ev.hess)
            if use_hess:
                newton = cand_newton

        corrected = newton.corrected if use_hess else proposal.corrected
        trace.theta[k - 1] = state.theta
        trace.logtarget[k - 1] = state.logtarget
        trace.alpha[k - 1] = alpha
        trace.accepted[k - 1] = accepted
        trace.corrected[k - 1] = corrected
        trace.epsilon[k - 1] = eps
        if store_gradients:
            trace.grad_main[k - 1] = state.grad_main
            trace.grad_aux[k - 1] = state.grad_aux
        window.append(state.theta, state.logtarget, state.grad_main, state.grad_aux)

        # the step size only adapts on moves it actually scaled
        if adapt and (method == "pmMH0" or not proposal.random_walk):
            step = adapt_step_size(step, alpha)
            if not STEP_BOUNDS[0] <= step.eps <= STEP_BOUNDS[1]:
                step = replace(step, eps=float(np.clip(step.eps, *STEP_BOUNDS)))
        if k == burnin and burnin >= 2:
            Lambda = np.atleast_2d(np.cov(trace.theta[:burnin].T)) + LAMBDA_JITTER * np.eye(n)
    trace.wall_time = time.perf_counter() - start
    return trace


def run_product_chain(target, M, K, proposal, seed, theta0=0.0):
    """Systematic-scan Metropolis-within-Gibbs over ``M`` copies of ``target``.

    ``target`` maps a parameter vector to its exact log-density. ``proposal``
    is called as ``proposal(theta_i, others)`` where ``others`` lists the
    current values of the remaining components, and must return a
    :class:`GaussianProposal`. The reverse density is obtained by calling it
    again from the candidate with the same ``others``.
    """
    if M < 2:
        raise ValueError("the product chain needs at least two components")
    rng = np.random.default_rng(seed)
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.ndim <= 1:
        theta0 = np.tile(np.atleast_1d(theta0), (M, 1))
    comps = [t.copy() for t in theta0]
    logp = [target(t) for t in comps]
    n = comps[0].size
    traces = [ChainTrace.empty(K, n) for _ in range(M)]
    start = time.perf_counter()
    for k in range(K):
        for i in range(M):
            others = comps[:i] + comps[i + 1:]
            fwd = proposal(comps[i], others)
            cand = fwd.sample(rng)
            cand_logp = target(cand)
            if fwd.random_walk:
                log_q = 0.0
            else:
                rev = proposal(cand, others)
                log_q = rev.log_density(comps[i]) - fwd.log_density(cand)
            alpha = accept_ratio(_Candidate(logp[i]), _Candidate(cand_logp), 0.0, log_q, 0.0)
            accepted = rng.random() <= alpha and alpha > 0.0
            if accepted:
                comps[i], logp[i] = cand, cand_logp
            tr = traces[i]
            tr.theta[k] = comps[i]
            tr.logtarget[k] = logp[i]
            tr.alpha[k] = alpha
            tr.accepted[k] = accepted
    elapsed = time.perf_counter() - start
    for tr in traces:
        tr.wall_time = elapsed / M
    return traces


def pooled_estimate(traces, phi, burnin=0):
    """Average of ``phi`` over all post-burn-in states of all traces."""
    values = [phi(theta) for tr in traces for theta in tr.theta[burnin:]]
    if not values:
        raise ValueError("no samples left after burn-in")
    return float(np.mean(values, axis=0))
