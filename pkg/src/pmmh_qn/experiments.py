"""
Study drivers: memory/correlation grid sweeps, Hessian-accuracy tracking and
proposal benchmarks, each over independent replicates.
"""

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import data as datasets
from .diagnostics import ChainSummary, hessian_error_curve, summarize
from .hessian import spectral_correct
from .models import GaussianTarget, LogisticModel, RandomEffectsModel, StochasticVolatilityModel
from .proposals import MemoryWindow, WindowEntry, cn_propose_aux, estimate_covariance
from .sampler import LAMBDA_JITTER, _newton_covariance, run_qn_chain

log = logging.getLogger(__name__)

SUBSAMPLE_FRACTION = 0.05


def derive_seed(base_seed, replicate, cell=()):
    """Seed for one replicate of one grid cell.

    Replicate ``r`` of the base seed ``s`` starts from ``s + r``; the cell
    coordinates are hashed in so that different cells never share a stream.
    """
    key = zlib.crc32(repr(tuple(cell)).encode())
    seq = np.random.SeedSequence([base_seed + replicate, key])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def load_data(config):
    """Observations described by ``config.data``: a file path or a synthetic block."""
    spec = config.data or {}
    if "path" in spec:
        return datasets.read_dataset(config.model, spec["path"], spec)
    synthetic = spec.get("synthetic", {})
    return datasets.generate(config.model, synthetic, spec.get("seed", config.seed))


def build_model(config, observations=None):
    if observations is None and config.model != "gaussian":
        observations = load_data(config)
    if config.model == "gaussian":
        spec = config.data or {}
        return GaussianTarget(spec.get("mean", 0.0), spec.get("cov", 1.0))
    if config.model == "random_effects":
        return RandomEffectsModel(observations, N=config.n_particles, score=config.score)
    if config.model == "logistic":
        y, X = observations
        N = config.N if config.N is not None else max(1, round(SUBSAMPLE_FRACTION * len(y)))
        return LogisticModel(y, X, N=N, rescale=config.rescale)
    return StochasticVolatilityModel(observations, N=config.n_particles, lag=config.lag,
                                     score=config.score)


@dataclass
class RunResult:
    seed: int
    summary: ChainSummary = None
    trace: object = None
    error: str = None


@dataclass
class CellResult:
    coords: tuple
    runs: list = field(default_factory=list)

    @property
    def summaries(self):
        return [r.summary for r in self.runs if r.summary is not None]

    @property
    def errors(self):
        return [r.error for r in self.runs if r.error is not None]

    def median(self, attr):
        values = [getattr(s, attr) for s in self.summaries]
        return float(np.median(values)) if values else float("nan")

    def to_dict(self):
        return {
            "coords": list(self.coords),
            "median_acceptance": self.median("acceptance_rate"),
            "median_correction": self.median("correction_rate"),
            "median_mean_if": self.median("mean_if"),
            "median_max_if": self.median("max_if"),
            "median_mean_tes": self.median("mean_tes"),
            "median_max_tes": self.median("max_tes"),
            "runs": [
                {"seed": r.seed, "error": r.error,
                 "summary": r.summary.to_dict() if r.summary else None}
                for r in self.runs
            ],
        }


def run_replicates(model, config, replicates, cell=(), keep_traces=False):
    """Run ``replicates`` chains of ``config``; failures are recorded, not raised."""
    result = CellResult(tuple(cell))
    natural = model.to_natural
    for r in range(replicates):
        seed = derive_seed(config.seed, r, cell)
        try:
            trace = run_qn_chain(model, config, seed)
            summary = summarize(trace, config.burnin, natural)
            result.runs.append(RunResult(seed, summary, trace if keep_traces else None))
        except Exception as exc:  # a failed cell must not stop the study
            log.warning("cell %s replicate %d failed: %s", cell, r, exc)
            result.runs.append(RunResult(seed, error=f"{type(exc).__name__}: {exc}"))
    return result


def sweep_grid(model, M_values, sigma_u_values, replicates, config, keep_traces=False):
    """Run every ``(M, sigma_u)`` cell; returns ``{(M, sigma_u): CellResult}``."""
    if not M_values or not sigma_u_values:
        raise ValueError("sweep grids must be nonempty")
    grid = {}
    for M in M_values:
        for sigma_u in sigma_u_values:
            cfg = config.replace(M=int(M), sigma_u=float(sigma_u))
            grid[(M, sigma_u)] = run_replicates(model, cfg, replicates, (M, sigma_u),
                                                keep_traces)
    return grid


def sweep_scatter(grid):
    """``(acceptance rate, mean TES)`` for every successful run in the sweep."""
    return [(s.acceptance_rate, s.mean_tes) for cell in grid.values() for s in cell.summaries]


def estimate_correlation(model, theta, sigma_u, n_steps, seed):
    """Correlation between log-target estimates before and after a CN move.

    Each of the ``n_steps`` pairs starts from a fresh standard-normal
    auxiliary block, so the pairs are independent draws from the stationary
    joint law of two successive estimates at fixed ``theta``.
    """
    rng = np.random.default_rng(seed)
    before, after = np.empty(n_steps), np.empty(n_steps)
    for i in range(n_steps):
        u = rng.standard_normal(model.n_u)
        u_new = cn_propose_aux(u, sigma_u, rng.standard_normal(model.n_u))
        before[i] = model.log_target(theta, u)
        after[i] = model.log_target(theta, u_new)
    ok = np.isfinite(before) & np.isfinite(after)
    if ok.sum() < 3:
        raise ValueError("too few finite estimate pairs to form a correlation")
    return float(np.corrcoef(before[ok], after[ok])[0, 1])


def window_estimates(trace, k, M, methods, Lambda, config):
    """Corrected qN covariance estimates from the ``M`` states ending at row ``k``."""
    entries = [WindowEntry(trace.theta[i], trace.logtarget[i], trace.grad_main[i],
                           trace.grad_aux[i]) for i in range(k - M + 1, k + 1)]
    window = MemoryWindow(M, entries)
    unique = window.unique_sorted()
    out = {}
    for method in methods:
        est = None
        if len(unique) >= 2:
            est = estimate_covariance(unique, method, Lambda, config.lam, config.h0_scale,
                                      window.oldest.grad_aux)
        if est is None:
            out[method] = None
        else:
            out[method] = spectral_correct(est.matrix, config.lambda_min, est.source)
    return out


@dataclass
class HessianStudy:
    M_values: list
    methods: list
    errors: dict  # (method, M) -> per-chain mean Frobenius error
    fallback_rate: dict

    def quantiles(self, method, M):
        e = np.asarray(self.errors[(method, M)])
        e = e[np.isfinite(e)]
        if e.size == 0:
            return {"median": float("nan"), "q25": float("nan"), "q75": float("nan")}
        q25, med, q75 = np.quantile(e, [0.25, 0.5, 0.75])
        return {"median": float(med), "q25": float(q25), "q75": float(q75)}

    def to_dict(self):
        return {
            "M_values": list(self.M_values),
            "curves": {
                m: [{"M": M, **self.quantiles(m, M), "per_chain": list(self.errors[(m, M)]),
                     "fallback_rate": self.fallback_rate[(m, M)]} for M in self.M_values]
                for m in self.methods
            },
        }


def hessian_accuracy_study(model, M_values, replicates, K, config,
                           methods=("BFGS", "LS", "SR1"), stride=1):
    """Frobenius error of qN estimates along second-order Langevin chains.

    Each replicate runs a chain with the exact-Hessian proposal; at every
    ``stride``-th post-burn-in iteration the trailing window of each length
    in ``M_values`` is turned into an estimate per method and compared with
    the corrected inverse of the exact full-data Hessian. Iterations whose
    window yields no estimate are counted in ``fallback_rate``.
    """
    if not hasattr(model, "full_hessian"):
        raise ValueError("the Hessian study needs a model with an exact Hessian")
    M_values = sorted(int(M) for M in M_values)
    burnin = max(config.burnin, max(M_values))
    cfg = config.replace(method="pmMH2", K=K, burnin=min(burnin, K - 1), M=2)
    errors = {(m, M): [] for m in methods for M in M_values}
    fallbacks = {(m, M): [] for m in methods for M in M_values}
    for r in range(replicates):
        seed = derive_seed(config.seed, r, ("hessian",))
        try:
            trace = run_qn_chain(model, cfg, seed, store_gradients=True)
        except Exception as exc:
            log.warning("hessian study replicate %d failed: %s", r, exc)
            for key in errors:
                errors[key].append(float("nan"))
                fallbacks[key].append(float("nan"))
            continue
        b = cfg.burnin
        Lambda = np.atleast_2d(np.cov(trace.theta[:b].T)) + LAMBDA_JITTER * np.eye(model.n_theta)
        acc = {key: [] for key in errors}
        for k in range(b, K, stride):
            reference = _newton_covariance(model.full_hessian(trace.theta[k]),
                                           config.lambda_min).matrix
            for M in M_values:
                ests = window_estimates(trace, k, M, methods, Lambda, config)
                for m, est in ests.items():
                    if est is None:
                        acc[(m, M)].append(None)
                    else:
                        acc[(m, M)].append(hessian_error_curve(reference, [est.matrix])[0])
        for key, vals in acc.items():
            good = [v for v in vals if v is not None]
            errors[key].append(float(np.mean(good)) if good else float("nan"))
            fallbacks[key].append(1.0 - len(good) / len(vals) if vals else float("nan"))
    fallback_rate = {key: float(np.nanmean(v)) if np.any(np.isfinite(v)) else float("nan")
                     for key, v in fallbacks.items()}
    return HessianStudy(M_values, list(methods), errors, fallback_rate)


def benchmark_proposals(model, proposal_set, replicates, config, overrides=None,
                        keep_traces=False):
    """Run each proposal with matched replicate seeds.

    ``overrides`` maps a method name to config fields (step size, target
    acceptance, ...) that apply to that method only.
    """
    if not proposal_set:
        raise ValueError("proposal set is empty")
    overrides = overrides or {}
    table = {}
    for method in proposal_set:
        cfg = config.replace(method=method, **overrides.get(method, {}))
        table[method] = run_replicates(model, cfg, replicates, ("benchmark",), keep_traces)
    return table


def benchmark_rows(table):
    """Flat per-method rows of the median statistics."""
    rows = []
    for method, cell in table.items():
        rows.append({
            "method": method,
            "acceptance": cell.median("acceptance_rate"),
            "correction": cell.median("correction_rate"),
            "mean_if": cell.median("mean_if"),
            "max_if": cell.median("max_if"),
            "ms_per_iter": 1e3 * cell.median("wall_time_per_iter"),
            "mean_tes": cell.median("mean_tes"),
            "max_tes": cell.median("max_tes"),
            "failures": len(cell.errors),
        })
    return rows
