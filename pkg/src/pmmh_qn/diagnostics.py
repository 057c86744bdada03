"""
Chain-quality statistics: autocorrelation, inefficiency factor, time per
effective sample and Hessian-accuracy errors.
"""

from dataclasses import asdict, dataclass

import numpy as np

IF_MAX_LAG = 250


class DegenerateSeriesError(ValueError):
    """The series has zero variance, so autocorrelations are undefined."""


def acf(series, max_lag):
    """Empirical autocorrelations at lags ``1..max_lag``.

    Autocovariances are normalised by the series length and divided by the
    lag-zero value.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n <= max_lag:
        raise ValueError(f"series of length {n} is too short for {max_lag} lags")
    x = x - x.mean()
    var = x @ x / n
    if not var > 0.0:
        raise DegenerateSeriesError("series has zero variance")
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[1:max_lag + 1] / n
    return acov / var


def inefficiency(series, max_lag=None):
    """Integrated autocorrelation time ``1 + 2 * sum(acf)``.

    The sum is truncated at 250 lags, or a quarter of the series length for
    short chains.
    """
    n = np.size(series)
    if max_lag is None:
        max_lag = min(IF_MAX_LAG, n // 4)
    return float(1.0 + 2.0 * acf(series, max_lag).sum())


def tes(if_value, wall_time_per_iter):
    return if_value * wall_time_per_iter


def hessian_error_curve(reference, estimates):
    reference = np.asarray(reference, dtype=float)
    return np.array([np.linalg.norm(np.asarray(e) - reference, "fro") for e in estimates])


def _posterior_var(traces, burnin):
    return np.var(np.vstack([t.theta[burnin:] for t in traces]), axis=0)


def relative_posterior_variance(candidate, baseline, burnin=0):
    """Median over replicate pairs of the parameter-averaged variance ratio.

    ``candidate`` and ``baseline`` are sequences of traces (or of trace
    groups) paired by position.
    """
    if len(candidate) != len(baseline) or not candidate:
        raise ValueError("candidate and baseline must hold the same, nonzero number of runs")
    ratios = []
    for cand, base in zip(candidate, baseline):
        cand = cand if isinstance(cand, (list, tuple)) else [cand]
        base = base if isinstance(base, (list, tuple)) else [base]
        v_base = _posterior_var(base, burnin)
        if np.any(v_base <= 0.0):
            raise DegenerateSeriesError("baseline posterior variance is zero")
        ratios.append(np.mean(_posterior_var(cand, burnin) / v_base))
    return float(np.median(ratios))


@dataclass
class ChainSummary:
    acceptance_rate: float
    correction_rate: float
    if_per_param: list
    tes_per_param: list
    posterior_mean: list
    posterior_var: list
    wall_time_per_iter: float
    param_names: list

    @property
    def mean_if(self):
        return float(np.mean(self.if_per_param))

    @property
    def max_if(self):
        return float(np.max(self.if_per_param))

    @property
    def mean_tes(self):
        return float(np.mean(self.tes_per_param))

    @property
    def max_tes(self):
        return float(np.max(self.tes_per_param))

    def to_dict(self):
        out = asdict(self)
        out.update(mean_if=self.mean_if, max_if=self.max_if,
                   mean_tes=self.mean_tes, max_tes=self.max_tes)
        return out


def summarize(trace, burnin=0, natural=None):
    """Summary statistics of the post-burn-in part of ``trace``.

    ``natural`` optionally maps an unconstrained parameter vector to natural
    coordinates for the posterior moments. A parameter that never moved gets
    an infinite IF.
    """
    theta = trace.theta[burnin:]
    if theta.shape[0] == 0:
        raise ValueError("no samples left after burn-in")
    per_iter = trace.wall_time / len(trace)
    ifs = []
    for j in range(theta.shape[1]):
        try:
            ifs.append(inefficiency(theta[:, j]))
        except DegenerateSeriesError:
            ifs.append(float("inf"))
    moments = theta if natural is None else np.array([natural(t) for t in theta])
    names = list(trace.param_names) or [f"theta_{j + 1}" for j in range(theta.shape[1])]
    return ChainSummary(
        acceptance_rate=float(trace.accepted[burnin:].mean()),
        correction_rate=float(trace.corrected[burnin:].mean()),
        if_per_param=ifs,
        tes_per_param=[tes(v, per_iter) for v in ifs],
        posterior_mean=moments.mean(axis=0).tolist(),
        posterior_var=moments.var(axis=0).tolist(),
        wall_time_per_iter=per_iter,
        param_names=names,
    )
