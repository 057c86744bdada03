import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from pmmh_qn.models import (
    LogisticModel,
    RandomEffectsModel,
    StochasticVolatilityModel,
    jacobian_log_ratio,
    logit_evaluate,
    logit_simulate,
    logit_subsample,
    re_exact_evaluate,
    re_is_evaluate,
    re_simulate,
    sv_bpf_evaluate,
    sv_simulate,
)
from pmmh_qn.models.stochastic_volatility import (
    fixed_lag_expected_loglik,
    fixed_lag_score,
    sv_bpf_run,
)

SV_PARAMS = [0.5, 0.95, 0.2, -0.3]


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def rel_close(a, b, tol):
    return np.all(np.abs(a - b) <= tol * np.maximum(np.abs(b), 1.0))


# random effects

def test_re_simulate_moments():
    y = re_simulate(100_000, 1.0, 0.2, seed=1)
    assert y.var() == pytest.approx(1.04, abs=0.03)
    assert abs(y.mean() - 1.0) < 3 * np.sqrt(1.04 / y.size)


def test_re_simulate_degenerate_latent():
    y = re_simulate(50_000, 2.0, 0.0, seed=2)
    assert y.var() == pytest.approx(1.0, abs=0.03)


def test_re_degenerate_proposal_is_exact():
    y = re_simulate(15, 0.3, 0.2, seed=3)
    u = np.random.default_rng(3).standard_normal(15 * 7)
    theta = np.array([0.3, np.log(1e-12)])
    est = re_is_evaluate(y, theta, u, 7).logtarget
    exact = re_exact_evaluate(y, theta).logtarget
    assert est == pytest.approx(exact, abs=1e-9)


def test_re_is_matches_closed_form_large_n():
    y = re_simulate(20, 1.0, 0.2, seed=4)
    theta = np.array([1.0, np.log(0.2)])
    u = np.random.default_rng(4).standard_normal(20 * 100_000)
    est = re_is_evaluate(y, theta, u, 100_000).logtarget
    assert est == pytest.approx(re_exact_evaluate(y, theta).logtarget, abs=0.05)


def test_re_is_unbiased():
    y = re_simulate(10, 1.0, 0.5, seed=5)
    theta = np.array([0.8, np.log(0.5)])
    exact = re_exact_evaluate(y, theta).logtarget
    rng = np.random.default_rng(5)
    ratios = [np.exp(re_is_evaluate(y, theta, rng.standard_normal(1000), 100).logtarget - exact)
              for _ in range(10_000)]
    assert 0.97 <= np.mean(ratios) <= 1.03


@pytest.mark.parametrize("seed", range(3))
def test_re_pathwise_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    y = re_simulate(30, 1.0, 0.3, seed=seed)
    u = rng.standard_normal(30 * 50)
    theta = np.array([rng.normal(1.0, 0.2), np.log(rng.uniform(0.1, 0.6))])
    g = re_is_evaluate(y, theta, u, 50, score="pathwise").grad
    fd = central_diff(lambda t: re_is_evaluate(y, t, u, 50).logtarget + t[1], theta)
    assert rel_close(g, fd, 1e-4)


def test_re_exact_gradient_matches_finite_differences():
    y = re_simulate(40, 1.0, 0.2, seed=6)
    theta = np.array([0.9, np.log(0.4)])
    g = re_exact_evaluate(y, theta).grad
    fd = central_diff(lambda t: re_exact_evaluate(y, t).logtarget + t[1], theta)
    assert rel_close(g, fd, 1e-6)


def test_re_fisher_score_agrees_with_exact_at_large_n():
    y = re_simulate(20, 1.0, 0.5, seed=7)
    theta = np.array([1.1, np.log(0.5)])
    u = np.random.default_rng(7).standard_normal(20 * 50_000)
    g = re_is_evaluate(y, theta, u, 50_000, score="fisher").grad
    np.testing.assert_allclose(g, re_exact_evaluate(y, theta).grad, atol=0.1)


def test_re_rejects_wrong_block():
    with pytest.raises(ValueError):
        re_is_evaluate(np.zeros(3), np.zeros(2), np.zeros(5), 2)


# logistic

def test_logit_subsample_hand_traces():
    lo = np.full(2, -40.0)  # CDF underflows to zero
    hi = np.full(2, ndtri(1 - 1e-12))
    np.testing.assert_array_equal(logit_subsample(4, 2, lo), [0, 1])
    np.testing.assert_array_equal(logit_subsample(4, 2, hi), [1, 3])


def test_logit_subsample_can_repeat_last_row():
    idx = logit_subsample(3, 3, np.full(3, 8.0))
    assert idx[-1] == 2 and len(idx) == 3


def test_logit_subsample_inclusion_frequency():
    T, N, draws = 40, 8, 10_000
    rng = np.random.default_rng(8)
    counts = np.zeros(T)
    for _ in range(draws):
        counts += np.bincount(logit_subsample(T, N, rng.standard_normal(N)), minlength=T)
    p = N / T
    se = np.sqrt(p * (1 - p) / draws)
    assert np.all(np.abs(counts / draws - p) < 3 * se + 1e-12)


def test_logit_subsample_argument_checks():
    with pytest.raises(ValueError):
        logit_subsample(3, 4, np.zeros(4))
    with pytest.raises(ValueError):
        logit_subsample(5, 2, np.zeros(3))


def logistic_data(seed=9, T=300, p=4):
    beta = np.random.default_rng(seed).normal(0, 0.5, p)
    return logit_simulate(T, beta, seed)


def test_logit_zero_coefficients():
    y, X = logistic_data()
    T, p = X.shape
    ev = logit_evaluate(y, X, np.zeros(p), with_hessian=True)
    prior = -0.5 * p * np.log(2 * np.pi)
    assert ev.logtarget == pytest.approx(T * np.log(0.5) + prior)
    np.testing.assert_allclose(ev.grad, X.T @ (y - 0.5))
    np.testing.assert_allclose(ev.hess, -0.25 * X.T @ X - np.eye(p))


@pytest.mark.parametrize("seed", range(3))
def test_logit_gradient_and_hessian_match_finite_differences(seed):
    y, X = logistic_data(seed)
    beta = np.random.default_rng(seed).normal(0, 0.3, X.shape[1])
    ev = logit_evaluate(y, X, beta, with_hessian=True)
    fd = central_diff(lambda b: logit_evaluate(y, X, b).logtarget, beta)
    assert rel_close(ev.grad, fd, 1e-6)
    fd_h = np.array([central_diff(lambda b: logit_evaluate(y, X, b).grad[j], beta)
                     for j in range(beta.size)])
    assert rel_close(ev.hess, fd_h, 1e-6)


def test_logit_full_index_rescale_is_neutral():
    y, X = logistic_data()
    beta = np.full(X.shape[1], 0.1)
    idx = np.arange(len(y))
    a = logit_evaluate(y, X, beta, idx, rescale=True, with_hessian=True)
    b = logit_evaluate(y, X, beta, idx, rescale=False, with_hessian=True)
    assert a.logtarget == b.logtarget
    np.testing.assert_array_equal(a.grad, b.grad)
    np.testing.assert_array_equal(a.hess, b.hess)


def test_logit_rescaled_subsample_is_unbiased_in_expectation():
    y, X = logistic_data(T=200)
    beta = np.full(X.shape[1], 0.2)
    model = LogisticModel(y, X, N=20, rescale=True)
    rng = np.random.default_rng(10)
    vals = [model.evaluate(beta, rng.standard_normal(20)).logtarget for _ in range(4000)]
    full = logit_evaluate(y, X, beta).logtarget
    assert np.mean(vals) == pytest.approx(full, abs=4 * np.std(vals) / np.sqrt(4000))


def test_logistic_model_exact_mode():
    y, X = logistic_data()
    m = LogisticModel(y, X, exact=True)
    assert m.n_u == 0
    beta = np.full(X.shape[1], 0.05)
    assert m.evaluate(beta, None).logtarget == logit_evaluate(y, X, beta).logtarget
    np.testing.assert_array_equal(m.full_hessian(beta),
                                  logit_evaluate(y, X, beta, with_hessian=True).hess)


# stochastic volatility

def test_sv_simulate_iid_case():
    x, y = sv_simulate(100_000, [0.3, 0.0, 0.5, 0.0], seed=11)
    assert x.var() == pytest.approx(0.25, abs=0.01)
    assert abs(np.corrcoef(x[:-1], x[1:])[0, 1]) < 0.02


def test_sv_simulate_stationary_variance_and_mean():
    phi, sv = 0.8, 0.3
    x, y = sv_simulate(100_000, [0.0, phi, sv, 0.0], seed=12)
    v = sv ** 2 / (1 - phi ** 2)
    se = v * np.sqrt(2 * (1 + phi ** 2) / (1 - phi ** 2) / x.size)
    assert abs(x.var() - v) < 3 * se
    assert abs(y.mean()) < 3 * y.std() / np.sqrt(y.size)


def test_sv_simulate_domain():
    with pytest.raises(ValueError):
        sv_simulate(10, [0.0, 1.0, 0.2, 0.0])
    with pytest.raises(ValueError):
        sv_simulate(10, [0.0, 0.5, 0.2, -1.0])


@pytest.fixture(scope="module")
def sv_data():
    return sv_simulate(60, SV_PARAMS, seed=13)[1]


def sv_theta():
    return StochasticVolatilityModel(np.zeros(2)).to_unconstrained(SV_PARAMS)


def test_sv_deterministic(sv_data):
    u = np.random.default_rng(14).standard_normal(31 * 61)
    a = sv_bpf_evaluate(sv_data, sv_theta(), u, 30)
    b = sv_bpf_evaluate(sv_data, sv_theta(), u, 30)
    assert a.logtarget == b.logtarget
    np.testing.assert_array_equal(a.grad, b.grad)


def test_sv_weights_normalised(sv_data):
    u = np.random.default_rng(15).standard_normal(21 * 61)
    system = sv_bpf_run(sv_data, sv_theta(), u, 20)
    np.testing.assert_allclose(system.weights.sum(axis=1), 1.0, atol=1e-12)


def test_sv_sort_does_not_change_single_step(sv_data):
    u = np.random.default_rng(16).standard_normal(21 * 2)
    a = sv_bpf_run(sv_data[:1], sv_theta(), u, 20, sort=True).loglik
    b = sv_bpf_run(sv_data[:1], sv_theta(), u, 20, sort=False).loglik
    assert a == pytest.approx(b, abs=1e-12)


def test_sv_variance_shrinks_with_particles(sv_data):
    rng = np.random.default_rng(17)
    th = sv_theta()
    var = {}
    for N in (10, 100):
        var[N] = np.var([sv_bpf_run(sv_data, th, rng.standard_normal((N + 1) * 61), N).loglik
                         for _ in range(200)])
    assert var[10] > 2 * var[100]


def test_sv_rejects_wrong_block(sv_data):
    with pytest.raises(ValueError):
        sv_bpf_run(sv_data, sv_theta(), np.zeros(10), 5)


def _ancestry(y, theta, u, N):
    s = sv_bpf_run(y, theta, u, N)
    return s.ancestors, s.orders


def stable_point(y, theta, u, N, h):
    base = _ancestry(y, theta, u, N)
    for i in range(theta.size):
        for sign in (1, -1):
            t = theta.copy()
            t[i] += sign * h
            other = _ancestry(y, t, u, N)
            if not (np.array_equal(base[0], other[0]) and np.array_equal(base[1], other[1])):
                return False
    return True


def test_sv_pathwise_gradient_matches_finite_differences(sv_data):
    rng = np.random.default_rng(18)
    th, N, h = sv_theta(), 30, 1e-5
    checked = 0
    for _ in range(30):
        u = rng.standard_normal((N + 1) * 61)
        if not stable_point(sv_data, th, u, N, h):
            continue
        g = sv_bpf_evaluate(sv_data, th, u, N, score="pathwise").grad
        fd = central_diff(lambda t: sv_bpf_evaluate(sv_data, t, u, N).logtarget
                          + StochasticVolatilityModel(sv_data).log_jacobian(t), th, h)
        assert rel_close(g, fd, 1e-3)
        checked += 1
        if checked == 3:
            break
    assert checked > 0


def test_sv_fisher_score_is_gradient_of_smoothed_loglik(sv_data):
    u = np.random.default_rng(19).standard_normal(41 * 61)
    th = sv_theta()
    system = sv_bpf_run(sv_data, th, u, 40)
    g = fixed_lag_score(system, sv_data, th, 10)
    fd = central_diff(lambda t: fixed_lag_expected_loglik(system, sv_data, t, 10), th)
    assert rel_close(g, fd, 1e-6)


# Score of the exact likelihood at (0.5, 0.7, 0.3, -0.3) for the T=60 series
# simulated with seed 13: central differences (h=0.05) of filters with 20,000
# particles under common random numbers, averaged over four noise draws.
SV_SCORE_ORACLE = np.array([-0.886, 47.924, -2.402, -0.159])


def test_sv_fixed_lag_score_matches_high_particle_oracle():
    params = [0.5, 0.7, 0.3, -0.3]
    y = sv_simulate(60, params, seed=13)[1]
    th = StochasticVolatilityModel(y).to_unconstrained(params)
    rng = np.random.default_rng(22)
    g = np.mean([sv_bpf_evaluate(y, th, rng.standard_normal(2001 * 61), 2000, lag=10).grad
                 for _ in range(40)], axis=0)
    assert rel_close(g, SV_SCORE_ORACLE, 0.1)


# reparameterisation

@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-0.99, 0.99), st.floats(0.01, 5), st.floats(-0.99, 0.99))
def test_sv_transform_round_trip(mu, phi, sv, rho):
    m = StochasticVolatilityModel(np.zeros(2))
    np.testing.assert_allclose(m.to_natural(m.to_unconstrained([mu, phi, sv, rho])),
                               [mu, phi, sv, rho], rtol=1e-9, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-3, 10))
def test_re_transform_round_trip(mu, sigma):
    m = RandomEffectsModel(np.zeros(2))
    np.testing.assert_allclose(m.to_natural(m.to_unconstrained([mu, sigma])), [mu, sigma],
                               rtol=1e-12)


def test_jacobian_ratios():
    re = RandomEffectsModel(np.zeros(2))
    a = re.to_unconstrained([0.0, 0.3])
    b = re.to_unconstrained([0.0, 0.6])
    assert jacobian_log_ratio(re, a, a) == 0.0
    assert jacobian_log_ratio(re, b, a) == pytest.approx(np.log(2.0))
    y, X = logistic_data()
    lm = LogisticModel(y, X, N=10)
    assert jacobian_log_ratio(lm, np.ones(4), np.zeros(4)) == 0.0
    sv = StochasticVolatilityModel(np.zeros(2))
    p, q = [0.1, 0.9, 0.3, -0.2], [0.4, 0.5, 0.1, 0.6]
    expected = np.log((1 - 0.9 ** 2) * 0.3 * (1 - 0.2 ** 2)) - np.log(
        (1 - 0.5 ** 2) * 0.1 * (1 - 0.6 ** 2))
    assert jacobian_log_ratio(sv, sv.to_unconstrained(p), sv.to_unconstrained(q)) == \
        pytest.approx(expected)


def test_models_are_deterministic():
    y = re_simulate(10, 1.0, 0.2, seed=21)
    m = RandomEffectsModel(y, N=10)
    u = np.random.default_rng(21).standard_normal(m.n_u)
    a, b = m.evaluate(m.default_theta0(), u), m.evaluate(m.default_theta0(), u)
    assert a.logtarget == b.logtarget
    np.testing.assert_array_equal(a.grad, b.grad)
