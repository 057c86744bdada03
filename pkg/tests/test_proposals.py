import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pmmh_qn.hessian import ContractError
from pmmh_qn.proposals import (
    ConfigurationError,
    GaussianProposal,
    MemoryWindow,
    StepSizeState,
    adapt_step_size,
    cn_propose_aux,
    gaussian_product,
    langevin_statistics,
    qn_log_density,
    qn_propose,
    window_pairs,
)


def std_normal_logpdf(u):
    return -0.5 * (u.size * np.log(2 * np.pi) + u @ u)


# cn_propose_aux

def test_cn_independent_when_sigma_one():
    rng = np.random.default_rng(0)
    u, fresh = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_array_equal(cn_propose_aux(u, 1.0, fresh), fresh)


def test_cn_frozen_when_sigma_zero():
    rng = np.random.default_rng(1)
    u, fresh = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_array_equal(cn_propose_aux(u, 0.0, fresh), u)


@pytest.mark.parametrize("sigma_u", [-0.1, 1.5])
def test_cn_rejects_out_of_range(sigma_u):
    with pytest.raises(ConfigurationError):
        cn_propose_aux(np.zeros(2), sigma_u, np.zeros(2))


def test_cn_length_mismatch():
    with pytest.raises(ContractError):
        cn_propose_aux(np.zeros(2), 0.5, np.zeros(3))


@pytest.mark.parametrize("sigma_u", [0.05, 0.5, 1.0])
def test_cn_preserves_standard_normal(sigma_u):
    rng = np.random.default_rng(2)
    u = rng.standard_normal(100_000)
    out = cn_propose_aux(u, sigma_u, rng.standard_normal(u.size))
    assert abs(out.mean()) < 0.02
    assert abs(out.std() - 1.0) < 0.02
    assert stats.kstest(out, "norm").pvalue > 1e-3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
def test_cn_detailed_balance(seed, sigma_u):
    # prior(u) q(u'|u) must equal prior(u') q(u|u')
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal(4), rng.standard_normal(4)
    rho = np.sqrt(1 - sigma_u ** 2)

    def log_q(to, frm):
        d = (to - rho * frm) / sigma_u
        return -0.5 * (d @ d) - to.size * np.log(sigma_u)

    lhs = std_normal_logpdf(u) + log_q(v, u)
    rhs = std_normal_logpdf(v) + log_q(u, v)
    assert lhs == pytest.approx(rhs, abs=1e-10)


# Gaussian densities

def test_log_density_standard_bivariate_at_origin():
    q = GaussianProposal(np.zeros(2), np.eye(2))
    assert qn_log_density(q, np.zeros(2)) == pytest.approx(-np.log(2 * np.pi))


def test_log_density_scalar_variance_four():
    q = GaussianProposal([0.0], [[4.0]])
    assert q.log_density([2.0]) == pytest.approx(-0.5 * np.log(8 * np.pi) - 0.5)
    assert q.log_density([2.0]) == pytest.approx(-2.1121, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_log_density_symmetric_and_matches_scipy(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    cov = B @ B.T + 0.5 * np.eye(n)
    mu, x = rng.standard_normal(n), rng.standard_normal(n)
    q = GaussianProposal(mu, cov)
    assert q.log_density(x) == pytest.approx(q.log_density(2 * mu - x), abs=1e-10)
    ref = stats.multivariate_normal(mu, cov).logpdf(x)
    assert q.log_density(x) == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_sampling_moments_match_parameters():
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    q = GaussianProposal([1.0, -1.0], cov)
    rng = np.random.default_rng(3)
    draws = np.array([q.sample(rng) for _ in range(40_000)])
    np.testing.assert_allclose(draws.mean(axis=0), [1.0, -1.0], atol=0.03)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.05)


def test_non_pd_covariance_rejected():
    with pytest.raises(ContractError):
        GaussianProposal(np.zeros(2), np.diag([1.0, -1.0]))
    with pytest.raises(ContractError):
        GaussianProposal(np.zeros(2), np.eye(3))


def test_random_walk_ratio_is_zero():
    q = GaussianProposal(np.zeros(2), np.eye(2), random_walk=True)
    assert q.log_ratio(np.ones(2), -np.ones(2)) == 0.0


# products

def test_product_of_standard_normals():
    fused = gaussian_product(GaussianProposal([0.0], [[1.0]]), GaussianProposal([0.0], [[1.0]]))
    assert fused.mean[0] == pytest.approx(0.0)
    assert fused.covariance[0, 0] == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_product_precisions_add(seed, n):
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(2):
        B = rng.standard_normal((n, n))
        mats.append(B @ B.T + np.eye(n))
    a = GaussianProposal(rng.standard_normal(n), mats[0])
    b = GaussianProposal(rng.standard_normal(n), mats[1])
    fused = gaussian_product(a, b)
    P = np.linalg.inv(mats[0]) + np.linalg.inv(mats[1])
    np.testing.assert_allclose(np.linalg.inv(fused.covariance), P, atol=1e-10)
    np.testing.assert_allclose(P @ fused.mean, np.linalg.solve(mats[0], a.mean)
                               + np.linalg.solve(mats[1], b.mean), atol=1e-10)


# Langevin statistics

def test_langevin_zero_gradient_is_random_walk_centre():
    q = langevin_statistics(np.array([0.3, -0.2]), np.zeros(2), np.eye(2), 0.7)
    np.testing.assert_array_equal(q.mean, [0.3, -0.2])
    np.testing.assert_allclose(q.covariance, 0.49 * np.eye(2))


def test_langevin_hand_example():
    q = langevin_statistics(np.zeros(2), np.array([1.0, 0.0]), np.eye(2), 1.0)
    np.testing.assert_allclose(q.mean, [0.5, 0.0])
    np.testing.assert_allclose(q.covariance, np.eye(2))


def test_langevin_small_step_collapses():
    q = langevin_statistics(np.ones(2), np.array([5.0, -3.0]), np.eye(2), 1e-6)
    np.testing.assert_allclose(q.mean, np.ones(2), atol=1e-10)
    assert np.abs(q.covariance).max() < 1e-11


def test_langevin_rejects_indefinite():
    with pytest.raises(ContractError):
        langevin_statistics(np.zeros(2), np.zeros(2), np.diag([1.0, -1.0]), 1.0)


def test_langevin_acceptance_decreases_with_step():
    # MALA on N(0, 1): realised acceptance shrinks as the step grows
    def rate(eps, seed):
        rng = np.random.default_rng(seed)
        x, acc = 0.0, 0
        for _ in range(4000):
            fwd = langevin_statistics(np.array([x]), np.array([-x]), np.eye(1), eps)
            y = fwd.sample(rng)[0]
            rev = langevin_statistics(np.array([y]), np.array([-y]), np.eye(1), eps)
            log_r = -0.5 * y * y + 0.5 * x * x + rev.log_density([x]) - fwd.log_density([y])
            if np.log(rng.random()) < log_r:
                x, acc = y, acc + 1
        return acc / 4000

    medians = [np.median([rate(eps, s) for s in range(5)]) for eps in (0.1, 0.5, 1.0, 2.0)]
    assert all(a >= b for a, b in zip(medians, medians[1:]))


# memory window and the quasi-Newton proposal

def quadratic_window(A, M, rng):
    w = MemoryWindow(M)
    for _ in range(M):
        theta = rng.standard_normal(A.shape[0])
        grad = -A @ theta
        w.append(theta, -0.5 * theta @ A @ theta, grad, grad)
    return w


def test_window_keeps_last_entries():
    w = MemoryWindow(3)
    for i in range(5):
        w.append(np.array([float(i)]), -i, np.zeros(1), np.zeros(1))
    assert len(w) == 3
    assert w.oldest.theta[0] == 2.0 and w.newest.theta[0] == 4.0


def test_window_unique_sorted_by_logtarget():
    w = MemoryWindow(4)
    a, b = np.array([1.0]), np.array([2.0])
    w.append(a, -1.0, np.zeros(1), np.zeros(1))
    w.append(b, -3.0, np.zeros(1), np.zeros(1))
    w.append(a, -1.0, np.zeros(1), np.zeros(1))
    out = w.unique_sorted()
    assert [e.logtarget for e in out] == [-3.0, -1.0]


def test_window_pairs_use_negative_gradient():
    entries = [(np.array([0.0]), 0.0, np.zeros(1), np.array([1.0])),
               (np.array([2.0]), 0.0, np.zeros(1), np.array([-3.0]))]
    (pair,) = window_pairs(MemoryWindow(2, entries).entries)
    assert pair.s[0] == 2.0 and pair.g[0] == 4.0


def test_window_rejects_zero_length():
    with pytest.raises(ConfigurationError):
        MemoryWindow(0)


def test_qn_fallback_single_entry():
    w = MemoryWindow(5)
    w.append(np.zeros(2), 0.0, np.array([3.0, 1.0]), np.array([3.0, 1.0]))
    q = qn_propose(w, "LS", 1.0, np.eye(2), 0.1)
    assert q.random_walk
    np.testing.assert_array_equal(q.mean, np.zeros(2))
    np.testing.assert_allclose(q.covariance, 0.1 * np.eye(2))


def test_qn_fallback_when_all_entries_repeat():
    w = MemoryWindow(4)
    for _ in range(4):
        w.append(np.ones(2), 0.0, np.ones(2), np.ones(2))
    assert qn_propose(w, "SR1", 1.0, np.eye(2), [0.1, 0.2]).random_walk


def test_qn_unknown_method():
    w = MemoryWindow(2)
    w.append(np.zeros(1), 0.0, np.zeros(1), np.zeros(1))
    with pytest.raises(ConfigurationError):
        qn_propose(w, "DFP", 1.0, np.eye(1), 0.1)


@pytest.mark.parametrize("eps", [0.5, 1.3])
def test_qn_ls_exact_on_quadratic(eps):
    rng = np.random.default_rng(7)
    B = rng.standard_normal((3, 3))
    A = B @ B.T + np.eye(3)
    w = quadratic_window(A, 8, rng)
    q = qn_propose(w, "LS", eps, np.eye(3), 0.1, lam=0.0)
    np.testing.assert_allclose(q.covariance, eps ** 2 * np.linalg.inv(A), atol=1e-8)
    centre = w.oldest
    drift = centre.theta + 0.5 * eps ** 2 * np.linalg.inv(A) @ centre.grad_main
    np.testing.assert_allclose(q.mean, drift, atol=1e-8)
    assert not q.random_walk


def test_qn_sr1_is_trust_region_product():
    rng = np.random.default_rng(8)
    A = np.diag([1.0, 2.0, 3.0])
    w = quadratic_window(A, 6, rng)
    Lam = 0.3 * np.eye(3)
    q = qn_propose(w, "SR1", 1.0, Lam, 0.1, h0_scale=1.0)
    # the product can only be tighter than the trust region alone
    assert np.all(np.linalg.eigvalsh(Lam - q.covariance) > 0)


@pytest.mark.parametrize("method", ["SR1", "LS", "BFGS"])
def test_qn_forward_and_reverse_share_statistics(method):
    rng = np.random.default_rng(9)
    w = quadratic_window(np.eye(2), 5, rng)
    q = qn_propose(w, method, 1.0, np.eye(2), 0.1)
    x, y = rng.standard_normal(2), rng.standard_normal(2)
    assert q.log_ratio(x, y) == pytest.approx(q.log_density(x) - q.log_density(y))
    again = qn_propose(w, method, 1.0, np.eye(2), 0.1)
    np.testing.assert_array_equal(again.mean, q.mean)
    np.testing.assert_array_equal(again.covariance, q.covariance)


def test_qn_corrected_flag_for_indefinite_estimate():
    rng = np.random.default_rng(10)
    w = quadratic_window(np.diag([1.0, -2.0]), 6, rng)
    q = qn_propose(w, "LS", 1.0, np.eye(2), 0.1, lam=0.0)
    assert q.corrected


# step-size adaptation

def test_adapt_unchanged_at_target():
    s = adapt_step_size(StepSizeState(0.3, 4, 0.25, 0.5), 0.25)
    assert s.eps == 0.3 and s.k == 5


def test_adapt_hand_example():
    s = adapt_step_size(StepSizeState(0.1, 0, 0.25, 0.5), 1.0)
    assert s.eps == pytest.approx(0.1 * np.exp(0.75))
    assert s.eps == pytest.approx(0.21170, abs=1e-5)
    assert s.k == 1


def test_adapt_rejects_bad_probability():
    with pytest.raises(ConfigurationError):
        adapt_step_size(StepSizeState(0.1), 1.5)


def test_step_state_validation():
    with pytest.raises(ConfigurationError):
        StepSizeState(0.0)
    with pytest.raises(ConfigurationError):
        StepSizeState(0.1, eta=1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=200),
       st.floats(0.01, 0.99), st.floats(0.05, 0.95))
def test_adapt_keeps_step_positive(alphas, target, eta):
    s = StepSizeState(0.1, 0, target, eta)
    for a in alphas:
        s = adapt_step_size(s, a)
        assert s.eps > 0
