import numpy as np
import pytest

from funmix.basis import build_basis, evaluate
from funmix.model import (
    FunctionalDataset,
    conditional_mean,
    loglik_conditional,
    loglik_marginal,
    mixed_covariance,
    permute_features,
)
from funmix.validate import mc_marginal_loglik, random_small_state


def make_data(rng, basis, n=5, N=1, J=1):
    grids = [np.linspace(*basis.boundary, n) for _ in range(N)]
    values = [rng.normal(size=(n, J)) for _ in range(N)]
    return FunctionalDataset(grids=grids, values=values,
                             subject_ids=[f"s{i}" for i in range(N)],
                             channel_labels=[f"c{j}" for j in range(J)])


@pytest.fixture
def small():
    rng = np.random.default_rng(42)
    basis = build_basis(1, 2, (0.0, 1.0))  # P = 4
    state = random_small_state(rng, K=2, M=1, P=4)
    data = make_data(rng, basis, n=5)
    return rng, basis, state, data


def test_one_hot_zero_scores(small):
    rng, basis, state, data = small
    state.Z[0, 0] = np.array([1.0, 0.0])
    state.chi[...] = 0.0
    St = evaluate(basis, data.grids[0]).T
    np.testing.assert_allclose(
        conditional_mean(state, basis, data, 0, 0), St @ state.nu[0], atol=1e-12
    )


def test_half_half_is_average(small):
    rng, basis, state, data = small
    state.Z[0, 0] = np.array([0.5, 0.5])
    state.chi[...] = 0.0
    St = evaluate(basis, data.grids[0]).T
    expected = 0.5 * (St @ state.nu[0]) + 0.5 * (St @ state.nu[1])
    np.testing.assert_allclose(conditional_mean(state, basis, data, 0, 0), expected, atol=1e-12)


def test_mean_matches_scalar_loop_oracle(small):
    rng, basis, state, data = small
    St = evaluate(basis, data.grids[0]).T
    n, P, K, M = 5, 4, 2, 1
    oracle = np.zeros(n)
    for t in range(n):
        for k in range(K):
            v = sum(St[t, p] * state.nu[k, p] for p in range(P))
            for m in range(M):
                v += state.chi[0, 0, m] * sum(St[t, p] * state.phi[k, m, p] for p in range(P))
            oracle[t] += state.Z[0, 0, k] * v
    np.testing.assert_allclose(conditional_mean(state, basis, data, 0, 0), oracle, atol=1e-12)


def test_index_out_of_range(small):
    rng, basis, state, data = small
    with pytest.raises(IndexError):
        conditional_mean(state, basis, data, 3, 0)


def test_loglik_zero_residual():
    rng = np.random.default_rng(0)
    basis = build_basis(1, 2, (0.0, 1.0))
    state = random_small_state(rng, K=2, M=1, P=4)
    state.sigma2[:] = 1.0
    grid = np.linspace(0.0, 1.0, 4)
    data = FunctionalDataset(grids=[grid], values=[np.zeros((4, 1))],
                             subject_ids=["s"], channel_labels=["c"])
    data.values[0][:, 0] = conditional_mean(state, basis, data, 0, 0)
    np.testing.assert_allclose(
        loglik_conditional(state, basis, data), -2.0 * np.log(2.0 * np.pi), atol=1e-12
    )


def test_loglik_matches_scalar_density_sum():
    rng = np.random.default_rng(1)
    basis = build_basis(1, 2, (0.0, 1.0))
    state = random_small_state(rng, K=2, M=1, P=4, J=2, N=2)
    data = make_data(rng, basis, n=6, N=2, J=2)
    total = 0.0
    for i in range(2):
        for j in range(2):
            mu = conditional_mean(state, basis, data, i, j)
            s2 = state.sigma2[j]
            for t in range(6):
                r = data.values[i][t, j] - mu[t]
                total += -0.5 * np.log(2 * np.pi * s2) - 0.5 * r * r / s2
    np.testing.assert_allclose(loglik_conditional(state, basis, data), total, atol=1e-10)


def test_loglik_sigma_doubling_algebra():
    rng = np.random.default_rng(2)
    basis = build_basis(1, 2, (0.0, 1.0))
    state = random_small_state(rng, K=2, M=1, P=4)
    data = make_data(rng, basis, n=7)
    mu = conditional_mean(state, basis, data, 0, 0)
    r = data.values[0][:, 0] - mu
    s2 = state.sigma2[0]
    ll1 = loglik_conditional(state, basis, data)
    state.sigma2[0] = 2.0 * s2
    ll2 = loglik_conditional(state, basis, data)
    n = 7
    # quadratic term halves its magnitude; log-det term gains (n/2) log 2
    np.testing.assert_allclose(
        ll2 - ll1, (r @ r) / (4.0 * s2) - (n / 2.0) * np.log(2.0), atol=1e-10
    )


def test_mixed_covariance_empty_when_no_scores():
    rng = np.random.default_rng(3)
    basis = build_basis(1, 2, (0.0, 1.0))
    state = random_small_state(rng, K=2, M=0, P=4)
    data = make_data(rng, basis, n=5)
    np.testing.assert_array_equal(mixed_covariance(state, basis, data, 0, 0), np.zeros((5, 5)))


def test_mixed_covariance_single_feature():
    rng = np.random.default_rng(4)
    basis = build_basis(1, 2, (0.0, 1.0))
    state = random_small_state(rng, K=1, M=2, P=4)
    data = make_data(rng, basis, n=5)
    St = evaluate(basis, data.grids[0]).T
    expected = np.zeros((5, 5))
    for m in range(2):
        u = St @ state.phi[0, m]
        expected += np.outer(u, u)
    np.testing.assert_allclose(mixed_covariance(state, basis, data, 0, 0), expected, atol=1e-12)


def test_mixed_covariance_nested_loop_oracle():
    rng = np.random.default_rng(5)
    basis = build_basis(1, 2, (0.0, 1.0))
    data = make_data(rng, basis, n=6)
    St = evaluate(basis, data.grids[0]).T
    for rep in range(20):
        state = random_small_state(rng, K=3, M=2, P=4)
        V = mixed_covariance(state, basis, data, 0, 0)
        oracle = np.zeros((6, 6))
        for k in range(3):
            for kp in range(3):
                inner = np.zeros((4, 4))
                for m in range(2):
                    inner += np.outer(state.phi[k, m], state.phi[kp, m])
                oracle += state.Z[0, 0, k] * state.Z[0, 0, kp] * (St @ inner @ St.T)
        np.testing.assert_allclose(V, oracle, atol=1e-10)
        assert np.linalg.eigvalsh(V).min() >= -1e-10


def test_mixed_covariance_rank_bound():
    rng = np.random.default_rng(6)
    basis = build_basis(1, 4, (0.0, 1.0))  # P = 6
    state = random_small_state(rng, K=2, M=2, P=6)
    data = make_data(rng, basis, n=10)
    V = mixed_covariance(state, basis, data, 0, 0)
    assert np.linalg.matrix_rank(V, tol=1e-10) <= 2


def test_marginal_equals_conditional_when_no_scores():
    rng = np.random.default_rng(7)
    basis = build_basis(1, 2, (0.0, 1.0))
    state = random_small_state(rng, K=2, M=0, P=4, J=2, N=2)
    data = make_data(rng, basis, n=5, N=2, J=2)
    np.testing.assert_allclose(
        loglik_marginal(state, basis, data), loglik_conditional(state, basis, data), atol=1e-10
    )


def test_marginal_matches_monte_carlo():
    rng = np.random.default_rng(8)
    basis = build_basis(1, 2, (0.0, 1.0))
    state = random_small_state(rng, K=2, M=1, P=4)
    grid = np.linspace(0.0, 1.0, 3)
    from funmix.simulate import draw_observations

    y = draw_observations(state, basis, [grid], rng)[0]
    data = FunctionalDataset(grids=[grid], values=[y], subject_ids=["s"], channel_labels=["c"])
    exact = loglik_marginal(state, basis, data)
    mc, se = mc_marginal_loglik(state, basis, data, 0, 0, 400_000, rng)
    assert abs(exact - mc) <= 3.0 * se


def test_marginal_large_noise_limit():
    rng = np.random.default_rng(9)
    basis = build_basis(1, 2, (0.0, 1.0))
    state = random_small_state(rng, K=2, M=1, P=4)
    data = make_data(rng, basis, n=5)
    state.sigma2[:] = 1e8
    St = evaluate(basis, data.grids[0]).T
    mu0 = St @ (state.Z[0, 0] @ state.nu)
    r = data.values[0][:, 0] - mu0
    iid = -0.5 * 5 * np.log(2 * np.pi * state.sigma2[0]) - 0.5 * r @ r / state.sigma2[0]
    np.testing.assert_allclose(loglik_marginal(state, basis, data), iid, rtol=1e-6)


def test_label_switching_symmetry():
    rng = np.random.default_rng(10)
    basis = build_basis(1, 2, (0.0, 1.0))
    state = random_small_state(rng, K=3, M=2, P=4, J=2, N=2)
    data = make_data(rng, basis, n=5, N=2, J=2)
    perm = np.array([2, 0, 1])
    permuted = permute_features(state, perm)
    np.testing.assert_allclose(
        loglik_conditional(permuted, basis, data), loglik_conditional(state, basis, data),
        atol=1e-9,
    )
    np.testing.assert_allclose(
        loglik_marginal(permuted, basis, data), loglik_marginal(state, basis, data), atol=1e-9
    )


def test_dataset_rejects_mismatched_shapes():
    with pytest.raises(ValueError, match="does not match"):
        FunctionalDataset(
            grids=[np.linspace(0, 1, 4)],
            values=[np.zeros((3, 2))],
            subject_ids=["s"],
            channel_labels=["a", "b"],
        )
