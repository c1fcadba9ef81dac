import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from clgpn.circular import RegimeParams, observed_log_density
from clgpn.hmm import (
    StateSequence,
    collapsed_log_prior,
    count_transitions,
    forward_loglik,
    observed_log_emissions,
    posterior_mean_transition,
    recover_transition,
    sample_state_sweep,
    state_conditional_weights,
)
from clgpn import kernels
from oracles import all_sequences, brute_force_loglik, exact_state_conditional, polya_sequence_prob


@pytest.mark.parametrize("K,T_max", [(2, 6), (3, 4)])
def test_collapsed_prior_sums_to_one(K, T_max):
    for T in range(1, T_max + 1):
        total = math.fsum(math.exp(collapsed_log_prior(np.array(s), K)) for s in all_sequences(K, T + 1))
        assert abs(total - 1.0) < 1e-12


@pytest.mark.parametrize("beta", [1, 0.5, 2])
def test_collapsed_prior_matches_polya_urn(beta):
    for s in all_sequences(3, 5):
        ref = math.log(polya_sequence_prob(s, 3, beta=Fraction(beta).limit_denominator()))
        assert abs(collapsed_log_prior(np.array(s), 3, beta) - ref) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=2, max_size=12), st.permutations([0, 1, 2]))
def test_collapsed_prior_label_symmetry(seq, perm):
    s = np.array(seq)
    relabelled = np.array(perm)[s]
    assert abs(collapsed_log_prior(s, 3) - collapsed_log_prior(relabelled, 3)) < 1e-12


def test_count_transitions():
    c = count_transitions(np.array([0, 1, 1, 2, 0]), 3)
    assert_array_equal(c.n, [[0, 1, 0], [0, 1, 1], [1, 0, 0]])
    assert_array_equal(c.occupancy, [2, 2, 1])
    assert c.last_state == 0
    with pytest.raises(ValueError):
        count_transitions(np.array([0, 3]), 3)


def test_state_sequence_validation():
    with pytest.raises(ValueError):
        StateSequence(np.array([0, 1]), np.array([0.0]))
    with pytest.raises(ValueError):
        StateSequence(np.array([0, 1]), np.array([1.0, 2.0]))
    assert StateSequence(np.array([0, 1, 0]), np.array([1.0, 2.0])).T == 2


@pytest.mark.parametrize("K,T", [(2, 5), (3, 4)])
def test_conditional_weights_match_enumeration(K, T):
    rng = np.random.default_rng(K * 10 + T)
    log_emis = np.vstack([np.zeros(K), rng.normal(0, 1.5, size=(T, K))])
    for _ in range(15):
        labels = rng.integers(0, K, T + 1)
        for t in range(T + 1):
            w = state_conditional_weights(t, labels, log_emis)
            assert_allclose(w, exact_state_conditional(t, labels, K, log_emis), rtol=0, atol=1e-12)


def test_conditional_weights_non_unit_beta():
    from fractions import Fraction

    K, T = 3, 4
    rng = np.random.default_rng(5)
    log_emis = np.vstack([np.zeros(K), rng.normal(size=(T, K))])
    labels = np.array([0, 2, 2, 1, 2])
    for t in range(T + 1):
        w = state_conditional_weights(t, labels, log_emis, beta=0.5)
        ref = exact_state_conditional(t, labels, K, log_emis, beta=Fraction(1, 2))
        assert_allclose(w, ref, atol=1e-12)


def _reference_sweep(labels, log_emis, u):
    lab = labels.copy()
    for t in range(lab.size):
        cum = np.cumsum(state_conditional_weights(t, lab, log_emis))
        lab[t] = min(int(np.searchsorted(cum, u[t], side="right")), cum.size - 1)
    return lab


def test_sweep_kernel_follows_conditionals(backend):
    kern = kernels.get_backend(backend)
    rng = np.random.default_rng(9)
    for K, T in [(2, 30), (3, 40), (4, 25)]:
        for _ in range(5):
            log_emis = np.vstack([np.zeros(K), rng.normal(0, 2, size=(T, K))])
            labels = rng.integers(0, K, T + 1).astype(np.int64)
            u = rng.random(T + 1)
            ref = _reference_sweep(labels, log_emis, u)
            kern.sweep_states(log_emis, labels, 1.0, u)
            assert_array_equal(labels, ref)


def test_sweep_stationary_on_prior():
    # with flat emissions the sweep leaves the collapsed prior invariant
    K, T = 2, 3
    log_emis = np.zeros((T + 1, K))
    rng = np.random.default_rng(1)
    labels = np.zeros(T + 1, dtype=np.int64)
    counts = {}
    n = 60_000
    for _ in range(n):
        sample_state_sweep(labels, log_emis, 1.0, rng)
        key = tuple(labels)
        counts[key] = counts.get(key, 0) + 1
    for s in all_sequences(K, T + 1):
        p = math.exp(collapsed_log_prior(np.array(s), K))
        # generous bound: successive sweeps are positively correlated
        assert abs(counts.get(s, 0) / n - p) < 6 * math.sqrt(p * (1 - p) / n) * 2


def _random_regimes(rng, K):
    return [
        RegimeParams(rng.normal(), rng.normal(), rng.uniform(0.5, 2), rng.uniform(-0.7, 0.7),
                     rng.normal(), rng.normal(), rng.normal(), rng.uniform(0.2, 1))
        for _ in range(K)
    ]


@pytest.mark.parametrize("missing", [False, True])
def test_forward_loglik_matches_brute_force(missing):
    rng = np.random.default_rng(17)
    K, T = 2, 3
    params = _random_regimes(rng, K)
    x = rng.uniform(0, 2 * np.pi, T)
    y = rng.normal(size=T)
    if missing:
        x[1] = np.nan
        y[2] = np.nan
    pi = rng.dirichlet(np.ones(K), size=K)
    pi0 = rng.dirichlet(np.ones(K))
    log_b = np.column_stack([observed_log_density(x, y, p) for p in params])
    ref = brute_force_loglik(log_b, pi, pi0)
    assert abs(forward_loglik(x, y, params, pi, pi0) - ref) < 1e-10


def test_forward_loglik_three_states():
    rng = np.random.default_rng(2)
    K, T = 3, 4
    params = _random_regimes(rng, K)
    x = rng.uniform(0, 2 * np.pi, T)
    y = rng.normal(size=T)
    pi = rng.dirichlet(np.ones(K), size=K)
    pi0 = rng.dirichlet(np.ones(K))
    ref = brute_force_loglik(observed_log_emissions(x, y, params), pi, pi0)
    assert abs(forward_loglik(x, y, params, pi, pi0) - ref) < 1e-10


def test_forward_rejects_bad_matrices():
    params = _random_regimes(np.random.default_rng(0), 2)
    with pytest.raises(ValueError):
        forward_loglik([1.0], [0.0], params, np.array([[0.5, 0.6], [0.5, 0.5]]), np.array([0.5, 0.5]))


def test_transition_recovery():
    labels = np.array([0, 0, 1, 1, 1, 0, 2])
    mean, mean0 = posterior_mean_transition(labels, 3)
    assert_allclose(mean[0], [1 / 3, 1 / 3, 1 / 3])
    assert_allclose(mean[1], [2 / 6, 3 / 6, 1 / 6])
    assert_allclose(mean0, [0.5, 0.25, 0.25])
    rng = np.random.default_rng(0)
    draws = np.array([recover_transition(labels, 3, 1.0, rng)[0] for _ in range(20_000)])
    assert_allclose(draws.sum(axis=2), 1.0)
    assert_allclose(draws.mean(axis=0), mean, atol=0.01)


def test_expected_stays_oracle_matches_enumeration():
    from oracles import expected_stays

    for T in (3, 5):
        ref = math.fsum(
            math.exp(collapsed_log_prior(np.array(s), 2)) * np.sum(np.diff(s) == 0) for s in all_sequences(2, T + 1)
        )
        assert abs(float(expected_stays(T)) - ref) < 1e-12
