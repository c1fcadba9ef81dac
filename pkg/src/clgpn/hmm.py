"""Hidden state sequence with the transition matrix integrated out.

States are labelled ``0..K-1``. A sequence has ``T + 1`` labels; label 0 is the
initial state, which has no observation attached, and label ``t`` pairs with
observation ``t`` (array index ``t - 1``). Rows of the transition matrix and
the initial distribution carry symmetric ``Dirichlet(beta)`` priors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import kernels
from .circular import observed_log_density, params_from_array


@dataclass
class StateSequence:
    """Labels ``xi_0..xi_T`` plus the latent radii ``r_1..r_T``."""

    labels: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.radii = np.ascontiguousarray(self.radii, dtype=float)
        if self.labels.ndim != 1 or self.labels.size < 2:
            raise ValueError("labels must be a 1-d sequence of length T + 1 >= 2")
        if self.radii.shape != (self.labels.size - 1,):
            raise ValueError("radii must have length T = len(labels) - 1")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be strictly positive")

    @property
    def T(self):
        return self.labels.size - 1


@dataclass(frozen=True)
class TransitionCounts:
    n: np.ndarray
    occupancy: np.ndarray
    last_state: int


def _labels(s):
    return s.labels if isinstance(s, StateSequence) else np.asarray(s, dtype=np.int64)


def count_transitions(s, K) -> TransitionCounts:
    """Count transitions ``n[k, h]``, state occupancy and the final state."""
    labels = _labels(s)
    if labels.size == 0 or labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"labels must lie in 0..{K - 1}")
    n = np.zeros((K, K), dtype=np.int64)
    np.add.at(n, (labels[:-1], labels[1:]), 1)
    occupancy = np.bincount(labels, minlength=K).astype(np.int64)
    return TransitionCounts(n=n, occupancy=occupancy, last_state=int(labels[-1]))


def collapsed_log_prior(s, K, beta=1.0):
    """Log prior mass of a label sequence with ``pi`` and ``pi0`` integrated out.

    Each row of the transition matrix contributes a Dirichlet-multinomial
    factor; the initial label contributes ``1/K``.
    """
    c = count_transitions(s, K)
    rows = c.n.sum(axis=1)
    return float(
        -np.log(K)
        + K * gammaln(K * beta)
        - K * K * gammaln(beta)
        + gammaln(c.n + beta).sum()
        - gammaln(rows + K * beta).sum()
    )


def emission_log_matrix(x, y, r, theta, backend=None):
    """Log emissions ``f(r_t, x_t, y_t | state k)`` as a ``(T + 1, K)`` matrix.

    ``x`` and ``y`` may contain NaN; missing coordinates are integrated out
    (see :func:`clgpn._pykernels.emission_matrix`).
    """
    kern = kernels.get_backend(backend)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    xmiss = np.isnan(x)
    ymiss = np.isnan(y)
    xs = np.where(xmiss, 0.0, x)
    z1 = np.ascontiguousarray(r * np.cos(xs))
    z2 = np.ascontiguousarray(r * np.sin(xs))
    return kern.emission_matrix(
        z1,
        z2,
        np.ascontiguousarray(np.where(ymiss, 0.0, y)),
        r,
        np.ascontiguousarray(xmiss, dtype=np.uint8),
        np.ascontiguousarray(ymiss, dtype=np.uint8),
        np.ascontiguousarray(theta, dtype=float),
    )


def state_conditional_weights(t, labels, log_emission, beta=1.0):
    """Full conditional probabilities of ``xi_t`` given all other labels.

    Interior times use
    ``(n_{s-,k} + beta + a)(n_{k,s+} + beta) / (n_k - xi_{T,k} + K beta)``
    times the emission, where counts exclude time ``t`` and ``a = 1`` when
    ``s- = k = s+``. The last time uses ``(n_{s-,k} + beta)`` times the
    emission and time 0 carries no emission.
    """
    labels = np.asarray(labels, dtype=np.int64)
    log_emission = np.asarray(log_emission, dtype=float)
    T = labels.size - 1
    K = log_emission.shape[1]
    if not 0 <= t <= T:
        raise IndexError("t out of range")
    others = labels.copy()
    keep = np.ones(T, dtype=bool)  # transitions t-1 -> t are index t-1
    if t > 0:
        keep[t - 1] = False
    if t < T:
        keep[t] = False
    n = np.zeros((K, K))
    np.add.at(n, (labels[:-1][keep], labels[1:][keep]), 1)
    occ = np.bincount(np.delete(others, t), minlength=K).astype(float)
    last = np.zeros(K)
    last[labels[T]] = 1.0
    ks = np.arange(K)
    if t == 0:
        sp = labels[1]
        logw = np.log(n[:, sp] + beta) - np.log(occ - last + K * beta)
    elif t == T:
        sm = labels[T - 1]
        logw = np.log(n[sm, :] + beta) + log_emission[t]
    else:
        sm, sp = labels[t - 1], labels[t + 1]
        a = ((ks == sm) & (ks == sp)).astype(float)
        logw = (
            np.log(n[sm, :] + beta + a)
            + np.log(n[:, sp] + beta)
            - np.log(occ - last + K * beta)
            + log_emission[t]
        )
    w = np.exp(logw - logw.max())
    return w / w.sum()


def sample_state_sweep(labels, log_emission, beta, rng, backend=None):
    """Redraw every label once, in time order; ``labels`` is updated in place."""
    kern = kernels.get_backend(backend)
    u = rng.random(labels.size)
    kern.sweep_states(np.ascontiguousarray(log_emission, dtype=float), labels, float(beta), u)
    return labels


def posterior_transition_params(labels, K, beta=1.0):
    """Dirichlet parameters of the posterior rows of ``pi`` and of ``pi0``."""
    c = count_transitions(labels, K)
    alpha = c.n + beta
    alpha0 = np.full(K, float(beta))
    alpha0[_labels(labels)[0]] += 1.0
    return alpha, alpha0


def recover_transition(labels, K, beta, rng):
    """Draw ``(pi, pi0)`` from their Dirichlet posteriors given a label sequence."""
    alpha, alpha0 = posterior_transition_params(labels, K, beta)
    pi = np.vstack([rng.dirichlet(row) for row in alpha])
    pi0 = rng.dirichlet(alpha0)
    return pi, pi0


def posterior_mean_transition(labels, K, beta=1.0):
    """Posterior means of ``pi`` and ``pi0`` given a label sequence."""
    alpha, alpha0 = posterior_transition_params(labels, K, beta)
    return alpha / alpha.sum(axis=1, keepdims=True), alpha0 / alpha0.sum()


def _check_stochastic(m, name):
    m = np.asarray(m, dtype=float)
    if np.any(m < 0) or not np.allclose(m.sum(axis=-1), 1.0, atol=1e-10):
        raise ValueError(f"{name} must be nonnegative with rows summing to 1")
    return m


def observed_log_emissions(x, y, params):
    """``(T, K)`` matrix of log densities of the observed coordinates per state."""
    if isinstance(params, np.ndarray):
        params = params_from_array(params)
    return np.column_stack([observed_log_density(x, y, p) for p in params])


def forward_loglik(x, y, params, pi, pi0):
    """Log likelihood of the observations under an explicit Markov chain.

    The initial state is non-emitting: ``pi0`` is propagated through one
    transition before the first observation. Uses scaled forward recursion.
    """
    pi = _check_stochastic(pi, "pi")
    pi0 = _check_stochastic(pi0, "pi0")
    log_b = observed_log_emissions(x, y, params)
    alpha = pi0 @ pi
    total = 0.0
    for t in range(log_b.shape[0]):
        row = log_b[t]
        top = row.max()
        a = alpha * np.exp(row - top)
        scale = a.sum()
        total += np.log(scale) + top
        alpha = (a / scale) @ pi
    return float(total)
