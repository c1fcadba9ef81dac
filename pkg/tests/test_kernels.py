import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from clgpn import kernels
from clgpn import _pykernels as pyk
from clgpn.circular import joint_xyr_log_density, joint_xr_log_density, linear_marginal, params_from_array
from clgpn.sampler import Priors, hyper_vector, sample_prior

needs_cython = pytest.mark.skipif(kernels.cython_backend is None, reason="compiled kernels not built")


def _setup(seed, T=60, K=3, missing=True):
    rng = np.random.default_rng(seed)
    theta = sample_prior(K, Priors(), "clgpn", rng)
    x = rng.uniform(0, 2 * np.pi, T)
    y = rng.normal(size=T)
    r = rng.gamma(2.0, size=T)
    xm = np.zeros(T, dtype=np.uint8)
    ym = np.zeros(T, dtype=np.uint8)
    if missing:
        xm[rng.choice(T, T // 5, replace=False)] = 1
        ym[rng.choice(T, T // 5, replace=False)] = 1
    return rng, theta, x, y, r, xm, ym


def test_emission_matrix_matches_densities(backend):
    kern = kernels.get_backend(backend)
    _, theta, x, y, r, xm, ym = _setup(1)
    out = kern.emission_matrix(r * np.cos(x), r * np.sin(x), y, r, xm, ym, theta)
    assert out.shape == (x.size + 1, theta.shape[0])
    assert_array_equal(out[0], 0.0)
    for k, p in enumerate(params_from_array(theta)):
        mean, var = linear_marginal(p)
        for t in range(x.size):
            if xm[t] and ym[t]:
                ref = 0.0
            elif xm[t]:
                ref = stats.norm.logpdf(y[t], mean, np.sqrt(var))
            elif ym[t]:
                ref = joint_xr_log_density(x[t], r[t], p)
            else:
                ref = joint_xyr_log_density(x[t], y[t], r[t], p)
            assert_allclose(out[t + 1, k], ref, rtol=1e-12, atol=1e-12)


def test_suff_stats_direct(backend):
    kern = kernels.get_backend(backend)
    rng, theta, x, y, r, *_ = _setup(2)
    labels = rng.integers(0, 3, x.size + 1).astype(np.int64)
    z1, z2 = r * np.cos(x), r * np.sin(x)
    s = kern.suff_stats(labels, z1, z2, y, 3)
    for k in range(3):
        sel = labels[1:] == k
        a, b, c = z1[sel], z2[sel], y[sel]
        ref = [sel.sum(), a.sum(), b.sum(), (a * a).sum(), (a * b).sum(), (b * b).sum(),
               c.sum(), (c * c).sum(), (a * c).sum(), (b * c).sum()]
        assert_allclose(s[k], ref, rtol=1e-12, atol=1e-12)


@needs_cython
def test_backends_agree_on_emissions_and_stats():
    rng, theta, x, y, r, xm, ym = _setup(3, T=200, K=4)
    z1, z2 = r * np.cos(x), r * np.sin(x)
    a = kernels.python_backend.emission_matrix(z1, z2, y, r, xm, ym, theta)
    b = kernels.cython_backend.emission_matrix(z1, z2, y, r, xm, ym, theta)
    assert_allclose(a, b, rtol=1e-13, atol=1e-13)
    labels = rng.integers(0, 4, 201).astype(np.int64)
    assert_allclose(
        kernels.python_backend.suff_stats(labels, z1, z2, y, 4),
        kernels.cython_backend.suff_stats(labels, z1, z2, y, 4),
        rtol=1e-13,
    )


@needs_cython
def test_backends_agree_on_state_sweep():
    rng = np.random.default_rng(4)
    for _ in range(20):
        K, T = 3, 150
        log_emis = np.vstack([np.zeros(K), rng.normal(0, 3, size=(T, K))])
        lab0 = rng.integers(0, K, T + 1).astype(np.int64)
        u = rng.random(T + 1)
        a, b = lab0.copy(), lab0.copy()
        kernels.python_backend.sweep_states(log_emis, a, 1.0, u)
        kernels.cython_backend.sweep_states(log_emis, b, 1.0, u)
        assert_array_equal(a, b)


@needs_cython
def test_backends_agree_on_radius_mh():
    rng, theta, x, y, r, _, ym = _setup(5, T=300)
    labels = rng.integers(0, 3, 301).astype(np.int64)
    idx = np.arange(300, dtype=np.int64)
    cosx, sinx = np.cos(x), np.sin(x)
    yobs = (1 - ym).astype(np.uint8)
    states = []
    for kern in (kernels.python_backend, kernels.cython_backend):
        rr = r.copy()
        z1, z2 = rr * cosx, rr * sinx
        ls = np.full(300, np.log(0.5))
        g = np.random.default_rng(0)
        total = 0
        for it in range(50):
            total += kern.radius_mh(rr, z1, z2, cosx, sinx, y, idx, yobs, labels, theta, ls,
                                    g.standard_normal(300), g.random(300), (it + 1) ** -0.6, 0.44)
        states.append((rr, z1, z2, ls, total))
    for a, b in zip(states[0][:4], states[1][:4]):
        assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    assert states[0][4] == states[1][4]


@needs_cython
@pytest.mark.parametrize("variant", [0, 1, 2])
def test_backends_agree_on_parameter_block(variant):
    rng, theta, x, y, r, *_ = _setup(6, T=200)
    if variant == 1:
        theta[:, 2], theta[:, 3] = 1.0, 0.0
    if variant == 2:
        theta[:, 5:7] = 0.0
    labels = rng.integers(0, 3, 201).astype(np.int64)
    stats_ = pyk.suff_stats(labels, r * np.cos(x), r * np.sin(x), y, 3)
    hyper = hyper_vector(Priors())
    runs = []
    for kern in (kernels.python_backend, kernels.cython_backend):
        th = theta.copy()
        ls, mean, cov = np.zeros(3), np.zeros((3, 2)), np.zeros((3, 2, 2))
        n_adapt = 0
        g = np.random.default_rng(1)
        accs = []
        for it in range(120):
            acc = np.empty(3, dtype=np.uint8)
            n_adapt = kern.update_params(
                stats_, th, hyper, variant, g.standard_normal((3, 7)),
                g.gamma(2.0 + 0.5 * stats_[:, 0]), g.random(3), ls, mean, cov, n_adapt, 40, 0.35,
                it < 100, acc,
            )
            accs.append(acc.copy())
        runs.append((th, ls, mean, cov, n_adapt, np.array(accs)))
    for a, b in zip(runs[0], runs[1]):
        assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_backend_selection():
    assert kernels.get_backend("python") is kernels.python_backend
    assert kernels.get_backend() is kernels.default
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
