import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, special, stats

from clgpn import _pykernels as pyk
from clgpn import kernels
from clgpn.chain import run_chain
from clgpn.circular import RegimeParams, clgpn_log_density, linear_marginal, pn_log_density
from clgpn.data import Observations
from clgpn.diagnostics import ess
from clgpn.sampler import (
    ChainConfig,
    Priors,
    Sampler,
    gamma_posterior,
    hyper_vector,
    log_prior,
    mu_posterior,
    radius_cdf,
    sample_prior,
    sample_radius_exact,
    sigma1_rho_log_target,
    sigma_y_posterior,
)
from clgpn.simulation import generate

PRIORS = Priors()


def _fixture_stats():
    """Three points in regime 0, none in regime 1."""
    z = np.array([[0.5, 1.0], [-0.2, 0.3], [1.4, -0.7]])
    y = np.array([1.0, -0.5, 2.0])
    labels = np.array([0, 0, 0, 0])
    s = pyk.suff_stats(labels, z[:, 0], z[:, 1], y, 2)
    theta = np.array([[0.1, 0.2, 1.5, 0.3, 0.5, 0.4, -0.3, 0.8], [0, 0, 1, 0, 0, 0, 0, 1.0]])
    return z, y, s, theta


def test_mu_conditional_hand_formula():
    z, _, s, theta = _fixture_stats()
    mean, cov = mu_posterior(s, theta, PRIORS)
    p = RegimeParams(*theta[0])
    si = np.linalg.inv(p.cov)
    prec = 3 * si + np.eye(2) / 5.0
    ref_cov = np.linalg.inv(prec)
    assert_allclose(cov[0], ref_cov, rtol=1e-12)
    assert_allclose(mean[0], ref_cov @ (si @ z.sum(axis=0)), rtol=1e-12)
    # empty regime falls back to the prior
    assert_allclose(mean[1], [0.0, 0.0], atol=1e-15)
    assert_allclose(cov[1], 5.0 * np.eye(2), rtol=1e-12)


def test_gamma_conditional_hand_formula():
    z, y, s, theta = _fixture_stats()
    mean, cov = gamma_posterior(s, theta, PRIORS)
    X = np.column_stack([np.ones(3), z])
    prec = X.T @ X / 0.8 + np.eye(3) / 5.0
    assert_allclose(cov[0], np.linalg.inv(prec), rtol=1e-12)
    assert_allclose(mean[0], np.linalg.solve(prec, X.T @ y / 0.8), rtol=1e-12)
    assert_allclose(cov[1], 5.0 * np.eye(3), rtol=1e-12)


def test_gamma_conditional_independence_variant():
    _, y, s, theta = _fixture_stats()
    mean, cov = gamma_posterior(s, theta, PRIORS, "ind")
    p = 3 / 0.8 + 1 / 5.0
    assert_allclose(mean[0], [y.sum() / 0.8 / p, 0, 0], rtol=1e-12)
    assert_allclose(cov[0, 0, 0], 1 / p, rtol=1e-12)
    assert np.all(cov[0, 1:, :] == 0)


def test_sigma_y_conditional_hand_formula():
    z, y, s, theta = _fixture_stats()
    shape, rate = sigma_y_posterior(s, theta, PRIORS)
    resid = y - theta[0, 4] - z @ theta[0, 5:7]
    assert_allclose(shape, [2.0 + 1.5, 2.0], rtol=1e-12)
    assert_allclose(rate[0], 1.0 + 0.5 * (resid**2).sum(), rtol=1e-12)
    assert_allclose(rate[1], 1.0, rtol=1e-12)


def test_sigma1_rho_target_matches_direct_log_density():
    z, _, s, theta = _fixture_stats()
    mu = theta[:1, :2]

    def direct(s1sq, rho):
        p = RegimeParams(mu[0, 0], mu[0, 1], s1sq, rho)
        lz = stats.multivariate_normal(p.mean, p.cov).logpdf(z).sum()
        lp = stats.invgamma(2.0, scale=1.0).logpdf(s1sq) + stats.norm(0, math.sqrt(5)).logpdf(rho)
        return lz + lp + math.log(s1sq) + math.log(1 - rho**2)

    pts = [(0.5, -0.4), (1.0, 0.0), (2.5, 0.7), (0.2, 0.95)]
    got = [float(sigma1_rho_log_target(s[:1], mu, np.array([a]), np.array([b]), PRIORS)[0]) for a, b in pts]
    ref = [direct(a, b) for a, b in pts]
    assert_allclose(np.diff(got), np.diff(ref), rtol=1e-11, atol=1e-11)
    assert sigma1_rho_log_target(s[:1], mu, np.array([1.0]), np.array([1.0]), PRIORS)[0] == -np.inf


def test_update_params_with_zero_noise_gives_conditional_means():
    _, _, s, theta = _fixture_stats()
    th = theta.copy()
    acc = np.empty(2, dtype=np.uint8)
    g = np.array([3.5, 2.0])
    pyk.update_params(s, th, hyper_vector(PRIORS), 1, np.zeros((2, 7)), g, np.full(2, 0.5),
                      np.zeros(2), np.zeros((2, 2)), np.zeros((2, 2, 2)), 0, 10, 0.35, False, acc)
    mu_mean, _ = mu_posterior(s, theta, PRIORS)
    assert_allclose(th[:, :2], mu_mean, rtol=1e-12)
    gm, _ = gamma_posterior(s, theta, PRIORS)  # drawn before sigma_y_sq moves
    assert_allclose(th[:, 4:7], gm, rtol=1e-12)
    _, rate = sigma_y_posterior(s, th, PRIORS)
    assert_allclose(th[:, 7], rate / g, rtol=1e-12)


def test_log_prior_closed_form():
    theta = np.array([[0.1, 0.2, 1.5, 0.3, 0.5, 0.4, -0.3, 0.8]])
    nz = stats.norm(0, math.sqrt(5))
    ig = stats.invgamma(2.0, scale=1.0)
    trunc = stats.truncnorm(-1 / math.sqrt(5), 1 / math.sqrt(5), scale=math.sqrt(5))
    ref = (nz.logpdf(theta[0, [0, 1, 4, 5, 6]]).sum() + ig.logpdf(1.5) + ig.logpdf(0.8) + trunc.logpdf(0.3))
    assert_allclose(log_prior(theta, PRIORS, "clgpn"), ref, rtol=1e-12)
    ref_ind = nz.logpdf(theta[0, [0, 1, 4]]).sum() + ig.logpdf(0.8)
    assert_allclose(log_prior(theta, PRIORS, "ind"), ref_ind, rtol=1e-12)


def test_sample_prior_respects_variant():
    rng = np.random.default_rng(0)
    th = sample_prior(500, PRIORS, "clgpn", rng)
    assert np.all(np.abs(th[:, 3]) < 1) and np.all(th[:, [2, 7]] > 0)
    th = sample_prior(5, PRIORS, "cldpn", rng)
    assert_array_equal(th[:, 2], 1.0) and assert_array_equal(th[:, 3], 0.0)
    th = sample_prior(5, PRIORS, "ind", rng)
    assert_array_equal(th[:, 5:7], 0.0)


# -- radius ------------------------------------------------------------------


def _radius_mass(m, v, lo, hi):
    sd = math.sqrt(v)
    f = lambda r: r * stats.norm.pdf(r, m, sd)  # noqa: E731
    a, b = max(lo, m - 40 * sd, 0.0), min(hi, max(m, 0.0) + 40 * sd)
    if a >= b:
        return 0.0
    pts = [q for q in (m - sd, m, m + sd) if a < q < b]
    return integrate.quad(f, a, b, points=pts or None, epsabs=0, epsrel=1e-13, limit=200)[0]


@pytest.mark.parametrize("m,v", [(2.0, 0.25), (-1.0, 0.5), (0.0, 1.0), (30.0, 0.01)])
def test_radius_cdf_matches_quadrature(m, v):
    norm = _radius_mass(m, v, 0.0, np.inf)
    for q in np.linspace(0.05, m + 4 * math.sqrt(v) if m > 0 else 4.0, 7):
        ref = _radius_mass(m, v, 0.0, q) / norm
        assert abs(radius_cdf(q, m, v) - ref) < 1e-10


def test_exact_radius_sampler():
    rng = np.random.default_rng(0)
    r = sample_radius_exact(np.full(20_000, 2.0), np.full(20_000, 0.25), rng.random(20_000))
    assert np.all(r > 0)
    assert stats.kstest(r, lambda q: radius_cdf(q, 2.0, 0.25)).pvalue > 1e-3
    # far from the origin the mean approaches m + v / m
    r = sample_radius_exact(np.full(20_000, 40.0), np.full(20_000, 1.0), rng.random(20_000))
    assert abs(r.mean() - (40.0 + 1.0 / 40.0)) < 4 / math.sqrt(20_000)


def test_radius_metropolis_is_stationary(backend):
    # x = 0, gamma1 = sqrt(3), sigma_y_sq = 1 gives v = 1/4 and m = 2
    kern = kernels.get_backend(backend)
    n = 20_000
    theta = np.array([[0.0, 0.0, 1.0, 0.0, 0.0, math.sqrt(3), 0.0, 1.0]])
    y = np.full(n, 8.0 / math.sqrt(3))
    cosx, sinx = np.ones(n), np.zeros(n)
    idx = np.arange(n, dtype=np.int64)
    m, v = pyk.radius_moments(cosx, sinx, y, idx, np.ones(n, np.uint8), np.zeros(n + 1, np.int64), theta)
    assert_allclose([m[0], v[0]], [2.0, 0.25], rtol=1e-14)
    rng = np.random.default_rng(1)
    r = np.full(n, 5.0)
    z1, z2 = r.copy(), np.zeros(n)
    ls = np.full(n, math.log(0.5))
    acc = 0
    for _ in range(300):
        acc += kern.radius_mh(r, z1, z2, cosx, sinx, y, idx, np.ones(n, np.uint8), np.zeros(n + 1, np.int64),
                              theta, ls, rng.standard_normal(n), rng.random(n), 0.0, 0.44)
    assert np.all(r > 0)
    assert_allclose(z1, r)
    assert stats.kstest(r, lambda q: radius_cdf(q, 2.0, 0.25)).pvalue > 1e-3
    assert 0.15 < acc / (300 * n) < 0.95


def test_radius_adaptation_moves_toward_target():
    n = 2000
    theta = np.array([[0.0, 0.0, 1.0, 0.0, 0.0, math.sqrt(3), 0.0, 1.0]])
    y = np.full(n, 8.0 / math.sqrt(3))
    cosx, sinx = np.ones(n), np.zeros(n)
    idx = np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(2)
    r = np.full(n, 2.0)
    z1, z2 = r.copy(), np.zeros(n)
    ls = np.full(n, math.log(5.0))  # far too wide
    rates = []
    for it in range(2000):
        a = pyk.radius_mh(r, z1, z2, cosx, sinx, y, idx, np.ones(n, np.uint8), np.zeros(n + 1, np.int64),
                          theta, ls, rng.standard_normal(n), rng.random(n), (it + 1) ** -0.6, 0.44)
        rates.append(a / n)
    assert abs(np.mean(rates[-500:]) - 0.44) < 0.05


# -- (sigma1_sq, rho) against a grid posterior ----------------------------------


def _grid_posterior(z, priors):
    """Posterior of (sigma1_sq, rho) given complete z with mu integrated out."""
    n = z.shape[0]
    zbar = z.mean(axis=0)
    S = (z - zbar).T @ (z - zbar)
    s1 = np.linspace(0.02, 12.0, 700)
    rho = np.linspace(-0.999, 0.999, 700)
    A, R = np.meshgrid(s1, rho, indexing="ij")
    c12 = np.sqrt(A) * R
    det = A * (1 - R**2)
    tr = (S[0, 0] - 2 * c12 * S[0, 1] + A * S[1, 1]) / det
    ll = -0.5 * n * np.log(det) - 0.5 * tr + 0.5 * np.log(det / n**2)
    # N(zbar | 0, Sigma / n + v0 I)
    m11, m12, m22 = A / n + priors.mu_var, c12 / n, 1.0 / n + priors.mu_var
    mdet = m11 * m22 - m12**2
    q = (m22 * zbar[0] ** 2 - 2 * m12 * zbar[0] * zbar[1] + m11 * zbar[1] ** 2) / mdet
    ll += -0.5 * np.log(mdet) - 0.5 * q
    lp = ll + stats.invgamma(priors.ig_shape, scale=priors.ig_rate).logpdf(A) - 0.5 * R**2 / priors.rho_var
    w = np.exp(lp - lp.max())
    w /= w.sum()
    return (w * A).sum(), (w * R).sum(), math.sqrt((w * A**2).sum() - (w * A).sum() ** 2), math.sqrt((w * R**2).sum() - (w * R).sum() ** 2)


def test_sigma1_rho_block_matches_grid_posterior():
    rng = np.random.default_rng(7)
    true = RegimeParams(0.5, -0.3, sigma1_sq=2.0, rho=0.6)
    z = rng.multivariate_normal(true.mean, true.cov, size=50)
    y = rng.normal(size=50)
    s = pyk.suff_stats(np.zeros(51, np.int64), z[:, 0], z[:, 1], y, 1)
    hyper = hyper_vector(PRIORS)
    th = np.array([[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]])
    ls, mean, cov = np.zeros(1), np.zeros((1, 2)), np.zeros((1, 2, 2))
    n_adapt, burn, n_iter = 0, 5000, 80_000
    trace = np.empty((n_iter - burn, 2))
    kern = kernels.get_backend()
    acc = np.empty(1, np.uint8)
    for it in range(n_iter):
        n_adapt = kern.update_params(s, th, hyper, 0, rng.standard_normal((1, 7)), rng.gamma(2.0 + 25.0, size=1),
                                     rng.random(1), ls, mean, cov, n_adapt, 500, 0.35, it < burn, acc)
        if it >= burn:
            trace[it - burn] = th[0, 2:4]
    m_s, m_r, sd_s, sd_r = _grid_posterior(z, PRIORS)
    for j, (m, sd) in enumerate([(m_s, sd_s), (m_r, sd_r)]):
        se = sd / math.sqrt(ess(trace[:, j]))
        assert abs(trace[:, j].mean() - m) < 4 * se, (j, trace[:, j].mean(), m, se)
        assert abs(trace[:, j].std() - sd) < 0.1 * sd


# -- imputation ----------------------------------------------------------------


def _imputation_sampler(T_each=4000):
    p = RegimeParams(0.8, -0.5, sigma1_sq=2.0, rho=-0.6, gamma0=1.0, gamma1=1.2, gamma2=0.5, sigma_y_sq=0.3)
    y0 = 2.0
    nan = np.full(T_each, np.nan)
    x = np.concatenate([nan, nan, np.full(T_each, 1.0)])
    y = np.concatenate([nan, np.full(T_each, y0), nan])
    sm = Sampler(Observations(x, y), ChainConfig(K=1, init_sweeps=0, iterations=10, burnin=0))
    sm.theta[:] = p.as_array()
    sm.labels[:] = 0
    sm.impute_missing()
    return sm, p, y0


def test_impute_both_missing_follows_joint():
    sm, p, _ = _imputation_sampler()
    x, y = sm.x[:4000], sm.y[:4000]
    mean, var = linear_marginal(p)
    assert abs(y.mean() - mean) < 4 * math.sqrt(var / 4000)
    grid = np.linspace(0, 2 * np.pi, 2001)
    cdf = integrate.cumulative_trapezoid(np.exp(pn_log_density(grid, p)), grid, initial=0.0)
    assert stats.kstest(x, lambda q: np.interp(q, grid, cdf)).pvalue > 1e-3
    assert_allclose(sm.r[:4000], np.hypot(sm.z1[:4000], sm.z2[:4000]))


def test_impute_angle_given_linear_value():
    sm, p, y0 = _imputation_sampler()
    z = np.column_stack([sm.z1[4000:8000], sm.z2[4000:8000]])
    S, g = p.cov, p.slopes
    cross = S @ g
    vy = g @ S @ g + p.sigma_y_sq
    mean = p.mean + cross * (y0 - p.gamma0 - g @ p.mean) / vy
    cov = S - np.outer(cross, cross) / vy
    se = np.sqrt(np.diag(cov) / 4000)
    assert np.all(np.abs(z.mean(axis=0) - mean) < 4 * se)
    assert_allclose(np.cov(z.T), cov, rtol=0.1, atol=0.03)
    assert_allclose(sm.y[4000:8000], y0)
    assert_allclose(np.cos(sm.x[4000:8000]) * sm.r[4000:8000], z[:, 0], atol=1e-12)


def test_impute_linear_value_given_angle_and_radius():
    sm, p, _ = _imputation_sampler()
    sl = slice(8000, 12000)
    resid = sm.y[sl] - p.gamma0 - p.gamma1 * sm.z1[sl] - p.gamma2 * sm.z2[sl]
    std = resid / math.sqrt(p.sigma_y_sq)
    assert abs(std.mean()) < 4 / math.sqrt(4000)
    assert abs(std.var() - 1) < 0.1
    assert_allclose(sm.x[sl], 1.0)


# -- whole-sampler check against importance sampling ---------------------------


def _log_target(vec, x, y, variant):
    mu1, mu2, g0, g1, g2, lsy = vec[:6]
    if variant == "cldpn":
        s1sq, rho, extra = 1.0, 0.0, 0.0
    else:
        ls1, arho = vec[6:]
        s1sq, rho = math.exp(ls1), math.tanh(arho)
        extra = ls1 + math.log(1 - rho**2)
    p = RegimeParams(mu1, mu2, s1sq, rho, g0, g1, g2, math.exp(lsy))
    theta = p.as_array()[None]
    return float(clgpn_log_density(x, y, p).sum()) + log_prior(theta, PRIORS, variant) + lsy + extra


def _transform(params, variant):
    out = [params[:, 0], params[:, 1], params[:, 4], params[:, 5], params[:, 6], np.log(params[:, 7])]
    if variant == "clgpn":
        out += [np.log(params[:, 2]), np.arctanh(params[:, 3])]
    return np.column_stack(out)


@pytest.mark.parametrize("variant", ["cldpn", "clgpn"])
def test_sampler_matches_importance_sampling(variant):
    rng = np.random.default_rng(123)
    p = RegimeParams(1.0, 0.5, 1.0, 0.0, 1.0, 1.0, -0.5, 0.3)
    if variant == "clgpn":
        p = p.replace(sigma1_sq=2.0, rho=0.5)
    from clgpn.circular import sample_clgpn

    x, y, _ = sample_clgpn(p, rng, size=40)
    obs = Observations(x, y)
    out = run_chain(obs, ChainConfig(K=1, variant=variant, iterations=42_000, burnin=2000, thin=2, seed=5))
    draws = _transform(out.params[:, 0, :], variant)
    mcmc_mean = draws.mean(axis=0)
    mcmc_se = draws.std(axis=0) / np.sqrt([ess(draws[:, j]) for j in range(draws.shape[1])])

    d = draws.shape[1]
    cov = np.cov(draws.T) * 1.5
    prop = stats.multivariate_t(loc=mcmc_mean, shape=cov, df=5, seed=9)
    n_is = 30_000
    cand = prop.rvs(n_is)
    logw = np.array([_log_target(c, x, y, variant) for c in cand]) - prop.logpdf(cand)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    is_mean = w @ cand
    is_se = np.sqrt(w**2 @ (cand - is_mean) ** 2)
    assert 1.0 / (w**2).sum() > 2000  # proposal is adequate
    z = (mcmc_mean - is_mean) / np.sqrt(mcmc_se**2 + is_se**2)
    assert np.all(np.abs(z) < 4.0), z


# -- chain-level behaviour -------------------------------------------------------


def _small_obs():
    obs, _ = generate("a", 120, 3)
    return obs


def test_chain_is_reproducible():
    cfg = ChainConfig(K=2, iterations=400, burnin=200, thin=5, seed=11)
    a = run_chain(_small_obs(), cfg)
    b = run_chain(_small_obs(), cfg)
    assert_array_equal(a.params, b.params)
    assert_array_equal(a.labels, b.labels)
    assert_array_equal(a.log_post, b.log_post)
    c = run_chain(_small_obs(), ChainConfig(K=2, iterations=400, burnin=200, thin=5, seed=12))
    assert not np.array_equal(a.params, c.params)


def test_checkpoint_resume_is_bit_identical(tmp_path):
    obs = _small_obs()
    x = obs.x.copy()
    x[[3, 50]] = np.nan
    y = obs.y.copy()
    y[[7, 50]] = np.nan
    obs = Observations(x, y)
    cfg = ChainConfig(K=2, iterations=600, burnin=200, thin=5, seed=4)
    full = run_chain(obs, cfg)
    ck = tmp_path / "chain.ckpt"
    run_chain(obs, cfg, checkpoint_path=ck, checkpoint_every=50, stop_after=350)
    resumed = run_chain(obs, cfg, checkpoint_path=ck, resume=True)
    for name in ("params", "labels", "radii", "x_imputed", "y_imputed", "log_post", "pi", "pi0", "iterations"):
        assert_array_equal(getattr(full, name), getattr(resumed, name), err_msg=name)


def test_backends_give_same_chain():
    if kernels.cython_backend is None:
        pytest.skip("compiled kernels not built")
    cfg = ChainConfig(K=2, iterations=150, burnin=50, thin=5, seed=2)
    a = run_chain(_small_obs(), cfg, backend="python")
    b = run_chain(_small_obs(), cfg, backend="cython")
    assert_array_equal(a.labels, b.labels)
    assert_allclose(a.params, b.params, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("scheme", ["a", "b", "c"])
def test_acceptance_rates_in_range(scheme):
    obs, _ = generate(scheme, 300, 1)
    out = run_chain(obs, ChainConfig(K=3, iterations=6000, burnin=3000, thin=10, seed=1))
    rates = np.append(out.acceptance["sigma1_rho"], out.acceptance["radius"])
    assert np.all((rates >= 0.15) & (rates <= 0.6)), rates


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(K=0)
    with pytest.raises(ValueError):
        ChainConfig(K=2, iterations=10, burnin=10)
    with pytest.raises(ValueError):
        ChainConfig(K=2, radius_update="slice")
    with pytest.raises(ValueError):
        Priors(mu_var=0.0)
