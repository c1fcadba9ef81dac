"""MCMC sampler for the CL-GPN hidden Markov model.

One sweep updates, in order: the hidden states (collapsed Gibbs), the latent
radii (random-walk Metropolis on ``log r``), the missing observations, and per
regime ``mu``, ``gamma``, ``sigma_y_sq`` (Gibbs) and ``(sigma1_sq, rho)``
(adaptive random-walk Metropolis on ``(log sigma1_sq, atanh rho)``).

Parameter updates work on per-regime sufficient statistics of the completed
data (see :func:`clgpn._pykernels.suff_stats`) and are vectorized over regimes.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import special

from . import _pykernels as _pyk
from . import kernels
from .circular import LOG_2PI, TWO_PI, Variant
from .data import Observations
from .exceptions import NumericalError
from .hmm import collapsed_log_prior, recover_transition

log = logging.getLogger(__name__)

MU1, MU2, S1SQ, RHO, G0, G1, G2, SYSQ = range(8)
# sufficient statistic columns
N, SZ1, SZ2, SZ11, SZ12, SZ22, SY, SYY, SZ1Y, SZ2Y = range(10)

_ADAPT_EXPONENT = _pyk.ADAPT_EXPONENT


@dataclass
class Priors:
    """Hyperparameters shared by all regimes.

    Normal priors are parameterized by variance. ``rho`` has a normal prior
    truncated to (-1, 1). Inverse gamma priors use shape and rate.
    """

    mu_mean: float = 0.0
    mu_var: float = 5.0
    gamma_mean: float = 0.0
    gamma_var: float = 5.0
    rho_mean: float = 0.0
    rho_var: float = 5.0
    ig_shape: float = 2.0
    ig_rate: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("mu_var", "gamma_var", "rho_var", "ig_shape", "ig_rate", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class ChainConfig:
    K: int
    variant: Variant = Variant.CLGPN
    iterations: int = 50_000
    burnin: int = 20_000
    thin: int = 10
    seed: int = 0
    adapt_window: int = 500
    target_accept: float = 0.35
    target_accept_r: float = 0.44
    radius_update: str = "mh"
    init_sweeps: int = 20

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.iterations < 1 or self.thin < 1 or self.adapt_window < 1:
            raise ValueError("iterations, thin and adapt_window must be positive")
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("burnin must satisfy 0 <= burnin < iterations")
        if not (0 < self.target_accept < 1 and 0 < self.target_accept_r < 1):
            raise ValueError("acceptance targets must lie in (0, 1)")
        if self.radius_update not in ("mh", "exact"):
            raise ValueError("radius_update must be 'mh' or 'exact'")
        if self.init_sweeps < 0:
            raise ValueError("init_sweeps must be nonnegative")

    @property
    def n_draws(self):
        return (self.iterations - self.burnin) // self.thin

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


# ---------------------------------------------------------------------------
# full conditionals
#
# The sampler itself calls the fused kernels ``update_params`` and
# ``radius_mh``; the functions below expose the same conditionals with a
# friendlier signature for testing and for the exact radius update.

VARIANT_CODE = {Variant.CLGPN: 0, Variant.CLDPN: 1, Variant.IND: 2}


def hyper_vector(priors):
    return np.array(
        [
            priors.mu_mean,
            priors.mu_var,
            priors.gamma_mean,
            priors.gamma_var,
            priors.rho_mean,
            priors.rho_var,
            priors.ig_shape,
            priors.ig_rate,
        ]
    )


def mu_posterior(stats_, theta, priors):
    """Normal full conditional of each ``mu_k``: mean ``(K, 2)``, covariance ``(K, 2, 2)``."""
    return _pyk.mu_posterior(stats_, theta, priors.mu_mean, priors.mu_var)


def gamma_posterior(stats_, theta, priors, variant=Variant.CLGPN):
    """Normal full conditional of ``(gamma0, gamma1, gamma2)`` per regime.

    For the independence variant only the intercept is free; the slope rows
    and columns of the returned covariance are zero.
    """
    K = theta.shape[0]
    sysq = theta[:, SYSQ]
    if Variant.parse(variant) is Variant.IND:
        p = stats_[:, N] / sysq + 1.0 / priors.gamma_var
        mean = np.zeros((K, 3))
        cov = np.zeros((K, 3, 3))
        mean[:, 0] = (stats_[:, SY] / sysq + priors.gamma_mean / priors.gamma_var) / p
        cov[:, 0, 0] = 1.0 / p
        return mean, cov
    prec, lin = _pyk.gamma_precision(stats_, sysq, priors.gamma_mean, priors.gamma_var)
    cov = np.linalg.inv(prec)
    return np.einsum("kij,kj->ki", cov, lin), cov


def sigma_y_posterior(stats_, theta, priors):
    """Inverse gamma full conditional of ``sigma_y_sq``: ``(shape, rate)`` per regime."""
    ssr = _pyk.residual_ss(stats_, theta[:, G0:G2 + 1])
    return priors.ig_shape + 0.5 * stats_[:, N], priors.ig_rate + 0.5 * ssr


def sigma1_rho_log_target(stats_, mu, s1sq, rho, priors):
    """Log full conditional of ``(log sigma1_sq, atanh rho)`` up to a constant.

    Includes the Jacobians ``sigma1_sq`` and ``1 - rho^2`` of the transform.
    """
    return _pyk.sigma1_rho_log_target(
        stats_, mu[:, 0], mu[:, 1], np.asarray(s1sq, float), np.asarray(rho, float), hyper_vector(priors)
    )


def radius_cdf(r, m, v):
    """CDF of the density proportional to ``r N(r | m, v)`` on ``r > 0``."""
    sd = np.sqrt(v)
    u = m / sd
    norm = m * special.ndtr(u) + sd * _std_pdf(u)
    z = (r - m) / sd
    part = m * (special.ndtr(z) - special.ndtr(-u)) - sd * (_std_pdf(z) - _std_pdf(u))
    return part / norm


def _std_pdf(z):
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def sample_radius_exact(m, v, u):
    """Inverse-CDF draws from ``r N(r | m, v)`` on ``r > 0`` by bisection."""
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    sd = np.sqrt(v)
    lo = np.zeros_like(m)
    hi = np.maximum(m, 0.0) + 12.0 * sd + 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = radius_cdf(mid, m, v) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.maximum(0.5 * (lo + hi), np.finfo(float).tiny)


# ---------------------------------------------------------------------------
# priors


def _log_ig(x, shape, rate):
    return shape * np.log(rate) - special.gammaln(shape) - (shape + 1.0) * np.log(x) - rate / x


def _log_norm(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def rho_prior_log_norm(priors):
    """Log probability that the untruncated ``rho`` prior falls in (-1, 1)."""
    sd = np.sqrt(priors.rho_var)
    hi = special.ndtr((1.0 - priors.rho_mean) / sd)
    lo = special.ndtr((-1.0 - priors.rho_mean) / sd)
    return float(np.log(hi - lo))


def log_prior(theta, priors, variant):
    """Log prior density of the emission parameters of all regimes."""
    variant = Variant.parse(variant)
    lp = _log_norm(theta[:, [MU1, MU2]], priors.mu_mean, priors.mu_var).sum()
    gcols = [G0] if variant is Variant.IND else [G0, G1, G2]
    lp += _log_norm(theta[:, gcols], priors.gamma_mean, priors.gamma_var).sum()
    lp += _log_ig(theta[:, SYSQ], priors.ig_shape, priors.ig_rate).sum()
    if variant is Variant.CLGPN:
        lp += _log_ig(theta[:, S1SQ], priors.ig_shape, priors.ig_rate).sum()
        rho = theta[:, RHO]
        if np.any(np.abs(rho) >= 1.0):
            return -np.inf
        lp += (_log_norm(rho, priors.rho_mean, priors.rho_var) - rho_prior_log_norm(priors)).sum()
    return float(lp)


def _sample_rho_prior(priors, size, rng):
    sd = np.sqrt(priors.rho_var)
    lo = special.ndtr((-1.0 - priors.rho_mean) / sd)
    hi = special.ndtr((1.0 - priors.rho_mean) / sd)
    u = lo + (hi - lo) * rng.random(size)
    return np.clip(priors.rho_mean + sd * special.ndtri(u), -1.0 + 1e-12, 1.0 - 1e-12)


def sample_prior(K, priors, variant, rng):
    """Draw a ``(K, 8)`` parameter array from the prior."""
    variant = Variant.parse(variant)
    theta = np.empty((K, 8))
    theta[:, [MU1, MU2]] = priors.mu_mean + np.sqrt(priors.mu_var) * rng.standard_normal((K, 2))
    theta[:, G0:G2 + 1] = priors.gamma_mean + np.sqrt(priors.gamma_var) * rng.standard_normal((K, 3))
    theta[:, SYSQ] = priors.ig_rate / rng.gamma(priors.ig_shape, size=K)
    if variant is Variant.CLGPN:
        theta[:, S1SQ] = priors.ig_rate / rng.gamma(priors.ig_shape, size=K)
        theta[:, RHO] = _sample_rho_prior(priors, K, rng)
    else:
        theta[:, S1SQ] = 1.0
        theta[:, RHO] = 0.0
    if variant is Variant.IND:
        theta[:, [G1, G2]] = 0.0
    return theta


# ---------------------------------------------------------------------------
# the chain


@dataclass
class AdaptState:
    """Adaptation state of the Metropolis blocks."""

    r_log_scale: np.ndarray
    sr_log_scale: np.ndarray
    sr_mean: np.ndarray
    sr_cov: np.ndarray
    n_adapt: int = 0

    @classmethod
    def initial(cls, T, K):
        return cls(
            r_log_scale=np.full(T, np.log(0.5)),
            sr_log_scale=np.zeros(K),
            sr_mean=np.zeros((K, 2)),
            sr_cov=np.zeros((K, 2, 2)),
        )


def _draw_mvn2(rng, mean1, mean2, c11, c12, c22):
    l11 = np.sqrt(c11)
    l21 = c12 / l11
    l22 = np.sqrt(np.maximum(c22 - l21 * l21, 0.0))
    e = rng.standard_normal((2,) + np.shape(mean1))
    return mean1 + l11 * e[0], mean2 + l21 * e[0] + l22 * e[1]


class Sampler:
    """Mutable state of one chain plus the sweep that advances it.

    Parameters
    ----------
    obs : Observations
        Data; NaN entries are imputed as part of the chain.
    config : ChainConfig
    priors : Priors, optional
    rng : numpy.random.Generator, optional
        Defaults to a generator seeded with ``[config.seed, 0]``.
    backend : {"cython", "python"}, optional
        Kernel implementation; see :mod:`clgpn.kernels`.
    """

    def __init__(self, obs: Observations, config: ChainConfig, priors=None, rng=None, backend=None):
        self.config = config
        self.priors = priors if priors is not None else Priors()
        self.hyper = hyper_vector(self.priors)
        self.variant = config.variant
        self.variant_code = VARIANT_CODE[self.variant]
        self.K = config.K
        self.kern = kernels.get_backend(backend)
        self.rng = rng if rng is not None else np.random.default_rng([config.seed, 0])
        self._set_observations(obs)
        self.iteration = 0
        self.adapt = AdaptState.initial(self.T, self.K)
        self.accepted_sr = np.zeros(self.K)
        self.accepted_r = 0.0
        self.n_counted = 0
        self._last_sr_accept = np.ones(self.K, dtype=np.uint8)
        self._last_r_accept = 0.0
        self._initialize()

    # -- data ---------------------------------------------------------------

    def _set_observations(self, obs):
        self.obs = obs
        self.T = obs.T
        self.xmiss = obs.x_missing
        self.ymiss = obs.y_missing
        self.xmiss_u8 = self.xmiss.astype(np.uint8)
        self.ymiss_u8 = self.ymiss.astype(np.uint8)
        self.idx_xobs = np.flatnonzero(~self.xmiss).astype(np.int64)
        self.yobs_at_xobs = (~self.ymiss[self.idx_xobs]).astype(np.uint8)
        self.idx_ymiss_only = np.flatnonzero(~self.xmiss & self.ymiss)
        self.idx_xmiss_only = np.flatnonzero(self.xmiss & ~self.ymiss)
        self.idx_both = np.flatnonzero(self.xmiss & self.ymiss)
        xo = obs.x[self.idx_xobs]
        self.cos_obs = np.cos(xo)
        self.sin_obs = np.sin(xo)

    def set_data(self, x, y, r):
        """Replace fully observed data and radii (used by joint-distribution tests)."""
        obs = Observations(x, y)
        if obs.T != self.T or np.any(obs.mask):
            raise ValueError("replacement data must be complete and of the same length")
        self._set_observations(obs)
        self.x = obs.x.copy()
        self.y = obs.y.copy()
        self.r = np.array(r, dtype=float)
        self._refresh_z()

    def _refresh_z(self):
        self.z1 = np.ascontiguousarray(self.r * np.cos(self.x))
        self.z2 = np.ascontiguousarray(self.r * np.sin(self.x))

    # -- initialization -----------------------------------------------------

    def _initialize(self):
        obs, K, T = self.obs, self.K, self.T
        y_fill = obs.y.copy()
        if np.all(self.ymiss):
            y_fill[:] = 0.0
        else:
            y_fill[self.ymiss] = np.nanmedian(obs.y)
        # equal-count bins of y
        ranks = np.argsort(np.argsort(y_fill, kind="stable"), kind="stable")
        labels = np.empty(T + 1, dtype=np.int64)
        labels[1:] = np.minimum(ranks * K // T, K - 1)
        labels[0] = labels[1]
        self.labels = labels
        self.theta = sample_prior(K, self.priors, self.variant, self.rng)
        self.x = np.where(self.xmiss, 0.0, obs.x)
        self.y = np.where(self.ymiss, 0.0, obs.y)
        self.r = np.ones(T)
        self._refresh_z()
        self.impute_missing()
        # a few parameter-only sweeps with the initial labels held fixed
        for _ in range(self.config.init_sweeps):
            self.update_radii(learn=False)
            self.impute_missing()
            self.update_parameters(learn=False)

    # -- blocks -------------------------------------------------------------

    def emission_log_matrix(self):
        return self.kern.emission_matrix(
            self.z1, self.z2, self.y, self.r, self.xmiss_u8, self.ymiss_u8, self.theta
        )

    def update_states(self):
        log_emis = self.emission_log_matrix()
        u = self.rng.random(self.T + 1)
        self.kern.sweep_states(log_emis, self.labels, self.priors.beta, u)

    def radius_terms(self):
        """``(m, v)`` of the radius conditional at the times with observed ``x``."""
        return _pyk.radius_moments(
            self.cos_obs, self.sin_obs, self.y, self.idx_xobs, self.yobs_at_xobs, self.labels, self.theta
        )

    def update_radii(self, learn=False):
        idx = self.idx_xobs
        n = idx.size
        if n == 0:
            return
        if self.config.radius_update == "exact":
            m, v = self.radius_terms()
            rn = sample_radius_exact(m, v, self.rng.random(n))
            self.r[idx] = rn
            self.z1[idx] = rn * self.cos_obs
            self.z2[idx] = rn * self.sin_obs
            self._last_r_accept = 1.0
            return
        eps = self.rng.standard_normal(n)
        u = self.rng.random(n)
        step = (self.iteration + 1) ** -_ADAPT_EXPONENT if learn else 0.0
        acc = self.kern.radius_mh(
            self.r, self.z1, self.z2, self.cos_obs, self.sin_obs, self.y, idx, self.yobs_at_xobs,
            self.labels, self.theta, self.adapt.r_log_scale, eps, u, step, self.config.target_accept_r,
        )
        self._last_r_accept = acc / n

    def impute_missing(self):
        """Draw missing coordinates (and their radii) from their full conditionals."""
        rng, th_all = self.rng, self.theta
        idx = self.idx_ymiss_only
        if idx.size:
            th = th_all[self.labels[idx + 1]]
            mean = th[:, G0] + th[:, G1] * self.z1[idx] + th[:, G2] * self.z2[idx]
            self.y[idx] = mean + np.sqrt(th[:, SYSQ]) * rng.standard_normal(idx.size)
        idx = self.idx_xmiss_only
        if idx.size:
            th = th_all[self.labels[idx + 1]]
            s1 = np.sqrt(th[:, S1SQ])
            c11, c12 = th[:, S1SQ], s1 * th[:, RHO]
            g1, g2 = th[:, G1], th[:, G2]
            # Sigma g and the marginal variance of y
            sg1 = c11 * g1 + c12 * g2
            sg2 = c12 * g1 + g2
            var_y = g1 * sg1 + g2 * sg2 + th[:, SYSQ]
            resid = self.y[idx] - th[:, G0] - g1 * th[:, MU1] - g2 * th[:, MU2]
            z1, z2 = _draw_mvn2(
                rng,
                th[:, MU1] + sg1 * resid / var_y,
                th[:, MU2] + sg2 * resid / var_y,
                c11 - sg1 * sg1 / var_y,
                c12 - sg1 * sg2 / var_y,
                1.0 - sg2 * sg2 / var_y,
            )
            self._set_z(idx, z1, z2)
        idx = self.idx_both
        if idx.size:
            th = th_all[self.labels[idx + 1]]
            s1 = np.sqrt(th[:, S1SQ])
            z1, z2 = _draw_mvn2(rng, th[:, MU1], th[:, MU2], th[:, S1SQ], s1 * th[:, RHO], np.ones(idx.size))
            self._set_z(idx, z1, z2)
            mean = th[:, G0] + th[:, G1] * z1 + th[:, G2] * z2
            self.y[idx] = mean + np.sqrt(th[:, SYSQ]) * rng.standard_normal(idx.size)

    def _set_z(self, idx, z1, z2):
        self.z1[idx] = z1
        self.z2[idx] = z2
        self.r[idx] = np.hypot(z1, z2)
        self.x[idx] = np.mod(np.arctan2(z2, z1), TWO_PI)

    def sufficient_stats(self):
        return self.kern.suff_stats(self.labels, self.z1, self.z2, self.y, self.K)

    def update_parameters(self, learn=False):
        stats_ = self.sufficient_stats()
        K = self.K
        e = self.rng.standard_normal((K, 7))
        g = self.rng.gamma(self.priors.ig_shape + 0.5 * stats_[:, N])
        u = self.rng.random(K)
        acc = np.empty(K, dtype=np.uint8)
        ad = self.adapt
        ad.n_adapt = self.kern.update_params(
            stats_, self.theta, self.hyper, self.variant_code, e, g, u,
            ad.sr_log_scale, ad.sr_mean, ad.sr_cov, ad.n_adapt, self.config.adapt_window,
            self.config.target_accept, bool(learn), acc,
        )
        self._last_sr_accept = acc

    def step(self, learn=False):
        """Advance the chain by one full sweep."""
        self.update_states()
        self.update_radii(learn=learn)
        self.impute_missing()
        self.update_parameters(learn=learn)
        self.iteration += 1

    # -- evaluation ---------------------------------------------------------

    def complete_loglik(self, stats_=None):
        """``log f(r, x, y | Psi, xi)`` of the completed data."""
        s = self.sufficient_stats() if stats_ is None else stats_
        th = self.theta
        m1, m2 = th[:, MU1], th[:, MU2]
        s11, s12, s22 = _pyk.scatter_about(s, m1, m2)
        s1 = np.sqrt(th[:, S1SQ])
        det = th[:, S1SQ] * (1.0 - th[:, RHO] ** 2)
        tr = (s11 - 2.0 * s1 * th[:, RHO] * s12 + th[:, S1SQ] * s22) / det
        n = s[:, N]
        lz = -n * LOG_2PI - 0.5 * n * np.log(det) - 0.5 * tr
        ssr = _pyk.residual_ss(s, th[:, G0:G2 + 1])
        ly = -0.5 * n * (LOG_2PI + np.log(th[:, SYSQ])) - 0.5 * ssr / th[:, SYSQ]
        return float(lz.sum() + ly.sum() + np.log(self.r).sum())

    def log_posterior(self):
        return (
            self.complete_loglik()
            + collapsed_log_prior(self.labels, self.K, self.priors.beta)
            + log_prior(self.theta, self.priors, self.variant)
        )

    # -- checkpointing -----------------------------------------------------

    def get_state(self):
        """All mutable chain state, including the generator, as a flat dict."""
        bg = self.rng.bit_generator.state
        if bg["bit_generator"] != "PCG64":
            raise ValueError("checkpointing supports the PCG64 generator only")
        return {
            "iteration": self.iteration,
            "labels": self.labels.copy(),
            "radii": self.r.copy(),
            "x": self.x.copy(),
            "y": self.y.copy(),
            "theta": self.theta.copy(),
            "adapt.r_log_scale": self.adapt.r_log_scale.copy(),
            "adapt.sr_log_scale": self.adapt.sr_log_scale.copy(),
            "adapt.sr_mean": self.adapt.sr_mean.copy(),
            "adapt.sr_cov": self.adapt.sr_cov.copy(),
            "adapt.n_adapt": self.adapt.n_adapt,
            "accepted_sr": self.accepted_sr.copy(),
            "accepted_r": self.accepted_r,
            "n_counted": self.n_counted,
            "rng.state": bg["state"]["state"],
            "rng.inc": bg["state"]["inc"],
            "rng.has_uint32": bg["has_uint32"],
            "rng.uinteger": bg["uinteger"],
        }

    def set_state(self, state):
        K, T = self.K, self.T
        self.iteration = int(state["iteration"])
        self.labels = np.array(state["labels"], dtype=np.int64).reshape(T + 1)
        self.r = np.array(state["radii"], dtype=float).reshape(T)
        self.x = np.array(state["x"], dtype=float).reshape(T)
        self.y = np.array(state["y"], dtype=float).reshape(T)
        self.theta = np.array(state["theta"], dtype=float).reshape(K, 8)
        self.adapt = AdaptState(
            r_log_scale=np.array(state["adapt.r_log_scale"], dtype=float).reshape(T),
            sr_log_scale=np.array(state["adapt.sr_log_scale"], dtype=float).reshape(K),
            sr_mean=np.array(state["adapt.sr_mean"], dtype=float).reshape(K, 2),
            sr_cov=np.array(state["adapt.sr_cov"], dtype=float).reshape(K, 2, 2),
            n_adapt=int(state["adapt.n_adapt"]),
        )
        self.accepted_sr = np.array(state["accepted_sr"], dtype=float).reshape(K)
        self.accepted_r = float(state["accepted_r"])
        self.n_counted = int(state["n_counted"])
        self.rng = np.random.Generator(np.random.PCG64())
        self.rng.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(state["rng.state"]), "inc": int(state["rng.inc"])},
            "has_uint32": int(state["rng.has_uint32"]),
            "uinteger": int(state["rng.uinteger"]),
        }
        self._refresh_z()
