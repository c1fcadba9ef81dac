"""Model-selection criteria, predictive scores and per-regime summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circular import RegimeParams, Variant, arc_distance, params_from_array, sample_clgpn, wrap_angle
from .hmm import collapsed_log_prior, forward_loglik, observed_log_emissions, posterior_mean_transition


def param_count(variant, K):
    """Free parameters: emission parameters plus transition rows and initial distribution."""
    if K < 1:
        raise ValueError("K must be at least 1")
    per_regime = Variant.parse(variant).free_params
    return per_regime * K + K * (K - 1) + (K - 1)


@dataclass(frozen=True)
class CriterionReport:
    aic: float
    bic: float
    icl: float
    param_count: int
    map_loglik: float
    classified_loglik: float

    def as_dict(self):
        return {"AIC": self.aic, "BIC": self.bic, "ICL": self.icl}


def criteria(theta, labels, obs, variant, beta=1.0):
    """AIC, BIC and ICL of a plug-in estimate (normally the MAP draw).

    The transition matrix and initial distribution are the Dirichlet
    posterior means given ``labels``. All three criteria are "smaller is
    better".

    Parameters
    ----------
    theta : ndarray, shape (K, 8)
    labels : ndarray, shape (T + 1,)
    obs : Observations
    variant : Variant or str
    beta : float
        Dirichlet concentration of the transition prior.
    """
    theta = np.asarray(theta, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    K = theta.shape[0]
    T = obs.T
    params = params_from_array(theta, variant)
    pi, pi0 = posterior_mean_transition(labels, K, beta)
    loglik = forward_loglik(obs.x, obs.y, params, pi, pi0)
    log_b = observed_log_emissions(obs.x, obs.y, params)
    classified = float(log_b[np.arange(T), labels[1:]].sum())
    p = param_count(variant, K)
    return CriterionReport(
        aic=-2.0 * loglik + 2.0 * p,
        bic=-2.0 * loglik + p * np.log(T),
        icl=-2.0 * classified - 2.0 * collapsed_log_prior(labels, K, beta) + p * np.log(T),
        param_count=p,
        map_loglik=loglik,
        classified_loglik=classified,
    )


def _samples(samples, minimum):
    s = np.asarray(samples, dtype=float).reshape(-1)
    if s.size < minimum:
        raise ValueError(f"at least {minimum} sample(s) required")
    if not np.all(np.isfinite(s)):
        raise ValueError("samples must be finite")
    return s


def _mean_abs_pairwise(s):
    # mean over all n^2 ordered pairs of |s_i - s_j|, via sorted prefix sums
    n = s.size
    v = np.sort(s)
    coef = 2.0 * np.arange(n) - n + 1.0
    return 2.0 * float(np.dot(coef, v)) / (n * n)


def crps_linear(samples, y):
    """Sample-based CRPS ``E|X - y| - E|X - X'| / 2`` (all ordered pairs)."""
    s = _samples(samples, 2)
    return float(np.mean(np.abs(s - y))) - 0.5 * _mean_abs_pairwise(s)


def _mean_arc_pairwise(a, chunk=2048):
    n = a.size
    total = 0.0
    for i in range(0, n, chunk):
        total += arc_distance(a[i:i + chunk, None], a[None, :]).sum()
    return total / (n * n)


def crps_circular(samples, x):
    """Circular CRPS with shortest-arc distance, in radians."""
    a = wrap_angle(_samples(samples, 2))
    return float(np.mean(arc_distance(a, x))) - 0.5 * _mean_arc_pairwise(a)


def ape(samples, x, distance="cosine"):
    """Average prediction error of angular samples around the true angle.

    Parameters
    ----------
    distance : {"cosine", "arc"}
        ``"cosine"`` averages ``1 - cos(sample - x)`` (values in [0, 2]);
        ``"arc"`` averages the shortest-arc distance (values in [0, pi]).
    """
    a = _samples(samples, 1)
    if distance == "cosine":
        return float(np.mean(1.0 - np.cos(a - x)))
    if distance == "arc":
        return float(np.mean(arc_distance(a, x)))
    raise ValueError("distance must be 'cosine' or 'arc'")


def mse(samples, y):
    """Mean squared error of linear samples around the true value."""
    s = _samples(samples, 1)
    return float(np.mean((s - y) ** 2))


@dataclass(frozen=True)
class ScoreReport:
    """Scores averaged over the missing points they apply to (NaN if none)."""

    crps_circular: float
    crps_linear: float
    ape: float
    mse: float
    n_x: int
    n_y: int


def score_imputations(output, truth, ape_distance="cosine"):
    """Score the imputed draws of a chain against the held-out values.

    Parameters
    ----------
    output : ChainOutput
    truth : Observations
        Complete data; only the entries imputed in ``output`` are used.
    """
    cc, ap = [], []
    for j, t in enumerate(output.x_missing_idx):
        draws = output.x_imputed[:, j]
        cc.append(crps_circular(draws, truth.x[t]))
        ap.append(ape(draws, truth.x[t], ape_distance))
    cl, ms = [], []
    for j, t in enumerate(output.y_missing_idx):
        draws = output.y_imputed[:, j]
        cl.append(crps_linear(draws, truth.y[t]))
        ms.append(mse(draws, truth.y[t]))

    def avg(v):
        return float(np.mean(v)) if v else float("nan")

    return ScoreReport(avg(cc), avg(cl), avg(ap), avg(ms), len(cc), len(cl))


@dataclass(frozen=True)
class RegimeSummary:
    circ_mean: float
    concentration: float
    lin_mean: float
    lin_var: float
    cl_corr_sq: float | None
    f_stat: float | None
    n: int


def f_stat(corr_sq, n):
    """``rho^2 (n - 1) / (1 - rho^2)``."""
    return corr_sq * (n - 1) / (1.0 - corr_sq)


def mardia_corr_sq(x, y):
    """Squared circular-linear correlation between angles ``x`` and values ``y``."""
    c, s = np.cos(x), np.sin(x)
    r_xc = np.corrcoef(y, c)[0, 1]
    r_xs = np.corrcoef(y, s)[0, 1]
    r_cs = np.corrcoef(c, s)[0, 1]
    val = (r_xc**2 + r_xs**2 - 2.0 * r_xc * r_xs * r_cs) / (1.0 - r_cs**2)
    return float(np.clip(val, 0.0, 1.0))


def regime_summary(p: RegimeParams, x_k, y_k, mc_draws=100_000, rng=None):
    """Interpretable features of one fitted regime.

    Parameters
    ----------
    p : RegimeParams
    x_k, y_k : array_like
        Observations classified to this regime; pairs with a missing value
        are ignored for the correlation.
    mc_draws : int
        Monte Carlo sample size for the circular mean and concentration.
    """
    if mc_draws < 10_000:
        raise ValueError("mc_draws must be at least 10000")
    rng = np.random.default_rng(rng)
    xs, _, _ = sample_clgpn(p, rng, size=mc_draws)
    c, s = np.cos(xs).mean(), np.sin(xs).mean()
    g = p.slopes
    lin_mean = p.gamma0 + float(g @ p.mean)
    lin_var = float(g @ p.cov @ g) + p.sigma_y_sq
    x_k = np.asarray(x_k, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    ok = ~(np.isnan(x_k) | np.isnan(y_k))
    n = int(ok.sum())
    corr = fs = None
    if n >= 4:
        corr = mardia_corr_sq(x_k[ok], y_k[ok])
        fs = f_stat(corr, n) if corr < 1.0 else float("inf")
    return RegimeSummary(
        circ_mean=float(wrap_angle(np.arctan2(s, c))),
        concentration=float(np.hypot(c, s)),
        lin_mean=lin_mean,
        lin_var=lin_var,
        cl_corr_sq=corr,
        f_stat=fs,
        n=n,
    )


def regime_summaries(theta, labels, obs, variant, mc_draws=100_000, seed=0):
    """:func:`regime_summary` for every regime of a plug-in estimate."""
    rng = np.random.default_rng(seed)
    params = params_from_array(theta, variant)
    lab = np.asarray(labels)[1:]
    return [regime_summary(p, obs.x[lab == k], obs.y[lab == k], mc_draws, rng) for k, p in enumerate(params)]
