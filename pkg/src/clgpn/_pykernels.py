"""Pure Python/numpy implementations of the sampler's inner loops.

These mirror ``_ckernels.pyx`` function for function and are used when the
compiled extension is unavailable. Parameter rows follow ``PARAM_NAMES``.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
N_STATS = 10


def emission_matrix(z1, z2, y, r, xmiss, ymiss, theta):
    """Per-state log emission of ``(x_t, y_t, r_t)``, shape ``(T + 1, K)``.

    Row 0 belongs to the non-emitting initial state and is zero. Missing
    coordinates are integrated out: a missing ``y`` drops the regression
    factor, a missing ``x`` leaves the Gaussian marginal of ``y``.
    """
    T = z1.shape[0]
    K = theta.shape[0]
    out = np.zeros((T + 1, K))
    mu1, mu2, s1sq, rho, g0, g1, g2, sysq = (theta[:, j] for j in range(8))
    s1 = np.sqrt(s1sq)
    det = s1sq * (1.0 - rho * rho)
    d1 = z1[:, None] - mu1
    d2 = z2[:, None] - mu2
    quad = (d1 * d1 - 2.0 * s1 * rho * d1 * d2 + s1sq * d2 * d2) / det
    lz = -LOG_2PI - 0.5 * np.log(det) - 0.5 * quad + np.log(r)[:, None]
    resid = y[:, None] - g0 - g1 * z1[:, None] - g2 * z2[:, None]
    ly = -0.5 * (LOG_2PI + np.log(sysq) + resid * resid / sysq)
    marg_var = g1 * g1 * s1sq + 2.0 * g1 * g2 * s1 * rho + g2 * g2 + sysq
    marg_res = y[:, None] - g0 - g1 * mu1 - g2 * mu2
    lmarg = -0.5 * (LOG_2PI + np.log(marg_var) + marg_res * marg_res / marg_var)

    xm = xmiss.astype(bool)[:, None]
    ym = ymiss.astype(bool)[:, None]
    body = np.where(xm, np.where(ym, 0.0, lmarg), np.where(ym, lz, lz + ly))
    out[1:] = body
    return out


def sweep_states(log_emis, labels, beta, u):
    """One systematic collapsed-Gibbs sweep over ``labels[0..T]`` in place.

    ``u`` supplies one uniform variate per time point so that results are
    identical across backends.
    """
    T = labels.shape[0] - 1
    K = log_emis.shape[1]
    lab = [int(v) for v in labels]
    n = [[0] * K for _ in range(K)]
    occ = [0] * K
    for t in range(T + 1):
        occ[lab[t]] += 1
        if t > 0:
            n[lab[t - 1]][lab[t]] += 1
    kbeta = K * beta
    emis = log_emis.tolist()
    logw = [0.0] * K

    for t in range(T + 1):
        s = lab[t]
        sm = lab[t - 1] if t > 0 else -1
        sp = lab[t + 1] if t < T else -1
        if t > 0:
            n[sm][s] -= 1
        if t < T:
            n[s][sp] -= 1
        occ[s] -= 1
        last = lab[T]
        row = emis[t]
        for k in range(K):
            if t == 0:
                denom = occ[k] - (1 if last == k else 0) + kbeta
                val = math.log(n[k][sp] + beta) - math.log(denom)
            elif t == T:
                val = math.log(n[sm][k] + beta) + row[k]
            else:
                a = 1.0 if (sm == k and k == sp) else 0.0
                denom = occ[k] - (1 if last == k else 0) + kbeta
                val = (
                    math.log(n[sm][k] + beta + a)
                    + math.log(n[k][sp] + beta)
                    - math.log(denom)
                    + row[k]
                )
            logw[k] = val
        top = max(logw)
        total = 0.0
        cum = [0.0] * K
        for k in range(K):
            total += math.exp(logw[k] - top)
            cum[k] = total
        target = u[t] * total
        new = K - 1
        for k in range(K):
            if target < cum[k]:
                new = k
                break
        lab[t] = new
        if t > 0:
            n[sm][new] += 1
        if t < T:
            n[new][sp] += 1
        occ[new] += 1

    labels[:] = lab


def suff_stats(labels, z1, z2, y, K):
    """Per-state sufficient statistics of the complete data, shape ``(K, 10)``.

    Columns: count, sum z1, sum z2, sum z1^2, sum z1 z2, sum z2^2, sum y,
    sum y^2, sum z1 y, sum z2 y. ``labels`` has length ``T + 1``; entry 0 is
    the non-emitting initial state.
    """
    lab = labels[1:]
    cols = (np.ones_like(z1), z1, z2, z1 * z1, z1 * z2, z2 * z2, y, y * y, z1 * y, z2 * y)
    out = np.empty((K, N_STATS))
    for j, w in enumerate(cols):
        out[:, j] = np.bincount(lab, weights=w, minlength=K)
    return out


# ---------------------------------------------------------------------------
# radius and parameter blocks
#
# Random numbers are drawn by the caller and passed in so that both backends
# consume the generator identically. ``hyper`` holds
# (mu_mean, mu_var, gamma_mean, gamma_var, rho_mean, rho_var, ig_shape, ig_rate).
# Variant codes: 0 CL-GPN, 1 CL-DPN, 2 Ind-CL-GPN.

ADAPT_EXPONENT = 0.6
AM_SCALE = 2.38**2 / 2.0
AM_JITTER = 1e-6
INIT_PROPOSAL_VAR = 0.01


def radius_log_target(s, m, v):
    """Log target of ``s = log r`` when ``r`` has density prop. to ``r N(r | m, v)``."""
    return 2.0 * s - 0.5 * (np.exp(s) - m) ** 2 / v


def radius_moments(cosx, sinx, y, idx, yobs, labels, theta):
    """Mean ``m`` and variance ``v`` of the Gaussian factor of each radius conditional."""
    th = theta[labels[idx + 1]]
    s1sq, rho = th[:, 2], th[:, 3]
    s1 = np.sqrt(s1sq)
    det = s1sq * (1.0 - rho * rho)
    i11, i12, i22 = 1.0 / det, -s1 * rho / det, s1sq / det
    c, s = cosx, sinx
    a = c * c * i11 + 2.0 * c * s * i12 + s * s * i22
    b = c * (i11 * th[:, 0] + i12 * th[:, 1]) + s * (i12 * th[:, 0] + i22 * th[:, 1])
    ct = th[:, 5] * c + th[:, 6] * s
    yo = yobs.astype(bool)
    a = a + np.where(yo, ct * ct / th[:, 7], 0.0)
    b = b + np.where(yo, ct * (y[idx] - th[:, 4]) / th[:, 7], 0.0)
    v = 1.0 / a
    return v * b, v


def radius_mh(r, z1, z2, cosx, sinx, y, idx, yobs, labels, theta, log_scale, eps, u, step, target):
    """Random-walk Metropolis on ``log r_t`` at the times ``idx``; returns the acceptance count.

    ``r``, ``z1``, ``z2`` and (when ``step > 0``) ``log_scale`` are updated in place.
    """
    m, v = radius_moments(cosx, sinx, y, idx, yobs, labels, theta)
    ls = log_scale[idx]
    s = np.log(r[idx])
    s_new = s + np.exp(ls) * eps
    log_alpha = radius_log_target(s_new, m, v) - radius_log_target(s, m, v)
    accept = np.log(u) < log_alpha
    rn = np.where(accept, np.exp(s_new), r[idx])
    r[idx] = rn
    z1[idx] = rn * cosx
    z2[idx] = rn * sinx
    if step > 0:
        log_scale[idx] = ls + step * (np.exp(np.minimum(log_alpha, 0.0)) - target)
    return int(accept.sum())


def _sigma_inv(theta):
    s1sq = theta[:, 2]
    rho = theta[:, 3]
    s1 = np.sqrt(s1sq)
    det = s1sq * (1.0 - rho * rho)
    return 1.0 / det, -s1 * rho / det, s1sq / det


def mu_posterior(stats, theta, mu_mean, mu_var):
    """Mean ``(K, 2)`` and covariance ``(K, 2, 2)`` of the conditional of each ``mu_k``."""
    i11, i12, i22 = _sigma_inv(theta)
    n = stats[:, 0]
    prec0 = 1.0 / mu_var
    p11 = n * i11 + prec0
    p12 = n * i12
    p22 = n * i22 + prec0
    b1 = i11 * stats[:, 1] + i12 * stats[:, 2] + mu_mean * prec0
    b2 = i12 * stats[:, 1] + i22 * stats[:, 2] + mu_mean * prec0
    detp = p11 * p22 - p12 * p12
    cov = np.empty((theta.shape[0], 2, 2))
    cov[:, 0, 0] = p22 / detp
    cov[:, 0, 1] = cov[:, 1, 0] = -p12 / detp
    cov[:, 1, 1] = p11 / detp
    mean = np.empty((theta.shape[0], 2))
    mean[:, 0] = (p22 * b1 - p12 * b2) / detp
    mean[:, 1] = (p11 * b2 - p12 * b1) / detp
    return mean, cov


def design_moments(stats):
    """``X'X`` (K, 3, 3) and ``X'y`` (K, 3) for the design ``[1, z1, z2]``."""
    s = stats
    xtx = np.empty((s.shape[0], 3, 3))
    xtx[:, 0, 0] = s[:, 0]
    xtx[:, 0, 1] = xtx[:, 1, 0] = s[:, 1]
    xtx[:, 0, 2] = xtx[:, 2, 0] = s[:, 2]
    xtx[:, 1, 1] = s[:, 3]
    xtx[:, 1, 2] = xtx[:, 2, 1] = s[:, 4]
    xtx[:, 2, 2] = s[:, 5]
    return xtx, s[:, [6, 8, 9]]


def gamma_precision(stats, sigma_y_sq, gamma_mean, gamma_var):
    """Precision ``(K, 3, 3)`` and linear term ``(K, 3)`` of the regression conditional."""
    xtx, xty = design_moments(stats)
    prec0 = 1.0 / gamma_var
    prec = xtx / sigma_y_sq[:, None, None] + prec0 * np.eye(3)
    lin = xty / sigma_y_sq[:, None] + gamma_mean * prec0
    return prec, lin


def residual_ss(stats, gamma):
    """``sum (y - g0 - g1 z1 - g2 z2)^2`` per regime, clipped at zero."""
    xtx, xty = design_moments(stats)
    ssr = (
        stats[:, 7]
        - 2.0 * np.einsum("ki,ki->k", gamma, xty)
        + np.einsum("ki,kij,kj->k", gamma, xtx, gamma)
    )
    return np.maximum(ssr, 0.0)


def scatter_about(stats, m1, m2):
    """``sum (z - mu)(z - mu)'`` per regime as ``(S11, S12, S22)``."""
    n = stats[:, 0]
    s11 = stats[:, 3] - 2.0 * m1 * stats[:, 1] + n * m1 * m1
    s12 = stats[:, 4] - m1 * stats[:, 2] - m2 * stats[:, 1] + n * m1 * m2
    s22 = stats[:, 5] - 2.0 * m2 * stats[:, 2] + n * m2 * m2
    return s11, s12, s22


def sigma1_rho_log_target(stats, m1, m2, s1sq, rho, hyper):
    """Log conditional of ``(log sigma1_sq, atanh rho)`` up to a constant, Jacobian included."""
    s11, s12, s22 = scatter_about(stats, m1, m2)
    n = stats[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        one_m = 1.0 - rho * rho
        det = s1sq * one_m
        tr = (s11 - 2.0 * np.sqrt(s1sq) * rho * s12 + s1sq * s22) / det
        out = (
            -0.5 * n * np.log(det)
            - 0.5 * tr
            - hyper[6] * np.log(s1sq)
            - hyper[7] / s1sq
            - 0.5 * (rho - hyper[4]) ** 2 / hyper[5]
            + np.log(one_m)
        )
    return np.where(np.isfinite(out) & (s1sq > 0) & (np.abs(rho) < 1.0), out, -np.inf)


def _chol2(c11, c12, c22):
    l11 = np.sqrt(c11)
    l21 = c12 / l11
    return l11, l21, np.sqrt(np.maximum(c22 - l21 * l21, 0.0))


def update_params(stats, theta, hyper, variant, e, g, u, sr_log_scale, sr_mean, sr_cov,
                  n_adapt, adapt_window, target, learn, accepted):
    """Gibbs updates of ``mu``, ``gamma``, ``sigma_y_sq`` and a Metropolis step on ``(sigma1_sq, rho)``.

    Parameters
    ----------
    stats : (K, 10) sufficient statistics of the completed data.
    theta : (K, 8) parameters, updated in place.
    e : (K, 7) standard normals; columns 0-1 for ``mu``, 2-4 for ``gamma``,
        5-6 for the Metropolis proposal.
    g : (K,) unit-rate gamma variates with shape ``ig_shape + n_k / 2``.
    u : (K,) uniforms for the Metropolis acceptance.
    sr_log_scale, sr_mean, sr_cov : adaptation state, updated in place when ``learn``.
    accepted : (K,) uint8 output, 1 where the Metropolis proposal was accepted.

    Returns
    -------
    int
        The updated adaptation counter.
    """
    K = theta.shape[0]
    mean, cov = mu_posterior(stats, theta, hyper[0], hyper[1])
    l11, l21, l22 = _chol2(cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1])
    theta[:, 0] = mean[:, 0] + l11 * e[:, 0]
    theta[:, 1] = mean[:, 1] + l21 * e[:, 0] + l22 * e[:, 1]

    prec0 = 1.0 / hyper[3]
    if variant == 2:
        p = stats[:, 0] / theta[:, 7] + prec0
        theta[:, 4] = (stats[:, 6] / theta[:, 7] + hyper[2] * prec0) / p + e[:, 2] / np.sqrt(p)
        theta[:, 5] = theta[:, 6] = 0.0
    else:
        prec, lin = gamma_precision(stats, theta[:, 7], hyper[2], hyper[3])
        L = np.linalg.cholesky(prec)
        w = np.linalg.solve(L, lin[:, :, None])
        # mean + L^{-T} e, with mean = L^{-T} L^{-1} lin
        rhs = w + e[:, 2:5, None]
        theta[:, 4:7] = np.linalg.solve(np.swapaxes(L, 1, 2), rhs)[:, :, 0]

    ssr = residual_ss(stats, theta[:, 4:7])
    theta[:, 7] = (hyper[7] + 0.5 * ssr) / g

    accepted[:] = 1
    if variant != 0:
        return n_adapt
    if n_adapt > adapt_window:
        c11 = AM_SCALE * sr_cov[:, 0, 0] + AM_JITTER
        c12 = AM_SCALE * sr_cov[:, 0, 1]
        c22 = AM_SCALE * sr_cov[:, 1, 1] + AM_JITTER
    else:
        c11 = c22 = np.full(K, INIT_PROPOSAL_VAR)
        c12 = np.zeros(K)
    scale = np.exp(sr_log_scale)
    l11, l21, l22 = _chol2(c11, c12, c22)
    cur0 = np.log(theta[:, 2])
    cur1 = np.arctanh(theta[:, 3])
    p0 = cur0 + scale * l11 * e[:, 5]
    p1 = cur1 + scale * (l21 * e[:, 5] + l22 * e[:, 6])
    s1_new = np.exp(p0)
    rho_new = np.tanh(p1)
    m1, m2 = theta[:, 0], theta[:, 1]
    lt_cur = sigma1_rho_log_target(stats, m1, m2, theta[:, 2], theta[:, 3], hyper)
    lt_new = sigma1_rho_log_target(stats, m1, m2, s1_new, rho_new, hyper)
    log_alpha = lt_new - lt_cur
    acc = np.log(u) < log_alpha
    theta[acc, 2] = s1_new[acc]
    theta[acc, 3] = rho_new[acc]
    accepted[:] = acc
    if learn:
        n_adapt += 1
        step = n_adapt ** -ADAPT_EXPONENT
        sr_log_scale += step * (np.exp(np.minimum(log_alpha, 0.0)) - target)
        d0 = np.log(theta[:, 2]) - sr_mean[:, 0]
        d1 = np.arctanh(theta[:, 3]) - sr_mean[:, 1]
        sr_mean[:, 0] += step * d0
        sr_mean[:, 1] += step * d1
        sr_cov[:, 0, 0] += step * (d0 * d0 - sr_cov[:, 0, 0])
        sr_cov[:, 0, 1] += step * (d0 * d1 - sr_cov[:, 0, 1])
        sr_cov[:, 1, 0] = sr_cov[:, 0, 1]
        sr_cov[:, 1, 1] += step * (d1 * d1 - sr_cov[:, 1, 1])
    return n_adapt
