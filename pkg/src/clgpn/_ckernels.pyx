# cython: language_level=3
"""Compiled inner loops of the sampler; see ``_pykernels`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, sqrt, tanh, atanh, fmin, fmax, INFINITY, isfinite

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
N_STATS = 10

cdef double ADAPT_EXPONENT = 0.6
cdef double AM_SCALE = 2.38 * 2.38 / 2.0
cdef double AM_JITTER = 1e-6
cdef double INIT_PROPOSAL_VAR = 0.01


def emission_matrix(const double[::1] z1, const double[::1] z2, const double[::1] y,
                    const double[::1] r, const cnp.uint8_t[::1] xmiss,
                    const cnp.uint8_t[::1] ymiss, const double[:, ::1] theta):
    cdef Py_ssize_t T = z1.shape[0]
    cdef Py_ssize_t K = theta.shape[0]
    cdef Py_ssize_t t, k
    out_arr = np.zeros((T + 1, K))
    cdef double[:, ::1] out = out_arr
    cdef double mu1, mu2, s1sq, rho, g0, g1, g2, sysq, s1, det, logdet
    cdef double d1, d2, quad, lz, resid, ly, marg_var, marg_res, lmarg, logsy
    for k in range(K):
        mu1 = theta[k, 0]
        mu2 = theta[k, 1]
        s1sq = theta[k, 2]
        rho = theta[k, 3]
        g0 = theta[k, 4]
        g1 = theta[k, 5]
        g2 = theta[k, 6]
        sysq = theta[k, 7]
        s1 = sqrt(s1sq)
        det = s1sq * (1.0 - rho * rho)
        logdet = log(det)
        logsy = log(sysq)
        marg_var = g1 * g1 * s1sq + 2.0 * g1 * g2 * s1 * rho + g2 * g2 + sysq
        for t in range(T):
            if xmiss[t]:
                if ymiss[t]:
                    out[t + 1, k] = 0.0
                else:
                    marg_res = y[t] - g0 - g1 * mu1 - g2 * mu2
                    out[t + 1, k] = -0.5 * (LOG_2PI + log(marg_var) + marg_res * marg_res / marg_var)
                continue
            d1 = z1[t] - mu1
            d2 = z2[t] - mu2
            quad = (d1 * d1 - 2.0 * s1 * rho * d1 * d2 + s1sq * d2 * d2) / det
            lz = -LOG_2PI - 0.5 * logdet - 0.5 * quad + log(r[t])
            if ymiss[t]:
                out[t + 1, k] = lz
            else:
                resid = y[t] - g0 - g1 * z1[t] - g2 * z2[t]
                ly = -0.5 * (LOG_2PI + logsy + resid * resid / sysq)
                out[t + 1, k] = lz + ly
    return out_arr


def sweep_states(const double[:, ::1] log_emis, cnp.int64_t[::1] labels, double beta,
                 const double[::1] u):
    cdef Py_ssize_t T = labels.shape[0] - 1
    cdef Py_ssize_t K = log_emis.shape[1]
    cdef Py_ssize_t t, k, s, sm, sp, last, new
    cdef double kbeta = K * beta
    cdef double a, denom, val, top, total, target
    n_arr = np.zeros((K, K), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] n = n_arr
    occ_arr = np.zeros(K, dtype=np.int64)
    cdef cnp.int64_t[::1] occ = occ_arr
    logw_arr = np.empty(K)
    cdef double[::1] logw = logw_arr
    cum_arr = np.empty(K)
    cdef double[::1] cum = cum_arr

    for t in range(T + 1):
        occ[labels[t]] += 1
        if t > 0:
            n[labels[t - 1], labels[t]] += 1

    for t in range(T + 1):
        s = labels[t]
        sm = labels[t - 1] if t > 0 else -1
        sp = labels[t + 1] if t < T else -1
        if t > 0:
            n[sm, s] -= 1
        if t < T:
            n[s, sp] -= 1
        occ[s] -= 1
        last = labels[T]
        for k in range(K):
            if t == 0:
                denom = occ[k] - (1 if last == k else 0) + kbeta
                val = log(n[k, sp] + beta) - log(denom)
            elif t == T:
                val = log(n[sm, k] + beta) + log_emis[t, k]
            else:
                a = 1.0 if (sm == k and k == sp) else 0.0
                denom = occ[k] - (1 if last == k else 0) + kbeta
                val = (log(n[sm, k] + beta + a) + log(n[k, sp] + beta)
                       - log(denom) + log_emis[t, k])
            logw[k] = val
        top = logw[0]
        for k in range(1, K):
            if logw[k] > top:
                top = logw[k]
        total = 0.0
        for k in range(K):
            total += exp(logw[k] - top)
            cum[k] = total
        target = u[t] * total
        new = K - 1
        for k in range(K):
            if target < cum[k]:
                new = k
                break
        labels[t] = new
        if t > 0:
            n[sm, new] += 1
        if t < T:
            n[new, sp] += 1
        occ[new] += 1


def suff_stats(const cnp.int64_t[::1] labels, const double[::1] z1, const double[::1] z2,
               const double[::1] y, Py_ssize_t K):
    cdef Py_ssize_t T = z1.shape[0]
    cdef Py_ssize_t t, k
    cdef double a, b, c
    out_arr = np.zeros((K, N_STATS))
    cdef double[:, ::1] out = out_arr
    for t in range(T):
        k = labels[t + 1]
        a = z1[t]
        b = z2[t]
        c = y[t]
        out[k, 0] += 1.0
        out[k, 1] += a
        out[k, 2] += b
        out[k, 3] += a * a
        out[k, 4] += a * b
        out[k, 5] += b * b
        out[k, 6] += c
        out[k, 7] += c * c
        out[k, 8] += a * c
        out[k, 9] += b * c
    return out_arr


cdef inline double _radius_target(double s, double m, double v) nogil:
    cdef double d = exp(s) - m
    return 2.0 * s - 0.5 * d * d / v


def radius_mh(double[::1] r, double[::1] z1, double[::1] z2, const double[::1] cosx,
              const double[::1] sinx, const double[::1] y, const cnp.int64_t[::1] idx,
              const cnp.uint8_t[::1] yobs, const cnp.int64_t[::1] labels,
              const double[:, ::1] theta, double[::1] log_scale, const double[::1] eps,
              const double[::1] u, double step, double target):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t i, t, k
    cdef double s1sq, rho, s1, det, i11, i12, i22, c, sn, a, b, ct, v, m
    cdef double s_cur, s_new, la, rn
    cdef long accepted = 0
    for i in range(n):
        t = idx[i]
        k = labels[t + 1]
        s1sq = theta[k, 2]
        rho = theta[k, 3]
        s1 = sqrt(s1sq)
        det = s1sq * (1.0 - rho * rho)
        i11 = 1.0 / det
        i12 = -s1 * rho / det
        i22 = s1sq / det
        c = cosx[i]
        sn = sinx[i]
        a = c * c * i11 + 2.0 * c * sn * i12 + sn * sn * i22
        b = c * (i11 * theta[k, 0] + i12 * theta[k, 1]) + sn * (i12 * theta[k, 0] + i22 * theta[k, 1])
        if yobs[i]:
            ct = theta[k, 5] * c + theta[k, 6] * sn
            a = a + ct * ct / theta[k, 7]
            b = b + ct * (y[t] - theta[k, 4]) / theta[k, 7]
        v = 1.0 / a
        m = v * b
        s_cur = log(r[t])
        s_new = s_cur + exp(log_scale[t]) * eps[i]
        la = _radius_target(s_new, m, v) - _radius_target(s_cur, m, v)
        if log(u[i]) < la:
            rn = exp(s_new)
            r[t] = rn
            z1[t] = rn * c
            z2[t] = rn * sn
            accepted += 1
        if step > 0:
            log_scale[t] = log_scale[t] + step * (exp(fmin(la, 0.0)) - target)
    return accepted


cdef double _sr_target(const double[:, ::1] st, Py_ssize_t k, double m1, double m2,
                       double s1sq, double rho, const double[::1] hyper) nogil:
    cdef double n = st[k, 0]
    cdef double s11, s12, s22, one_m, det, tr, out
    if not (s1sq > 0.0 and rho > -1.0 and rho < 1.0):
        return -INFINITY
    s11 = st[k, 3] - 2.0 * m1 * st[k, 1] + n * m1 * m1
    s12 = st[k, 4] - m1 * st[k, 2] - m2 * st[k, 1] + n * m1 * m2
    s22 = st[k, 5] - 2.0 * m2 * st[k, 2] + n * m2 * m2
    one_m = 1.0 - rho * rho
    det = s1sq * one_m
    tr = (s11 - 2.0 * sqrt(s1sq) * rho * s12 + s1sq * s22) / det
    out = (-0.5 * n * log(det) - 0.5 * tr - hyper[6] * log(s1sq) - hyper[7] / s1sq
           - 0.5 * (rho - hyper[4]) * (rho - hyper[4]) / hyper[5] + log(one_m))
    if not isfinite(out):
        return -INFINITY
    return out


def update_params(const double[:, ::1] stats, double[:, ::1] theta, const double[::1] hyper,
                  int variant, const double[:, ::1] e, const double[::1] g, const double[::1] u,
                  double[::1] sr_log_scale, double[:, ::1] sr_mean, double[:, :, ::1] sr_cov,
                  long n_adapt, long adapt_window, double target, bint learn,
                  cnp.uint8_t[::1] accepted):
    cdef Py_ssize_t K = theta.shape[0]
    cdef Py_ssize_t k, i, j
    cdef double s1sq, rho, s1, det, i11, i12, i22, n, prec0, p11, p12, p22, b1, b2, detp
    cdef double c11, c12, c22, l11, l21, l22, m1, m2, p, sysq, ssr
    cdef double P[3][3]
    cdef double L[3][3]
    cdef double lin[3]
    cdef double w[3]
    cdef double gam[3]
    cdef double xty[3]
    cdef double X[3][3]
    cdef double cur0, cur1, p0, p1, s1_new, rho_new, lt_cur, lt_new, la, step, d0, d1, scale
    cdef bint do_learn = learn

    if variant == 0 and learn:
        n_adapt += 1
    step = (<double> n_adapt) ** (-ADAPT_EXPONENT) if n_adapt > 0 else 0.0

    for k in range(K):
        n = stats[k, 0]
        # mu
        s1sq = theta[k, 2]
        rho = theta[k, 3]
        s1 = sqrt(s1sq)
        det = s1sq * (1.0 - rho * rho)
        i11 = 1.0 / det
        i12 = -s1 * rho / det
        i22 = s1sq / det
        prec0 = 1.0 / hyper[1]
        p11 = n * i11 + prec0
        p12 = n * i12
        p22 = n * i22 + prec0
        b1 = i11 * stats[k, 1] + i12 * stats[k, 2] + hyper[0] * prec0
        b2 = i12 * stats[k, 1] + i22 * stats[k, 2] + hyper[0] * prec0
        detp = p11 * p22 - p12 * p12
        c11 = p22 / detp
        c12 = -p12 / detp
        c22 = p11 / detp
        l11 = sqrt(c11)
        l21 = c12 / l11
        l22 = sqrt(fmax(c22 - l21 * l21, 0.0))
        theta[k, 0] = (p22 * b1 - p12 * b2) / detp + l11 * e[k, 0]
        theta[k, 1] = (p11 * b2 - p12 * b1) / detp + l21 * e[k, 0] + l22 * e[k, 1]

        # gamma
        sysq = theta[k, 7]
        prec0 = 1.0 / hyper[3]
        X[0][0] = n
        X[0][1] = stats[k, 1]
        X[0][2] = stats[k, 2]
        X[1][1] = stats[k, 3]
        X[1][2] = stats[k, 4]
        X[2][2] = stats[k, 5]
        X[1][0] = X[0][1]
        X[2][0] = X[0][2]
        X[2][1] = X[1][2]
        xty[0] = stats[k, 6]
        xty[1] = stats[k, 8]
        xty[2] = stats[k, 9]
        if variant == 2:
            p = n / sysq + prec0
            theta[k, 4] = (xty[0] / sysq + hyper[2] * prec0) / p + e[k, 2] / sqrt(p)
            theta[k, 5] = 0.0
            theta[k, 6] = 0.0
        else:
            for i in range(3):
                lin[i] = xty[i] / sysq + hyper[2] * prec0
                for j in range(3):
                    P[i][j] = X[i][j] / sysq + (prec0 if i == j else 0.0)
            # Cholesky P = L L'
            L[0][0] = sqrt(P[0][0])
            L[1][0] = P[1][0] / L[0][0]
            L[2][0] = P[2][0] / L[0][0]
            L[1][1] = sqrt(P[1][1] - L[1][0] * L[1][0])
            L[2][1] = (P[2][1] - L[2][0] * L[1][0]) / L[1][1]
            L[2][2] = sqrt(P[2][2] - L[2][0] * L[2][0] - L[2][1] * L[2][1])
            # w = L^{-1} lin, then gamma = L^{-T} (w + e)
            w[0] = lin[0] / L[0][0]
            w[1] = (lin[1] - L[1][0] * w[0]) / L[1][1]
            w[2] = (lin[2] - L[2][0] * w[0] - L[2][1] * w[1]) / L[2][2]
            for i in range(3):
                w[i] = w[i] + e[k, 2 + i]
            gam[2] = w[2] / L[2][2]
            gam[1] = (w[1] - L[2][1] * gam[2]) / L[1][1]
            gam[0] = (w[0] - L[1][0] * gam[1] - L[2][0] * gam[2]) / L[0][0]
            theta[k, 4] = gam[0]
            theta[k, 5] = gam[1]
            theta[k, 6] = gam[2]

        # sigma_y_sq
        gam[0] = theta[k, 4]
        gam[1] = theta[k, 5]
        gam[2] = theta[k, 6]
        ssr = stats[k, 7] - 2.0 * (gam[0] * xty[0] + gam[1] * xty[1] + gam[2] * xty[2])
        for i in range(3):
            for j in range(3):
                ssr = ssr + gam[i] * X[i][j] * gam[j]
        ssr = fmax(ssr, 0.0)
        theta[k, 7] = (hyper[7] + 0.5 * ssr) / g[k]

        accepted[k] = 1
        if variant != 0:
            continue

        # (sigma1_sq, rho)
        if n_adapt - (1 if do_learn else 0) > adapt_window:
            c11 = AM_SCALE * sr_cov[k, 0, 0] + AM_JITTER
            c12 = AM_SCALE * sr_cov[k, 0, 1]
            c22 = AM_SCALE * sr_cov[k, 1, 1] + AM_JITTER
        else:
            c11 = INIT_PROPOSAL_VAR
            c12 = 0.0
            c22 = INIT_PROPOSAL_VAR
        scale = exp(sr_log_scale[k])
        l11 = sqrt(c11)
        l21 = c12 / l11
        l22 = sqrt(fmax(c22 - l21 * l21, 0.0))
        cur0 = log(theta[k, 2])
        cur1 = atanh(theta[k, 3])
        p0 = cur0 + scale * l11 * e[k, 5]
        p1 = cur1 + scale * (l21 * e[k, 5] + l22 * e[k, 6])
        s1_new = exp(p0)
        rho_new = tanh(p1)
        m1 = theta[k, 0]
        m2 = theta[k, 1]
        lt_cur = _sr_target(stats, k, m1, m2, theta[k, 2], theta[k, 3], hyper)
        lt_new = _sr_target(stats, k, m1, m2, s1_new, rho_new, hyper)
        la = lt_new - lt_cur
        if log(u[k]) < la:
            theta[k, 2] = s1_new
            theta[k, 3] = rho_new
            accepted[k] = 1
        else:
            accepted[k] = 0
        if do_learn:
            sr_log_scale[k] = sr_log_scale[k] + step * (exp(fmin(la, 0.0)) - target)
            d0 = log(theta[k, 2]) - sr_mean[k, 0]
            d1 = atanh(theta[k, 3]) - sr_mean[k, 1]
            sr_mean[k, 0] = sr_mean[k, 0] + step * d0
            sr_mean[k, 1] = sr_mean[k, 1] + step * d1
            sr_cov[k, 0, 0] = sr_cov[k, 0, 0] + step * (d0 * d0 - sr_cov[k, 0, 0])
            sr_cov[k, 0, 1] = sr_cov[k, 0, 1] + step * (d0 * d1 - sr_cov[k, 0, 1])
            sr_cov[k, 1, 0] = sr_cov[k, 0, 1]
            sr_cov[k, 1, 1] = sr_cov[k, 1, 1] + step * (d1 * d1 - sr_cov[k, 1, 1])
    return n_adapt
