"""Minimal convergence diagnostics: effective sample size and Geweke z-scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circular import PARAM_NAMES

MIN_RELIABLE = 100


def autocorrelation(x):
    """Sample autocorrelation at all lags via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    f = np.fft.rfft(d, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def ess(x):
    """Effective sample size with Geyer's initial monotone sequence estimator.

    Sums of adjacent autocorrelation pairs are accumulated while positive
    and forced to be non-increasing. Capped at the number of draws; a
    constant trace returns ``nan``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.ptp(x) == 0:
        return float("nan")
    rho = autocorrelation(x)
    tau = -1.0
    prev = np.inf
    for m in range(0, n - 1, 2):
        pair = rho[m] + rho[m + 1]
        if pair <= 0:
            break
        prev = min(prev, pair)
        tau += 2.0 * prev
    tau = max(tau, 1.0 / n)
    return float(min(n / tau, n))


def _spectral_var_mean(x):
    """Variance of the mean of ``x`` accounting for autocorrelation."""
    e = ess(x)
    return float(np.var(x, ddof=1) / e)


def geweke(x, first=0.1, last=0.5):
    """Geweke z-score comparing the means of the first and last segments."""
    x = np.asarray(x, dtype=float)
    n = x.size
    a = x[: int(first * n)]
    b = x[n - int(last * n):]
    if a.size < 4 or b.size < 4 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan")
    return float((a.mean() - b.mean()) / np.sqrt(_spectral_var_mean(a) + _spectral_var_mean(b)))


@dataclass(frozen=True)
class TraceDiagnostic:
    name: str
    n: int
    ess: float
    geweke_z: float
    degenerate: bool
    reliable: bool


def diagnose(trace, name=""):
    """ESS and Geweke z of one trace, with flags for constant or short traces."""
    x = np.asarray(trace, dtype=float)
    degenerate = x.size == 0 or np.ptp(x) == 0
    return TraceDiagnostic(
        name=name,
        n=x.size,
        ess=float("nan") if degenerate else ess(x),
        geweke_z=float("nan") if degenerate else geweke(x),
        degenerate=bool(degenerate),
        reliable=x.size >= MIN_RELIABLE,
    )


def diagnose_output(output):
    """Diagnostics for every parameter of every regime plus the log posterior."""
    out = [diagnose(output.log_post, "log_post")]
    for k in range(output.K):
        for j, name in enumerate(PARAM_NAMES):
            out.append(diagnose(output.params[:, k, j], f"{name}[{k + 1}]"))
    return out
