"""Simulation schemes, missing-data masks and the replication study."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import map_estimate, pivotal_reorder, run_chain
from .circular import RegimeParams, Variant, sample_clgpn
from .data import Observations
from .sampler import ChainConfig
from .scoring import criteria

log = logging.getLogger(__name__)

_PI_DIAG = 0.8

# per regime, columns: mu1, mu2, sigma1_sq, rho, gamma0, gamma1, gamma2, sigma_y_sq
_TABLES = {
    "a": (
        (0.1, 0.1, 1.0, 0.9, 5.0, 1.0, 0.0, 0.1),
        (0.1, -1.0, 2.0, -0.9, 0.0, 0.0, -1.0, 0.2),
        (0.0, -0.1, 0.1, 0.2, -5.0, 1.0, 1.0, 0.5),
    ),
    "b": (
        (0.1, 0.1, 1.0, 0.9, 1.0, 1.0, 0.0, 0.1),
        (0.1, -1.0, 2.0, -0.9, 0.0, 0.0, -1.0, 0.2),
        (0.0, -0.1, 0.1, 0.2, -1.0, 1.0, 1.0, 0.5),
    ),
    "c": (
        (0.1, 0.1, 1.0, 0.0, 1.0, 1.0, 0.0, 0.1),
        (0.1, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.2),
        (0.0, -0.1, 1.0, 0.0, -1.0, 1.0, 1.0, 0.5),
    ),
}


@dataclass(frozen=True)
class Scheme:
    """A three-regime generating model."""

    id: str
    regimes: tuple
    transition: np.ndarray
    initial_state: int = 0

    @property
    def K(self):
        return len(self.regimes)

    def params_array(self):
        return np.vstack([p.as_array() for p in self.regimes])


def default_transition(K=3, diag=_PI_DIAG):
    pi = np.full((K, K), (1.0 - diag) / (K - 1))
    np.fill_diagonal(pi, diag)
    return pi


def get_scheme(scheme_id):
    """Scheme ``"a"``, ``"b"`` or ``"c"`` (case-insensitive)."""
    key = str(scheme_id).lower()
    if key not in _TABLES:
        raise ValueError(f"unknown scheme {scheme_id!r}; expected a, b or c")
    variant = Variant.CLDPN if key == "c" else Variant.CLGPN
    regimes = tuple(RegimeParams(*row, variant=variant) for row in _TABLES[key])
    return Scheme(key, regimes, default_transition(len(regimes)))


def simulate_states(pi, initial_state, T, rng):
    """Markov chain ``xi_0..xi_T`` started at ``initial_state``."""
    cum = np.cumsum(pi, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(T)
    labels = np.empty(T + 1, dtype=np.int64)
    labels[0] = initial_state
    for t in range(1, T + 1):
        labels[t] = np.searchsorted(cum[labels[t - 1]], u[t - 1], side="right")
    return labels


def generate(scheme, T, seed):
    """Simulate ``T`` observations from a scheme.

    Returns
    -------
    obs : Observations
    labels : ndarray of int, length T + 1
        True states including the initial one.
    """
    if not isinstance(scheme, Scheme):
        scheme = get_scheme(scheme)
    rng = np.random.default_rng(seed)
    labels = simulate_states(scheme.transition, scheme.initial_state, T, rng)
    x = np.empty(T)
    y = np.empty(T)
    for k, p in enumerate(scheme.regimes):
        idx = np.flatnonzero(labels[1:] == k)
        if idx.size:
            x[idx], y[idx], _ = sample_clgpn(p, rng, size=idx.size)
    return Observations(x, y), labels


def missing_count(fraction, T):
    """Number of dropped time points: ``fraction * T`` rounded half up."""
    return int(math.floor(fraction * T + 0.5))


def apply_missing(obs, fraction, seed, mode="pairs"):
    """Drop a random subset of observations.

    Parameters
    ----------
    obs : Observations
    fraction : float
        In ``[0, 1)``.
    seed : int
    mode : {"pairs", "coordinates"}
        ``"pairs"`` drops both coordinates of ``round(fraction * T)`` time
        points. ``"coordinates"`` drops that many angles and, independently,
        that many linear values.

    Returns
    -------
    obs : Observations
        Copy with NaN at the dropped entries.
    mask : ndarray of bool, shape (T, 2)
        True where a value was dropped (columns ``x``, ``y``).
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    if mode not in ("pairs", "coordinates"):
        raise ValueError("mode must be 'pairs' or 'coordinates'")
    rng = np.random.default_rng(seed)
    T = obs.T
    n = missing_count(fraction, T)
    mask = np.zeros((T, 2), dtype=bool)
    if mode == "pairs":
        mask[rng.choice(T, n, replace=False)] = True
    else:
        mask[rng.choice(T, n, replace=False), 0] = True
        mask[rng.choice(T, n, replace=False), 1] = True
    x = np.where(mask[:, 0], np.nan, obs.x)
    y = np.where(mask[:, 1], np.nan, obs.y)
    return Observations(x, y), mask


# ---------------------------------------------------------------------------
# replication study

CRITERIA = ("AIC", "BIC", "ICL")


@dataclass
class StudyConfig:
    scheme: str = "c"
    T: int = 500
    replicates: int = 10
    K_range: tuple = (2, 3, 4, 5, 6)
    variants: tuple = (Variant.CLGPN,)
    iterations: int = 50_000
    burnin: int = 20_000
    thin: int = 10
    seed: int = 0
    processes: int = 1
    chain_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        self.variants = tuple(Variant.parse(v) for v in self.variants)
        self.K_range = tuple(int(k) for k in self.K_range)
        if not self.K_range or min(self.K_range) < 1:
            raise ValueError("K_range must contain positive integers")
        get_scheme(self.scheme)


@dataclass
class FitResult:
    replicate: int
    variant: Variant
    K: int
    scores: dict | None
    error: str | None = None


def _fit_seed(seed, replicate, variant, K):
    code = {Variant.CLGPN: 0, Variant.CLDPN: 1, Variant.IND: 2}[variant]
    return int(np.random.SeedSequence([seed, replicate, code, K]).generate_state(1)[0])


def fit_and_score(obs, K, variant, seed, iterations, burnin, thin, **chain_options):
    """Fit one model and return its criteria at the MAP draw."""
    config = ChainConfig(
        K=K, variant=variant, iterations=iterations, burnin=burnin, thin=thin, seed=seed, **chain_options
    )
    out = pivotal_reorder(run_chain(obs, config))
    i = map_estimate(out)
    return criteria(out.params[i], out.labels[i], obs, variant, out.priors.beta)


def _study_job(args):
    cfg, replicate, variant, K = args
    obs, _ = generate(cfg.scheme, cfg.T, [cfg.seed, replicate])
    try:
        rep = fit_and_score(
            obs, K, variant, _fit_seed(cfg.seed, replicate, variant, K),
            cfg.iterations, cfg.burnin, cfg.thin, **cfg.chain_options,
        )
    except Exception as exc:  # recorded and excluded, never silent
        return FitResult(replicate, variant, K, None, f"{type(exc).__name__}: {exc}")
    return FitResult(replicate, variant, K, rep.as_dict())


def run_study(cfg: StudyConfig):
    """Fit every (replicate, variant, K) and select K by each criterion.

    Returns
    -------
    rows : list of dict
        One row per replicate, variant, K and criterion (failed fits carry
        an ``error`` and no value).
    table : dict
        ``table[(variant, criterion)]`` maps each K to the fraction of
        replicates selecting it, plus ``"n"``, the number of replicates with
        every fit successful.
    """
    jobs = [(cfg, r, v, K) for r in range(cfg.replicates) for v in cfg.variants for K in cfg.K_range]
    if cfg.processes == 1:
        results = [_study_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.processes) as pool:
            results = list(pool.map(_study_job, jobs))

    rows = []
    for res in results:
        if res.error is not None:
            log.warning("replicate %d %s K=%d failed: %s", res.replicate, res.variant.value, res.K, res.error)
        for crit in CRITERIA:
            rows.append(
                {
                    "replicate": res.replicate,
                    "variant": res.variant.value,
                    "K": res.K,
                    "criterion": crit,
                    "value": None if res.scores is None else res.scores[crit],
                    "selected": False,
                    "error": res.error or "",
                }
            )

    table = {}
    for v in cfg.variants:
        for crit in CRITERIA:
            counts = {K: 0 for K in cfg.K_range}
            n_ok = 0
            for r in range(cfg.replicates):
                cand = [row for row in rows if row["replicate"] == r and row["variant"] == v.value and row["criterion"] == crit]
                if any(row["value"] is None for row in cand):
                    continue
                best = min(cand, key=lambda row: (row["value"], row["K"]))
                best["selected"] = True
                counts[best["K"]] += 1
                n_ok += 1
            freq = {K: (c / n_ok if n_ok else float("nan")) for K, c in counts.items()}
            freq["n"] = n_ok
            table[(v.value, crit)] = freq
    return rows, table


def write_study_rows(path, rows, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.DictWriter(fh, fieldnames=["replicate", "variant", "K", "criterion", "value", "selected", "error"])
        w.writeheader()
        for row in rows:
            out = dict(row)
            out["value"] = "" if row["value"] is None else repr(float(row["value"]))
            w.writerow(out)


def format_study_table(table, K_range):
    """Frequency table: one row per (variant, criterion), one column per K."""
    head = ["variant", "criterion", "n"] + [f"K={K}" for K in K_range]
    lines = ["\t".join(head)]
    for (variant, crit), freq in table.items():
        cells = [variant, crit, str(freq["n"])] + [f"{freq[K]:.2f}" for K in K_range]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
