"""Running chains and post-processing their draws."""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import read_checkpoint, write_checkpoint
from .circular import PARAM_NAMES, Variant, params_from_array
from .data import Observations
from .exceptions import NumericalError
from .hmm import StateSequence, recover_transition
from .sampler import ChainConfig, Priors, Sampler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Draw:
    """One retained posterior sample; imputed values are keyed by array index."""

    params: list
    states: StateSequence
    x_imputed: dict
    y_imputed: dict
    log_posterior: float


@dataclass
class ChainOutput:
    """Thinned post-burn-in draws of one or more chains.

    Attributes
    ----------
    params : ndarray, shape (n, K, 8)
        Emission parameters, columns in ``PARAM_NAMES`` order.
    labels : ndarray, shape (n, T + 1)
    radii : ndarray, shape (n, T)
    x_imputed, y_imputed : ndarray, shape (n, n_missing)
        Draws of the missing coordinates at ``x_missing_idx`` / ``y_missing_idx``.
    log_post : ndarray, shape (n,)
    pi : ndarray, shape (n, K, K)
    pi0 : ndarray, shape (n, K)
    iterations : ndarray, shape (n,)
    chain : ndarray, shape (n,)
        Index of the chain each draw came from.
    """

    params: np.ndarray
    labels: np.ndarray
    radii: np.ndarray
    x_imputed: np.ndarray
    y_imputed: np.ndarray
    x_missing_idx: np.ndarray
    y_missing_idx: np.ndarray
    log_post: np.ndarray
    pi: np.ndarray
    pi0: np.ndarray
    iterations: np.ndarray
    chain: np.ndarray
    config: ChainConfig
    priors: Priors = field(default_factory=Priors)
    acceptance: dict = field(default_factory=dict)
    wall_time: float = 0.0
    permutations: np.ndarray | None = None

    @property
    def n_draws(self):
        return self.params.shape[0]

    @property
    def K(self):
        return self.params.shape[1]

    @property
    def T(self):
        return self.labels.shape[1] - 1

    @property
    def variant(self):
        return self.config.variant

    @property
    def map_index(self):
        return map_estimate(self)

    def draw(self, i):
        """Draw ``i`` as a :class:`Draw`."""
        return Draw(
            params=params_from_array(self.params[i], self.variant),
            states=StateSequence(self.labels[i], self.radii[i]),
            x_imputed=dict(zip(self.x_missing_idx.tolist(), self.x_imputed[i].tolist())),
            y_imputed=dict(zip(self.y_missing_idx.tolist(), self.y_imputed[i].tolist())),
            log_posterior=float(self.log_post[i]),
        )

    def param(self, name, k=None):
        """Draws of one named parameter, for one regime or all of them."""
        j = PARAM_NAMES.index(name)
        return self.params[:, :, j] if k is None else self.params[:, k, j]

    def chain_slices(self):
        return [np.flatnonzero(self.chain == c) for c in np.unique(self.chain)]


def _empty_buffers(n, K, T, nx, ny):
    return {
        "params": np.empty((n, K, 8)),
        "labels": np.empty((n, T + 1), dtype=np.int16),
        "radii": np.empty((n, T)),
        "x_imputed": np.empty((n, nx)),
        "y_imputed": np.empty((n, ny)),
        "log_post": np.empty(n),
        "pi": np.empty((n, K, K)),
        "pi0": np.empty((n, K)),
        "iterations": np.empty(n, dtype=np.int64),
    }


def _check_finite(sampler, lp):
    if not (np.isfinite(lp) and np.all(np.isfinite(sampler.theta)) and np.all(np.isfinite(sampler.r))):
        raise NumericalError(
            f"non-finite state at iteration {sampler.iteration} (log posterior {lp})",
            state=sampler.get_state(),
        )


def run_chain(
    obs: Observations,
    config: ChainConfig,
    priors=None,
    chain_index=0,
    backend=None,
    checkpoint_path=None,
    checkpoint_every=0,
    resume=False,
    stop_after=None,
):
    """Run one chain and return its thinned post-burn-in draws.

    Parameters
    ----------
    obs : Observations
    config : ChainConfig
    priors : Priors, optional
    chain_index : int
        The generator is seeded with ``[config.seed, chain_index]``.
    backend : str, optional
        Kernel backend name.
    checkpoint_path : path-like, optional
        Where to write checkpoints every ``checkpoint_every`` iterations.
    resume : bool
        Continue from ``checkpoint_path`` instead of starting afresh.
    stop_after : int, optional
        Stop (after checkpointing) once this iteration is reached. Used to
        test resumption.
    """
    priors = priors if priors is not None else Priors()
    t0 = time.perf_counter()
    rng = np.random.default_rng([config.seed, chain_index])
    sampler = Sampler(obs, config, priors, rng=rng, backend=backend)
    xidx = np.flatnonzero(obs.x_missing)
    yidx = np.flatnonzero(obs.y_missing)
    n = config.n_draws
    buf = _empty_buffers(n, config.K, obs.T, xidx.size, yidx.size)
    n_rec = 0
    if resume:
        state = read_checkpoint(checkpoint_path)
        sampler.set_state(state)
        n_rec = int(state["n_recorded"])
        for key in buf:
            buf[key][:n_rec] = state["draws." + key].reshape((n_rec,) + buf[key].shape[1:])

    while sampler.iteration < config.iterations:
        learn = sampler.iteration < config.burnin
        sampler.step(learn=learn)
        it = sampler.iteration
        if not np.all(np.isfinite(sampler.theta)):
            _check_finite(sampler, np.nan)
        if it > config.burnin:
            sampler.accepted_sr += sampler._last_sr_accept
            sampler.accepted_r += sampler._last_r_accept if sampler.idx_xobs.size else 0.0
            sampler.n_counted += 1
            if (it - config.burnin) % config.thin == 0:
                lp = sampler.log_posterior()
                _check_finite(sampler, lp)
                pi, pi0 = recover_transition(sampler.labels, config.K, priors.beta, sampler.rng)
                buf["params"][n_rec] = sampler.theta
                buf["labels"][n_rec] = sampler.labels
                buf["radii"][n_rec] = sampler.r
                buf["x_imputed"][n_rec] = sampler.x[xidx]
                buf["y_imputed"][n_rec] = sampler.y[yidx]
                buf["log_post"][n_rec] = lp
                buf["pi"][n_rec] = pi
                buf["pi0"][n_rec] = pi0
                buf["iterations"][n_rec] = it
                n_rec += 1
        if checkpoint_path is not None and checkpoint_every and it % checkpoint_every == 0:
            state = sampler.get_state()
            state["n_recorded"] = n_rec
            for key, arr in buf.items():
                state["draws." + key] = arr[:n_rec]
            write_checkpoint(checkpoint_path, state)
        if stop_after is not None and it >= stop_after:
            break

    counted = max(sampler.n_counted, 1)
    acceptance = {
        "sigma1_rho": sampler.accepted_sr / counted,
        "radius": sampler.accepted_r / counted,
    }
    return ChainOutput(
        **{k: v[:n_rec] for k, v in buf.items()},
        x_missing_idx=xidx,
        y_missing_idx=yidx,
        chain=np.full(n_rec, chain_index, dtype=np.int64),
        config=config,
        priors=priors,
        acceptance=acceptance,
        wall_time=time.perf_counter() - t0,
    )


def _run_one(args):
    obs, config, priors, idx, backend = args
    return run_chain(obs, config, priors, chain_index=idx, backend=backend)


def run_chains(obs, config, n_chains=1, priors=None, backend=None, processes=None):
    """Run independent chains, in parallel processes when ``processes != 1``.

    Chain ``c`` is seeded with ``[config.seed, c]`` so results do not depend
    on the number of worker processes.
    """
    jobs = [(obs, config, priors, c, backend) for c in range(n_chains)]
    if n_chains == 1 or processes == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=processes) as pool:
        return list(pool.map(_run_one, jobs))


def select_draws(output, idx):
    """Subset of the draws of ``output`` at positions ``idx``."""
    keys = ("params", "labels", "radii", "x_imputed", "y_imputed", "log_post", "pi", "pi0", "iterations", "chain")
    sub = {k: getattr(output, k)[idx] for k in keys}
    perms = None if output.permutations is None else output.permutations[idx]
    return replace(output, **sub, permutations=perms)


def combine_chains(outputs):
    """Concatenate the draws of several chains of the same model."""
    if not outputs:
        raise ValueError("no chains to combine")
    first = outputs[0]
    keys = ("params", "labels", "radii", "x_imputed", "y_imputed", "log_post", "pi", "pi0", "iterations", "chain")
    merged = {k: np.concatenate([getattr(o, k) for o in outputs]) for k in keys}
    acc = {
        "sigma1_rho": np.mean([o.acceptance["sigma1_rho"] for o in outputs], axis=0),
        "radius": float(np.mean([o.acceptance["radius"] for o in outputs])),
    }
    perms = None
    if all(o.permutations is not None for o in outputs):
        perms = np.concatenate([o.permutations for o in outputs])
    return replace(
        first,
        **merged,
        acceptance=acc,
        wall_time=sum(o.wall_time for o in outputs),
        permutations=perms,
    )


# ---------------------------------------------------------------------------
# label switching


def map_estimate(output):
    """Index of the draw with the largest log posterior (earliest on ties)."""
    if output.n_draws == 0:
        raise ValueError("no draws recorded")
    return int(np.argmax(output.log_post))


def linear_means(params):
    """``gamma0 + gamma1 mu1 + gamma2 mu2`` for parameter rows ``(..., 8)``."""
    p = np.asarray(params)
    return p[..., 4] + p[..., 5] * p[..., 0] + p[..., 6] * p[..., 1]


def apply_permutation(params, labels, pi, pi0, perm):
    """Relabel one draw: new regime ``j`` is old regime ``perm[j]``."""
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return params[perm], inv[labels], pi[np.ix_(perm, perm)], pi0[perm]


def pivotal_reorder(output):
    """Undo label switching against the MAP draw.

    The pivot is the MAP draw with regimes sorted by linear mean. Every draw
    is relabelled by the permutation whose parameter vectors are closest (sum
    of squared differences) to the pivot's; ties keep the current labelling,
    so applying the function twice changes nothing.
    """
    K = output.K
    pivot_idx = map_estimate(output)
    pivot = output.params[pivot_idx][np.argsort(linear_means(output.params[pivot_idx]), kind="stable")]
    perms = np.array(list(itertools.permutations(range(K))))
    # cost[d, p] = sum_j ||params[d, perms[p, j]] - pivot[j]||^2
    cost = ((output.params[:, perms, :] - pivot[None, None]) ** 2).sum(axis=(2, 3))
    best = np.zeros(output.n_draws, dtype=np.int64)
    best_cost = cost[:, 0].copy()
    for p in range(1, perms.shape[0]):
        better = cost[:, p] < best_cost
        best[better] = p
        best_cost[better] = cost[better, p]
    chosen = perms[best]
    params = np.empty_like(output.params)
    labels = np.empty_like(output.labels)
    pi = np.empty_like(output.pi)
    pi0 = np.empty_like(output.pi0)
    for d in range(output.n_draws):
        params[d], labels[d], pi[d], pi0[d] = apply_permutation(
            output.params[d], output.labels[d], output.pi[d], output.pi0[d], chosen[d]
        )
    prev = output.permutations
    composed = chosen if prev is None else np.take_along_axis(prev, chosen, axis=1)
    return replace(output, params=params, labels=labels, pi=pi, pi0=pi0, permutations=composed)


def posterior_summary(output, probs=(0.025, 0.5, 0.975)):
    """Quantiles of every parameter, shape ``(len(probs), K, 8)``."""
    return np.quantile(output.params, probs, axis=0)


def fit(obs, K, variant=Variant.CLGPN, n_chains=1, priors=None, processes=None, backend=None, **config_kw):
    """Run chains, merge them and undo label switching."""
    config = ChainConfig(K=K, variant=variant, **config_kw)
    outputs = run_chains(obs, config, n_chains, priors, backend, processes)
    return pivotal_reorder(combine_chains(outputs))
