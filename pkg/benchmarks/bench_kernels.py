"""Compare the compiled and pure-Python kernels.

Runs sampler steps on a simulated series with each backend, timing the whole
step and every kernel call inside it.

    python benchmarks/bench_kernels.py --T 500 --K 3 --steps 200
"""

import argparse
import time
from collections import defaultdict
from types import SimpleNamespace

import numpy as np

from clgpn import kernels
from clgpn.sampler import ChainConfig, Sampler
from clgpn.simulation import apply_missing, generate


def _timed(kern, totals):
    def wrap(name, fn):
        def inner(*args, **kwargs):
            t0 = time.perf_counter()
            out = fn(*args, **kwargs)
            totals[name] += time.perf_counter() - t0
            return out
        return inner

    return SimpleNamespace(name=kern.name, **{n: wrap(n, getattr(kern, n)) for n in kernels._NAMES})


def bench(backend, obs, K, steps, warm):
    sm = Sampler(obs, ChainConfig(K=K, iterations=steps, burnin=0, seed=1), backend=backend)
    for _ in range(warm):
        sm.step(learn=True)
    totals = defaultdict(float)
    sm.kern = _timed(sm.kern, totals)
    t0 = time.perf_counter()
    for _ in range(steps):
        sm.step(learn=True)
    total = time.perf_counter() - t0
    return total / steps, {k: v / steps for k, v in totals.items()}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=500)
    ap.add_argument("--K", type=int, default=3)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--warm", type=int, default=20)
    ap.add_argument("--missing", type=float, default=0.1)
    args = ap.parse_args(argv)

    obs, _ = generate("c", args.T, 0)
    if args.missing > 0:
        obs, _ = apply_missing(obs, args.missing, 1)
    backends = ["python"] + (["cython"] if kernels.cython_backend is not None else [])
    res = {b: bench(b, obs, args.K, args.steps, args.warm) for b in backends}

    print(f"T={args.T} K={args.K} steps={args.steps} missing={args.missing}")
    print(f"{'':18s}" + "".join(f"{b:>14s}" for b in backends) + ("       speedup" if len(backends) == 2 else ""))
    rows = [("full step", {b: res[b][0] for b in backends})]
    rows += [(n, {b: res[b][1].get(n, 0.0) for b in backends}) for n in kernels._NAMES]
    for name, per in rows:
        line = f"{name:18s}" + "".join(f"{per[b] * 1e6:11.1f} us" for b in backends)
        if len(backends) == 2 and per["cython"] > 0:
            line += f"{per['python'] / per['cython']:13.1f}x"
        print(line)
    if len(backends) == 1:
        print("compiled kernels not built; only the pure-Python backend was timed")


if __name__ == "__main__":
    main()
