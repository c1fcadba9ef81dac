"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .chain import combine_chains, map_estimate, pivotal_reorder, run_chains, select_draws
from .circular import Variant
from .diagnostics import diagnose
from .exceptions import DataError, NumericalError
from .io import (
    CHAIN_KEYS,
    PRIOR_KEYS,
    ConfigError,
    draws_to_arrays,
    format_param_summary,
    format_transition_summary,
    parse_config,
    parse_dataset,
    provenance,
    read_draws,
    write_dataset,
    write_draws,
    write_manifest,
    write_states,
)
from .sampler import ChainConfig, Priors
from .scoring import ape, criteria, crps_circular, crps_linear, mse, regime_summaries
from .simulation import (
    StudyConfig,
    apply_missing,
    format_study_table,
    generate,
    run_study,
    write_study_rows,
)

log = logging.getLogger("clgpn")

MAX_K = 6  # exhaustive relabeling over K! permutations


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, data=True):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".", help="output directory (created if needed)")
    if data:
        p.add_argument("--degrees", action="store_true", default=None, help="directions are in degrees")
        p.add_argument("--log-linear", action="store_true", default=None, help="log-transform the linear column")
        p.add_argument("--missing-token", help="token marking a missing value (default NA)")


def _model(p):
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--K", type=int)
    p.add_argument("--chains", type=int)


def build_parser():
    parser = _Parser(prog="clgpn", description="Circular-linear hidden Markov models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a dataset from scheme a, b or c")
    _common(p, data=False)
    p.add_argument("--scheme", choices=["a", "b", "c"])
    p.add_argument("--T", type=int)

    p = sub.add_parser("fit", help="run the sampler on a dataset")
    p.add_argument("data")
    _common(p)
    _model(p)

    p = sub.add_parser("select", help="compare AIC, BIC and ICL across K")
    p.add_argument("data")
    _common(p)
    _model(p)

    p = sub.add_parser("score", help="score imputed values of a fit against held-out truth")
    p.add_argument("fit_dir")
    p.add_argument("truth", help="complete dataset in the same format as the fitted data")
    _common(p)

    p = sub.add_parser("summarize", help="regime, parameter and transition summaries of a fit")
    p.add_argument("fit_dir")
    _common(p, data=False)

    p = sub.add_parser("diagnostics", help="effective sample sizes and Geweke z-scores")
    p.add_argument("draws", nargs="+", help="draw CSV files or fit directories")
    _common(p, data=False)

    p = sub.add_parser("study", help="replicated model-selection study on simulated data")
    _common(p, data=False)
    p.add_argument("--scheme", choices=["a", "b", "c"])
    p.add_argument("--T", type=int)
    return parser


# ---------------------------------------------------------------------------
# settings


def _settings(args):
    cfg = parse_config(args.config) if getattr(args, "config", None) else {}
    for flag, key in (
        ("seed", "seed"),
        ("K", "K"),
        ("variant", "variant"),
        ("chains", "chains"),
        ("scheme", "scheme"),
        ("T", "T"),
        ("missing_token", "missing_token"),
        ("degrees", "degrees"),
        ("log_linear", "log_linear"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            cfg[key] = v
    return cfg


def _chain_config(cfg, K, variant=None):
    kw = {k: cfg[k] for k in CHAIN_KEYS if k in cfg}
    variant = variant if variant is not None else cfg.get("variant", "clgpn")
    if K is None:
        raise UsageError("the number of regimes is required (--K or K in the config)")
    if not 1 <= K <= MAX_K:
        raise UsageError(f"K must be between 1 and {MAX_K}")
    try:
        return ChainConfig(K=K, variant=variant, seed=cfg.get("seed", 0), **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _priors(cfg):
    try:
        return Priors(**{k: cfg[k] for k in PRIOR_KEYS if k in cfg})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load(args, cfg):
    return parse_dataset(
        args.data,
        degrees=bool(cfg.get("degrees", False)),
        log_linear=bool(cfg.get("log_linear", False)),
        missing_token=cfg.get("missing_token", "NA"),
    )


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_size(ds, K):
    if ds.obs.T < 2:
        raise DataError("at least two observations are required")
    if K > ds.obs.T:
        raise UsageError(f"K={K} exceeds the number of observations")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    cfg = _settings(args)
    out = _out_dir(args)
    scheme = cfg.get("scheme", "c")
    T = cfg.get("T", 500)
    seed = cfg.get("seed", 0)
    if T < 1:
        raise UsageError("T must be positive")
    t0 = time.perf_counter()
    obs, labels = generate(scheme, T, seed)
    fraction = cfg.get("missing_fraction", 0.0)
    echo = {"scheme": scheme, "T": T, "missing_fraction": fraction, "missing_mode": cfg.get("missing_mode", "pairs")}
    rid_cfg = dict(cfg, **echo)
    rid = write_manifest(out, seed, rid_cfg, wall_time=time.perf_counter() - t0)
    tag = provenance(rid)
    if fraction > 0:
        dropped, _ = apply_missing(obs, fraction, [seed, 1], mode=echo["missing_mode"])
        write_dataset(out / "truth.csv", obs, header_comment=tag)
        write_dataset(out / "data.csv", dropped, header_comment=tag)
    else:
        write_dataset(out / "data.csv", obs, header_comment=tag)
    with open(out / "states.csv", "w") as fh:
        fh.write(f"# {tag}\nt,state\n")
        for t, s in enumerate(labels):
            fh.write(f"{t},{int(s) + 1}\n")
    print(f"wrote {out / 'data.csv'} (scheme {scheme}, T={T})")
    return 0


def _fit(ds, cfg, K, variant=None):
    config = _chain_config(cfg, K, variant)
    priors = _priors(cfg)
    _check_size(ds, config.K)
    outputs = run_chains(ds.obs, config, cfg.get("chains", 1), priors, processes=cfg.get("processes"))
    return pivotal_reorder(combine_chains(outputs)), config


def cmd_fit(args):
    cfg = _settings(args)
    ds = _load(args, cfg)
    out = _out_dir(args)
    t0 = time.perf_counter()
    output, config = _fit(ds, cfg, cfg.get("K"))
    echo = dict(cfg, **config.to_dict(), **output.priors.__dict__)
    echo["command"] = "fit"
    echo["degrees"] = bool(cfg.get("degrees", False))
    echo["log_linear"] = bool(cfg.get("log_linear", False))
    echo["missing_token"] = cfg.get("missing_token", "NA")
    rid = write_manifest(
        out, config.seed, echo, ds.path, ds.sha256, time.perf_counter() - t0,
        extra={"acceptance": {k: np.asarray(v).tolist() for k, v in output.acceptance.items()}},
    )
    for c, idx in enumerate(output.chain_slices()):
        write_draws(out / f"draws_chain{c + 1}.csv", select_draws(output, idx), rid, ds.time)
    i = map_estimate(output)
    write_states(out / "map_states.csv", output.labels[i], rid, ds.time)
    rep = criteria(output.params[i], output.labels[i], ds.obs, config.variant, output.priors.beta)
    summary = [
        f"# {provenance(rid)}",
        f"{config.variant.value} K={config.K}, {output.n_draws} draws from {len(output.chain_slices())} chain(s)",
        "",
        "Posterior median (95% interval)",
        format_param_summary(output.params),
        "Transition matrix",
        format_transition_summary(output.pi, output.pi0),
        f"AIC {rep.aic:.3f}  BIC {rep.bic:.3f}  ICL {rep.icl:.3f}  parameters {rep.param_count}",
        "Acceptance: sigma1/rho " + " ".join(f"{a:.3f}" for a in np.atleast_1d(output.acceptance["sigma1_rho"]))
        + f"  radius {float(output.acceptance['radius']):.3f}",
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print((out / "summary.txt").read_text(), end="")
    return 0


def cmd_select(args):
    cfg = _settings(args)
    ds = _load(args, cfg)
    out = _out_dir(args)
    k_min = cfg.get("k_min", 2)
    k_max = cfg.get("K", cfg.get("k_max", 6))
    if not 1 <= k_min <= k_max <= MAX_K:
        raise UsageError(f"need 1 <= k_min <= k_max <= {MAX_K}")
    t0 = time.perf_counter()
    rows = []
    for K in range(k_min, k_max + 1):
        output, config = _fit(ds, cfg, K)
        i = map_estimate(output)
        rows.append((K, criteria(output.params[i], output.labels[i], ds.obs, config.variant, output.priors.beta)))
    variant = Variant.parse(cfg.get("variant", "clgpn"))
    echo = dict(cfg, command="select", k_min=k_min, k_max=k_max, variant=variant.value)
    rid = write_manifest(out, cfg.get("seed", 0), echo, ds.path, ds.sha256, time.perf_counter() - t0)
    lines = [f"# {provenance(rid)}", "K,AIC,BIC,ICL,param_count,loglik,classified_loglik"]
    for K, r in rows:
        lines.append(f"{K},{r.aic!r},{r.bic!r},{r.icl!r},{r.param_count},{r.map_loglik!r},{r.classified_loglik!r}")
    (out / "criteria.csv").write_text("\n".join(lines) + "\n")
    best = {c: min(rows, key=lambda kr: getattr(kr[1], c))[0] for c in ("aic", "bic", "icl")}
    text = [f"# {provenance(rid)}", f"{variant.value}: criteria by K (smaller is better)"]
    text.append("K     AIC          BIC          ICL")
    for K, r in rows:
        text.append(f"{K:<5} {r.aic:<12.3f} {r.bic:<12.3f} {r.icl:<12.3f}")
    text.append("selected: " + ", ".join(f"{c.upper()} K={k}" for c, k in best.items()))
    (out / "selection.txt").write_text("\n".join(text) + "\n")
    print("\n".join(text[1:]))
    return 0


def _fit_files(fit_dir):
    files = sorted(glob.glob(str(Path(fit_dir) / "draws_chain*.csv")))
    if not files:
        raise DataError(f"no draws_chain*.csv files in {fit_dir}")
    return files


def _read_manifest(fit_dir):
    path = Path(fit_dir) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _stack_draws(files):
    cols, blocks = None, []
    for f in files:
        c, v = read_draws(f)
        if cols is not None and c != cols:
            raise DataError(f"{f} has different columns from {files[0]}")
        cols = c
        blocks.append(v)
    return cols, np.vstack(blocks)


def cmd_score(args):
    cfg = _settings(args)
    out = _out_dir(args)
    manifest = _read_manifest(args.fit_dir)
    truth = parse_dataset(
        args.truth,
        degrees=bool(cfg.get("degrees", manifest["config"].get("degrees", False))),
        log_linear=bool(cfg.get("log_linear", manifest["config"].get("log_linear", False))),
        missing_token=cfg.get("missing_token", manifest["config"].get("missing_token", "NA")),
    )
    cols, vals = _stack_draws(_fit_files(args.fit_dir))
    tindex = {(str(int(t)) if float(t).is_integer() else repr(float(t))): i for i, t in enumerate(truth.time)}
    dist = cfg.get("ape_distance", "cosine")
    cc, ap, cl, ms = [], [], [], []
    for j, c in enumerate(cols):
        for prefix, is_x in (("x_imp[", True), ("y_imp[", False)):
            if c.startswith(prefix):
                t = c[len(prefix):-1]
                if t not in tindex:
                    raise DataError(f"time {t} of {c} is not in {args.truth}")
                i = tindex[t]
                if is_x:
                    cc.append(crps_circular(vals[:, j], truth.obs.x[i]))
                    ap.append(ape(vals[:, j], truth.obs.x[i], dist))
                else:
                    cl.append(crps_linear(vals[:, j], truth.obs.y[i]))
                    ms.append(mse(vals[:, j], truth.obs.y[i]))
    if not (cc or cl):
        raise DataError("the fit has no imputed values to score")

    def avg(v):
        return float(np.mean(v)) if v else float("nan")

    scores = {"crps_circular": avg(cc), "crps_linear": avg(cl), "ape": avg(ap), "mse": avg(ms)}
    echo = dict(cfg, command="score", fit_run=manifest.get("run_id"), ape_distance=dist)
    rid = write_manifest(out, manifest.get("seed"), echo, truth.path, truth.sha256)
    lines = [f"# {provenance(rid)}", "score,value,n"]
    counts = {"crps_circular": len(cc), "ape": len(ap), "crps_linear": len(cl), "mse": len(ms)}
    for k, v in scores.items():
        lines.append(f"{k},{v!r},{counts[k]}")
    (out / "scores.csv").write_text("\n".join(lines) + "\n")
    for k, v in scores.items():
        print(f"{k:14s} {v:.4f}  (n={counts[k]})")
    return 0


def cmd_summarize(args):
    cfg = _settings(args)
    out = _out_dir(args)
    manifest = _read_manifest(args.fit_dir)
    mcfg = manifest["config"]
    cols, vals = _stack_draws(_fit_files(args.fit_dir))
    params, pi, pi0 = draws_to_arrays(cols, vals)
    variant = Variant.parse(mcfg.get("variant", "clgpn"))
    lp = vals[:, cols.index("log_post")]
    i = int(np.argmax(lp))
    lines = ["Posterior median (95% interval)", format_param_summary(params)]
    lines += ["Transition matrix", format_transition_summary(pi, pi0)]
    data_path = manifest.get("input")
    states_path = Path(args.fit_dir) / "map_states.csv"
    if data_path and Path(data_path).exists() and states_path.exists():
        ds = parse_dataset(
            data_path,
            degrees=bool(mcfg.get("degrees", False)),
            log_linear=bool(mcfg.get("log_linear", False)),
            missing_token=mcfg.get("missing_token", "NA"),
        )
        _, st = read_draws(states_path)
        labels = st[:, 1].astype(np.int64) - 1
        sums = regime_summaries(params[i], labels, ds.obs, variant, cfg.get("mc_draws", 100_000), cfg.get("seed", 0))
        lines.append("Regime summaries (MAP draw)")
        lines.append("regime  n     circ_mean  concentration  lin_mean  lin_var   corr_sq  F")
        for k, s in enumerate(sums):
            corr = "NA" if s.cl_corr_sq is None else f"{s.cl_corr_sq:.3f}"
            fs = "NA" if s.f_stat is None else f"{s.f_stat:.3f}"
            lines.append(
                f"{k + 1:<7} {s.n:<5} {s.circ_mean:<10.3f} {s.concentration:<14.3f} "
                f"{s.lin_mean:<9.3f} {s.lin_var:<9.3f} {corr:<8} {fs}"
            )
    else:
        log.warning("input data or MAP states not found; regime summaries skipped")
    echo = dict(cfg, command="summarize", fit_run=manifest.get("run_id"))
    rid = write_manifest(out, manifest.get("seed"), echo)
    text = f"# {provenance(rid)}\n" + "\n".join(lines) + "\n"
    (out / "summarize.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_diagnostics(args):
    cfg = _settings(args)
    out = _out_dir(args)
    files = []
    for d in args.draws:
        files.extend(_fit_files(d) if Path(d).is_dir() else [d])
    lines = ["file,column,n,ess,geweke_z,degenerate,reliable"]
    for f in files:
        cols, vals = read_draws(f)
        for j, c in enumerate(cols):
            if c in ("iteration", "chain"):
                continue
            dg = diagnose(vals[:, j], c)
            z = "" if np.isnan(dg.geweke_z) else repr(dg.geweke_z)
            e = "" if np.isnan(dg.ess) else repr(dg.ess)
            lines.append(f"{f},{c},{dg.n},{e},{z},{int(dg.degenerate)},{int(dg.reliable)}")
    echo = dict(cfg, command="diagnostics", files=files)
    rid = write_manifest(out, cfg.get("seed"), echo)
    (out / "diagnostics.csv").write_text(f"# {provenance(rid)}\n" + "\n".join(lines) + "\n")
    unreliable = any(line.endswith(",0") for line in lines[1:])
    if unreliable:
        print("warning: fewer than 100 draws; diagnostics are unreliable")
    print(f"wrote {out / 'diagnostics.csv'}")
    return 0


def cmd_study(args):
    cfg = _settings(args)
    out = _out_dir(args)
    variants = tuple(v.strip() for v in cfg.get("variants", "clgpn").split(",") if v.strip())
    chain_opts = {k: cfg[k] for k in CHAIN_KEYS if k in cfg and k not in ("iterations", "burnin", "thin")}
    try:
        study = StudyConfig(
            scheme=cfg.get("scheme", "c"),
            T=cfg.get("T", 500),
            replicates=cfg.get("replicates", 10),
            K_range=tuple(range(cfg.get("k_min", 2), cfg.get("k_max", 6) + 1)),
            variants=variants,
            iterations=cfg.get("iterations", 50_000),
            burnin=cfg.get("burnin", 20_000),
            thin=cfg.get("thin", 10),
            seed=cfg.get("seed", 0),
            processes=cfg.get("processes", 1),
            chain_options=chain_opts,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if max(study.K_range) > MAX_K:
        raise UsageError(f"k_max must not exceed {MAX_K}")
    t0 = time.perf_counter()
    rows, table = run_study(study)
    echo = dict(cfg, command="study", variants=[v.value for v in study.variants], K_range=list(study.K_range))
    rid = write_manifest(out, study.seed, echo, wall_time=time.perf_counter() - t0)
    write_study_rows(out / "study.csv", rows, provenance(rid))
    text = format_study_table(table, study.K_range)
    (out / "study_summary.txt").write_text(f"# {provenance(rid)}\n" + text)
    print(text, end="")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "score": cmd_score,
    "summarize": cmd_summarize,
    "diagnostics": cmd_diagnostics,
    "study": cmd_study,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
