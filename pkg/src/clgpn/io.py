"""Reading datasets and configs, writing run artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .circular import PARAM_NAMES
from .data import Observations
from .exceptions import DataError


class ConfigError(ValueError):
    """Invalid configuration file or option (a usage error)."""


@dataclass
class Dataset:
    time: np.ndarray
    obs: Observations
    path: str | None = None
    sha256: str | None = None


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_value(text, token, lineno, what):
    text = text.strip()
    if text == token:
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"cannot parse {what} value {text!r}", line=lineno) from None
    if not math.isfinite(v):
        raise DataError(f"{what} value must be finite", line=lineno)
    return v


def parse_dataset(path, degrees=False, log_linear=False, missing_token="NA"):
    """Read a ``time,direction,linear`` CSV file.

    The first row is a header. ``missing_token`` marks a missing direction
    or linear value. Directions are in radians unless ``degrees`` is set;
    ``log_linear`` replaces the linear column by its natural log.
    """
    path = Path(path)
    times, xs, ys = [], [], []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in row]
                if len(header) != 3:
                    raise DataError("header must name exactly three columns: time, direction, linear", line=lineno)
                try:
                    float(header[0])
                except ValueError:
                    continue
                raise DataError("first row must be a header naming the columns", line=lineno)
            if len(row) != 3:
                raise DataError(f"expected 3 fields, found {len(row)}", line=lineno)
            t = _parse_value(row[0], None, lineno, "time")
            x = _parse_value(row[1], missing_token, lineno, "direction")
            y = _parse_value(row[2], missing_token, lineno, "linear")
            if times and t <= times[-1]:
                raise DataError("time values must be strictly increasing", line=lineno)
            if degrees and not math.isnan(x):
                x = math.radians(x)
            if log_linear and not math.isnan(y):
                if y <= 0:
                    raise DataError("log transform requires positive linear values", line=lineno)
                y = math.log(y)
            times.append(t)
            xs.append(x)
            ys.append(y)
    if header is None:
        raise DataError(f"{path} is empty")
    if not times:
        raise DataError(f"{path} has no data rows")
    return Dataset(np.array(times), Observations(xs, ys), str(path), file_sha256(path))


def _fmt(v, token="NA"):
    return token if math.isnan(v) else repr(float(v))


def write_dataset(path, obs, time=None, missing_token="NA", header_comment=None):
    """Write observations as ``t,x,y`` with angles in radians."""
    time = np.arange(1, obs.T + 1) if time is None else time
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("t,x,y\n")
        for t, x, y in zip(time, obs.x, obs.y):
            ts = str(int(t)) if float(t).is_integer() else repr(float(t))
            fh.write(f"{ts},{_fmt(x, missing_token)},{_fmt(y, missing_token)}\n")


# ---------------------------------------------------------------------------
# configuration

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}

CONFIG_KEYS = {
    # chain
    "iterations": int,
    "burnin": int,
    "thin": int,
    "adapt_window": int,
    "target_accept": float,
    "target_accept_r": float,
    "radius_update": str,
    "init_sweeps": int,
    "K": int,
    "variant": str,
    "seed": int,
    "chains": int,
    "processes": int,
    # priors
    "mu_mean": float,
    "mu_var": float,
    "gamma_mean": float,
    "gamma_var": float,
    "rho_mean": float,
    "rho_var": float,
    "ig_shape": float,
    "ig_rate": float,
    "beta": float,
    # data
    "missing_token": str,
    "degrees": bool,
    "log_linear": bool,
    # selection, simulation, scoring
    "k_min": int,
    "k_max": int,
    "scheme": str,
    "T": int,
    "missing_fraction": float,
    "missing_mode": str,
    "replicates": int,
    "variants": str,
    "mc_draws": int,
    "ape_distance": str,
}

CHAIN_KEYS = ("iterations", "burnin", "thin", "adapt_window", "target_accept", "target_accept_r",
              "radius_update", "init_sweeps")
PRIOR_KEYS = ("mu_mean", "mu_var", "gamma_mean", "gamma_var", "rho_mean", "rho_var", "ig_shape", "ig_rate", "beta")


def parse_config(path):
    """Parse a ``key = value`` file; ``#`` starts a comment, unknown keys are rejected."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = _convert(key, value, f"{path}:{lineno}")
    return out


def _convert(key, value, where):
    kind = CONFIG_KEYS[key]
    try:
        if kind is bool:
            return _BOOL[value.lower()]
        return kind(value)
    except (KeyError, ValueError):
        raise ConfigError(f"{where}: invalid value {value!r} for {key}") from None


# ---------------------------------------------------------------------------
# run artifacts


def run_id(seed, config, input_sha=None):
    """Deterministic identifier of a run from its seed, config and input."""
    blob = json.dumps({"seed": seed, "config": config, "input": input_sha}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_manifest(out_dir, seed, config, input_path=None, input_sha=None, wall_time=None, extra=None):
    rid = run_id(seed, config, input_sha)
    manifest = {
        "run_id": rid,
        "version": __version__,
        "seed": seed,
        "config": config,
        "input": input_path,
        "input_sha256": input_sha,
        "wall_time_seconds": wall_time,
    }
    if extra:
        manifest.update(extra)
    with open(Path(out_dir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return rid


def provenance(rid):
    return f"run_id={rid} manifest=manifest.json"


def draw_columns(K, n_x=0, n_y=0, x_times=(), y_times=()):
    cols = ["iteration", "chain", "log_post"]
    cols += [f"{name}[{k + 1}]" for k in range(K) for name in PARAM_NAMES]
    cols += [f"pi[{i + 1}][{j + 1}]" for i in range(K) for j in range(K)]
    cols += [f"pi0[{k + 1}]" for k in range(K)]
    cols += [f"x_imp[{t}]" for t in x_times]
    cols += [f"y_imp[{t}]" for t in y_times]
    return cols


def write_draws(path, output, rid, time=None):
    """One row per retained draw; regime indices and times are 1-based."""
    T = output.T
    time = np.arange(1, T + 1) if time is None else np.asarray(time)

    def tlabel(i):
        t = time[i]
        return str(int(t)) if float(t).is_integer() else repr(float(t))

    cols = draw_columns(
        output.K,
        x_times=[tlabel(i) for i in output.x_missing_idx],
        y_times=[tlabel(i) for i in output.y_missing_idx],
    )
    with open(path, "w", newline="") as fh:
        fh.write(f"# {provenance(rid)}\n")
        fh.write(",".join(cols) + "\n")
        for d in range(output.n_draws):
            vals = [str(int(output.iterations[d])), str(int(output.chain[d])), repr(float(output.log_post[d]))]
            vals += [repr(float(v)) for v in output.params[d].ravel()]
            vals += [repr(float(v)) for v in output.pi[d].ravel()]
            vals += [repr(float(v)) for v in output.pi0[d]]
            vals += [repr(float(v)) for v in output.x_imputed[d]]
            vals += [repr(float(v)) for v in output.y_imputed[d]]
            fh.write(",".join(vals) + "\n")


def read_draws(path):
    """Read a draws CSV into ``(columns, values)``; the provenance line is skipped."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path} contains no header")
    cols = lines[0].strip().split(",")
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.strip().split(",")
        if len(parts) != len(cols):
            raise DataError(f"expected {len(cols)} fields, found {len(parts)}", line=i)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise DataError("non-numeric value", line=i) from None
    return cols, np.array(rows, dtype=float).reshape(len(rows), len(cols))


def draws_to_arrays(cols, values):
    """Recover ``params (n, K, 8)``, ``pi (n, K, K)`` and ``pi0 (n, K)`` from draw columns."""
    K = sum(1 for c in cols if c.startswith("pi0["))
    if K == 0:
        raise DataError("draw file has no pi0 columns")
    idx = {c: i for i, c in enumerate(cols)}
    try:
        params = np.stack(
            [np.column_stack([values[:, idx[f"{name}[{k + 1}]"]] for name in PARAM_NAMES]) for k in range(K)],
            axis=1,
        )
        pi = np.stack(
            [np.column_stack([values[:, idx[f"pi[{i + 1}][{j + 1}]"]] for j in range(K)]) for i in range(K)],
            axis=1,
        )
        pi0 = np.column_stack([values[:, idx[f"pi0[{k + 1}]"]] for k in range(K)])
    except KeyError as exc:
        raise DataError(f"draw file is missing column {exc.args[0]}") from None
    return params, pi, pi0


def write_states(path, labels, rid, time=None):
    """MAP state sequence, 1-based regimes; time 0 is the initial state."""
    T = labels.size - 1
    time = np.arange(1, T + 1) if time is None else time
    with open(path, "w") as fh:
        fh.write(f"# {provenance(rid)}\n")
        fh.write("t,state\n")
        fh.write(f"0,{int(labels[0]) + 1}\n")
        for t, s in zip(time, labels[1:]):
            ts = str(int(t)) if float(t).is_integer() else repr(float(t))
            fh.write(f"{ts},{int(s) + 1}\n")


def _cell(draws):
    lo, med, hi = np.quantile(draws, [0.025, 0.5, 0.975])
    return f"{med:.3f} ({lo:.3f}, {hi:.3f})"


def format_param_summary(params):
    """Posterior median and central 95% interval per parameter (rows) and regime (columns)."""
    K = params.shape[1]
    head = ["parameter"] + [f"regime {k + 1}" for k in range(K)]
    rows = [head]
    for j, name in enumerate(PARAM_NAMES):
        rows.append([name] + [_cell(params[:, k, j]) for k in range(K)])
    return _align(rows)


def format_transition_summary(pi, pi0):
    """Transition matrix medians and 95% intervals, rows ``from``, columns ``to``."""
    K = pi.shape[1]
    rows = [["from \\ to"] + [f"{j + 1}" for j in range(K)]]
    for i in range(K):
        rows.append([str(i + 1)] + [_cell(pi[:, i, j]) for j in range(K)])
    rows.append(["initial"] + [_cell(pi0[:, j]) for j in range(K)])
    return _align(rows)


def _align(rows):
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows) + "\n"
