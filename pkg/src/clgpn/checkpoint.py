"""Plain-text checkpoints.

One ``key=value`` line per entry. Scalars are written as-is (floats with
``repr``, which round-trips exactly). Arrays are written as
``key=array:<dtype>:<shape>:<values>`` with row-major values separated by
spaces and the shape as ``d0xd1x...``.
"""

import os

import numpy as np

HEADER = "# clgpn checkpoint v1"


def _fmt_scalar(v):
    if isinstance(v, (bool, np.bool_)):
        return "bool:" + str(int(v))
    if isinstance(v, (int, np.integer)):
        return "int:" + str(int(v))
    if isinstance(v, (float, np.floating)):
        return "float:" + repr(float(v))
    if isinstance(v, str):
        if "\n" in v:
            raise ValueError("string values cannot contain newlines")
        return "str:" + v
    raise TypeError(f"unsupported checkpoint value of type {type(v).__name__}")


def _fmt_array(a):
    a = np.asarray(a)
    if a.dtype.kind == "f":
        vals = " ".join(repr(float(v)) for v in a.ravel())
        dtype = "float64"
    elif a.dtype.kind in "iub":
        vals = " ".join(str(int(v)) for v in a.ravel())
        dtype = str(a.dtype)
    else:
        raise TypeError(f"unsupported array dtype {a.dtype}")
    shape = "x".join(str(d) for d in a.shape)
    return f"array:{dtype}:{shape}:{vals}"


def write_checkpoint(path, state):
    """Write a flat dict of scalars and arrays."""
    lines = [HEADER]
    for key in sorted(state):
        if "=" in key or "\n" in key:
            raise ValueError(f"invalid key {key!r}")
        v = state[key]
        lines.append(f"{key}=" + (_fmt_array(v) if isinstance(v, np.ndarray) else _fmt_scalar(v)))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_checkpoint(path):
    """Inverse of :func:`write_checkpoint`."""
    out = {}
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != HEADER:
            raise ValueError(f"{path} is not a checkpoint file")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            key, sep, rest = line.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected key=value")
            kind, _, body = rest.partition(":")
            if kind == "array":
                dtype, shape, vals = body.split(":", 2)
                shape = tuple(int(d) for d in shape.split("x")) if shape else ()
                arr = np.array(vals.split(), dtype=dtype) if vals else np.empty(0, dtype=dtype)
                out[key] = arr.reshape(shape)
            elif kind == "int":
                out[key] = int(body)
            elif kind == "float":
                out[key] = float(body)
            elif kind == "bool":
                out[key] = bool(int(body))
            elif kind == "str":
                out[key] = body
            else:
                raise ValueError(f"line {lineno}: unknown value type {kind!r}")
    return out
