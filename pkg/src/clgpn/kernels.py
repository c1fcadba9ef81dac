"""Backend selection for the sampler's inner loops.

The compiled Cython module is used when it imports; otherwise, or when the
environment variable ``CLGPN_PURE_PYTHON=1`` is set, the numpy/pure-Python
versions are used. Both expose the functions in ``_NAMES`` with identical
signatures.
"""

import os
from types import SimpleNamespace

from . import _pykernels

_NAMES = ("emission_matrix", "sweep_states", "suff_stats", "radius_mh", "update_params")


def _namespace(module, name):
    return SimpleNamespace(name=name, **{f: getattr(module, f) for f in _NAMES})


python_backend = _namespace(_pykernels, "python")

try:
    from . import _ckernels
except ImportError:  # extension not built
    cython_backend = None
else:
    cython_backend = _namespace(_ckernels, "cython")


def get_backend(name=None):
    """Return a kernel namespace.

    Parameters
    ----------
    name : {"cython", "python", None}
        ``None`` selects the default for this process.
    """
    if name is None:
        return default
    if name == "python":
        return python_backend
    if name == "cython":
        if cython_backend is None:
            raise ImportError("the compiled kernels are not built; run `pip install -e .`")
        return cython_backend
    raise ValueError(f"unknown backend {name!r}")


if cython_backend is not None and os.environ.get("CLGPN_PURE_PYTHON") != "1":
    default = cython_backend
else:
    default = python_backend

BACKEND = default.name
