"""Propagation backend selection and shared kernel workspace.

The compiled extension is preferred; the pure-Python twin is selected
automatically when the extension is missing (e.g. a source checkout
without a build step).  Both expose the same functions with the same
contract; within one backend, runs are deterministic bit for bit.
"""

import logging

import numpy as np

from . import _stepper_py

log = logging.getLogger(__name__)

try:
    from . import _stepper as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

if _compiled is None:  # pragma: no cover
    log.warning("compiled stepper extension not found; using the Python kernel")

DEFAULT_BACKEND = "compiled" if _compiled is not None else "python"


class Workspace:
    """Scratch buffers shared by the kernel calls for one state dimension."""

    __slots__ = ("dim", "out", "cand", "v1", "v2", "v3", "v4")

    def __init__(self, dim):
        self.dim = int(dim)
        for name in self.__slots__[1:]:
            setattr(self, name, np.zeros(self.dim, dtype=np.complex128))


def make_workspace(dim):
    return Workspace(dim)


def get_kernel(backend="auto"):
    """Return the kernel module for the requested backend name."""
    if backend in ("auto", None):
        backend = DEFAULT_BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise ImportError("compiled stepper extension is not available")
        return _compiled
    if backend == "python":
        return _stepper_py
    raise ValueError(f"unknown kernel backend {backend!r}")


def csr_parts(matrix):
    """(data, indices, indptr) views of a canonical CSR matrix, kernel-typed."""
    data = matrix.data.astype(np.complex128, copy=False)
    indices = matrix.indices.astype(np.int32, copy=False)
    indptr = matrix.indptr.astype(np.int32, copy=False)
    return (
        np.ascontiguousarray(data),
        np.ascontiguousarray(indices),
        np.ascontiguousarray(indptr),
    )
