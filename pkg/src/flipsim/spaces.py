"""Tensor-product Hilbert spaces, state vectors and sparse operators.

Composite indices are row-major over the subsystem order, so the last
subsystem varies fastest.  Operators are stored as canonical CSR matrices
(duplicates summed, indices sorted, entries below ``DROP_TOL`` pruned),
which makes construction reproducible bit for bit for identical inputs.
Operators and spaces are immutable after construction by convention; no
mutating API is exposed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DROP_TOL = 1e-15
HERMITIAN_TOL = 1e-12
EXPECT_IMAG_TOL = 1e-10


@dataclass(frozen=True)
class CompositeSpace:
    """Ordered tensor product of finite-dimensional subsystems.

    Parameters
    ----------
    dims : tuple of int
        Subsystem dimensions, each >= 2.
    names : tuple of str, optional
        Subsystem labels for lookup by name; must be unique and match
        ``dims`` in length.
    """

    dims: tuple
    names: tuple = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise ValueError("composite space needs at least one subsystem")
        for d in dims:
            if d < 2:
                raise ValueError(f"subsystem dimension must be >= 2, got {d}")
        if self.names is not None:
            names = tuple(self.names)
            object.__setattr__(self, "names", names)
            if len(names) != len(dims):
                raise ValueError("names and dims length mismatch")
            if len(set(names)) != len(names):
                raise ValueError("subsystem names must be unique")

    @property
    def dim(self):
        return int(np.prod(self.dims))

    @property
    def n_subsystems(self):
        return len(self.dims)

    def slot(self, name):
        """Index of the named subsystem."""
        if self.names is None:
            raise ValueError("space has unnamed subsystems")
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown subsystem {name!r}") from None

    def basis_index(self, occupations):
        """Flat index of the basis state with the given per-subsystem levels."""
        occ = tuple(int(k) for k in occupations)
        if len(occ) != len(self.dims):
            raise ValueError("occupation tuple length mismatch")
        for k, d in zip(occ, self.dims):
            if not 0 <= k < d:
                raise ValueError(f"occupation {k} out of range for dim {d}")
        return int(np.ravel_multi_index(occ, self.dims))

    def occupations(self, index):
        """Per-subsystem levels of the flat basis index."""
        if not 0 <= index < self.dim:
            raise ValueError("basis index out of range")
        return tuple(int(k) for k in np.unravel_index(index, self.dims))


class StateVector:
    """Complex amplitude vector over a composite space.

    Amplitudes are held as a contiguous complex128 array.  Instances are
    treated as owned by a single worker; methods never mutate in place
    except where documented.
    """

    __slots__ = ("space", "amplitudes")

    def __init__(self, space, amplitudes, copy=True):
        amps = np.array(amplitudes, dtype=np.complex128, copy=copy)
        if amps.ndim != 1 or amps.shape[0] != space.dim:
            raise ValueError(
                f"amplitude vector has shape {amps.shape}, space dim is {space.dim}"
            )
        self.space = space
        self.amplitudes = np.ascontiguousarray(amps)

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self):
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.space, self.amplitudes / n, copy=False)

    def copy(self):
        return StateVector(self.space, self.amplitudes, copy=True)

    def overlap(self, other):
        """Inner product <self|other>."""
        if other.space != self.space:
            raise ValueError("states live on different spaces")
        return complex(np.vdot(self.amplitudes, other.amplitudes))


def basis_state(space, occupations):
    """Computational basis state with the given per-subsystem levels."""
    amps = np.zeros(space.dim, dtype=np.complex128)
    amps[space.basis_index(occupations)] = 1.0
    return StateVector(space, amps, copy=False)


def _canonical_csr(matrix, dim):
    m = sp.csr_matrix(matrix, shape=(dim, dim), dtype=np.complex128, copy=True)
    m.sum_duplicates()
    if m.nnz:
        mask = np.abs(m.data) > DROP_TOL
        if not mask.all():
            m.data[~mask] = 0.0
            m.eliminate_zeros()
    m.sort_indices()
    return m


class SparseOperator:
    """Sparse linear operator on a composite space (or a bare dimension).

    The ``hermitian`` flag is advisory but verified: constructing with
    ``hermitian=True`` checks symmetry to ``HERMITIAN_TOL`` and raises on
    violation.  Algebraic methods return new operators; the flag propagates
    where the algebra guarantees it.
    """

    __slots__ = ("matrix", "space", "dim", "hermitian")

    def __init__(self, matrix, space=None, hermitian=False):
        if space is not None:
            dim = space.dim
        elif sp.issparse(matrix) or isinstance(matrix, np.ndarray):
            dim = matrix.shape[0]
            if matrix.shape[0] != matrix.shape[1]:
                raise ValueError("operator matrix must be square")
        else:
            raise ValueError("matrix must be a scipy sparse matrix or ndarray")
        m = _canonical_csr(matrix, dim)
        if hermitian:
            asym = (m - m.conj().T).tocoo()
            worst = np.max(np.abs(asym.data)) if asym.nnz else 0.0
            if worst > HERMITIAN_TOL:
                raise ValueError(
                    f"hermitian flag set but max |M - M^dag| = {worst:.3e}"
                )
        self.matrix = m
        self.space = space
        self.dim = dim
        self.hermitian = bool(hermitian)

    @property
    def nnz(self):
        return self.matrix.nnz

    def _check_compat(self, other):
        if not isinstance(other, SparseOperator):
            raise TypeError("expected a SparseOperator")
        if self.dim != other.dim:
            raise ValueError("operator dimensions differ")
        if self.space is not None and other.space is not None:
            if self.space != other.space:
                raise ValueError("operators live on different spaces")

    def _result_space(self, other):
        return self.space if self.space is not None else other.space

    def __add__(self, other):
        self._check_compat(other)
        return SparseOperator(
            self.matrix + other.matrix,
            space=self._result_space(other),
            hermitian=self.hermitian and other.hermitian,
        )

    def __sub__(self, other):
        self._check_compat(other)
        return SparseOperator(
            self.matrix - other.matrix,
            space=self._result_space(other),
            hermitian=self.hermitian and other.hermitian,
        )

    def __mul__(self, scalar):
        c = complex(scalar)
        herm = self.hermitian and c.imag == 0.0
        return SparseOperator(self.matrix * c, space=self.space, hermitian=herm)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __matmul__(self, other):
        self._check_compat(other)
        return SparseOperator(
            self.matrix @ other.matrix,
            space=self._result_space(other),
            hermitian=False,
        )

    def adjoint(self):
        return SparseOperator(
            self.matrix.conj().T, space=self.space, hermitian=self.hermitian
        )

    def apply(self, state):
        """Matrix-vector product, returned as a new StateVector."""
        if state.space.dim != self.dim:
            raise ValueError("state and operator dimensions differ")
        return StateVector(state.space, self.matrix @ state.amplitudes, copy=False)

    def expectation(self, state):
        """<psi|O|psi>; for a Hermitian-flagged operator the imaginary part
        is verified to be below ``EXPECT_IMAG_TOL`` relative to the value."""
        if state.space.dim != self.dim:
            raise ValueError("state and operator dimensions differ")
        val = complex(np.vdot(state.amplitudes, self.matrix @ state.amplitudes))
        if self.hermitian:
            scale = max(1.0, abs(val))
            if abs(val.imag) > EXPECT_IMAG_TOL * scale:
                raise ValueError(
                    f"hermitian expectation has imaginary part {val.imag:.3e}"
                )
            return val.real
        return val

    def diagonal(self):
        return np.asarray(self.matrix.diagonal())

    @property
    def is_diagonal(self):
        coo = self.matrix.tocoo()
        return bool(np.all(coo.row == coo.col))

    def to_csr(self):
        """Internal CSR matrix; callers must not mutate it."""
        return self.matrix


def identity(dim, space=None):
    if space is not None:
        dim = space.dim
    return SparseOperator(sp.identity(dim, dtype=np.complex128, format="csr"),
                          space=space, hermitian=True)


def fock_annihilation(dim):
    """Truncated bosonic annihilation operator on a ``dim``-level Fock ladder."""
    if dim < 2:
        raise ValueError(f"Fock ladder needs dim >= 2, got {dim}")
    amps = np.sqrt(np.arange(1, dim, dtype=np.float64))
    m = sp.diags(amps.astype(np.complex128), offsets=1, shape=(dim, dim), format="csr")
    return SparseOperator(m)


def fock_number(dim):
    """Photon-number operator on a ``dim``-level Fock ladder."""
    if dim < 2:
        raise ValueError(f"Fock ladder needs dim >= 2, got {dim}")
    m = sp.diags(np.arange(dim, dtype=np.complex128), offsets=0,
                 shape=(dim, dim), format="csr")
    return SparseOperator(m, hermitian=True)


def level_transition(dim, from_level, to_level):
    """Transition operator |to><from| on a ``dim``-level system."""
    if dim < 2:
        raise ValueError(f"level system needs dim >= 2, got {dim}")
    for lvl in (from_level, to_level):
        if not 0 <= lvl < dim:
            raise ValueError(f"level {lvl} out of range for dim {dim}")
    m = sp.csr_matrix(
        (np.array([1.0 + 0.0j]), (np.array([to_level]), np.array([from_level]))),
        shape=(dim, dim),
    )
    return SparseOperator(m, hermitian=from_level == to_level)


def embed(op, slot, space):
    """Lift a single-subsystem operator into the composite space.

    Parameters
    ----------
    op : SparseOperator
        Operator on one subsystem; ``op.dim`` must equal ``space.dims[slot]``.
    slot : int or str
        Subsystem position, or its name if the space is named.
    space : CompositeSpace
    """
    if isinstance(slot, str):
        slot = space.slot(slot)
    if not 0 <= slot < space.n_subsystems:
        raise ValueError(f"slot {slot} out of range")
    if op.dim != space.dims[slot]:
        raise ValueError(
            f"operator dim {op.dim} does not match subsystem dim {space.dims[slot]}"
        )
    left = int(np.prod(space.dims[:slot], dtype=np.int64)) if slot else 1
    right = (
        int(np.prod(space.dims[slot + 1:], dtype=np.int64))
        if slot + 1 < space.n_subsystems
        else 1
    )
    m = op.matrix
    if left > 1:
        m = sp.kron(sp.identity(left, dtype=np.complex128, format="csr"), m, format="csr")
    if right > 1:
        m = sp.kron(m, sp.identity(right, dtype=np.complex128, format="csr"), format="csr")
    return SparseOperator(m, space=space, hermitian=op.hermitian)
