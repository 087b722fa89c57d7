"""Density-matrix propagation and steady states for the dissipative model.

The generator acts on row-major vectorized density matrices,
vec(A rho B) = kron(A, B^T) vec(rho), so

    L = -i (kron(H, I) - kron(I, H^T))
        + sum_mu [ kron(c, conj(c))
                   - 1/2 kron(c^dag c, I) - 1/2 kron(I, (c^dag c)^T) ]

Time evolution reuses the trajectory stepper on vec(rho); trace and
Hermiticity are checked at every sample rather than enforced, so drift
beyond tolerance raises instead of being hidden.  Dense propagation is
capped at dimension 400 (160000 vectorized entries).
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernel as kernel_mod
from .errors import DegenerateSteadyStateError, NumericalError
from .spaces import SparseOperator
from .trajectory import _as_labeled_jumps, _gershgorin_bound, STABILITY_LIMIT

MAX_DENSE_DIM = 400
TRACE_TOL = 1e-8
HERM_TOL = 1e-10
DENSE_NULLSPACE_DIM = 40   # use full SVD for d <= this, shift-invert above
DEGENERACY_RATIO = 1e-10
RESIDUAL_TOL = 1e-8


def _hamiltonian_csr(hamiltonian, what="hamiltonian"):
    if not isinstance(hamiltonian, SparseOperator):
        raise ValueError(f"{what} must be a SparseOperator")
    if not hamiltonian.hermitian:
        raise ValueError(f"{what} must be flagged Hermitian")
    return hamiltonian.to_csr()


def liouvillian(hamiltonian, jumps):
    """Return the generator as a d^2 x d^2 CSR matrix (row-major vec)."""
    h = _hamiltonian_csr(hamiltonian)
    d = h.shape[0]
    eye = sp.identity(d, dtype=np.complex128, format="csr")
    gen = -1j * (sp.kron(h, eye, format="csr")
                 - sp.kron(eye, h.T, format="csr"))
    for op, _label in _as_labeled_jumps(jumps):
        c = op.to_csr()
        if c.shape[0] != d:
            raise ValueError("jump operator dimension mismatch")
        cc = sp.csr_matrix(c.conj().T @ c)
        gen = gen + sp.kron(c, c.conj(), format="csr")
        gen = gen - 0.5 * sp.kron(cc, eye, format="csr")
        gen = gen - 0.5 * sp.kron(eye, cc.T, format="csr")
    gen = sp.csr_matrix(gen)
    gen.sum_duplicates()
    gen.sort_indices()
    return gen


def _check_density_matrix(rho, t, trace_tol=TRACE_TOL, herm_tol=HERM_TOL):
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > trace_tol:
        raise NumericalError(
            f"density matrix trace drifted to {tr:.12g} at t = {t:.6f} us"
        )
    herm_err = float(np.max(np.abs(rho - rho.conj().T)))
    if herm_err > herm_tol:
        raise NumericalError(
            f"density matrix Hermiticity error {herm_err:.3g} at t = {t:.6f} us"
        )


def evolve_master_equation(hamiltonian, jumps, rho0, t_span, dt,
                           sample_interval, backend="auto"):
    """Propagate rho0 and return (times, [rho at each sample]).

    rho0 is a dense d x d array with unit trace; sampling and grid
    alignment follow the trajectory conventions.  Raises NumericalError
    if trace or Hermiticity drift beyond tolerance at any sample.
    """
    rho0 = np.asarray(rho0, dtype=np.complex128)
    if rho0.ndim != 2 or rho0.shape[0] != rho0.shape[1]:
        raise ValueError("rho0 must be a square matrix")
    d = rho0.shape[0]
    if d > MAX_DENSE_DIM:
        raise ValueError(
            f"master-equation dimension {d} exceeds the dense cap {MAX_DENSE_DIM}"
        )
    t0, t1 = float(t_span[0]), float(t_span[1])
    dt = float(dt)
    if not t1 > t0 or dt <= 0:
        raise ValueError("need t1 > t0 and dt > 0")
    n_steps = round((t1 - t0) / dt)
    if abs(t0 + n_steps * dt - t1) > 1e-9 or n_steps < 1:
        raise ValueError("t_span must be an integer number of steps")
    m = round(float(sample_interval) / dt)
    if m < 1 or abs(m * dt - float(sample_interval)) > 1e-9:
        raise ValueError("sample_interval must be a multiple of dt")

    gen = liouvillian(hamiltonian, jumps)
    bound = _gershgorin_bound(gen)
    if bound * dt > STABILITY_LIMIT:
        raise ValueError(
            f"dt = {dt} us too large for the master-equation stepper "
            f"(generator row bound {bound:.4g} needs dt <= "
            f"{STABILITY_LIMIT / bound:.4g} us)"
        )
    data, indices, indptr = kernel_mod.csr_parts(gen)
    kern = kernel_mod.get_kernel(backend)
    ws = kernel_mod.make_workspace(d * d)

    vec = np.ascontiguousarray(rho0.reshape(-1))
    _check_density_matrix(rho0, t0)
    times = [t0]
    rhos = [rho0.copy()]
    k = 0
    while k < n_steps:
        chunk = min(m, n_steps - k)
        kern.apply_steps(data, indices, indptr, vec, dt, chunk, ws)
        k += chunk
        if k % m == 0 or k == n_steps:
            t = t0 + k * dt
            rho = vec.reshape(d, d).copy()
            _check_density_matrix(rho, t)
            times.append(t)
            rhos.append(rho)
    return np.array(times), rhos


def _nullspace_dense(gen_dense):
    """Null vector(s) of the generator via full SVD."""
    _u, s, vh = np.linalg.svd(gen_dense)
    smax = float(s[0]) if s.size else 0.0
    tol = DEGENERACY_RATIO * max(1.0, smax)
    null_count = int(np.sum(s < tol))
    if null_count == 0:
        # backward-stable SVD: take the smallest singular vector anyway
        null_count = 1
    vecs = vh[-null_count:].conj()
    return vecs, s


def _nullspace_arpack(gen, d):
    """Null vector(s) via shift-inverted Arnoldi around zero."""
    n = gen.shape[0]
    try:
        vals, vecs = spla.eigs(gen.tocsc(), k=min(4, n - 2), sigma=0.0,
                               which="LM", maxiter=5000)
    except (spla.ArpackNoConvergence, RuntimeError) as exc:
        raise NumericalError(f"steady-state eigensolve failed: {exc}") from exc
    order = np.argsort(np.abs(vals))
    vals = vals[order]
    vecs = vecs[:, order]
    scale = max(1.0, _gershgorin_bound(gen))
    null_count = int(np.sum(np.abs(vals) < DEGENERACY_RATIO * scale))
    null_count = max(null_count, 1)
    return vecs[:, :null_count].T, np.abs(vals)


def steady_state(hamiltonian, jumps):
    """Return the unique steady density matrix of the generator.

    Uses a dense SVD null space for d <= 40 and shift-inverted Arnoldi
    above; the result is hermitized, trace-normalized, and verified to
    satisfy ||L vec(rho)|| < 1e-8 * scale.  If the null space is
    degenerate the call raises DegenerateSteadyStateError carrying an
    orthonormal basis of candidate states.
    """
    gen = liouvillian(hamiltonian, jumps)
    n = gen.shape[0]
    d = math.isqrt(n)
    if d * d != n:
        raise ValueError("generator dimension is not a perfect square")
    if d <= DENSE_NULLSPACE_DIM:
        vecs, _spectrum = _nullspace_dense(gen.toarray())
    else:
        if d > MAX_DENSE_DIM:
            raise ValueError(
                f"steady-state dimension {d} exceeds the cap {MAX_DENSE_DIM}"
            )
        vecs, _spectrum = _nullspace_arpack(gen, d)
    if vecs.shape[0] > 1:
        # candidate directions can be traceless (coherences between
        # disconnected sectors), so report them Frobenius-normalized
        basis = [_hermitize_unit(v, d) for v in vecs]
        raise DegenerateSteadyStateError(
            f"steady state is not unique ({vecs.shape[0]} null directions)",
            basis=basis,
        )
    rho = _normalize_candidate(vecs[0], d)
    residual = float(np.linalg.norm(gen @ rho.reshape(-1)))
    if residual > RESIDUAL_TOL:
        raise NumericalError(
            f"steady-state residual {residual:.3g} exceeds {RESIDUAL_TOL}"
        )
    return rho


def _normalize_candidate(vec, d):
    rho = vec.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    tr = float(np.trace(rho).real)
    if abs(tr) < 1e-300:
        raise NumericalError("steady-state candidate has vanishing trace")
    return rho / tr


def _hermitize_unit(vec, d):
    raw = vec.reshape(d, d)
    mat = 0.5 * (raw + raw.conj().T)
    nrm = float(np.linalg.norm(mat))
    if nrm < 1e-7:
        # anti-hermitian candidate: i*raw spans the same direction hermitely
        mat = 0.5j * (raw - raw.conj().T)
        nrm = float(np.linalg.norm(mat))
    if nrm < 1e-300:
        raise NumericalError("null-space candidate has vanishing norm")
    return mat / nrm
