"""Pure-Python propagation kernel.

Fixed-step degree-4 Taylor propagator for x' = A x with A in CSR form,
plus the norm-threshold watch and in-step bisection used by the jump
unraveling.  The compiled extension implements the same algorithm with
identical arithmetic grouping; results agree to rounding.
"""

import numpy as np
import scipy.sparse as sp

STATUS_DONE = 0
STATUS_JUMP = 1
STATUS_UNSTABLE = 2


def _csr(data, indices, indptr):
    n = indptr.shape[0] - 1
    return sp.csr_matrix((data, indices, indptr), shape=(n, n), copy=False)


def _phi4_into(A, x, h, out):
    """out = sum_{k=0..4} (h^k/k!) A^k x; returns ||out||^2."""
    c1 = h
    c2 = h * h / 2.0
    c3 = c2 * h / 3.0
    c4 = c3 * h / 4.0
    v1 = A @ x
    v2 = A @ v1
    v3 = A @ v2
    v4 = A @ v3
    np.multiply(v1, c1, out=out)
    out += x
    out += c2 * v2
    out += c3 * v3
    out += c4 * v4
    return float(np.vdot(out, out).real)


def step_norm(data, indices, indptr, x, h, out, work):
    """Single propagator step from x into out; returns ||out||^2."""
    return _phi4_into(_csr(data, indices, indptr), x, h, out)


def apply_steps(data, indices, indptr, x, h, nsteps, work):
    """Advance x in place by nsteps plain propagator steps (no norm watch)."""
    A = _csr(data, indices, indptr)
    out = work.out
    for _ in range(nsteps):
        _phi4_into(A, x, h, out)
        np.copyto(x, out)


def evolve_chunk(data, indices, indptr, psi, h, nsteps, r, norm_prev_sq,
                 growth_tol, bisect_iters, work):
    """Advance psi by up to nsteps, watching for the jump threshold.

    Returns (status, steps_done, h_jump, norm_sq).  On STATUS_JUMP, psi
    holds the bisected pre-jump state reached h_jump into the step after
    steps_done completed steps, and norm_sq its squared norm (<= r).  On
    STATUS_UNSTABLE the step grew the norm beyond the tolerance and psi
    is left at the last accepted step.
    """
    A = _csr(data, indices, indptr)
    out = work.out
    cand = work.cand
    n_prev = norm_prev_sq
    for s in range(nsteps):
        n_full = _phi4_into(A, psi, h, out)
        if n_full > n_prev * (1.0 + growth_tol):
            return STATUS_UNSTABLE, s, 0.0, n_full
        if n_full <= r:
            lo = 0.0
            hi = h
            np.copyto(cand, out)
            n_cand = n_full
            for _ in range(bisect_iters):
                mid = 0.5 * (lo + hi)
                n_mid = _phi4_into(A, psi, mid, out)
                if n_mid <= r:
                    hi = mid
                    np.copyto(cand, out)
                    n_cand = n_mid
                else:
                    lo = mid
            np.copyto(psi, cand)
            return STATUS_JUMP, s, hi, n_cand
        np.copyto(psi, out)
        n_prev = n_full
    return STATUS_DONE, nsteps, 0.0, n_prev
