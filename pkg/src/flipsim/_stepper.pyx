# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled propagation kernel.

Same algorithm and arithmetic grouping as the pure-Python twin in
``_stepper_py``: degree-4 Taylor steps of x' = A x with CSR matvecs, a
norm-threshold watch, and in-step bisection of the crossing time.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef double complex cplx

STATUS_DONE = 0
STATUS_JUMP = 1
STATUS_UNSTABLE = 2

cdef int C_DONE = 0
cdef int C_JUMP = 1
cdef int C_UNSTABLE = 2


cdef void _matvec(const cplx* data, const int* indices, const int* indptr,
                  int n, const cplx* x, cplx* out) noexcept nogil:
    cdef int i, j
    cdef cplx acc
    for i in range(n):
        acc = 0
        for j in range(indptr[i], indptr[i + 1]):
            acc = acc + data[j] * x[indices[j]]
        out[i] = acc


cdef double _phi4(const cplx* data, const int* indices, const int* indptr,
                  int n, const cplx* x, double h, cplx* out,
                  cplx* v1, cplx* v2, cplx* v3, cplx* v4) noexcept nogil:
    """out = sum_{k=0..4} (h^k/k!) A^k x; returns ||out||^2."""
    cdef double c1 = h
    cdef double c2 = h * h / 2.0
    cdef double c3 = c2 * h / 3.0
    cdef double c4 = c3 * h / 4.0
    cdef int i
    cdef cplx acc
    cdef double norm_sq = 0.0
    _matvec(data, indices, indptr, n, x, v1)
    _matvec(data, indices, indptr, n, v1, v2)
    _matvec(data, indices, indptr, n, v2, v3)
    _matvec(data, indices, indptr, n, v3, v4)
    for i in range(n):
        acc = x[i] + c1 * v1[i]
        acc = acc + c2 * v2[i]
        acc = acc + c3 * v3[i]
        acc = acc + c4 * v4[i]
        out[i] = acc
        norm_sq += acc.real * acc.real + acc.imag * acc.imag
    return norm_sq


cdef void _copy(const cplx* src, cplx* dst, int n) noexcept nogil:
    cdef int i
    for i in range(n):
        dst[i] = src[i]


def step_norm(cnp.ndarray[cplx, ndim=1] data,
              cnp.ndarray[int, ndim=1] indices,
              cnp.ndarray[int, ndim=1] indptr,
              cnp.ndarray[cplx, ndim=1] x, double h,
              cnp.ndarray[cplx, ndim=1] out, work):
    """Single propagator step from x into out; returns ||out||^2."""
    cdef int n = x.shape[0]
    cdef cnp.ndarray[cplx, ndim=1] v1 = work.v1
    cdef cnp.ndarray[cplx, ndim=1] v2 = work.v2
    cdef cnp.ndarray[cplx, ndim=1] v3 = work.v3
    cdef cnp.ndarray[cplx, ndim=1] v4 = work.v4
    cdef double norm_sq
    with nogil:
        norm_sq = _phi4(&data[0], &indices[0], &indptr[0], n, &x[0], h,
                        &out[0], &v1[0], &v2[0], &v3[0], &v4[0])
    return norm_sq


def apply_steps(cnp.ndarray[cplx, ndim=1] data,
                cnp.ndarray[int, ndim=1] indices,
                cnp.ndarray[int, ndim=1] indptr,
                cnp.ndarray[cplx, ndim=1] x, double h, int nsteps, work):
    """Advance x in place by nsteps plain propagator steps (no norm watch)."""
    cdef int n = x.shape[0]
    cdef cnp.ndarray[cplx, ndim=1] out = work.out
    cdef cnp.ndarray[cplx, ndim=1] v1 = work.v1
    cdef cnp.ndarray[cplx, ndim=1] v2 = work.v2
    cdef cnp.ndarray[cplx, ndim=1] v3 = work.v3
    cdef cnp.ndarray[cplx, ndim=1] v4 = work.v4
    cdef int s
    with nogil:
        for s in range(nsteps):
            _phi4(&data[0], &indices[0], &indptr[0], n, &x[0], h, &out[0],
                  &v1[0], &v2[0], &v3[0], &v4[0])
            _copy(&out[0], &x[0], n)


def evolve_chunk(cnp.ndarray[cplx, ndim=1] data,
                 cnp.ndarray[int, ndim=1] indices,
                 cnp.ndarray[int, ndim=1] indptr,
                 cnp.ndarray[cplx, ndim=1] psi, double h, int nsteps,
                 double r, double norm_prev_sq, double growth_tol,
                 int bisect_iters, work):
    """Advance psi by up to nsteps, watching for the jump threshold.

    Returns (status, steps_done, h_jump, norm_sq); see the Python twin
    for the full contract.
    """
    cdef int n = psi.shape[0]
    cdef cnp.ndarray[cplx, ndim=1] out = work.out
    cdef cnp.ndarray[cplx, ndim=1] cand = work.cand
    cdef cnp.ndarray[cplx, ndim=1] v1 = work.v1
    cdef cnp.ndarray[cplx, ndim=1] v2 = work.v2
    cdef cnp.ndarray[cplx, ndim=1] v3 = work.v3
    cdef cnp.ndarray[cplx, ndim=1] v4 = work.v4
    cdef double n_prev = norm_prev_sq
    cdef double n_full, n_mid, n_cand
    cdef double lo, hi, mid
    cdef int s = 0
    cdef int it
    cdef int status = C_DONE
    cdef double h_jump = 0.0
    cdef double norm_out = n_prev
    with nogil:
        for s in range(nsteps):
            n_full = _phi4(&data[0], &indices[0], &indptr[0], n, &psi[0], h,
                           &out[0], &v1[0], &v2[0], &v3[0], &v4[0])
            if n_full > n_prev * (1.0 + growth_tol):
                status = C_UNSTABLE
                norm_out = n_full
                break
            if n_full <= r:
                lo = 0.0
                hi = h
                _copy(&out[0], &cand[0], n)
                n_cand = n_full
                for it in range(bisect_iters):
                    mid = 0.5 * (lo + hi)
                    n_mid = _phi4(&data[0], &indices[0], &indptr[0], n,
                                  &psi[0], mid, &out[0],
                                  &v1[0], &v2[0], &v3[0], &v4[0])
                    if n_mid <= r:
                        hi = mid
                        _copy(&out[0], &cand[0], n)
                        n_cand = n_mid
                    else:
                        lo = mid
                _copy(&cand[0], &psi[0], n)
                status = C_JUMP
                h_jump = hi
                norm_out = n_cand
                break
            _copy(&out[0], &psi[0], n)
            n_prev = n_full
            norm_out = n_full
        else:
            s = nsteps
    if status == C_DONE:
        return STATUS_DONE, nsteps, 0.0, norm_out
    if status == C_JUMP:
        return STATUS_JUMP, s, h_jump, norm_out
    return STATUS_UNSTABLE, s, 0.0, norm_out
