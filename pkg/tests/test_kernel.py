"""Propagation kernels: python/compiled equivalence and step semantics."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from flipsim import kernel
from flipsim._stepper_py import STATUS_DONE, STATUS_JUMP, STATUS_UNSTABLE


def backends():
    names = ["python"]
    try:
        kernel.get_kernel("compiled")
        names.append("compiled")
    except Exception:
        pass
    return names


def random_drift(dim, seed, decay=0.3):
    """Random dissipative drift -iH - K/2 in CSR parts."""
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = (m + m.conj().T) / 2.0
    c = decay * (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    k = c.conj().T @ c
    drift = sp.csr_matrix(-1j * h - 0.5 * k)
    drift.sort_indices()
    return kernel.csr_parts(drift)


def random_state(dim, seed):
    rng = np.random.default_rng(seed + 1000)
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return np.ascontiguousarray(psi / np.linalg.norm(psi))


def test_backend_names():
    assert kernel.get_kernel("python") is not None
    with pytest.raises(ValueError):
        kernel.get_kernel("fortran")


def test_compiled_backend_available():
    # the build is expected to produce the extension in this tree
    kernel.get_kernel("compiled")


@pytest.mark.parametrize("dim", [3, 17])
def test_apply_steps_backends_bitwise_identical(dim):
    data, indices, indptr = random_drift(dim, dim)
    results = {}
    for name in backends():
        kern = kernel.get_kernel(name)
        work = kernel.make_workspace(dim)
        x = random_state(dim, dim).copy()
        kern.apply_steps(data, indices, indptr, x, 1e-3, 400, work)
        results[name] = x
    if len(results) == 2:
        assert np.array_equal(results["python"], results["compiled"])


def test_evolve_chunk_backends_agree_on_jump():
    dim = 8
    data, indices, indptr = random_drift(dim, 5, decay=1.2)
    outcomes = {}
    for name in backends():
        kern = kernel.get_kernel(name)
        work = kernel.make_workspace(dim)
        psi = random_state(dim, 5).copy()
        out = kern.evolve_chunk(
            data, indices, indptr, psi, 5e-3, 4000, 0.5, 1.0, 1e-8, 7, work
        )
        outcomes[name] = (out[0], out[1], out[2], psi.copy())
    if len(outcomes) == 2:
        a, b = outcomes["python"], outcomes["compiled"]
        assert a[0] == b[0] == STATUS_JUMP
        assert a[1] == b[1]
        assert a[2] == b[2]
        assert np.array_equal(a[3], b[3])


@pytest.mark.parametrize("backend", backends())
def test_norm_monotone_under_dissipative_drift(backend):
    dim = 10
    data, indices, indptr = random_drift(dim, 2, decay=0.8)
    kern = kernel.get_kernel(backend)
    work = kernel.make_workspace(dim)
    psi = random_state(dim, 2).copy()
    out = np.empty_like(psi)
    prev = float(np.vdot(psi, psi).real)
    for _ in range(300):
        n_sq = kern.step_norm(data, indices, indptr, psi, 2e-3, out, work)
        assert n_sq <= prev * (1.0 + 1e-12)
        np.copyto(psi, out)
        prev = n_sq


@pytest.mark.parametrize("backend", backends())
def test_taylor_step_matches_expm_on_linear_problem(backend):
    # one step of the degree-4 polynomial vs the exact propagator
    dim = 6
    data, indices, indptr = random_drift(dim, 9)
    a_mat = sp.csr_matrix((data, indices, indptr), shape=(dim, dim)).toarray()
    psi = random_state(dim, 9)
    h = 1e-3
    import scipy.linalg as la

    exact = la.expm(a_mat * h) @ psi
    kern = kernel.get_kernel(backend)
    work = kernel.make_workspace(dim)
    out = np.empty_like(psi)
    kern.step_norm(data, indices, indptr, psi.copy(), h, out, work)
    # local truncation error h^5 * ||A||^5 / 5!
    bound = h**5 * np.linalg.norm(a_mat, 2) ** 5 / 120.0 * 10.0
    assert np.max(np.abs(out - exact)) < max(bound, 1e-14)


@pytest.mark.parametrize("backend", backends())
def test_evolve_chunk_detects_growth(backend):
    # anti-dissipative drift: norm grows, chunk must flag instability
    dim = 4
    diag = sp.csr_matrix(np.diag([0.5 + 0.0j] * dim))
    diag.sort_indices()
    data, indices, indptr = kernel.csr_parts(diag)
    kern = kernel.get_kernel(backend)
    work = kernel.make_workspace(dim)
    psi = random_state(dim, 1).copy()
    out = kern.evolve_chunk(
        data, indices, indptr, psi, 0.1, 50, 0.0, 1.0, 1e-8, 7, work
    )
    assert out[0] == STATUS_UNSTABLE


@pytest.mark.parametrize("backend", backends())
def test_evolve_chunk_completes_without_threshold(backend):
    dim = 5
    data, indices, indptr = random_drift(dim, 4)
    kern = kernel.get_kernel(backend)
    work = kernel.make_workspace(dim)
    psi = random_state(dim, 4).copy()
    out = kern.evolve_chunk(
        data, indices, indptr, psi, 1e-3, 100, 0.0, 1.0, 1e-8, 7, work
    )
    assert out[0] == STATUS_DONE
    assert out[1] == 100


def test_bisection_brackets_threshold():
    # jump step: returned h_jump has norm <= r and lies inside the step
    dim = 8
    data, indices, indptr = random_drift(dim, 5, decay=1.2)
    kern = kernel.get_kernel("python")
    work = kernel.make_workspace(dim)
    psi = random_state(dim, 5).copy()
    h = 5e-3
    status, steps, h_jump, norm_sq = kern.evolve_chunk(
        data, indices, indptr, psi, h, 4000, 0.5, 1.0, 1e-8, 7, work
    )
    assert status == STATUS_JUMP
    assert 0.0 < h_jump <= h
    assert norm_sq <= 0.5
    # bisection tolerance: interval halved 7 times
    assert h / 2**7 < h / 100.0 * 2.0
