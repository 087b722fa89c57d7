"""Propagation-kernel benchmark: compiled extension vs pure-Python twin.

Times the fixed-step propagation loop on matrices shaped like the real
workloads: a single driven mode (dim 20) and the full-device no-pulse
drift restricted to its reachable subspace (dim 1600).  Run with
--quick for a fast sanity pass.

usage: python3 benchmarks/kernel_bench.py [--quick]
"""

import argparse
import math
import pathlib
import sys
import time

import numpy as np

from flipsim import kernel
from flipsim.device import (
    PulseSchedule,
    build_jump_operators,
    device_observables,
    hamiltonian_segments,
    initial_state,
    space_for,
)
from flipsim.spaces import CompositeSpace, SparseOperator, fock_annihilation
from flipsim.trajectory import PreparedProblem

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "tests"))
from conftest import nominal_params  # noqa: E402


def single_mode_case(dim=20):
    kappa = 2 * math.pi * 0.1
    alpha = math.sqrt(8.0) * kappa / 2.0
    space = CompositeSpace(dims=(dim,), names=("a",))
    a = SparseOperator(fock_annihilation(dim).to_csr(), space=space)
    h = alpha * (a + a.adjoint())
    jump = (math.sqrt(kappa) * a).to_csr()
    drift = (-1j) * h.to_csr() - 0.5 * (jump.conj().T @ jump)
    drift = drift.tocsr()
    drift.sort_indices()
    parts = kernel.csr_parts(drift)
    return f"single mode, dim {dim}", parts, dim, drift.nnz


def full_device_case():
    p = nominal_params()
    space = space_for(p)
    schedule = PulseSchedule()
    segments = hamiltonian_segments(p, space, schedule)
    jumps = build_jump_operators(p, space)
    psi0 = initial_state(p, space)
    problem = PreparedProblem(
        segments, jumps, schedule, psi0, (0.0, 1.0), 5e-4, 0.5,
        observables=device_observables(space),
        reduce_space=True, backend="python",
    )
    phase = problem.phases[0]
    data, indices, indptr = phase.drift_parts
    dim = len(phase.support)
    return f"full device, reduced dim {dim}", (data, indices, indptr), dim, len(data)


def time_backend(backend, parts, dim, dt, n_steps, repeats=3):
    kern = kernel.get_kernel(backend)
    data, indices, indptr = parts
    rng = np.random.default_rng(0)
    psi0 = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi0 /= np.linalg.norm(psi0)
    ws = kernel.make_workspace(dim)
    best = math.inf
    for _ in range(repeats):
        psi = psi0.copy()
        t0 = time.perf_counter()
        kern.apply_steps(data, indices, indptr, psi, dt, n_steps, ws)
        best = min(best, time.perf_counter() - t0)
    return best / n_steps


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true",
                    help="fewer steps, skip the full-device case")
    args = ap.parse_args(argv)

    cases = [single_mode_case()]
    if not args.quick:
        cases.append(full_device_case())

    backends = ["python"]
    try:
        kernel.get_kernel("compiled")
        backends.insert(0, "compiled")
    except ImportError:
        print("compiled kernel unavailable; timing the Python kernel only")

    dt = 5e-4
    for label, parts, dim, nnz in cases:
        n_steps = 200 if args.quick else 2000
        if dim > 1000:
            n_steps = 50 if args.quick else 500
        print(f"\n{label} ({nnz} nonzeros), {n_steps} steps per timing:")
        per_step = {}
        for backend in backends:
            per_step[backend] = time_backend(backend, parts, dim, dt, n_steps)
            print(f"  {backend:>8}: {per_step[backend] * 1e6:9.2f} us/step")
        if len(per_step) == 2:
            ratio = per_step["python"] / per_step["compiled"]
            print(f"  speedup : {ratio:.1f}x")


if __name__ == "__main__":
    main()
