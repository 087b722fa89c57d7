"""Quantum-trajectory engine with jump unraveling and seeded ensembles.

Single trajectories follow the standard jump unraveling: integrate the
non-unitary Schrodinger equation d|psi>/dt = -(iH + sum_mu c_mu^dag c_mu/2)|psi>
with a fixed-step 4th-order propagator until ||psi||^2 crosses a uniform
draw r, locate the crossing by bisection to dt/100, select the channel
proportionally to ||c_mu psi||^2, renormalize, redraw r.  Pi-pulses are
instantaneous unitaries at scheduled times; drives switch between
piecewise-constant Hamiltonian segments.  Scheduled times must sit on the
integration grid; at a shared step, pulses apply first and sampling sees
the post-pulse state.

Determinism contract: one generator per trajectory, seeded from
(base_seed, index) via numpy SeedSequence spawn keys; draw order is one
uniform for the initial threshold, then per jump one uniform for the
channel and one for the next threshold.  Identical inputs on one kernel
backend reproduce identical records bit for bit, independent of the
worker count.

Performance: before integrating, the engine restricts each inter-event
phase to the subspace reachable from the initial support along structural
edges of the drift matrix, the jump operators, and the pulse unitaries.
The closure makes the restriction exact (dropped matrix entries only ever
multiply exact zeros), so results are unchanged; device runs that never
excite a transistor sector skip it entirely.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernel as kernel_mod
from .device import PulseSchedule, pulse_operator
from .errors import IntegrationError
from .spaces import SparseOperator

GRID_ALIGN_TOL = 1e-9   # us; scheduled times must sit on the step grid
STABILITY_LIMIT = 2.6   # max Gershgorin |A| row bound * dt for the stepper
GROWTH_TOL = 1e-8
LEAK_THRESHOLD = 1e-3
REALIGN_EPS = 1e-12
BISECT_ITERS = 7        # interval shrinks to dt/128 < dt/100
OBS_BOUND_TOL = 1e-9


@dataclass
class TrajectoryRecord:
    """Sampled observables, jump log and diagnostics of one trajectory."""

    times: np.ndarray
    observables: dict
    jump_times: np.ndarray
    jump_channels: list
    seed_info: dict
    leakage_max: float
    leakage_flag: bool
    final_norm_sq: float

    def jump_counts(self):
        counts = {}
        for label in self.jump_channels:
            counts[label] = counts.get(label, 0) + 1
        return counts


@dataclass
class EnsembleRecord:
    """Aggregated trajectory records with mean and standard error."""

    records: list
    times: np.ndarray
    mean: dict
    stderr: dict
    base_seed: int
    failures: list = field(default_factory=list)

    @property
    def n_traj(self):
        return len(self.records)


def _as_labeled_jumps(jumps):
    out = []
    for idx, entry in enumerate(jumps):
        if isinstance(entry, tuple):
            op, label = entry
        else:
            op, label = entry, f"c{idx}"
        if not isinstance(op, SparseOperator):
            raise ValueError("jump operators must be SparseOperator instances")
        out.append((op, str(label)))
    return out


def _step_index(t, t0, dt, what):
    k = round((t - t0) / dt)
    if abs((t0 + k * dt) - t) > GRID_ALIGN_TOL:
        raise ValueError(
            f"{what} at t = {t} us does not sit on the dt = {dt} us step grid"
        )
    return int(k)


def _structure_csr(matrices, dim):
    """Boolean structural union of the given CSR matrices."""
    acc = None
    for m in matrices:
        s = sp.csr_matrix(
            (np.ones_like(m.data, dtype=np.float64), m.indices.copy(), m.indptr.copy()),
            shape=(dim, dim),
        )
        acc = s if acc is None else acc + s
    if acc is None:
        return sp.csr_matrix((dim, dim), dtype=np.float64)
    acc.sum_duplicates()
    acc.data[:] = 1.0
    return acc


def _closure(seed_mask, structure):
    """Support closure of seed_mask under repeated application of structure."""
    v = seed_mask.astype(np.float64)
    count = int(np.count_nonzero(v))
    while True:
        v = v + structure @ v
        np.sign(v, out=v)
        new_count = int(np.count_nonzero(v))
        if new_count == count:
            return v > 0.0
        count = new_count


def _restrict(matrix, support_idx):
    sub = sp.csr_matrix(matrix[support_idx, :][:, support_idx])
    sub.sum_duplicates()
    sub.sort_indices()
    return sub


def _gershgorin_bound(a):
    if a.nnz == 0:
        return 0.0
    ones = np.ones(a.shape[1])
    abs_a = sp.csr_matrix((np.abs(a.data), a.indices, a.indptr), shape=a.shape)
    return float((abs_a @ ones).max())


class _Phase:
    """One contiguous step interval with fixed matrices and support."""

    __slots__ = (
        "start_step", "end_step", "support", "drift_parts", "jump_parts",
        "obs_eval", "leak_weights", "entry_unitaries",
    )


def _observable_recipe(op, support_idx):
    """Evaluation recipe for one observable on the restricted support."""
    if op.is_diagonal:
        return ("diag", op.diagonal().real[support_idx].copy())
    return ("matrix", _restrict(op.to_csr(), support_idx))


class PreparedProblem:
    """Shared, read-only description of a trajectory integration problem.

    Built once per (H, jumps, schedule, grid) and reused by every ensemble
    member; holds the per-phase restricted matrices.
    """

    def __init__(self, hamiltonian, jumps, schedule, psi0, t_span, dt,
                 sample_interval, observables=None, leak_operator=None,
                 reduce_space=True, backend="auto", growth_tol=GROWTH_TOL,
                 leak_threshold=LEAK_THRESHOLD):
        t0, t1 = float(t_span[0]), float(t_span[1])
        if not t1 > t0:
            raise ValueError("t_span must satisfy t1 > t0")
        dt = float(dt)
        if dt <= 0:
            raise ValueError("dt must be > 0")
        if abs(psi0.norm() - 1.0) > 1e-9:
            raise ValueError("psi0 must be normalized")

        self.space = psi0.space
        self.dim = psi0.space.dim
        self.dt = dt
        self.t0 = t0
        self.backend = backend
        self.growth_tol = float(growth_tol)
        self.leak_threshold = float(leak_threshold)
        self.psi0 = psi0.amplitudes.copy()

        self.n_steps = _step_index(t1, t0, dt, "t_span end")
        if self.n_steps < 1:
            raise ValueError("t_span shorter than one step")
        si = float(sample_interval)
        if si <= 0:
            raise ValueError("sample_interval must be > 0")
        self.sample_every = _step_index(t0 + si, t0, dt, "sample_interval")
        if self.sample_every < 1:
            raise ValueError("sample_interval must be at least one step")

        if schedule is None:
            schedule = PulseSchedule()
        schedule.check_spacing(dt)
        self.schedule = schedule

        labeled = _as_labeled_jumps(jumps)
        self.jump_labels = [label for _, label in labeled]

        if isinstance(hamiltonian, SparseOperator):
            segments = [(t0, hamiltonian)]
        else:
            segments = [(float(t), op) for t, op in hamiltonian]
        if not segments:
            raise ValueError("need at least one Hamiltonian segment")
        seg_times = [t for t, _ in segments]
        if any(t2 <= t1_ for t1_, t2 in zip(seg_times, seg_times[1:])):
            raise ValueError("Hamiltonian segments must be sorted strictly increasing")
        if seg_times[0] > t0 + GRID_ALIGN_TOL:
            raise ValueError("no Hamiltonian segment covers the start of t_span")
        for _, op in segments:
            if not isinstance(op, SparseOperator) or op.dim != self.dim:
                raise ValueError("Hamiltonian segments must match the state dimension")

        if observables is None:
            observables = {}
        self.observable_names = list(observables.keys())
        self.observable_bounds = {}
        for name, op in observables.items():
            if op.is_diagonal:
                diag = op.diagonal().real
                self.observable_bounds[name] = (float(diag.min()), float(diag.max()))
            else:
                self.observable_bounds[name] = None

        # drift A = -iH - K/2 per segment, K = sum c^dag c
        ksum = None
        jump_csr = []
        for op, _ in labeled:
            c = op.to_csr()
            jump_csr.append(c)
            cc = sp.csr_matrix(c.conj().T @ c)
            ksum = cc if ksum is None else ksum + cc
        drifts = []
        for t_seg, h_op in segments:
            a = (-1j) * h_op.to_csr()
            if ksum is not None:
                a = a - 0.5 * ksum
            a = sp.csr_matrix(a)
            a.sum_duplicates()
            a.sort_indices()
            bound = _gershgorin_bound(a)
            if bound * dt > STABILITY_LIMIT:
                raise ValueError(
                    f"dt = {dt} us too large for stable 4th-order stepping "
                    f"(drift row bound {bound:.4g} rad/us needs dt <= "
                    f"{STABILITY_LIMIT / bound:.4g} us)"
                )
            drifts.append((t_seg, a))

        def drift_at_step(step):
            t_abs = t0 + step * dt
            active = drifts[0][1]
            for t_seg, a in drifts:
                if t_seg <= t_abs + GRID_ALIGN_TOL:
                    active = a
            return active

        # events on the integer step grid
        pulses_by_step = {}
        for ev in schedule.events:
            k = _step_index(ev.time, t0, dt, f"{ev.kind} pulse")
            if not 0 <= k <= self.n_steps:
                raise ValueError(
                    f"pulse at {ev.time} us lies outside the integration span"
                )
            pulses_by_step.setdefault(k, []).append(ev)
        seg_boundary_steps = set()
        for t_seg, _ in drifts:
            if t_seg > t0 + GRID_ALIGN_TOL:
                k = _step_index(t_seg, t0, dt, "drive segment start")
                if 0 < k < self.n_steps:
                    seg_boundary_steps.add(k)

        edges = sorted(
            {0, self.n_steps}
            | seg_boundary_steps
            | {k for k in pulses_by_step if 0 < k < self.n_steps}
        )

        support_mask = np.abs(self.psi0) > 0.0
        full_idx = np.arange(self.dim)
        self.phases = []
        for start, end in zip(edges[:-1], edges[1:]):
            phase = _Phase()
            phase.start_step = start
            phase.end_step = end
            phase.entry_unitaries = []
            for ev in pulses_by_step.get(start, []):
                u = pulse_operator(self.space, ev.target).to_csr()
                phase.entry_unitaries.append(u)
                u_struct = _structure_csr([u], self.dim)
                support_mask = (u_struct @ support_mask.astype(np.float64)) > 0.0

            a_full = drift_at_step(start)
            if reduce_space:
                struct_phase = _structure_csr([a_full] + jump_csr, self.dim)
                support_mask = _closure(support_mask, struct_phase)
                idx = full_idx[support_mask]
            else:
                support_mask = np.ones(self.dim, dtype=bool)
                idx = full_idx

            phase.support = idx
            phase.drift_parts = kernel_mod.csr_parts(_restrict(a_full, idx))
            phase.jump_parts = [_restrict(c, idx) for c in jump_csr]
            phase.obs_eval = {
                name: _observable_recipe(op, idx)
                for name, op in observables.items()
            }
            if leak_operator is not None:
                if not leak_operator.is_diagonal:
                    raise ValueError("leakage diagnostic must be diagonal")
                phase.leak_weights = leak_operator.diagonal().real[idx].copy()
            else:
                phase.leak_weights = None
            self.phases.append(phase)

        # pulses scheduled exactly at the end of the span: applied, then the
        # final sample sees the post-pulse state
        self.final_unitaries = [
            pulse_operator(self.space, ev.target).to_csr()
            for ev in pulses_by_step.get(self.n_steps, [])
        ]


def _draw_threshold(rng):
    r = rng.random()
    while r == 0.0:
        r = rng.random()
    return r


def _sample_observables(phase, psi, out_row):
    prob = np.abs(psi) ** 2
    total = float(prob.sum())
    if total <= 0.0:
        raise IntegrationError("state norm vanished during sampling")
    for j, (mode, payload) in enumerate(phase.obs_eval.values()):
        if mode == "diag":
            out_row[j] = float(payload @ prob) / total
        else:
            out_row[j] = float(np.vdot(psi, payload @ psi).real) / total
    if phase.leak_weights is None:
        return 0.0
    return float(phase.leak_weights @ prob) / total


def _run_prepared(problem, seed_seq, seed_info):
    kern = kernel_mod.get_kernel(problem.backend)
    rng = np.random.default_rng(seed_seq)
    dt = problem.dt
    m = problem.sample_every
    n_obs = len(problem.observable_names)
    n_samples = problem.n_steps // m + 1
    sample_times = problem.t0 + dt * m * np.arange(n_samples)
    obs_data = np.zeros((n_samples, n_obs))
    jump_times = []
    jump_channels = []
    leak_max = 0.0
    sample_idx = 0

    psi_full = problem.psi0.copy()
    r = _draw_threshold(rng)
    norm_sq = float(np.vdot(psi_full, psi_full).real)

    def do_jump(phase, psi_arr, t_jump):
        nonlocal r, norm_sq
        weights = []
        for c_sub in phase.jump_parts:
            cv = c_sub @ psi_arr
            weights.append(float(np.vdot(cv, cv).real))
        total = math.fsum(weights)
        if total <= 0.0:
            raise IntegrationError(
                f"norm threshold crossed at t = {t_jump:.6f} us but all "
                "jump-channel weights vanish"
            )
        u = rng.random() * total
        acc = 0.0
        chosen = len(weights) - 1
        for mu, w in enumerate(weights):
            acc += w
            if u < acc:
                chosen = mu
                break
        new_psi = phase.jump_parts[chosen] @ psi_arr
        nrm = float(np.linalg.norm(new_psi))
        if nrm <= 0.0:
            raise IntegrationError("selected jump annihilated the state")
        new_psi = new_psi / nrm
        jump_times.append(t_jump)
        jump_channels.append(problem.jump_labels[chosen])
        r = _draw_threshold(rng)
        norm_sq = float(np.vdot(new_psi, new_psi).real)
        return new_psi

    for phase in problem.phases:
        for u_csr in phase.entry_unitaries:
            psi_full = u_csr @ psi_full
        psi = np.ascontiguousarray(psi_full[phase.support])
        ws = kernel_mod.make_workspace(psi.shape[0])
        data, indices, indptr = phase.drift_parts
        k = phase.start_step

        if sample_idx < n_samples and k == sample_idx * m:
            leak = _sample_observables(phase, psi, obs_data[sample_idx])
            leak_max = max(leak_max, leak)
            sample_idx += 1

        while k < phase.end_step:
            next_sample = sample_idx * m if sample_idx < n_samples else problem.n_steps
            target = min(phase.end_step, max(next_sample, k + 1))
            while k < target:
                status, done, h_jump, nsq = kern.evolve_chunk(
                    data, indices, indptr, psi, dt, target - k, r, norm_sq,
                    problem.growth_tol, BISECT_ITERS, ws,
                )
                k += done
                if status == 0:
                    norm_sq = nsq
                    break
                if status == 2:
                    raise IntegrationError(
                        f"norm grew beyond tolerance near t = "
                        f"{problem.t0 + k * dt:.6f} us (unstable step)"
                    )
                t_base = problem.t0 + k * dt
                psi = do_jump(phase, psi, t_base + h_jump)
                rem = dt - h_jump
                elapsed = h_jump
                while rem > REALIGN_EPS * dt:
                    status2, _d2, h2, nsq2 = kern.evolve_chunk(
                        data, indices, indptr, psi, rem, 1, r, norm_sq,
                        problem.growth_tol, BISECT_ITERS, ws,
                    )
                    if status2 == 0:
                        norm_sq = nsq2
                        break
                    if status2 == 2:
                        raise IntegrationError(
                            f"norm grew beyond tolerance near t = "
                            f"{t_base + elapsed:.6f} us (unstable step)"
                        )
                    psi = do_jump(phase, psi, t_base + elapsed + h2)
                    elapsed += h2
                    rem -= h2
                k += 1
            if (k == sample_idx * m and sample_idx < n_samples
                    and k < phase.end_step):
                leak = _sample_observables(phase, psi, obs_data[sample_idx])
                leak_max = max(leak_max, leak)
                sample_idx += 1

        psi_full = np.zeros(problem.dim, dtype=np.complex128)
        psi_full[phase.support] = psi

    # final grid point: apply end-of-span pulses, then take the last sample
    for u_csr in problem.final_unitaries:
        psi_full = u_csr @ psi_full
    if sample_idx < n_samples:
        last_phase = problem.phases[-1]
        psi = psi_full[last_phase.support]
        leak = _sample_observables(last_phase, psi, obs_data[sample_idx])
        leak_max = max(leak_max, leak)
        sample_idx += 1

    observables = {
        name: obs_data[:, j].copy()
        for j, name in enumerate(problem.observable_names)
    }
    record = TrajectoryRecord(
        times=sample_times,
        observables=observables,
        jump_times=np.array(jump_times, dtype=np.float64),
        jump_channels=jump_channels,
        seed_info=seed_info,
        leakage_max=leak_max,
        leakage_flag=leak_max > problem.leak_threshold,
        final_norm_sq=norm_sq,
    )
    _check_record_invariants(record, problem)
    return record


def _check_record_invariants(record, problem):
    for name, values in record.observables.items():
        if not np.all(np.isfinite(values)):
            raise IntegrationError(f"observable {name} contains non-finite values")
        bounds = problem.observable_bounds.get(name)
        if bounds is None:
            continue
        lo, hi = bounds
        if values.min() < lo - OBS_BOUND_TOL or values.max() > hi + OBS_BOUND_TOL:
            raise IntegrationError(
                f"observable {name} left its spectral range [{lo}, {hi}]"
            )


def evolve_trajectory(hamiltonian, jumps, schedule, psi0, t_span, dt, seed,
                      sample_interval, observables=None, leak_operator=None,
                      reduce_space=True, backend="auto"):
    """Integrate one quantum trajectory; see the module docstring.

    ``hamiltonian`` is a SparseOperator or a list of (t_start, operator)
    piecewise-constant segments; ``jumps`` a list of operators or
    (operator, label) pairs; ``schedule`` a PulseSchedule or None.
    Returns a TrajectoryRecord.
    """
    problem = PreparedProblem(
        hamiltonian, jumps, schedule, psi0, t_span, dt, sample_interval,
        observables=observables, leak_operator=leak_operator,
        reduce_space=reduce_space, backend=backend,
    )
    seed_seq = np.random.SeedSequence(entropy=int(seed))
    return _run_prepared(problem, seed_seq, {"seed": int(seed)})


def _member_seed(base_seed, index):
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index),))


def _ensemble_worker(args):
    problem, index, base_seed = args
    info = {"base_seed": int(base_seed), "index": int(index)}
    try:
        rec = _run_prepared(problem, _member_seed(base_seed, index), info)
        return index, rec, None
    except IntegrationError as exc:
        return index, None, str(exc)


def run_ensemble(n_traj, base_seed, hamiltonian, jumps, schedule, psi0, t_span,
                 dt, sample_interval, observables=None, leak_operator=None,
                 reduce_space=True, backend="auto", workers=1,
                 progress=None):
    """Run n_traj independent trajectories and aggregate them.

    Trajectory i is seeded from (base_seed, i); results are ordered by
    index and bit-for-bit reproducible for identical inputs regardless of
    worker count.  Member failures are recorded on the EnsembleRecord and
    skipped in the aggregates; the call raises only if every member fails.
    ``progress`` is an optional callable invoked with (done, total).
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    problem = PreparedProblem(
        hamiltonian, jumps, schedule, psi0, t_span, dt, sample_interval,
        observables=observables, leak_operator=leak_operator,
        reduce_space=reduce_space, backend=backend,
    )
    results = {}
    failures = []
    if workers and workers > 1:
        tasks = [(problem, i, base_seed) for i in range(n_traj)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for done, (i, rec, err) in enumerate(pool.map(_ensemble_worker, tasks)):
                if rec is None:
                    failures.append((i, err))
                else:
                    results[i] = rec
                if progress is not None:
                    progress(done + 1, n_traj)
    else:
        for i in range(n_traj):
            info = {"base_seed": int(base_seed), "index": int(i)}
            try:
                results[i] = _run_prepared(problem, _member_seed(base_seed, i), info)
            except IntegrationError as exc:
                failures.append((i, str(exc)))
            if progress is not None:
                progress(i + 1, n_traj)
    records = [results[i] for i in sorted(results)]
    if not records:
        raise IntegrationError(
            "all ensemble members failed: " + "; ".join(msg for _, msg in failures)
        )
    times = records[0].times
    mean = {}
    stderr = {}
    for name in problem.observable_names:
        stack = np.stack([rec.observables[name] for rec in records])
        mean[name] = stack.mean(axis=0)
        if stack.shape[0] > 1:
            stderr[name] = stack.std(axis=0, ddof=1) / math.sqrt(stack.shape[0])
        else:
            stderr[name] = np.zeros_like(mean[name])
    return EnsembleRecord(
        records=records, times=times, mean=mean, stderr=stderr,
        base_seed=int(base_seed), failures=failures,
    )
