"""Experiment runners behind the CLI subcommands.

Each runner takes a resolved ExperimentConfig and an output directory and
writes the documented CSV/JSON artifacts plus a manifest embedding the
full resolved config and the package version.  All numeric CSV output
uses 12-significant-digit formatting so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import replace

import numpy as np
import scipy.sparse as sp

from . import __version__
from . import analysis, lindblad
from .device import (
    build_jump_operators, device_observables, hamiltonian_segments,
    initial_state, leakage_operator, space_for,
)
from .errors import ValidationFailure
from .spaces import (
    CompositeSpace, SparseOperator, basis_state, embed, fock_annihilation,
    fock_number, level_transition,
)
from .trajectory import run_ensemble

CSV_COLUMNS = ("time_us", "n_a", "n_b", "p_qa", "p_qb", "ta_fg", "tb_fg")
OBS_COLUMNS = CSV_COLUMNS[1:]


def _fmt(x):
    return "%.12g" % x


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out_dir, cfg, extra=None):
    payload = {"version": __version__, "config": cfg.to_dict()}
    if extra:
        payload.update(extra)
    _write_json(os.path.join(out_dir, "manifest.json"), payload)


def _observable_rows(times, observables):
    cols = [np.asarray(times)] + [np.asarray(observables[c]) for c in OBS_COLUMNS]
    return list(zip(*cols))


def _trajectory_csv_name(index, total):
    return "trajectory.csv" if total == 1 else f"trajectory_{index:03d}.csv"


def _build_problem_inputs(cfg):
    p = cfg.device
    space = space_for(p)
    segments = hamiltonian_segments(p, space, cfg.schedule)
    jumps = build_jump_operators(p, space)
    psi0 = initial_state(p, space)
    observables = device_observables(space)
    leak = leakage_operator(space)
    return space, segments, jumps, psi0, observables, leak


def run_flipflop(cfg, out_dir):
    """Scheduled Set/Reset run; one CSV per trajectory plus a summary."""
    space, segments, jumps, psi0, observables, leak = _build_problem_inputs(cfg)
    ensemble = run_ensemble(
        cfg.n_traj, cfg.base_seed, segments, jumps, cfg.schedule, psi0,
        (0.0, cfg.t_final), cfg.dt, cfg.sample_interval,
        observables=observables, leak_operator=leak,
        reduce_space=cfg.reduce_space, backend=cfg.backend,
        workers=cfg.workers,
    )
    per_traj = []
    for rec in ensemble.records:
        index = rec.seed_info["index"]
        name = _trajectory_csv_name(index, ensemble.n_traj)
        _write_csv(os.path.join(out_dir, name), CSV_COLUMNS,
                   _observable_rows(rec.times, rec.observables))
        per_traj.append({
            "index": index,
            "csv": name,
            "jump_counts": rec.jump_counts(),
            "n_jumps": len(rec.jump_channels),
            "leakage_max": rec.leakage_max,
            "leakage_flag": rec.leakage_flag,
            "final_norm_sq": rec.final_norm_sq,
        })
    summary = {
        "base_seed": ensemble.base_seed,
        "n_traj": ensemble.n_traj,
        "failures": [{"index": i, "error": msg} for i, msg in ensemble.failures],
        "trajectories": per_traj,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    write_manifest(out_dir, cfg)
    return summary


def _read_fit_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty CSV")
        header = [h.strip() for h in header]
        if "time_us" not in header or "n_a" not in header:
            raise ValueError(
                f"{path}: need 'time_us' and 'n_a' columns, got {header}"
            )
        ti, ni = header.index("time_us"), header.index("n_a")
        times, values = [], []
        for row in reader:
            if not row:
                continue
            times.append(float(row[ti]))
            values.append(float(row[ni]))
    if not times:
        raise ValueError(f"{path}: no data rows")
    return np.array(times), np.array(values)


def _fit_payload(times, values, cfg, n_traj, stderr_boot=None,
                 boot_failures=None):
    """Windowed exponential fit plus the reliability assessment."""
    window = cfg.fit.window_start_us
    mask = times >= times[0] + window
    t_fit = times[mask]
    y_fit = values[mask]
    try:
        result = analysis.fit_exponential(t_fit, y_fit, floor=cfg.fit.floor)
    except analysis.FitError as exc:
        # no usable decay in the data; report that instead of crashing
        return {
            "memory_time_us": None,
            "uncertainty_us": None,
            "stderr_fit_us": None,
            "stderr_bootstrap_us": stderr_boot,
            "bootstrap_failures": boot_failures,
            "method": "fitted",
            "fit_residual": None,
            "amplitude": None,
            "floor": None,
            "window_start_us": window,
            "n_fit_samples": int(t_fit.size),
            "n_traj": n_traj,
            "unreliable": True,
            "unreliable_reasons": [f"fit failed: {exc}"],
        }
    horizon = float(t_fit[-1] - t_fit[0]) if t_fit.size else 0.0
    unreliable = result.unreliable
    reasons = []
    if not math.isfinite(result.stderr_fit):
        reasons.append("fit covariance is singular")
    if result.memory_time > horizon / 2.0:
        unreliable = True
        reasons.append(
            "fitted decay time exceeds half the fit window; horizon too short"
        )
    if stderr_boot is None:
        if n_traj is not None and n_traj < 2:
            unreliable = True
            reasons.append("single trajectory: no ensemble spread available")
        uncertainty = result.uncertainty
    else:
        uncertainty = stderr_boot
    if math.isfinite(result.stderr_fit) and result.stderr_fit > 0.5 * result.memory_time:
        unreliable = True
        reasons.append("fit standard error exceeds half the decay time")
    return {
        "memory_time_us": result.memory_time,
        "uncertainty_us": uncertainty,
        "stderr_fit_us": result.stderr_fit,
        "stderr_bootstrap_us": stderr_boot,
        "bootstrap_failures": boot_failures,
        "method": result.method,
        "fit_residual": result.fit_residual,
        "amplitude": result.amplitude,
        "floor": result.floor if cfg.fit.floor else None,
        "window_start_us": window,
        "n_fit_samples": int(t_fit.size),
        "n_traj": n_traj,
        "unreliable": unreliable,
        "unreliable_reasons": reasons,
    }


def run_memory(cfg, out_dir):
    """Unpulsed ensemble decay: mean CSV, switch events, exponential fit.

    With experiment.fit_csv set, skips simulation and fits the named CSV's
    n_a column instead (synthetic-input mode).
    """
    if cfg.fit_csv is not None:
        times, values = _read_fit_csv(cfg.fit_csv)
        payload = _fit_payload(times, values, cfg, n_traj=None)
        _write_json(os.path.join(out_dir, "fit.json"), payload)
        write_manifest(out_dir, cfg, extra={"fit_input": cfg.fit_csv})
        return payload

    space, segments, jumps, psi0, observables, leak = _build_problem_inputs(cfg)
    ensemble = run_ensemble(
        cfg.n_traj, cfg.base_seed, segments, jumps, cfg.schedule, psi0,
        (0.0, cfg.t_final), cfg.dt, cfg.sample_interval,
        observables=observables, leak_operator=leak,
        reduce_space=cfg.reduce_space, backend=cfg.backend,
        workers=cfg.workers,
    )
    header = list(CSV_COLUMNS) + [c + "_err" for c in OBS_COLUMNS]
    cols = [ensemble.times]
    cols += [ensemble.mean[c] for c in OBS_COLUMNS]
    cols += [ensemble.stderr[c] for c in OBS_COLUMNS]
    _write_csv(os.path.join(out_dir, "mean.csv"), header, list(zip(*cols)))

    sw = cfg.switches
    per_traj = []
    total_events = 0
    total_duration = 0.0
    for rec in ensemble.records:
        res = analysis.detect_switches(
            rec, sw.n_ref, low_frac=sw.low_frac, high_frac=sw.high_frac,
            min_dwell=sw.min_dwell_us,
        )
        per_traj.append({
            "index": rec.seed_info["index"],
            "event_times_us": [float(t) for t in res.times],
            "states": res.states,
            "initial_state": res.initial_state,
            "rate_per_us": res.rate,
        })
        total_events += res.n_events
        total_duration += res.duration
    switches = {
        "n_ref": sw.n_ref,
        "low_frac": sw.low_frac,
        "high_frac": sw.high_frac,
        "min_dwell_us": sw.min_dwell_us,
        "total_events": total_events,
        "total_duration_us": total_duration,
        "mean_interval_us": (total_duration / total_events
                             if total_events else None),
        "per_trajectory": per_traj,
    }
    _write_json(os.path.join(out_dir, "switches.json"), switches)

    stderr_boot = None
    boot_failures = None
    if ensemble.n_traj >= 2 and cfg.fit.bootstrap_samples > 0:
        series = np.stack([r.observables["n_a"] for r in ensemble.records])
        mask = ensemble.times >= ensemble.times[0] + cfg.fit.window_start_us
        try:
            stderr_boot, boot_failures = analysis.bootstrap_memory_time(
                ensemble.times[mask], series[:, mask],
                n_boot=cfg.fit.bootstrap_samples, base_seed=cfg.base_seed,
                floor=cfg.fit.floor,
            )
        except analysis.FitError:
            stderr_boot = None
    payload = _fit_payload(ensemble.times, ensemble.mean["n_a"], cfg,
                           n_traj=ensemble.n_traj, stderr_boot=stderr_boot,
                           boot_failures=boot_failures)
    payload["failures"] = [
        {"index": i, "error": msg} for i, msg in ensemble.failures
    ]
    _write_json(os.path.join(out_dir, "fit.json"), payload)
    write_manifest(out_dir, cfg)
    return payload


def _estimate_row(p, n_max, include_qubit, chi_operating_n):
    t_mem = analysis.memory_time_estimate(p, n_max).memory_time
    if include_qubit and p.gamma > 0.0:
        chi_a = None
        if chi_operating_n is not None:
            chi_a = p.chi_a1 - p.chi_a2 * chi_operating_n
        branch = analysis.steady_state_branch(p, chi_a=chi_a, n_max=n_max)
        t_total = analysis.qubit_corrected_memory_time(
            p, n_max=n_max, branch=branch
        ).memory_time
        p_up = branch.p_up
    else:
        t_total = t_mem
        p_up = 0.0
    return t_mem, t_total, p_up


def run_estimate(cfg, out_dir):
    """Closed-form memory-time estimates over the configured sweep."""
    sweep = cfg.sweep
    p = cfg.device
    rows = []
    if sweep.kind == "point":
        t_mem, t_total, p_up = _estimate_row(
            p, sweep.n_max, sweep.include_qubit, sweep.chi_operating_n
        )
        header = ("n_target_a", "n_target_b", "kappa_a_mhz", "qubit_t1_us",
                  "transistor_t1_us", "t_mem_us", "t_total_us", "p_up")
        rows.append((
            p.n_target_a, p.n_target_b, p.kappa_a / (2 * math.pi),
            math.inf if p.gamma == 0 else 1.0 / p.gamma,
            math.inf if p.gamma_t == 0 else 1.0 / p.gamma_t,
            t_mem, t_total, p_up,
        ))
    elif sweep.kind == "photon_number":
        if p.gamma_t <= 0:
            raise ValueError(
                "photon_number sweep needs a finite transistor lifetime "
                "(the ratio fixes kappa via kappa = ratio * n / T_t1)"
            )
        t_t1 = 1.0 / p.gamma_t
        header = ("ratio", "n_target", "kappa_mhz", "t_mem_us", "t_total_us")
        for ratio in sweep.ratios:
            for n in sweep.n_grid.values:
                kappa = ratio * n / t_t1
                pp = replace(p, n_target_a=n, n_target_b=n,
                             kappa_a=kappa, kappa_b=kappa)
                t_mem, t_total, _p_up = _estimate_row(
                    pp, sweep.n_max, sweep.include_qubit, sweep.chi_operating_n
                )
                rows.append((ratio, n, kappa / (2 * math.pi), t_mem, t_total))
    elif sweep.kind == "kappa":
        header = ("kappa_mhz", "t_mem_us", "t_total_us")
        for kappa_mhz in sweep.kappa_grid_mhz.values:
            kappa = 2 * math.pi * kappa_mhz
            pp = replace(p, kappa_a=kappa, kappa_b=kappa)
            t_mem, t_total, _p_up = _estimate_row(
                pp, sweep.n_max, sweep.include_qubit, sweep.chi_operating_n
            )
            rows.append((kappa_mhz, t_mem, t_total))
    elif sweep.kind == "qubit_t1":
        header = ("qubit_t1_us", "t_mem_us", "t_total_us")
        for t1 in sweep.qubit_t1_grid_us.values:
            if t1 <= 0:
                raise ValueError("qubit_t1 grid values must be > 0")
            pp = replace(p, gamma=1.0 / t1)
            t_mem, t_total, _p_up = _estimate_row(
                pp, sweep.n_max, sweep.include_qubit, sweep.chi_operating_n
            )
            rows.append((t1, t_mem, t_total))
    else:
        raise ValueError(f"unknown sweep kind {sweep.kind!r}")
    _write_csv(os.path.join(out_dir, "estimate.csv"), header, rows)
    write_manifest(out_dir, cfg, extra={"sweep_kind": sweep.kind})
    return rows


# validation suite


def _random_small_system(rng, dim):
    h = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = 0.5 * (h + h.conj().T)
    space = CompositeSpace(dims=(dim,), names=("s",))
    h_op = SparseOperator(sp.csr_matrix(h), space=space, hermitian=True)
    n_jumps = int(rng.integers(1, 3))
    jumps = []
    for j in range(n_jumps):
        c = 0.5 * (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
        jumps.append((SparseOperator(sp.csr_matrix(c), space=space), f"r{j}"))
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi = psi / np.linalg.norm(psi)
    state = basis_state(space, (0,))
    state.amplitudes[:] = psi
    w = rng.uniform(-1.0, 1.0, size=dim)
    obs = SparseOperator(sp.csr_matrix(np.diag(w)), space=space, hermitian=True)
    return h_op, jumps, state, obs


def _suite_mcwf_vs_me(settings, backend, checks):
    """Ensemble means of random small systems against the exact solution."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=settings.base_seed, spawn_key=(1,))
    )
    for sys_idx in range(settings.n_systems):
        dim = int(rng.integers(3, 7))
        h_op, jumps, psi0, obs = _random_small_system(rng, dim)
        t_final, dt, sample = 2.0, 2e-3, 0.5
        ens = run_ensemble(
            settings.n_traj, settings.base_seed + 1000 + sys_idx,
            h_op, jumps, None, psi0, (0.0, t_final), dt, sample,
            observables={"m": obs}, reduce_space=False, backend=backend,
        )
        rho0 = np.outer(psi0.amplitudes, psi0.amplitudes.conj())
        times, rhos = lindblad.evolve_master_equation(
            h_op, jumps, rho0, (0.0, t_final), dt, sample, backend=backend,
        )
        m = obs.to_csr().toarray()
        exact = np.array([float(np.trace(m @ r).real) for r in rhos])
        diff = np.abs(ens.mean["m"] - exact)
        sigma = np.maximum(ens.stderr["m"], 1e-12)
        worst = float(np.max(diff / sigma))
        checks.append({
            "name": f"mcwf_vs_me_system_{sys_idx}",
            "dim": dim,
            "worst_sigma": worst,
            "limit": 3.0,
            "passed": bool(worst < 3.0),
        })


def _driven_cavity_ops(space, kappa, alpha, dim):
    a = embed(fock_annihilation(dim), "a", space)
    num = embed(fock_number(dim), "a", space)
    h = alpha * (a + a.adjoint())
    h = SparseOperator(h.to_csr(), space=space, hermitian=True)
    jump = (math.sqrt(kappa) * a, "a_loss")
    return h, [jump], num


def _suite_analytic(backend, checks):
    """Driven/decaying single-cavity closed forms."""
    # coherent tail above dim 30 at mean 8 is ~1e-9, far under the 1e-3 limit
    dim = 30
    kappa = 2 * math.pi * 0.1
    n_target = 8.0
    alpha = math.sqrt(n_target) * kappa / 2.0
    space = CompositeSpace(dims=(dim,), names=("a",))
    h, jumps, num = _driven_cavity_ops(space, kappa, alpha, dim)

    rho_ss = lindblad.steady_state(h, jumps)
    n_ss = float(np.trace(num.to_csr().toarray() @ rho_ss).real)
    expect = 4.0 * alpha ** 2 / kappa ** 2
    rel = abs(n_ss - expect) / expect
    checks.append({
        "name": "driven_cavity_steady_photon_number",
        "value": n_ss,
        "expected": expect,
        "rel_error": rel,
        "limit": 1e-3,
        "passed": bool(rel < 1e-3),
    })

    # undriven decay from |1>: <n>(t) = exp(-kappa t)
    h0 = SparseOperator(0.0 * h.to_csr(), space=space, hermitian=True)
    rho0 = np.zeros((dim, dim), dtype=np.complex128)
    rho0[1, 1] = 1.0
    times, rhos = lindblad.evolve_master_equation(
        h0, jumps, rho0, (0.0, 2.0), 1e-3, 0.25, backend=backend,
    )
    m = num.to_csr().toarray()
    vals = np.array([float(np.trace(m @ r).real) for r in rhos])
    expect_t = np.exp(-kappa * times)
    err = float(np.max(np.abs(vals - expect_t)))
    checks.append({
        "name": "decaying_cavity_exponential",
        "max_abs_error": err,
        "limit": 1e-6,
        "passed": bool(err < 1e-6),
    })


def _suite_blockade(checks):
    """Two-level blockade suppresses the resonant drive response."""
    dim = 12
    kappa = 2 * math.pi * 0.1
    g = 2 * math.pi * 30.0
    n_target = 8.0
    alpha = math.sqrt(n_target) * kappa / 2.0
    space = CompositeSpace(dims=(dim, 2), names=("a", "q"))
    a = embed(fock_annihilation(dim), "a", space)
    sm = embed(level_transition(2, 1, 0), "q", space)
    coupling = g * (a.adjoint() @ sm)
    h = coupling + coupling.adjoint() + alpha * (a + a.adjoint())
    h = SparseOperator(h.to_csr(), space=space, hermitian=True)
    jumps = [(math.sqrt(kappa) * a, "a_loss")]
    rho_ss = lindblad.steady_state(h, jumps)
    num = embed(fock_number(dim), "a", space)
    n_ss = float(np.trace(num.to_csr().toarray() @ rho_ss).real)
    limit = 1e-2 * n_target
    checks.append({
        "name": "two_level_blockade",
        "value": n_ss,
        "limit": limit,
        "passed": bool(n_ss < limit),
    })


def run_validate(cfg, out_dir=None):
    """Cross-validation suites; raises ValidationFailure if any check fails."""
    settings = cfg.validate
    backend = cfg.backend
    checks = []
    _suite_mcwf_vs_me(settings, backend, checks)
    _suite_analytic(backend, checks)
    _suite_blockade(checks)
    passed = all(c["passed"] for c in checks)
    report = {"passed": passed, "checks": checks}
    if out_dir is not None:
        _write_json(os.path.join(out_dir, "report.json"), report)
        write_manifest(out_dir, cfg)
    if not passed:
        failed = ", ".join(c["name"] for c in checks if not c["passed"])
        raise ValidationFailure(f"validation checks failed: {failed}", report=report)
    return report
