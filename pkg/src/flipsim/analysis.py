"""Performance estimates, exponential fitting, and switch detection.

The closed-form memory-time estimate sums the photon feeding rate into
the blocked resonator over a Poisson-distributed occupation of the loaded
one; the qubit correction adds the decay-weighted excited-state
population from the two-branch steady-state ratio.  Fitting and switch
detection operate on sampled observable series and are independent of
how those series were produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit
from scipy.stats import poisson

from .errors import FitError, TailNotConvergedError

TAIL_THRESHOLD = 1e-8
DEFAULT_N_MAX = 60
EQUILIBRATION_US = 20.0   # memory fits skip the initial fill transient
MIN_FIT_SAMPLES = 10


@dataclass
class MemoryTimeResult:
    """Memory time in us with uncertainty and provenance.

    ``method`` is "analytic" for closed-form estimates and "fitted" for
    exponential fits; ``fit_residual`` is the rms residual of the fit
    (0 for analytic results).  ``memory_time`` is math.inf for the
    distinguished no-feeding case.
    """

    memory_time: float
    uncertainty: float
    method: str
    fit_residual: float = 0.0
    no_feeding: bool = False
    amplitude: float = math.nan
    floor: float = math.nan
    stderr_fit: float = math.nan
    stderr_bootstrap: float = math.nan
    unreliable: bool = False

    def __post_init__(self):
        if not self.memory_time > 0:
            raise ValueError("memory_time must be > 0")
        if not self.uncertainty >= 0:
            raise ValueError("uncertainty must be >= 0")
        if self.method not in ("analytic", "fitted"):
            raise ValueError("method must be 'analytic' or 'fitted'")


@dataclass
class SteadyStateBranch:
    """Two-branch steady state: qubit populations and field amplitudes."""

    p_up: float
    p_down: float
    alpha_up: complex
    alpha_down: complex
    beta_up: complex
    beta_down: complex

    def __post_init__(self):
        if not (0.0 <= self.p_up <= 1.0 and 0.0 <= self.p_down <= 1.0):
            raise ValueError("populations must lie in [0, 1]")
        if abs(self.p_up + self.p_down - 1.0) > 1e-12:
            raise ValueError("populations must sum to 1")


def _poisson_tail_check(mean, n_max):
    tail = float(poisson.sf(n_max, mean))
    if tail >= TAIL_THRESHOLD:
        raise TailNotConvergedError(
            f"Poisson tail beyond n_max = {n_max} is {tail:.3g} >= "
            f"{TAIL_THRESHOLD}; increase n_max"
        )


def feeding_rate(p, n_max=DEFAULT_N_MAX):
    """Photon feeding rate (1/us) into the blocked resonator.

    rate = sum_n w_n (2 beta)^2 kappa / (kappa^2 + (chi1 n - chi2 n^2)^2)
    with Poisson weights w_n at mean n_target_a and beta the drive
    amplitude calibrated for n_target_b.  Weights are evaluated in log
    space so large means do not overflow.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    mean = p.n_target_a
    _poisson_tail_check(mean, n_max)
    beta = p.beta
    kappa = p.kappa_b
    if beta == 0.0:
        return 0.0
    num = (2.0 * beta) ** 2 * kappa
    terms = []
    for n in range(n_max + 1):
        logw = poisson.logpmf(n, mean)
        detuning = p.chi_a1 * n - p.chi_a2 * n * n
        terms.append(math.exp(logw) * num / (kappa * kappa + detuning * detuning))
    return math.fsum(terms)


def memory_time_estimate(p, n_max=DEFAULT_N_MAX):
    """Closed-form memory time from the Poisson-weighted feeding rate."""
    rate = feeding_rate(p, n_max)
    if rate == 0.0:
        return MemoryTimeResult(
            memory_time=math.inf, uncertainty=0.0, method="analytic",
            no_feeding=True,
        )
    return MemoryTimeResult(
        memory_time=1.0 / rate, uncertainty=0.0, method="analytic",
    )


def qubit_population_ratio(p, alpha_up, alpha_down, beta_up, beta_down,
                           chi_a=None):
    """Excited/ground steady-state qubit population ratio.

    chi_a defaults to the saturation-corrected value at the occupied
    lower branch, chi_a1 - chi_a2 |alpha_down|^2; pass an explicit value
    to evaluate at a different operating point.
    """
    gamma = p.gamma
    if gamma <= 0.0:
        raise ValueError("qubit population ratio undefined for gamma = 0")
    aup2 = abs(alpha_up) ** 2
    adn2 = abs(alpha_down) ** 2
    bup2 = abs(beta_up) ** 2
    bdn2 = abs(beta_down) ** 2
    if chi_a is None:
        chi_a = p.chi_a1 - p.chi_a2 * adn2
    pref = 4.0 * chi_a * chi_a / (gamma * gamma)
    numerator = pref * (adn2 * adn2 + adn2) * bdn2
    denominator = 1.0 + pref * (aup2 * aup2 + aup2) * (bup2 + 1.0)
    return numerator / denominator


def default_branch_amplitudes(p, n_max=DEFAULT_N_MAX):
    """Default branch field amplitudes for the population ratio.

    The loaded resonator sits at its target amplitude on both branches;
    the blocked one carries the small Poisson-averaged residual response
    of a driven cavity detuned by the occupation-conditioned coupling.
    """
    alpha = math.sqrt(p.n_target_a)
    _poisson_tail_check(p.n_target_a, n_max)
    beta_drive = p.beta
    kappa = p.kappa_b
    if kappa <= 0.0:
        raise ValueError("kappa_b must be > 0 for the blocked-cavity response")
    terms = []
    for n in range(n_max + 1):
        logw = poisson.logpmf(n, p.n_target_a)
        detuning = p.chi_a1 * n - p.chi_a2 * n * n
        resp = beta_drive ** 2 / ((0.5 * kappa) ** 2 + detuning ** 2)
        terms.append(math.exp(logw) * resp)
    beta_resp = math.sqrt(math.fsum(terms))
    return {
        "alpha_up": alpha, "alpha_down": alpha,
        "beta_up": beta_resp, "beta_down": beta_resp,
    }


def steady_state_branch(p, alpha_up=None, alpha_down=None, beta_up=None,
                        beta_down=None, chi_a=None, n_max=DEFAULT_N_MAX):
    """Build a SteadyStateBranch, filling unset amplitudes with defaults."""
    defaults = None
    if None in (alpha_up, alpha_down, beta_up, beta_down):
        defaults = default_branch_amplitudes(p, n_max)
    alpha_up = defaults["alpha_up"] if alpha_up is None else alpha_up
    alpha_down = defaults["alpha_down"] if alpha_down is None else alpha_down
    beta_up = defaults["beta_up"] if beta_up is None else beta_up
    beta_down = defaults["beta_down"] if beta_down is None else beta_down
    ratio = qubit_population_ratio(p, alpha_up, alpha_down, beta_up,
                                   beta_down, chi_a=chi_a)
    p_up = ratio / (1.0 + ratio)
    return SteadyStateBranch(
        p_up=p_up, p_down=1.0 - p_up,
        alpha_up=alpha_up, alpha_down=alpha_down,
        beta_up=beta_up, beta_down=beta_down,
    )


def qubit_corrected_memory_time(p, n_max=DEFAULT_N_MAX, branch=None,
                                chi_a=None):
    """Memory time including qubit decay: 1/T = feeding rate + P_up gamma."""
    if branch is None:
        branch = steady_state_branch(p, chi_a=chi_a, n_max=n_max)
    rate = feeding_rate(p, n_max) + branch.p_up * p.gamma
    if rate == 0.0:
        return MemoryTimeResult(
            memory_time=math.inf, uncertainty=0.0, method="analytic",
            no_feeding=True,
        )
    return MemoryTimeResult(
        memory_time=1.0 / rate, uncertainty=0.0, method="analytic",
    )


def _exp_model(t, amp, tau):
    return amp * np.exp(-t / tau)


def _exp_floor_model(t, amp, tau, c):
    return amp * np.exp(-t / tau) + c


def fit_exponential(times, values, floor=False):
    """Least-squares fit of amp * exp(-t/tau) (+ optional floor).

    Returns a MemoryTimeResult with tau, its covariance standard error,
    and the rms residual.  Constant input raises FitError (no decay to
    fit); non-convergence raises FitError with residual diagnostics.
    """
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if t.ndim != 1 or t.shape != y.shape:
        raise ValueError("times and values must be 1-d arrays of equal length")
    if t.size < MIN_FIT_SAMPLES:
        raise FitError(f"need at least {MIN_FIT_SAMPLES} samples, got {t.size}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise FitError("non-finite samples in fit input")
    span = float(np.ptp(y))
    scale = float(np.max(np.abs(y))) if y.size else 0.0
    if span <= 1e-12 * max(1.0, scale):
        raise FitError("no decay: input is constant, tau is unbounded")

    t_rel = t - t[0]
    horizon = float(t_rel[-1])
    c0 = float(y[-1]) if floor else 0.0
    a0 = float(y[0]) - c0
    if a0 <= 0:
        a0 = max(span, 1e-12)
    # crude log-slope guess over the decaying part
    pos = (y - c0) > 1e-12 * max(1.0, scale)
    tau0 = horizon / 2.0
    if np.count_nonzero(pos) >= 2:
        tp, yp = t_rel[pos], np.log(y[pos] - c0)
        slope = np.polyfit(tp, yp, 1)[0]
        if slope < 0:
            tau0 = min(max(-1.0 / slope, horizon * 1e-6), horizon * 1e3)

    if floor:
        p0 = [a0, tau0, c0]
        bounds = ([0.0, horizon * 1e-9, -np.inf], [np.inf, horizon * 1e6, np.inf])
        model = _exp_floor_model
    else:
        p0 = [a0, tau0]
        bounds = ([0.0, horizon * 1e-9], [np.inf, horizon * 1e6])
        model = _exp_model
    try:
        popt, pcov = curve_fit(model, t_rel, y, p0=p0, bounds=bounds,
                               method="trf", maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        resid0 = float(np.sqrt(np.mean((model(t_rel, *p0) - y) ** 2)))
        raise FitError(
            f"exponential fit did not converge ({exc}); rms residual at "
            f"the initial guess was {resid0:.3g}"
        ) from exc
    amp, tau = float(popt[0]), float(popt[1])
    c = float(popt[2]) if floor else 0.0
    resid = float(np.sqrt(np.mean((model(t_rel, *popt) - y) ** 2)))
    if tau >= horizon * 1e6 * 0.99:
        raise FitError(
            f"no decay: fitted tau hit the bound (rms residual {resid:.3g})"
        )
    var = float(pcov[1, 1])
    stderr = math.sqrt(var) if np.isfinite(var) and var >= 0 else math.inf
    return MemoryTimeResult(
        memory_time=tau, uncertainty=stderr, method="fitted",
        fit_residual=resid, amplitude=amp, floor=c, stderr_fit=stderr,
        unreliable=not np.isfinite(stderr),
    )


def bootstrap_memory_time(times, series, n_boot=200, base_seed=0, floor=False):
    """Bootstrap the fitted decay time over trajectory resamples.

    ``series`` is (n_traj, n_samples); each resample draws trajectories
    with replacement, averages, and refits.  Returns (std of the fitted
    taus, number of failed refits).  Deterministic for a given seed.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ValueError("series must be 2-d (trajectories x samples)")
    n_traj = series.shape[0]
    if n_traj < 2:
        raise ValueError("bootstrap needs at least 2 trajectories")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(base_seed),
                                                       spawn_key=(0x626F6F74,)))
    taus = []
    failures = 0
    for _ in range(n_boot):
        idx = rng.integers(0, n_traj, size=n_traj)
        mean = series[idx].mean(axis=0)
        try:
            taus.append(fit_exponential(times, mean, floor=floor).memory_time)
        except FitError:
            failures += 1
    if len(taus) < 2:
        raise FitError(
            f"bootstrap failed: only {len(taus)} of {n_boot} refits converged"
        )
    return float(np.std(taus, ddof=1)), failures


@dataclass
class SwitchResult:
    """Detected spontaneous switches on one trajectory."""

    times: np.ndarray
    states: list
    rate: float
    duration: float
    initial_state: str | None

    @property
    def n_events(self):
        return len(self.states)


def detect_switches(record, n_ref, low_frac=0.25, high_frac=0.75,
                    min_dwell=5.0):
    """Hysteresis switch detector on the two photon-number series.

    State "a" requires n_a > high_frac*n_ref and n_b < low_frac*n_ref;
    state "b" symmetrically.  A switch is a change of confirmed state
    sustained for at least min_dwell us; brief excursions that return do
    not count.  Returns a SwitchResult with event times (start of the
    sustained change) and rate = events / record duration.
    """
    if isinstance(record, tuple):
        times, obs = record
    else:
        times, obs = record.times, record.observables
    t = np.asarray(times, dtype=np.float64)
    n_a = np.asarray(obs["n_a"], dtype=np.float64)
    n_b = np.asarray(obs["n_b"], dtype=np.float64)
    if not (t.shape == n_a.shape == n_b.shape) or t.ndim != 1:
        raise ValueError("times, n_a, n_b must be 1-d arrays of equal length")
    if t.size < 2:
        raise ValueError("record too short for switch detection")
    duration = float(t[-1] - t[0])
    if duration < min_dwell:
        raise ValueError(
            f"record spans {duration:.3g} us, shorter than min_dwell = "
            f"{min_dwell} us"
        )
    hi = high_frac * n_ref
    lo = low_frac * n_ref
    in_a = (n_a > hi) & (n_b < lo)
    in_b = (n_b > hi) & (n_a < lo)
    labels = np.where(in_a, 1, np.where(in_b, -1, 0))

    current = 0
    initial = None
    cand_state = 0
    cand_start = 0.0
    events = []
    states = []
    for ti, s in zip(t, labels):
        if s == 0:
            continue
        if current == 0:
            current = s
            initial = "a" if s > 0 else "b"
            continue
        if s == current:
            cand_state = 0
            continue
        if cand_state != s:
            cand_state = s
            cand_start = ti
        if ti - cand_start >= min_dwell:
            events.append(cand_start)
            states.append("a" if s > 0 else "b")
            current = s
            cand_state = 0
    return SwitchResult(
        times=np.array(events, dtype=np.float64),
        states=states,
        rate=len(events) / duration,
        duration=duration,
        initial_state=initial,
    )
