"""Device model: parameters, Hamiltonian, jump operators, pulses, observables.

The composite space holds, in fixed order, resonator a, resonator b, the
two memory qubits qa/qb, and the two three-level transistor transmons
ta/tb (levels g, e, f).  All frequencies and rates are angular (rad/us);
times are in microseconds.  Everything is written in the multi-rotating
frame in which both drives are resonant, the transistor e-f transitions
are resonant with their resonators, and the qubits are resonant with the
exchange terms, so the Hamiltonian is time-independent.  Set/Reset
pi-pulses are instantaneous unitaries on the transistor g-e transition,
applied at scheduled times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .spaces import (
    CompositeSpace,
    SparseOperator,
    StateVector,
    basis_state,
    embed,
    fock_annihilation,
    fock_number,
    identity,
    level_transition,
)

SUBSYSTEMS = ("a", "b", "qa", "qb", "ta", "tb")

HBAR_JS = 1.054571817e-34  # J*s
RAD_PER_US_PER_S = 1.0e6   # rad/us -> rad/s

# transistor transmon levels
LVL_G, LVL_E, LVL_F = 0, 1, 2


@dataclass(frozen=True)
class DeviceParams:
    """Physical device parameters (angular rad/us; rates 1/us; times us).

    ``chi_a1``/``chi_a2`` set the photon-number dependent coupling that
    resonator a's occupation induces between resonator b and qubit qb
    (and ``chi_b1``/``chi_b2`` symmetrically); ``chi_ab`` is the cross-Kerr
    shift; ``g_ta``/``g_tb`` couple the transistor e-f transitions to their
    resonators; ``g_res_a``/``g_res_b`` are optional bare exchange couplings
    added on top of the photon-induced ones.  ``gamma`` is the qubit decay
    rate and ``gamma_t`` the transistor e->g rate.  ``n_target_a/b`` are the
    steady-state photon-number targets fixing the drive amplitudes
    alpha = sqrt(n_target_a) * kappa_a / 2 (likewise beta).
    ``transistor_f_decay`` adds optional f->e decay channels at ``gamma_t``.
    """

    chi_a1: float
    chi_a2: float
    chi_b1: float
    chi_b2: float
    chi_ab: float
    g_ta: float
    g_tb: float
    kappa_a: float
    kappa_b: float
    gamma: float
    gamma_t: float
    n_target_a: float
    n_target_b: float
    omega_a: float
    omega_b: float
    g_res_a: float = 0.0
    g_res_b: float = 0.0
    truncation_a: int = 20
    truncation_b: int = 20
    transistor_f_decay: bool = False

    def __post_init__(self):
        for name in (
            "chi_a1", "chi_a2", "chi_b1", "chi_b2", "chi_ab",
            "g_ta", "g_tb", "g_res_a", "g_res_b",
            "kappa_a", "kappa_b", "gamma", "gamma_t",
            "n_target_a", "n_target_b", "omega_a", "omega_b",
        ):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        for name in ("kappa_a", "kappa_b", "gamma", "gamma_t",
                     "n_target_a", "n_target_b", "omega_a", "omega_b"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("truncation_a", "truncation_b"):
            t = getattr(self, name)
            if not isinstance(t, int) or t < 2:
                raise ValueError(f"{name} must be an integer >= 2, got {t!r}")

    @property
    def alpha(self):
        """Drive amplitude on resonator a (real, positive convention)."""
        return math.sqrt(self.n_target_a) * self.kappa_a / 2.0

    @property
    def beta(self):
        """Drive amplitude on resonator b."""
        return math.sqrt(self.n_target_b) * self.kappa_b / 2.0


@dataclass(frozen=True)
class PulseEvent:
    """Instantaneous pi-pulse on a transistor g-e transition."""

    time: float
    kind: str  # "set" -> ta, "reset" -> tb

    def __post_init__(self):
        if self.kind not in ("set", "reset"):
            raise ValueError(f"pulse kind must be 'set' or 'reset', got {self.kind!r}")
        if not math.isfinite(self.time) or self.time < 0:
            raise ValueError(f"pulse time must be finite and >= 0, got {self.time}")

    @property
    def target(self):
        return "ta" if self.kind == "set" else "tb"


@dataclass(frozen=True)
class PulseSchedule:
    """Pulse events plus drive turn-on times.

    Events must be sorted strictly increasing in time; runners additionally
    reject events closer than one integrator step.
    """

    events: tuple = ()
    drive_a_on: float = 0.0
    drive_b_on: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        times = [e.time for e in self.events]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("pulse events must be sorted strictly increasing in time")
        for name in ("drive_a_on", "drive_b_on"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")

    def check_spacing(self, dt):
        """Reject events closer together than one integrator step."""
        times = [e.time for e in self.events]
        for t1, t2 in zip(times, times[1:]):
            if t2 - t1 < dt:
                raise ValueError(
                    f"pulse events at {t1} and {t2} us are closer than one step ({dt} us)"
                )


def space_for(p: DeviceParams) -> CompositeSpace:
    """Composite space (a, b, qa, qb, ta, tb) for the given truncations."""
    return CompositeSpace(
        dims=(p.truncation_a, p.truncation_b, 2, 2, 3, 3),
        names=SUBSYSTEMS,
    )


def _mode_ops(p, space):
    a = embed(fock_annihilation(p.truncation_a), "a", space)
    b = embed(fock_annihilation(p.truncation_b), "b", space)
    sm_qa = embed(level_transition(2, 1, 0), "qa", space)
    sm_qb = embed(level_transition(2, 1, 0), "qb", space)
    fe_ta = embed(level_transition(3, LVL_E, LVL_F), "ta", space)  # |f><e|
    fe_tb = embed(level_transition(3, LVL_E, LVL_F), "tb", space)
    return a, b, sm_qa, sm_qb, fe_ta, fe_tb


def build_hamiltonian(p: DeviceParams, space: CompositeSpace, *,
                      drive_a=True, drive_b=True) -> SparseOperator:
    """Full device Hamiltonian; drive terms can be gated off individually.

    Terms: photon-number-conditioned exchange between each resonator and
    its qubit, the cross-Kerr shift, the transistor e-f couplings, and the
    resonant linear drives.
    """
    a, b, sm_qa, sm_qb, fe_ta, fe_tb = _mode_ops(p, space)
    ad, bd = a.adjoint(), b.adjoint()
    na = ad @ a
    nb = bd @ b

    # (g_res_a + (chi_a1 - chi_a2 n_a) n_a) (b^dag sigma_qb^- + h.c.)
    cond_a = p.chi_a1 * na - p.chi_a2 * (na @ na)
    if p.g_res_a != 0.0:
        cond_a = cond_a + p.g_res_a * identity(space.dim, space=space)
    exch_b = bd @ sm_qb
    term_a = cond_a @ (exch_b + exch_b.adjoint())

    cond_b = p.chi_b1 * nb - p.chi_b2 * (nb @ nb)
    if p.g_res_b != 0.0:
        cond_b = cond_b + p.g_res_b * identity(space.dim, space=space)
    exch_a = ad @ sm_qa
    term_b = cond_b @ (exch_a + exch_a.adjoint())

    cross = p.chi_ab * (na @ nb)

    ht_a = p.g_ta * (fe_ta @ a)
    ht_b = p.g_tb * (fe_tb @ b)
    h_t = ht_a + ht_a.adjoint() + ht_b + ht_b.adjoint()

    h = term_a + term_b + cross + h_t
    if drive_a and p.alpha != 0.0:
        h = h + p.alpha * (a + ad)
    if drive_b and p.beta != 0.0:
        h = h + p.beta * (b + bd)
    return SparseOperator(h.to_csr(), space=space, hermitian=True)


def hamiltonian_segments(p, space, schedule):
    """Piecewise-constant Hamiltonian segments from the drive turn-on times.

    Returns a list of (t_start, SparseOperator); the first segment starts
    at t = 0.  Pi-pulse events do not change the Hamiltonian.
    """
    on_times = sorted({0.0, schedule.drive_a_on, schedule.drive_b_on})
    segments = []
    for t in on_times:
        segments.append(
            (t, build_hamiltonian(
                p, space,
                drive_a=t >= schedule.drive_a_on,
                drive_b=t >= schedule.drive_b_on,
            ))
        )
    return segments


def build_jump_operators(p: DeviceParams, space: CompositeSpace):
    """Decay channels as (operator, label) pairs in fixed label order.

    Channels: photon loss on each resonator, qubit decay, transistor e->g
    decay; optional transistor f->e decay behind ``transistor_f_decay``.
    Zero-rate channels are dropped.
    """
    a, b, sm_qa, sm_qb, _, _ = _mode_ops(p, space)
    eg_ta = embed(level_transition(3, LVL_E, LVL_G), "ta", space)  # |g><e|
    eg_tb = embed(level_transition(3, LVL_E, LVL_G), "tb", space)
    channels = [
        (p.kappa_a, a, "a_loss"),
        (p.kappa_b, b, "b_loss"),
        (p.gamma, sm_qa, "qa_decay"),
        (p.gamma, sm_qb, "qb_decay"),
        (p.gamma_t, eg_ta, "ta_decay"),
        (p.gamma_t, eg_tb, "tb_decay"),
    ]
    if p.transistor_f_decay:
        ef_ta = embed(level_transition(3, LVL_F, LVL_E), "ta", space)  # |e><f|
        ef_tb = embed(level_transition(3, LVL_F, LVL_E), "tb", space)
        channels.append((p.gamma_t, ef_ta, "ta_f_decay"))
        channels.append((p.gamma_t, ef_tb, "tb_f_decay"))
    out = []
    for rate, op, label in channels:
        if rate > 0.0:
            out.append((math.sqrt(rate) * op, label))
    return out


def initial_state(p: DeviceParams, space: CompositeSpace) -> StateVector:
    """Both resonators empty, qubits in g, transistors in g."""
    return basis_state(space, (0, 0, 0, 0, LVL_G, LVL_G))


def pulse_operator(space: CompositeSpace, target: str) -> SparseOperator:
    """Unitary of an instantaneous pi-pulse on the g-e transition.

    |g> -> -i|e>, |e> -> -i|g>, |f> untouched.
    """
    if target not in ("ta", "tb"):
        raise ValueError(f"pulse target must be 'ta' or 'tb', got {target!r}")
    u3 = (-1j) * (level_transition(3, LVL_G, LVL_E) + level_transition(3, LVL_E, LVL_G)) \
        + level_transition(3, LVL_F, LVL_F)
    return embed(u3, target, space)


def apply_pi_pulse(state: StateVector, target: str) -> StateVector:
    """Apply the pi-pulse unitary on the named transistor."""
    return pulse_operator(state.space, target).apply(state)


def drive_power(p: DeviceParams) -> float:
    """Steady-state emission power replenished by the a-drive, in watts."""
    if p.omega_a <= 0:
        raise ValueError("omega_a must be > 0 for a physical drive power")
    omega_si = p.omega_a * RAD_PER_US_PER_S
    kappa_si = p.kappa_a * RAD_PER_US_PER_S
    return HBAR_JS * omega_si * kappa_si * p.n_target_a


def effective_coupling(p: DeviceParams, resonator: str, n: float) -> float:
    """Exchange coupling induced on the named resonator's qubit (rad/us).

    ``effective_coupling(p, "b", n)`` is the b <-> qb coupling produced by
    n photons in resonator a: g_res_a + (chi_a1 - chi_a2 n) n, and
    symmetrically for ``"a"`` with photons in resonator b.
    """
    if resonator == "b":
        return p.g_res_a + (p.chi_a1 - p.chi_a2 * n) * n
    if resonator == "a":
        return p.g_res_b + (p.chi_b1 - p.chi_b2 * n) * n
    raise ValueError(f"resonator must be 'a' or 'b', got {resonator!r}")


def drive_amplitude(p: DeviceParams, resonator: str) -> float:
    if resonator == "a":
        return p.alpha
    if resonator == "b":
        return p.beta
    raise ValueError(f"resonator must be 'a' or 'b', got {resonator!r}")


def check_dt(p: DeviceParams, dt: float):
    """Enforce dt <= 0.1 / (fastest coupling rate)."""
    fastest = max(abs(p.g_ta), abs(p.g_tb), abs(p.g_res_a), abs(p.g_res_b))
    if fastest > 0 and dt > 0.1 / fastest:
        raise ValueError(
            f"dt = {dt} us does not resolve the fastest coupling "
            f"({fastest:.3g} rad/us); need dt <= {0.1 / fastest:.3g} us"
        )


def device_observables(space: CompositeSpace):
    """Named observables sampled along trajectories, in output column order.

    n_a/n_b photon numbers, p_qa/p_qb excited-state populations, and the
    transistor population difference <|f><f| - |g><g|> for ta and tb.
    """
    proj_e2 = level_transition(2, 1, 1)
    fg3 = level_transition(3, LVL_F, LVL_F) - level_transition(3, LVL_G, LVL_G)
    return {
        "n_a": embed(fock_number(space.dims[0]), "a", space),
        "n_b": embed(fock_number(space.dims[1]), "b", space),
        "p_qa": embed(proj_e2, "qa", space),
        "p_qb": embed(proj_e2, "qb", space),
        "ta_fg": embed(fg3, "ta", space),
        "tb_fg": embed(fg3, "tb", space),
    }


def leakage_operator(space: CompositeSpace) -> SparseOperator:
    """Sum of the top-two Fock-level populations of both resonators.

    Used as the truncation-leakage diagnostic; values above 1e-3 flag a
    run as truncation-limited.
    """
    na_dim, nb_dim = space.dims[0], space.dims[1]
    top_a = level_transition(na_dim, na_dim - 1, na_dim - 1) \
        + level_transition(na_dim, na_dim - 2, na_dim - 2)
    top_b = level_transition(nb_dim, nb_dim - 1, nb_dim - 1) \
        + level_transition(nb_dim, nb_dim - 2, nb_dim - 2)
    return embed(top_a, "a", space) + embed(top_b, "b", space)
