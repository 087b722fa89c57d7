"""Device model: Hamiltonian structure, jump channels, pulses, derived figures."""

import math

import numpy as np
import pytest

from conftest import TWO_PI, nominal_params

from flipsim.device import (
    LVL_E,
    LVL_F,
    LVL_G,
    PulseEvent,
    PulseSchedule,
    apply_pi_pulse,
    build_hamiltonian,
    build_jump_operators,
    check_dt,
    device_observables,
    drive_power,
    effective_coupling,
    hamiltonian_segments,
    initial_state,
    space_for,
)
from flipsim.spaces import basis_state


def tiny_params(**overrides):
    """Full device at truncation 3 so dense checks stay cheap."""
    return nominal_params(truncation_a=3, truncation_b=3, **overrides)


def test_space_for_layout():
    space = space_for(nominal_params())
    assert space.dims == (20, 20, 2, 2, 3, 3)
    assert space.names == ("a", "b", "qa", "qb", "ta", "tb")
    assert space.dim == 14400


def test_hamiltonian_zero_when_all_couplings_off():
    p = tiny_params(
        chi_a1=0.0, chi_a2=0.0, chi_b1=0.0, chi_b2=0.0, chi_ab=0.0,
        g_ta=0.0, g_tb=0.0, n_target_a=0.0, n_target_b=0.0,
    )
    h = build_hamiltonian(p, space_for(p))
    assert h.nnz == 0


def test_hamiltonian_hermitian_entrywise():
    p = tiny_params()
    h = build_hamiltonian(p, space_for(p)).to_csr()
    diff = (h - h.conj().T).toarray()
    assert np.max(np.abs(diff)) < 1e-12


def test_conditioned_exchange_matrix_element():
    # <1,0,qb=e| H |1,1,qb=g> = chi_a1 - chi_a2 with only that coupling on
    p = tiny_params(
        chi_b1=0.0, chi_b2=0.0, chi_ab=0.0, g_ta=0.0, g_tb=0.0,
        n_target_a=0.0, n_target_b=0.0,
    )
    space = space_for(p)
    h = build_hamiltonian(p, space)
    bra = basis_state(space, (1, 0, 0, 1, LVL_G, LVL_G))
    ket = basis_state(space, (1, 1, 0, 0, LVL_G, LVL_G))
    elem = np.vdot(bra.amplitudes, h.apply(ket).amplitudes)
    assert elem == pytest.approx(p.chi_a1 - p.chi_a2, rel=1e-12)


def test_effective_couplings_match_quoted_values():
    p = nominal_params()
    gb = effective_coupling(p, "b", 8.0)
    ga = effective_coupling(p, "a", 8.0)
    assert abs(gb - TWO_PI * 7.1) / (TWO_PI * 7.1) < 0.01
    assert abs(ga - TWO_PI * 7.6) / (TWO_PI * 7.6) < 0.01


def test_jump_channel_labels_and_order():
    p = tiny_params()
    labels = [lab for _, lab in build_jump_operators(p, space_for(p))]
    assert labels == [
        "a_loss", "b_loss", "qa_decay", "qb_decay", "ta_decay", "tb_decay",
    ]


def test_zero_rate_channels_dropped():
    p = tiny_params(kappa_a=0.0)
    labels = [lab for _, lab in build_jump_operators(p, space_for(p))]
    assert "a_loss" not in labels
    assert labels[0] == "b_loss"


def test_f_decay_channels_optional():
    p = tiny_params(transistor_f_decay=True)
    labels = [lab for _, lab in build_jump_operators(p, space_for(p))]
    assert labels[-2:] == ["ta_f_decay", "tb_f_decay"]


def test_photon_loss_action_and_rate():
    p = tiny_params()
    space = space_for(p)
    ops = dict((lab, op) for op, lab in build_jump_operators(p, space))
    one = basis_state(space, (1, 0, 0, 0, LVL_G, LVL_G))
    out = ops["a_loss"].apply(one)
    vac = basis_state(space, (0, 0, 0, 0, LVL_G, LVL_G))
    assert np.allclose(out.amplitudes, math.sqrt(p.kappa_a) * vac.amplitudes)
    # quoted bare cavity lifetime ~1.5 us
    assert 1.0 / p.kappa_a == pytest.approx(1.59, abs=0.01)


def test_jump_operators_annihilate_ground_state():
    p = tiny_params()
    space = space_for(p)
    psi0 = initial_state(p, space)
    for op, label in build_jump_operators(p, space):
        assert np.allclose(op.apply(psi0).amplitudes, 0.0), label


def test_initial_state_is_global_ground():
    p = tiny_params()
    space = space_for(p)
    psi0 = initial_state(p, space)
    assert psi0.norm() == pytest.approx(1.0, abs=1e-12)
    obs = device_observables(space)
    for name in ("n_a", "n_b", "p_qa", "p_qb"):
        assert obs[name].expectation(psi0) == pytest.approx(0.0, abs=1e-12)
    assert obs["ta_fg"].expectation(psi0) == pytest.approx(-1.0, abs=1e-12)
    assert obs["tb_fg"].expectation(psi0) == pytest.approx(-1.0, abs=1e-12)


def test_pi_pulse_swaps_g_and_e():
    p = tiny_params()
    space = space_for(p)
    psi = initial_state(p, space)
    pulsed = apply_pi_pulse(psi, "ta")
    excited = basis_state(space, (0, 0, 0, 0, LVL_E, LVL_G))
    assert np.allclose(pulsed.amplitudes, -1j * excited.amplitudes)
    assert pulsed.norm() == pytest.approx(1.0, abs=1e-12)


def test_pi_pulse_twice_is_minus_identity_on_ge():
    p = tiny_params()
    space = space_for(p)
    psi = initial_state(p, space)
    twice = apply_pi_pulse(apply_pi_pulse(psi, "tb"), "tb")
    assert np.allclose(twice.amplitudes, -psi.amplitudes)


def test_pi_pulse_leaves_f_level_alone():
    p = tiny_params()
    space = space_for(p)
    psi = basis_state(space, (0, 0, 0, 0, LVL_F, LVL_G))
    pulsed = apply_pi_pulse(psi, "ta")
    assert np.allclose(pulsed.amplitudes, psi.amplitudes)


def test_drive_power_value_and_linearity():
    p = nominal_params()
    watts = drive_power(p)
    assert watts == pytest.approx(2.3e-17, rel=0.05)
    assert drive_power(nominal_params(n_target_a=16.0)) == pytest.approx(
        2.0 * watts, rel=1e-12
    )
    assert drive_power(nominal_params(n_target_a=0.0)) == 0.0


def test_drive_amplitude_definition():
    p = nominal_params()
    assert p.alpha == pytest.approx(math.sqrt(8.0) * p.kappa_a / 2.0, rel=1e-12)
    assert p.beta == pytest.approx(math.sqrt(8.0) * p.kappa_b / 2.0, rel=1e-12)


def test_check_dt_enforces_fastest_scale():
    p = nominal_params()
    check_dt(p, 5e-4)
    with pytest.raises(ValueError):
        check_dt(p, 1e-3)


def test_excitation_structure_of_couplings():
    # with chi2 terms off, every H element changes occupations by one
    # excitation-conserving exchange or one drive photon
    p = tiny_params(chi_a2=0.0, chi_b2=0.0)
    space = space_for(p)
    h = build_hamiltonian(p, space).to_csr().tocoo()
    for r, c in zip(h.row, h.col):
        if r == c:
            continue
        occ_r = space.occupations(r)
        occ_c = space.occupations(c)
        delta = [x - y for x, y in zip(occ_r, occ_c)]
        moves = {
            (0, 1, 0, -1, 0, 0), (0, -1, 0, 1, 0, 0),   # b <-> qb
            (1, 0, -1, 0, 0, 0), (-1, 0, 1, 0, 0, 0),   # a <-> qa
            (-1, 0, 0, 0, 1, 0), (1, 0, 0, 0, -1, 0),   # a photon <-> ta e-f
            (0, -1, 0, 0, 0, 1), (0, 1, 0, 0, 0, -1),   # b photon <-> tb e-f
            (1, 0, 0, 0, 0, 0), (-1, 0, 0, 0, 0, 0),    # a drive
            (0, 1, 0, 0, 0, 0), (0, -1, 0, 0, 0, 0),    # b drive
        }
        assert tuple(delta) in moves, (occ_r, occ_c)


def test_hamiltonian_segments_gate_drives():
    p = tiny_params()
    space = space_for(p)
    sched = PulseSchedule(events=(), drive_a_on=0.0, drive_b_on=5.0)
    segs = hamiltonian_segments(p, space, sched)
    assert [t for t, _ in segs] == [0.0, 5.0]
    both = build_hamiltonian(p, space, drive_a=True, drive_b=True)
    a_only = build_hamiltonian(p, space, drive_a=True, drive_b=False)
    assert (segs[0][1].to_csr() - a_only.to_csr()).nnz == 0
    assert (segs[1][1].to_csr() - both.to_csr()).nnz == 0


def test_pulse_schedule_ordering_enforced():
    with pytest.raises(ValueError):
        PulseSchedule(
            events=(PulseEvent(time=5.0, kind="set"),
                    PulseEvent(time=5.0, kind="reset")),
            drive_a_on=0.0,
            drive_b_on=0.0,
        )


def test_pulse_targets():
    assert PulseEvent(time=1.0, kind="set").target == "ta"
    assert PulseEvent(time=1.0, kind="reset").target == "tb"


def test_negative_rate_rejected():
    with pytest.raises(ValueError):
        tiny_params(kappa_a=-1.0)
