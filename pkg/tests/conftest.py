"""Shared fixtures: nominal device parameters and small helper systems."""

import math

import numpy as np
import pytest

from flipsim.device import DeviceParams
from flipsim.spaces import CompositeSpace, SparseOperator, fock_annihilation

TWO_PI = 2.0 * math.pi

_ACCEPTANCE_LINES = []


def record_acceptance(name, passed, detail):
    _ACCEPTANCE_LINES.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE_LINES:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  ({detail})")


def nominal_params(**overrides):
    """Device parameters of the standard operating point."""
    base = dict(
        chi_a1=TWO_PI * 0.98,
        chi_a2=TWO_PI * 0.011,
        chi_b1=TWO_PI * 1.04,
        chi_b2=TWO_PI * 0.012,
        chi_ab=TWO_PI * 0.07,
        g_ta=TWO_PI * 30.0,
        g_tb=TWO_PI * 30.0,
        g_res_a=0.0,
        g_res_b=0.0,
        kappa_a=TWO_PI * 0.1,
        kappa_b=TWO_PI * 0.1,
        gamma=1.0 / 12.0,
        gamma_t=1.0 / 20.0,
        n_target_a=8.0,
        n_target_b=8.0,
        omega_a=TWO_PI * 7.0e9 * 1e-6,
        omega_b=TWO_PI * 5.0e9 * 1e-6,
        truncation_a=20,
        truncation_b=20,
    )
    base.update(overrides)
    return DeviceParams(**base)


@pytest.fixture
def paper_params():
    return nominal_params()


def driven_cavity(dim, kappa, alpha):
    """Single driven damped mode: H = alpha (a + a^dag), jump sqrt(kappa) a."""
    space = CompositeSpace(dims=(dim,), names=("a",))
    a = SparseOperator(fock_annihilation(dim).to_csr(), space=space)
    h = alpha * (a + a.adjoint())
    h = SparseOperator(h.to_csr(), space=space, hermitian=True)
    jump = SparseOperator((math.sqrt(kappa) * a).to_csr(), space=space)
    return space, h, [(jump, "a_loss")], a


def cavity_fill_curve(times, n_target, kappa):
    """Mean photon number of the driven cavity from vacuum."""
    return n_target * (1.0 - np.exp(-kappa * np.asarray(times) / 2.0)) ** 2
