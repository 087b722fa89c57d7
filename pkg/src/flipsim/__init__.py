"""Simulator and analysis toolkit for a dissipative two-resonator memory.

Subpackages by responsibility: ``spaces`` (tensor-product operator
algebra), ``device`` (Hamiltonian, jump channels, pulse schedule),
``trajectory`` (jump-unraveled stochastic integration and ensembles),
``lindblad`` (density-matrix propagation and steady states),
``analysis`` (closed-form estimates, exponential fits, switch
detection), ``config``/``experiments``/``cli`` (YAML-driven runners).
"""

__version__ = "0.1.0"

from .analysis import (
    MemoryTimeResult, SteadyStateBranch, SwitchResult, detect_switches,
    fit_exponential, memory_time_estimate, qubit_corrected_memory_time,
    qubit_population_ratio, steady_state_branch,
)
from .device import (
    DeviceParams, PulseEvent, PulseSchedule, apply_pi_pulse,
    build_hamiltonian, build_jump_operators, device_observables, drive_power,
    hamiltonian_segments, initial_state, space_for,
)
from .errors import (
    ConfigError, DegenerateSteadyStateError, FitError, FlipsimError,
    IntegrationError, NumericalError, TailNotConvergedError,
    ValidationFailure,
)
from .lindblad import evolve_master_equation, liouvillian, steady_state
from .spaces import (
    CompositeSpace, SparseOperator, StateVector, basis_state, embed,
    fock_annihilation, fock_number, identity, level_transition,
)
from .trajectory import (
    EnsembleRecord, TrajectoryRecord, evolve_trajectory, run_ensemble,
)

__all__ = [
    "__version__",
    "CompositeSpace", "SparseOperator", "StateVector", "basis_state",
    "embed", "fock_annihilation", "fock_number", "identity",
    "level_transition",
    "DeviceParams", "PulseEvent", "PulseSchedule", "apply_pi_pulse",
    "build_hamiltonian", "build_jump_operators", "device_observables",
    "drive_power", "hamiltonian_segments", "initial_state", "space_for",
    "TrajectoryRecord", "EnsembleRecord", "evolve_trajectory",
    "run_ensemble",
    "liouvillian", "evolve_master_equation", "steady_state",
    "MemoryTimeResult", "SteadyStateBranch", "SwitchResult",
    "memory_time_estimate", "qubit_population_ratio",
    "qubit_corrected_memory_time", "steady_state_branch",
    "fit_exponential", "detect_switches",
    "FlipsimError", "ConfigError", "NumericalError", "IntegrationError",
    "DegenerateSteadyStateError", "TailNotConvergedError", "FitError",
    "ValidationFailure",
]
