"""Exact density-matrix dynamics of a spin-1 probe coupled to a spin-1/2 bath."""

from .hamiltonian import HamiltonianSpec, Propagator, SpinModel, build_hamiltonian
from .operators import bath_bloch_vectors, maximally_mixed, product_bath_state, trace_distance
from .protocols import (
    SPINLOCK_VARIANTS,
    ConvergenceError,
    CycleParams,
    LarmorMismatchWarning,
    PSEResult,
    SteadyState,
    echo_backaction_residual,
    find_dips,
    measurement_cycle,
    novel_segments,
    pse_schedule,
    pse_trace,
    run_cse,
    run_novel,
    run_pse,
    run_xy8,
    spinlock_variants,
    steady_state_cycle,
    twait_averaged_steady_y,
    xy8_schedule,
)
from .schedule import BathChannel, Evolve, PulseSchedule, Readout, Reset, Rotate, execute
from .state import (
    InvalidStateError,
    PolarizationRecord,
    QuantumState,
    bath_polarization,
    polarization_csv,
)


def evolve(state: QuantumState, h, t: float) -> QuantumState:
    """``rho -> exp(-iHt) rho exp(iHt)`` for a Hermitian matrix or a ``Propagator``."""
    prop = h if isinstance(h, Propagator) else Propagator(h)
    if prop.h.shape != state.rho.shape:
        raise ValueError(f"Hamiltonian {prop.h.shape} does not match state {state.rho.shape}")
    u = prop(t)
    return QuantumState(u @ state.rho @ u.conj().T, state.k)
