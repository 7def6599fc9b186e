"""Experiment building blocks: echoes, spin-lock polarization and measurement cycles.

Probe qubit conventions: ``basis = (up, down)`` names the two probe levels,
``up`` is where the probe starts, a pi/2 pulse about y prepares
``(|up> + |down>)/sqrt(2)`` and refocusing pulses are about x.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..trace import CoherenceTrace
from .hamiltonian import SpinModel, check_basis
from .operators import maximally_mixed, trace_distance
from .schedule import BathChannel, Evolve, PulseSchedule, Readout, Reset, Rotate, execute
from .state import PolarizationRecord, QuantumState, bath_polarization

HALF_PI = 0.5 * math.pi
XY8_PHASES = (0.0, HALF_PI, 0.0, HALF_PI, HALF_PI, 0.0, HALF_PI, 0.0)
SPINLOCK_VARIANTS = ("full", "no-Apar", "balanced-basis", "both")


class ConvergenceError(RuntimeError):
    """Steady-state iteration did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class LarmorMismatchWarning(UserWarning):
    """CSE spacing is not an integer number of Larmor periods."""


def _check_tau(tau: float):
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")


def echo_segments(tau: float, M: int = 1, basis=(0, -1), phases=None) -> list:
    """pi/2_y then M refocusing pulses spaced ``tau`` (half gaps at the ends)."""
    _check_tau(tau)
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    basis = check_basis(basis)
    phases = [0.0] * int(M) if phases is None else list(phases)
    segs = [Rotate(HALF_PI, HALF_PI, basis)]
    for i, ph in enumerate(phases):
        segs.append(Evolve(tau / 2 if i == 0 else tau))
        segs.append(Rotate(math.pi, ph, basis))
    segs.append(Evolve(tau / 2))
    return segs


def pse_schedule(tau: float, M: int = 1, basis=(0, -1), label: str = "pse") -> PulseSchedule:
    """Phase-resolved spin echo: init, pi/2, ``[tau/2 - pi - tau/2]^M``, readout."""
    basis = check_basis(basis)
    segs = [Reset(basis[0])] + echo_segments(tau, M, basis)
    segs.append(Readout(label, basis, flipped=bool(M % 2)))
    return PulseSchedule(segs)


@dataclass
class PSEResult:
    x: float
    y: float
    state: QuantumState

    @property
    def w(self) -> complex:
        return complex(self.x, -self.y)


def run_pse(model: SpinModel, state: QuantumState, tau: float, M: int = 1,
            basis=(0, -1)) -> PSEResult:
    """Run one PSE; returns ``<X>``, ``<Y>`` and the readout-dephased state."""
    rho, ro = execute(model, pse_schedule(tau, M, basis), state.rho)
    w = ro["pse"][0]
    return PSEResult(w.real, -w.imag, QuantumState(rho, state.k))


def pse_trace(model: SpinModel, bath_rho: np.ndarray, tau_grid, M: int = 1,
              basis=(0, -1)) -> CoherenceTrace:
    """PSE ``<X>``, ``<Y>`` against tau for a fixed initial bath state."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    w = np.empty(tau_grid.size, dtype=complex)
    for i, tau in enumerate(tau_grid):
        ch = BathChannel(model, pse_schedule(tau, M, basis))
        w[i] = ch.apply(bath_rho)[1]["pse"][0]
    return CoherenceTrace.from_w(tau_grid, w, control_name="tau_us",
                                 meta={"M": int(M), "basis": list(check_basis(basis))})


def _larmor_multiple(model: SpinModel, spacing: float) -> float:
    return spacing / model.larmor_period


def cse_segments(model: SpinModel, tau: float, spacing: float, elapsed: float,
                 basis=(0, 1)) -> list:
    """Reset, wait until ``spacing`` after the PSE start, unread echo, reset."""
    n = _larmor_multiple(model, spacing)
    if not spacing > 0:
        raise ValueError(f"CSE spacing must be > 0, got {spacing}")
    if abs(n - round(n)) > 1e-6 or round(n) < 1:
        warnings.warn(f"CSE spacing {spacing} us is {n:.4f} Larmor periods, not an integer;"
                      " first-order back-action will not cancel",
                      LarmorMismatchWarning, stacklevel=3)
    gap = spacing - elapsed
    if gap < -1e-12:
        raise ValueError(f"CSE would start {-gap:.4g} us before the PSE ends")
    basis = check_basis(basis)
    return ([Reset(basis[0]), Evolve(max(gap, 0.0))] + echo_segments(tau, 1, basis)
            + [Reset(0)])


def run_cse(model: SpinModel, state: QuantumState, tau: float, spacing: float,
            elapsed: float | None = None, basis=(0, 1)) -> QuantumState:
    """Compensating echo starting ``spacing`` us after the preceding PSE began.

    ``elapsed`` is the time already spent since that PSE started (defaults to
    ``tau``, i.e. a Hahn PSE that has just been read out).  The probe is
    reinitialized at the start and traced out at the end; no readout.
    """
    elapsed = tau if elapsed is None else elapsed
    segs = cse_segments(model, tau, spacing, elapsed, basis)
    rho, _ = execute(model, PulseSchedule(segs), state.rho)
    return QuantumState(rho, state.k)


def _init_angle(init) -> float:
    key = str(init).strip().upper().replace("|", "").replace(">", "").replace("⟩", "")
    if key in ("+X", "X", "+1", "1"):
        return HALF_PI
    if key in ("-X", "-1"):
        return -HALF_PI
    raise ValueError(f"init must be '+X' or '-X', got {init!r}")


def novel_segments(model: SpinModel, t_sl: float, omega_sl: float | None = None,
                   detuning: float = 0.0, init="+X", N: int = 1, basis=(0, -1),
                   drop_apar: bool = False) -> list:
    """N spin-lock pulses, each from a freshly reinitialized probe."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if not t_sl >= 0:
        raise ValueError(f"t_SL must be >= 0, got {t_sl}")
    basis = check_basis(basis)
    omega_sl = model.omega_L if omega_sl is None else omega_sl
    h = model.spinlock(omega_sl, detuning, 0.0, basis, drop_apar)
    segs = []
    for _ in range(int(N)):
        segs += [Reset(basis[0]), Rotate(_init_angle(init), HALF_PI, basis), Evolve(t_sl, h)]
    return segs + [Reset(0)]


def run_novel(model: SpinModel, state: QuantumState, t_sl: float,
              omega_sl: float | None = None, detuning: float = 0.0, init="+X",
              N: int = 1) -> QuantumState:
    """Apply N NOVEL repetitions; the probe ends reinitialized to ``|0>``."""
    segs = novel_segments(model, t_sl, omega_sl, detuning, init, N)
    rho, _ = execute(model, PulseSchedule(segs), state.rho)
    return QuantumState(rho, state.k)


def xy8_schedule(tau: float, repeats: int = 2, basis=(0, -1)) -> PulseSchedule:
    """XY8-``repeats``: ``8*repeats`` pi pulses spaced ``tau``."""
    if int(repeats) != repeats or repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    basis = check_basis(basis)
    segs = [Reset(basis[0])] + echo_segments(tau, 8 * repeats, basis,
                                             XY8_PHASES * int(repeats))
    segs.append(Readout("xy8", basis, flipped=False))
    return PulseSchedule(segs)


def run_xy8(model: SpinModel, state: QuantumState, tau_grid, repeats: int = 2,
            basis=(0, -1)) -> CoherenceTrace:
    """XY8 coherence against the pulse spacing ``tau``."""
    tau_grid = np.atleast_1d(np.asarray(tau_grid, dtype=float))
    bath_rho = state.bath
    w = np.empty(tau_grid.size, dtype=complex)
    for i, tau in enumerate(tau_grid):
        w[i] = BathChannel(model, xy8_schedule(tau, repeats, basis)).apply(bath_rho)[1]["xy8"][0]
    return CoherenceTrace.from_w(tau_grid, w, control_name="tau_us",
                                 meta={"sequence": f"XY8-{repeats}"})


def find_dips(trace: CoherenceTrace, min_depth: float = 0.02) -> np.ndarray:
    """Control values of local minima of ``<X>`` at least ``min_depth`` deep.

    Depth is measured against the lower of the two neighbouring maxima.
    """
    from scipy.signal import find_peaks

    idx, _ = find_peaks(-trace.x, prominence=min_depth)
    return trace.control[idx]


def spinlock_variants(model: SpinModel, variant: str, t_grid, omega_sl: float | None = None,
                      detuning: float = 0.0) -> list[PolarizationRecord]:
    """Bath polarization during one spin-lock pulse from an unpolarized bath.

    Variants: ``full`` (drive on {0,-1}), ``no-Apar`` (axial couplings
    removed), ``balanced-basis`` (drive on {+1,-1}, probe in
    ``(|+1> + |-1>)/sqrt(2)``) and ``both``.
    """
    if variant not in SPINLOCK_VARIANTS:
        raise ValueError(f"variant must be one of {SPINLOCK_VARIANTS}, got {variant!r}")
    basis = (1, -1) if variant in ("balanced-basis", "both") else (0, -1)
    drop = variant in ("no-Apar", "both")
    omega_sl = model.omega_L if omega_sl is None else omega_sl
    prop = model.propagator(model.spinlock(omega_sl, detuning, 0.0, basis, drop))
    start = QuantumState.from_bath(maximally_mixed(model.k), basis[0])
    rho0, _ = execute(model, PulseSchedule([Rotate(HALF_PI, HALF_PI, basis)]), start.rho)
    out = []
    for t in np.asarray(t_grid, dtype=float):
        u = prop(t)
        rec = bath_polarization(QuantumState(u @ rho0 @ u.conj().T, model.k), t)
        rec.meta["variant"] = variant
        out.append(rec)
    return out


@dataclass(frozen=True)
class CycleParams:
    """One NOVEL + wait + PSE (+ CSE) repetition.

    ``t_sum`` runs from the end of the last NOVEL pulse to the start of the
    next repetition.  The CSE starts ``n_larmor`` Larmor periods after the
    PSE start; ``n_larmor=None`` picks the smallest multiple that clears the
    PSE.
    """

    tau: float
    t_wait: float
    t_sum: float
    M: int = 1
    n_novel: int = 3
    t_sl: float = 4.0
    omega_sl: float | None = None
    detuning: float = 0.0
    init: str = "+X"
    cse: bool = True
    n_larmor: int | None = None
    pse_basis: tuple[int, int] = (0, -1)
    cse_basis: tuple[int, int] = (0, 1)


def measurement_cycle(model: SpinModel, p: CycleParams) -> PulseSchedule:
    """Schedule for one full repetition, ending with the probe traced out."""
    _check_tau(p.tau)
    if p.t_wait < 0:
        raise ValueError("t_wait must be >= 0")
    t_pse = p.M * p.tau
    segs = novel_segments(model, p.t_sl, p.omega_sl, p.detuning, p.init, p.n_novel)
    segs.append(Evolve(p.t_wait))
    segs += pse_schedule(p.tau, p.M, p.pse_basis).segments
    used = p.t_wait + t_pse
    if p.cse:
        n = p.n_larmor
        if n is None:
            n = max(1, math.ceil(t_pse / model.larmor_period - 1e-9))
        spacing = n * model.larmor_period
        segs += cse_segments(model, p.tau, spacing, t_pse, p.cse_basis)
        used = p.t_wait + spacing + p.tau
    rest = p.t_sum - used
    if rest < -1e-9:
        raise ValueError(f"t_sum={p.t_sum} us is shorter than the sequence ({used:.4g} us)")
    segs += [Reset(0), Evolve(max(rest, 0.0)), Reset(0)]
    return PulseSchedule(segs)


@dataclass
class SteadyState:
    bath: np.ndarray
    record: PolarizationRecord
    readouts: dict
    trace: list = field(default_factory=list)
    iterations: int = 0
    residual: float = 0.0
    method: str = "iterate"

    @property
    def x(self) -> float:
        return self.readouts["pse"][0].real

    @property
    def y(self) -> float:
        return -self.readouts["pse"][0].imag


def _fixed_point(channel: BathChannel) -> np.ndarray | None:
    nb = channel.model.bath_dim
    s = channel.superoperator()
    a = s - np.eye(nb * nb)
    a[0] = np.eye(nb).reshape(-1)
    rhs = np.zeros(nb * nb, dtype=complex)
    rhs[0] = 1.0
    try:
        v = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        return None
    rho = v.reshape(nb, nb)
    rho = 0.5 * (rho + rho.conj().T)
    if np.abs(s @ rho.reshape(-1) - rho.reshape(-1)).max() > 1e-9:
        return None
    return rho


def steady_state_cycle(model: SpinModel, sequence: PulseSchedule, initial_bath=None,
                       tol: float = 1e-8, max_iters: int = 10_000,
                       method: str = "auto") -> SteadyState:
    """Repeat ``sequence`` until the bath marginal stops changing.

    ``method="iterate"`` applies the cycle map until successive bath states
    are within ``tol`` in trace distance.  ``method="direct"`` solves for the
    fixed point of the cycle superoperator (exact when that fixed point is
    unique).  ``"auto"`` iterates and, for baths of at most 6 spins, tries the
    direct solve before giving up.

    Raises
    ------
    ConvergenceError
        If iteration does not converge within ``max_iters`` cycles.
    """
    if method not in ("auto", "iterate", "direct"):
        raise ValueError(f"unknown method {method!r}")
    channel = BathChannel(model, sequence)
    rho = maximally_mixed(model.k) if initial_bath is None else np.asarray(initial_bath, complex)
    if method == "direct":
        return _direct(channel)
    trace = []
    res = float("inf")
    for it in range(1, int(max_iters) + 1):
        nxt, ro = channel.apply(rho)
        trace.append(_xy(ro))
        res = trace_distance(nxt, rho)
        rho = nxt
        if res < tol:
            return SteadyState(rho, bath_polarization(rho), ro, trace, it, res, "iterate")
    if method == "auto" and model.k <= 6:
        try:
            return _direct(channel)
        except ConvergenceError:
            pass
    raise ConvergenceError(f"no steady state after {max_iters} cycles "
                           f"(last residual {res:.3g})", res)


def _direct(channel: BathChannel) -> SteadyState:
    fp = _fixed_point(channel)
    if fp is None:
        raise ConvergenceError("cycle fixed point is not unique", float("nan"))
    nxt, ro = channel.apply(fp)
    return SteadyState(fp, bath_polarization(fp), ro, [_xy(ro)], 1,
                       trace_distance(nxt, fp), "direct")


def _xy(readouts: dict) -> tuple[float, float]:
    w = readouts.get("pse", [complex("nan")])[0]
    return (w.real, -w.imag)


def twait_averaged_steady_y(model: SpinModel, params: CycleParams, n_points: int = 16,
                            **kw) -> tuple[float, np.ndarray]:
    """Steady-state PSE ``<Y>`` averaged over ``n_points`` t_wait values in one T_L.

    ``params.t_wait`` is the first sample; returns the mean and the samples.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    tl = model.larmor_period
    ys = np.empty(n_points)
    for i in range(n_points):
        p = replace(params, t_wait=params.t_wait + i * tl / n_points)
        ys[i] = steady_state_cycle(model, measurement_cycle(model, p), **kw).y
    return float(ys.mean()), ys


def echo_backaction_residual(model: SpinModel, bath_rho: np.ndarray, tau: float,
                             spacing: float, pse_basis=(0, -1), cse_basis=(0, 1),
                             compensate: bool = True) -> float:
    """Trace distance between the bath after PSE(+CSE) and after free precession.

    The comparison state is the input bath evolved for the same total time
    with the probe idle in ``|0>``, so a perfect compensation returns 0.
    """
    segs = pse_schedule(tau, 1, pse_basis).segments
    if compensate:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LarmorMismatchWarning)
            segs += cse_segments(model, tau, spacing, tau, cse_basis)
        total = spacing + tau
    else:
        total = tau
    out, _ = BathChannel(model, PulseSchedule(segs)).apply(bath_rho)
    free, _ = BathChannel(model, PulseSchedule([Reset(0), Evolve(total)])).apply(bath_rho)
    return trace_distance(out, free)


__all__ = [
    "ConvergenceError", "LarmorMismatchWarning", "PSEResult", "CycleParams", "SteadyState",
    "SPINLOCK_VARIANTS", "echo_segments", "pse_schedule", "run_pse", "pse_trace",
    "cse_segments", "run_cse", "novel_segments", "run_novel", "xy8_schedule", "run_xy8",
    "find_dips", "spinlock_variants", "measurement_cycle", "steady_state_cycle",
    "twait_averaged_steady_y", "echo_backaction_residual",
]
