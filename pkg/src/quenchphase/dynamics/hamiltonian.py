"""Probe-bath Hamiltonians and cached propagators.

All Hamiltonians act on probe (x) bath space in the probe rotating frame,
in rad/us.  The secular form is

    H = omega_L sum_j I_z,j + S_z sum_j (A_par,j I_z,j + A_perp,j I_x,j).

The spin-lock form adds a resonant drive on one probe transition, written in
the frame rotating with that drive:

    H = -delta/2 sigma_z + Omega/2 (cos(phase) sigma_x + sin(phase) sigma_y) + secular.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..bath import BathConfig, FieldParams
from .operators import PROBE_DIM, bath_spin_ops, level_index, probe_sz

VALID_BASES = ((0, -1), (0, 1), (1, -1))


def check_basis(basis) -> tuple[int, int]:
    """Normalize a probe qubit basis ``(up, down)``."""
    b = tuple(int(v) for v in basis)
    if b not in VALID_BASES:
        raise ValueError(f"probe basis must be one of {VALID_BASES}, got {basis}")
    return b


def pair_operator(basis, op2: np.ndarray) -> np.ndarray:
    """Embed a 2x2 operator on ``(up, down)`` into the 3x3 probe space."""
    up, down = (level_index(m) for m in check_basis(basis))
    out = np.zeros((PROBE_DIM, PROBE_DIM), dtype=complex)
    idx = (up, down)
    for a in range(2):
        for b in range(2):
            out[idx[a], idx[b]] = op2[a, b]
    return out


@dataclass(frozen=True)
class HamiltonianSpec:
    """Hashable description of a Hamiltonian.

    ``form`` is ``"secular"``, ``"spinlock"`` or ``"custom"``.  Couplings are
    in rad/us.  For ``"custom"`` the full matrix is given in ``matrix`` and
    must be Hermitian.
    """

    form: str
    omega_L: float
    a_par: tuple[float, ...]
    a_perp: tuple[float, ...]
    omega_sl: float = 0.0
    detuning: float = 0.0
    drive_phase: float = 0.0
    basis: tuple[int, int] = (0, -1)
    drop_apar: bool = False
    matrix: np.ndarray | None = field(default=None, compare=False, hash=False)

    @property
    def k(self) -> int:
        return len(self.a_par)

    @property
    def dim(self) -> int:
        return PROBE_DIM * 2**self.k


def build_hamiltonian(spec: HamiltonianSpec) -> np.ndarray:
    """Dense Hermitian matrix for ``spec``.

    Raises
    ------
    ValueError
        For an unknown form, mismatched coupling lengths or a non-Hermitian
        custom matrix.
    """
    if spec.form == "custom":
        h = np.asarray(spec.matrix, dtype=complex)
        if h.shape != (spec.dim, spec.dim):
            raise ValueError(f"custom Hamiltonian must be {spec.dim}x{spec.dim}")
        if not np.allclose(h, h.conj().T, atol=1e-12 * max(1.0, np.abs(h).max())):
            raise ValueError("custom Hamiltonian is not Hermitian")
        return h
    if spec.form not in ("secular", "spinlock"):
        raise ValueError(f"unknown Hamiltonian form {spec.form!r}")
    if len(spec.a_par) != len(spec.a_perp):
        raise ValueError("a_par and a_perp must have equal length")
    k = spec.k
    nb = 2**k
    ops = bath_spin_ops(k)
    h_bath = np.zeros((nb, nb), dtype=complex)
    coupling = np.zeros((nb, nb), dtype=complex)
    use_par = not (spec.form == "spinlock" and spec.drop_apar)
    for j, (ix, _, iz) in enumerate(ops):
        h_bath += spec.omega_L * iz
        if use_par:
            coupling += spec.a_par[j] * iz
        coupling += spec.a_perp[j] * ix
    h = np.kron(np.eye(PROBE_DIM), h_bath) + np.kron(probe_sz(), coupling)
    if spec.form == "spinlock":
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
        sz = np.diag([1.0, -1.0]).astype(complex)
        drive = (-0.5 * spec.detuning * sz
                 + 0.5 * spec.omega_sl * (np.cos(spec.drive_phase) * sx
                                          + np.sin(spec.drive_phase) * sy))
        h = h + np.kron(pair_operator(spec.basis, drive), np.eye(nb))
    return h


class Propagator:
    """``exp(-i H t)`` via one eigendecomposition, memoized per duration."""

    def __init__(self, h: np.ndarray):
        self.h = h
        self.energies, self.vectors = np.linalg.eigh(h)
        self._cache: dict[float, np.ndarray] = {}

    def __call__(self, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError(f"evolution time must be >= 0, got {t}")
        key = float(t)
        u = self._cache.get(key)
        if u is None:
            v = self.vectors
            u = (v * np.exp(-1j * self.energies * key)) @ v.conj().T
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = u
        return u


class SpinModel:
    """A bath configuration with field, plus Hamiltonian and propagator caches.

    Parameters
    ----------
    bath : BathConfig
        Couplings and initial polarization.
    field : FieldParams, optional
        Overrides ``bath.field``.
    coupling_scale : float
        Multiplies every coupling (used for perturbative scaling checks).
    """

    def __init__(self, bath: BathConfig, field: FieldParams | None = None,
                 coupling_scale: float = 1.0):
        field = field or bath.field
        if field is None:
            raise ValueError("a FieldParams is required (bath has none)")
        self.bath = bath
        self.field = field
        self.omega_L = float(field.omega_L)
        self.a_par = tuple(float(v) for v in bath.a_par * coupling_scale)
        self.a_perp = tuple(float(v) for v in bath.a_perp * coupling_scale)
        self._props: dict[HamiltonianSpec, Propagator] = {}

    @property
    def k(self) -> int:
        return len(self.a_par)

    @property
    def bath_dim(self) -> int:
        return 2**self.k

    @property
    def dim(self) -> int:
        return PROBE_DIM * self.bath_dim

    @property
    def larmor_period(self) -> float:
        return 2 * np.pi / self.omega_L

    def secular(self) -> HamiltonianSpec:
        return HamiltonianSpec("secular", self.omega_L, self.a_par, self.a_perp)

    def spinlock(self, omega_sl: float, detuning: float = 0.0, phase: float = 0.0,
                 basis=(0, -1), drop_apar: bool = False) -> HamiltonianSpec:
        return HamiltonianSpec("spinlock", self.omega_L, self.a_par, self.a_perp,
                               omega_sl=float(omega_sl), detuning=float(detuning),
                               drive_phase=float(phase), basis=check_basis(basis),
                               drop_apar=bool(drop_apar))

    def propagator(self, spec: HamiltonianSpec) -> Propagator:
        if spec.form == "custom":
            return Propagator(build_hamiltonian(spec))
        prop = self._props.get(spec)
        if prop is None:
            prop = Propagator(build_hamiltonian(spec))
            self._props[spec] = prop
        return prop
