"""Full probe (x) bath density matrices and bath polarization records."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..bath import BathConfig
from .operators import (PROBE_DIM, bath_bloch_vectors, maximally_mixed, probe_ket,
                        product_bath_state, trace_probe)

ORDERING = "probe(+1,0,-1) x bath[0..K-1](up,down)"


class InvalidStateError(ValueError):
    """A density matrix violated Hermiticity, normalization or positivity."""


@dataclass
class QuantumState:
    """Density matrix on probe qutrit (x) K spin-1/2 bath, probe factor first."""

    rho: np.ndarray
    k: int
    ordering: str = ORDERING

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        d = PROBE_DIM * 2**self.k
        if self.rho.shape != (d, d):
            raise ValueError(f"rho must be {d}x{d} for k={self.k}, got {self.rho.shape}")

    @classmethod
    def from_bath(cls, bath_rho: np.ndarray, probe_level: int = 0) -> "QuantumState":
        bath_rho = np.asarray(bath_rho, dtype=complex)
        k = int(round(np.log2(bath_rho.shape[0])))
        ket = probe_ket(probe_level)
        return cls(np.kron(np.outer(ket, ket.conj()), bath_rho), k)

    @classmethod
    def from_config(cls, bath: BathConfig, probe_level: int = 0) -> "QuantumState":
        """Product bath state from the configured per-spin polarization."""
        return cls.from_bath(product_bath_state(bath.bloch_vectors), probe_level)

    @classmethod
    def unpolarized(cls, k: int, probe_level: int = 0) -> "QuantumState":
        return cls.from_bath(maximally_mixed(k), probe_level)

    @property
    def bath(self) -> np.ndarray:
        return trace_probe(self.rho)

    def validate(self, atol: float = 1e-10) -> "QuantumState":
        """Raise ``InvalidStateError`` unless rho is a valid density matrix."""
        rho = self.rho
        herm = np.abs(rho - rho.conj().T).max()
        if herm > max(atol, 1e-12):
            raise InvalidStateError(f"not Hermitian (max deviation {herm:.3g})")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > max(atol, 1e-12):
            raise InvalidStateError(f"trace {tr!r} != 1")
        lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
        if lo < -atol:
            raise InvalidStateError(f"negative eigenvalue {lo:.3g}")
        return self


@dataclass
class PolarizationRecord:
    """Per-spin Bloch vectors ``(p_x, p_y, p_z)`` at time ``t`` (us)."""

    t: float
    vectors: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float).reshape(-1, 3)
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(norms > 1 + 1e-10):
            raise ValueError(f"Bloch vector longer than 1: {norms.max()!r}")

    @property
    def px(self) -> np.ndarray:
        return self.vectors[:, 0]

    @property
    def py(self) -> np.ndarray:
        return self.vectors[:, 1]

    @property
    def pz(self) -> np.ndarray:
        return self.vectors[:, 2]

    def rows(self) -> list[tuple[int, float, float, float, float]]:
        return [(j, self.t, *map(float, v)) for j, v in enumerate(self.vectors)]


POLARIZATION_COLUMNS = ("spin_index", "t_us", "px", "py", "pz")


def polarization_csv(records, path=None) -> str:
    """Serialize records as ``spin_index, t_us, px, py, pz`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POLARIZATION_COLUMNS)
    for rec in records:
        for j, t, px, py, pz in rec.rows():
            w.writerow([j, repr(float(t)), repr(px), repr(py), repr(pz)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def bath_polarization(state, t: float = 0.0) -> PolarizationRecord:
    """Per-spin ``<2I>`` of a ``QuantumState`` or a bare bath density matrix."""
    if isinstance(state, QuantumState):
        bath_rho, k = state.bath, state.k
    else:
        bath_rho = np.asarray(state, dtype=complex)
        k = int(round(np.log2(bath_rho.shape[0])))
    vec = bath_bloch_vectors(bath_rho, k)
    # clip sub-1e-10 overshoot from roundoff so the record invariant holds
    norms = np.linalg.norm(vec, axis=1)
    over = norms > 1.0
    vec[over] /= norms[over, None]
    return PolarizationRecord(float(t), vec)
