"""Pulse schedules, their execution on full states and their bath channels.

A schedule is a flat list of segments.  Executing it on a full
probe (x) bath density matrix is exact.  Because pulses are instantaneous and
every reset replaces the probe by a pure level, the part of a schedule
between two resets acts on the bath marginal as a channel with at most three
Kraus operators of bath size.  ``BathChannel`` holds that compiled form and is
what the steady-state iteration uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import HamiltonianSpec, SpinModel, check_basis, pair_operator
from .operators import PROBE_DIM, PROBE_LEVELS, level_index, split_probe, trace_probe


@dataclass(frozen=True)
class Evolve:
    """Free evolution for ``duration`` us; ``hamiltonian=None`` means secular."""

    duration: float
    hamiltonian: HamiltonianSpec | None = None

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError(f"segment duration must be >= 0, got {self.duration}")


@dataclass(frozen=True)
class Rotate:
    """Instantaneous ``exp(-i angle/2 (cos(phase) sx + sin(phase) sy))`` on a probe pair."""

    angle: float
    phase: float = 0.0
    basis: tuple[int, int] = (0, -1)

    def __post_init__(self):
        object.__setattr__(self, "basis", check_basis(self.basis))

    def probe_unitary(self) -> np.ndarray:
        c, s = np.cos(self.angle / 2), np.sin(self.angle / 2)
        r = np.array([[c, -1j * s * np.exp(-1j * self.phase)],
                      [-1j * s * np.exp(1j * self.phase), c]])
        u = pair_operator(self.basis, r)
        spectator = ({0, 1, 2} - {level_index(m) for m in self.basis}).pop()
        u[spectator, spectator] = 1.0
        return u


@dataclass(frozen=True)
class Reset:
    """Replace the probe marginal by ``|level><level|``; the bath is untouched."""

    level: int = 0

    def __post_init__(self):
        level_index(self.level)


@dataclass(frozen=True)
class Readout:
    """Record ``W = <X> - i<Y>`` of the probe qubit ``basis``.

    ``flipped`` marks an odd number of refocusing pulses, after which the
    coherence that started as ``rho_(up,down)`` sits in ``rho_(down,up)``.
    """

    label: str = "pse"
    basis: tuple[int, int] = (0, -1)
    flipped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "basis", check_basis(self.basis))


@dataclass
class PulseSchedule:
    """Ordered list of segments."""

    segments: list = field(default_factory=list)

    def __post_init__(self):
        self.segments = list(self.segments)
        for seg in self.segments:
            if not isinstance(seg, (Evolve, Rotate, Reset, Readout)):
                raise TypeError(f"not a schedule segment: {seg!r}")

    def __iter__(self):
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __add__(self, other: "PulseSchedule") -> "PulseSchedule":
        return PulseSchedule(self.segments + list(other.segments))

    def add(self, *segments) -> "PulseSchedule":
        self.segments.extend(segments)
        self.__post_init__()
        return self

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments if isinstance(s, Evolve)))

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.segments if isinstance(s, Readout)]


def _full(probe_op: np.ndarray, nb: int) -> np.ndarray:
    return np.kron(probe_op, np.eye(nb))


def _coherence(rho: np.ndarray, ro: Readout) -> complex:
    r4 = split_probe(rho)
    up, down = (level_index(m) for m in ro.basis)
    if ro.flipped:
        up, down = down, up
    return complex(2.0 * np.einsum("...aa->...", r4[..., up, :, down, :]))


def _reset(rho: np.ndarray, level: int) -> np.ndarray:
    bath = trace_probe(rho)
    probe = np.zeros((PROBE_DIM, PROBE_DIM))
    probe[level_index(level), level_index(level)] = 1.0
    return np.kron(probe, bath)


def segment_unitary(model: SpinModel, seg) -> np.ndarray:
    if isinstance(seg, Evolve):
        return model.propagator(seg.hamiltonian or model.secular())(seg.duration)
    if isinstance(seg, Rotate):
        return _full(seg.probe_unitary(), model.bath_dim)
    raise TypeError(f"segment {seg!r} is not unitary")


def execute(model: SpinModel, schedule: PulseSchedule, rho: np.ndarray,
            dephase_readout: bool = True) -> tuple[np.ndarray, dict[str, list[complex]]]:
    """Run ``schedule`` on a full density matrix.

    Returns the final state and, per readout label, the recorded ``W`` values
    in order.  With ``dephase_readout`` each readout removes the probe
    coherence it measured, which leaves the bath marginal unchanged.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (model.dim, model.dim):
        raise ValueError(f"state dimension {rho.shape} does not match model ({model.dim})")
    readouts: dict[str, list[complex]] = {}
    for seg in schedule:
        if isinstance(seg, (Evolve, Rotate)):
            u = segment_unitary(model, seg)
            rho = u @ rho @ u.conj().T
        elif isinstance(seg, Reset):
            rho = _reset(rho, seg.level)
        else:
            readouts.setdefault(seg.label, []).append(_coherence(rho, seg))
            if dephase_readout:
                r4 = split_probe(rho).copy()
                up, down = (level_index(m) for m in seg.basis)
                r4[up, :, down, :] = 0.0
                r4[down, :, up, :] = 0.0
                rho = r4.reshape(rho.shape)
    return rho, readouts


@dataclass
class _Block:
    kraus: list[np.ndarray]
    readouts: list[tuple[Readout, np.ndarray, np.ndarray]]


class BathChannel:
    """A schedule compiled to its action on the bath marginal.

    The schedule must start by putting the probe in a definite level (an
    explicit ``Reset``; otherwise ``|0>`` is assumed) and ends with the probe
    traced out.
    """

    def __init__(self, model: SpinModel, schedule: PulseSchedule, input_level: int = 0):
        self.model = model
        self.blocks: list[_Block] = []
        nb = model.bath_dim
        level = input_level
        u = np.eye(model.dim, dtype=complex)
        pending: list = []

        def close():
            col = level_index(level)
            ks = []
            for row in range(PROBE_DIM):
                k = u[row * nb:(row + 1) * nb, col * nb:(col + 1) * nb]
                if np.abs(k).max() > 1e-14:
                    ks.append(k.copy())
            self.blocks.append(_Block(ks, list(pending)))
            pending.clear()

        touched = False
        for seg in schedule:
            if isinstance(seg, Reset):
                if touched:
                    close()
                u = np.eye(model.dim, dtype=complex)
                level = seg.level
                touched = False
            elif isinstance(seg, Readout):
                col = level_index(level)
                a, b = (level_index(m) for m in seg.basis)
                if seg.flipped:
                    a, b = b, a
                ka = u[a * nb:(a + 1) * nb, col * nb:(col + 1) * nb].copy()
                kb = u[b * nb:(b + 1) * nb, col * nb:(col + 1) * nb].copy()
                pending.append((seg, ka, kb))
                touched = True
            else:
                u = segment_unitary(model, seg) @ u
                touched = True
        if touched:
            close()

    def apply(self, bath_rho: np.ndarray) -> tuple[np.ndarray, dict[str, list[complex]]]:
        """Map a bath state through one pass; returns state and readouts."""
        rho = bath_rho
        readouts: dict[str, list[complex]] = {}
        for blk in self.blocks:
            for ro, ka, kb in blk.readouts:
                w = 2.0 * np.trace(ka @ rho @ kb.conj().T)
                readouts.setdefault(ro.label, []).append(complex(w))
            rho = sum(k @ rho @ k.conj().T for k in blk.kraus)
        return rho, readouts

    def superoperator(self) -> np.ndarray:
        """Row-major vectorized map ``vec(rho') = S vec(rho)``."""
        nb = self.model.bath_dim
        s = np.eye(nb * nb, dtype=complex)
        for blk in self.blocks:
            s = sum(np.kron(k, k.conj()) for k in blk.kraus) @ s
        return s


__all__ = [
    "Evolve", "Rotate", "Reset", "Readout", "PulseSchedule", "BathChannel",
    "execute", "segment_unitary", "PROBE_LEVELS",
]
