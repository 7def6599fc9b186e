"""Spin operators, product states and partial traces on probe (x) bath space.

Ordering: the probe qutrit is the leading tensor factor with levels
``(+1, 0, -1)``; bath spins follow in configuration order, each with basis
``(up, down)`` so that ``I_z = diag(1/2, -1/2)``.
"""

from __future__ import annotations

from functools import lru_cache, reduce

import numpy as np

PROBE_LEVELS = (1, 0, -1)
PROBE_DIM = 3

SX = np.array([[0, 1], [1, 0]], dtype=complex) / 2
SY = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
SZ = np.array([[1, 0], [0, -1]], dtype=complex) / 2
I2 = np.eye(2, dtype=complex)


def level_index(m: int) -> int:
    """Row/column index of probe level ``m`` in ``(+1, 0, -1)`` ordering."""
    try:
        return PROBE_LEVELS.index(int(m))
    except ValueError:
        raise ValueError(f"probe level must be one of {PROBE_LEVELS}, got {m}") from None


def probe_sz() -> np.ndarray:
    return np.diag(np.array(PROBE_LEVELS, dtype=float)).astype(complex)


def probe_ket(m: int) -> np.ndarray:
    v = np.zeros(PROBE_DIM, dtype=complex)
    v[level_index(m)] = 1.0
    return v


@lru_cache(maxsize=None)
def bath_spin_ops(k: int) -> tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]:
    """``(I_x, I_y, I_z)`` for each of ``k`` spins embedded in the 2^k space."""
    ops = []
    for j in range(k):
        triple = []
        for s in (SX, SY, SZ):
            factors = [s if i == j else I2 for i in range(k)]
            triple.append(reduce(np.kron, factors) if k else np.eye(1, dtype=complex))
        ops.append(tuple(triple))
    return tuple(ops)


def spin_state(bloch) -> np.ndarray:
    """Single spin-1/2 density matrix ``(1 + p . sigma)/2``."""
    px, py, pz = bloch
    return I2 / 2 + px * SX + py * SY + pz * SZ


def product_bath_state(bloch_vectors) -> np.ndarray:
    """Tensor product of per-spin states, shape ``(2^K, 2^K)``."""
    bloch_vectors = np.asarray(bloch_vectors, dtype=float).reshape(-1, 3)
    if bloch_vectors.shape[0] == 0:
        return np.ones((1, 1), dtype=complex)
    return reduce(np.kron, [spin_state(p) for p in bloch_vectors])


def maximally_mixed(k: int) -> np.ndarray:
    d = 2**k
    return np.eye(d, dtype=complex) / d


def embed_probe(probe_rho: np.ndarray, bath_rho: np.ndarray) -> np.ndarray:
    return np.kron(probe_rho, bath_rho)


def split_probe(rho: np.ndarray) -> np.ndarray:
    """View ``(..., 3B, 3B)`` as ``(..., 3, B, 3, B)``."""
    d = rho.shape[-1]
    b = d // PROBE_DIM
    return rho.reshape(rho.shape[:-2] + (PROBE_DIM, b, PROBE_DIM, b))


def trace_probe(rho: np.ndarray) -> np.ndarray:
    """Bath marginal of a (possibly batched) full density matrix."""
    return np.einsum("...iaib->...ab", split_probe(rho))


def trace_bath(rho: np.ndarray) -> np.ndarray:
    """Probe marginal (3x3) of a full density matrix."""
    return np.einsum("...iaja->...ij", split_probe(rho))


def spin_marginal(bath_rho: np.ndarray, j: int, k: int) -> np.ndarray:
    """Reduced 2x2 state of spin ``j`` out of ``k``."""
    t = np.moveaxis(bath_rho.reshape((2,) * (2 * k)), (j, k + j), (0, 1))
    rest = 2 ** (k - 1)
    return np.trace(t.reshape(2, 2, rest, rest), axis1=2, axis2=3)


def bath_bloch_vectors(bath_rho: np.ndarray, k: int) -> np.ndarray:
    """Per-spin ``(<2I_x>, <2I_y>, <2I_z>)``, shape ``(K, 3)``."""
    ops = bath_spin_ops(k)
    out = np.empty((k, 3))
    for j, triple in enumerate(ops):
        for a, op in enumerate(triple):
            out[j, a] = 2.0 * np.real(np.trace(op @ bath_rho))
    return out


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """``(1/2) || a - b ||_1`` for Hermitian a, b."""
    ev = np.linalg.eigvalsh(a - b)
    return 0.5 * float(np.sum(np.abs(ev)))
