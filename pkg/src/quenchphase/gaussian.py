"""
Closed-form probe coherence for a Gaussian, Larmor-precessing spin bath.

Conventions
-----------
The coherence is ``W = <X> - i<Y> = exp(-chi - i Phi)`` so that
``<X> = exp(-chi) cos(Phi)`` and ``<Y> = exp(-chi) sin(Phi)``.  The phase
splits into a mean-field part ``phi_m`` (linear in transverse polarization)
and the quench phase ``phi_q`` (linear in axial polarization, second order in
the couplings).

Times are in us, angular frequencies in rad/us.  ``tau`` is the spacing of
the echo pi pulses: a Hahn echo lasts ``tau``, an M-pulse CPMG block lasts
``M*tau``.

The CPMG expressions contain ``cos(omega_L tau/2)`` in a denominator.  They
are evaluated through the finite trig polynomial

    G_M(y) = sum_{k=0}^{M-1} (-1)^k exp(i (M-1-2k) y),

which equals ``cos(M y)/cos(y)`` for odd M and ``i sin(M y)/cos(y)`` for even
M, so the removable singularities at ``omega_L tau = pi (mod 2 pi)`` never
appear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .bath import BathConfig
from .trace import CoherenceTrace

INV_2_SQRT_E = 1.0 / (2.0 * math.sqrt(math.e))


@dataclass(frozen=True)
class CoherencePoint:
    tau: float
    chi: float
    phi_q: float
    phi_m: float = 0.0

    @property
    def phi(self) -> float:
        return self.phi_q + self.phi_m

    @property
    def w_mag(self) -> float:
        return math.exp(-self.chi)

    @property
    def x(self) -> float:
        return self.w_mag * math.cos(self.phi)

    @property
    def y(self) -> float:
        return self.w_mag * math.sin(self.phi)


# ---------------------------------------------------------------------------
# Hahn echo
# ---------------------------------------------------------------------------

def chi_hahn(tau, eps, omega_L):
    """Hahn-echo dephasing exponent ``2 eps sin^4(omega_L tau / 4)``."""
    return 2.0 * eps * np.sin(omega_L * np.asarray(tau) / 4.0) ** 4


def phi_q_hahn(tau, eps, pz_bar, omega_L):
    """Hahn-echo quench phase ``pz_bar eps sin^2(w tau/4) sin(w tau/2)``."""
    x = omega_L * np.asarray(tau)
    return pz_bar * eps * np.sin(x / 4.0) ** 2 * np.sin(x / 2.0)


def _precessed_transverse(bath: BathConfig, t_wait: float, omega_L: float):
    """Per-spin ``(p_x, p_y)`` after free precession for ``t_wait``."""
    p = bath.bloch_vectors
    q = (p[:, 0] + 1j * p[:, 1]) * np.exp(1j * omega_L * t_wait)
    return q.real, q.imag


def phi_m_hahn(tau, bath: BathConfig, t_wait: float, omega_L: float):
    """Mean-field phase from transverse bath polarization after a Hahn echo.

    The transverse polarization stored in ``bath`` is the one at the end of
    the preparation; it precesses at ``omega_L`` during ``t_wait`` before the
    echo starts.
    """
    if len(bath) == 0:
        return np.zeros_like(np.asarray(tau, dtype=float))
    px, py = _precessed_transverse(bath, t_wait, omega_L)
    b = bath.a_perp
    x = omega_L * np.asarray(tau)[..., None]
    s = np.sum(b * (px * np.sin(x / 2.0) + py * np.cos(x / 2.0)), axis=-1)
    return 2.0 * np.sin(x[..., 0] / 4.0) ** 2 / omega_L * s


# ---------------------------------------------------------------------------
# M-pulse CPMG
# ---------------------------------------------------------------------------

def _g_poly(M: int, y):
    """Real-valued ``cos(My)/cos(y)`` (odd M) or ``sin(My)/cos(y)`` (even M)."""
    y = np.asarray(y, dtype=float)
    k = np.arange(M)
    sign = (-1.0) ** k
    arg = (M - 1 - 2 * k) * y[..., None]
    if M % 2:
        return np.sum(sign * np.cos(arg), axis=-1)
    return np.sum(sign * np.sin(arg), axis=-1)


def _check_m(M):
    if int(M) != M or M < 1:
        raise ValueError(f"pulse count M must be a positive integer, got {M}")
    return int(M)


def chi_cpmg(tau, M: int, eps, omega_L):
    """Dephasing exponent after ``[tau/2 - pi - tau/2]^M``."""
    M = _check_m(M)
    x = omega_L * np.asarray(tau, dtype=float)
    return 2.0 * eps * np.sin(x / 4.0) ** 4 * _g_poly(M, x / 2.0) ** 2


def phi_q_cpmg(tau, M: int, eps, pz_bar, omega_L):
    """Quench phase after ``[tau/2 - pi - tau/2]^M``.

    Equal to ``(-1)^(M-1) pz_bar eps sin(M w tau) sin^2(w tau/4) / (2 cos(w tau/2))``
    with the removable singularities filled in by continuity.
    """
    M = _check_m(M)
    x = omega_L * np.asarray(tau, dtype=float)
    y = x / 2.0
    g = _g_poly(M, y)
    # sin(2My)/(2cos y) = sin(My) cos(My)/cos(y)
    ratio = np.sin(M * y) * g if M % 2 else np.cos(M * y) * g
    return (-1.0) ** (M - 1) * pz_bar * eps * ratio * np.sin(x / 4.0) ** 2


def qps_signal_bound(eps):
    """Upper bound ``sqrt(eps) / (2 sqrt(e))`` on ``|<Y>|`` from the quench phase."""
    if np.any(np.asarray(eps) < 0):
        raise ValueError("eps must be >= 0")
    return INV_2_SQRT_E * np.sqrt(eps)


def qps_signal(tau, M: int, eps, pz_bar, omega_L):
    """``exp(-chi) |sin(phi_q)|`` for an M-pulse sequence."""
    return (np.exp(-chi_cpmg(tau, M, eps, omega_L))
            * np.abs(np.sin(phi_q_cpmg(tau, M, eps, pz_bar, omega_L))))


@dataclass(frozen=True)
class OptimalSequence:
    """Result of :func:`optimal_sequence`.

    ``tau`` is the pulse spacing found by search; ``total_time = M * tau``.
    ``m_scaling = 1/sqrt(eps)`` and ``tau_scaling = pi/(omega_L sqrt(eps))``
    are the closed-form estimates of the optimum.  The latter matches
    ``total_time`` (not ``tau``) at the optimum, e.g. for eps = 0.110 the search
    gives M = 3, tau ~ pi/omega_L, total ~ 3 pi/omega_L ~ pi/(omega_L sqrt(eps)).
    """

    M: int
    tau: float
    signal: float
    bound: float
    m_scaling: float
    tau_scaling: float

    @property
    def total_time(self) -> float:
        return self.M * self.tau

    @property
    def fraction_of_bound(self) -> float:
        return self.signal / self.bound


def optimal_sequence(eps: float, omega_L: float, n_tau: int = 4001) -> OptimalSequence:
    """Pulse count and spacing maximizing the quench-phase signal (``pz_bar = 1``).

    Searches ``M = 1 .. ceil(4/sqrt(eps))`` and ``tau`` in ``(0, 4 pi/omega_L]``
    on a dense grid, then polishes the best grid point of each M with a
    bounded scalar search.
    """
    if not 0 < eps < 1:
        raise ValueError("multipulse gain regime invalid: need 0 < eps < 1")
    m_max = int(math.ceil(4.0 / math.sqrt(eps)))
    t_max = 4.0 * math.pi / omega_L
    grid = np.linspace(t_max / n_tau, t_max, n_tau)
    dt = grid[1] - grid[0]
    best = (-1.0, 1, grid[0])
    for M in range(1, m_max + 1):
        s = qps_signal(grid, M, eps, 1.0, omega_L)
        i = int(np.argmax(s))
        lo, hi = max(grid[0], grid[i] - dt), min(t_max, grid[i] + dt)
        res = minimize_scalar(lambda t: -qps_signal(t, M, eps, 1.0, omega_L),
                              bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        cand = (-float(res.fun), M, float(res.x)) if -res.fun > s[i] else (float(s[i]), M, float(grid[i]))
        if cand[0] > best[0]:
            best = cand
    sig, M, tau = best
    return OptimalSequence(M=M, tau=tau, signal=sig, bound=float(qps_signal_bound(eps)),
                           m_scaling=1.0 / math.sqrt(eps),
                           tau_scaling=math.pi / (omega_L * math.sqrt(eps)))


# ---------------------------------------------------------------------------
# General switching functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwitchingFunction:
    """Piecewise-constant toggling-frame function ``F(t)``.

    ``segments`` is a sequence of ``(duration, value)`` with value in
    ``{+1, -1, 0}``.
    """

    segments: tuple

    def __post_init__(self):
        segs = tuple((float(d), int(v)) for d, v in self.segments)
        for d, v in segs:
            if d < 0:
                raise ValueError("segment durations must be >= 0")
            if v not in (-1, 0, 1):
                raise ValueError("switching values must be -1, 0 or +1")
        object.__setattr__(self, "segments", segs)

    @property
    def total_time(self) -> float:
        return float(sum(d for d, _ in self.segments))

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([d for d, _ in self.segments])])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.segments], dtype=float)

    @property
    def is_balanced(self) -> bool:
        return abs(switching_fourier(self, 0.0)) < 1e-12 * max(self.total_time, 1.0)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, len(self.segments) - 1)
        out = self.values[idx]
        return np.where((t < 0) | (t > self.total_time), 0.0, out)

    @classmethod
    def from_pulse_times(cls, pulse_times: Sequence[float], total: float) -> "SwitchingFunction":
        """Instantaneous pi pulses at ``pulse_times`` within ``[0, total]``."""
        edges = np.concatenate([[0.0], np.sort(np.asarray(pulse_times, float)), [total]])
        if np.any(np.diff(edges) < 0):
            raise ValueError("pulse times must lie inside [0, total]")
        segs = [(edges[i + 1] - edges[i], (-1) ** i) for i in range(edges.size - 1)]
        return cls(tuple(segs))

    @classmethod
    def hahn(cls, tau: float) -> "SwitchingFunction":
        return cls(((tau / 2.0, 1), (tau / 2.0, -1)))

    @classmethod
    def cpmg(cls, tau: float, M: int) -> "SwitchingFunction":
        """``sgn cos(pi t / tau)`` on ``[0, M tau]``."""
        M = _check_m(M)
        return cls.from_pulse_times([(k + 0.5) * tau for k in range(M)], M * tau)

    @classmethod
    def ramsey(cls, duration: float) -> "SwitchingFunction":
        return cls(((duration, 1),))


def _seg_exp_integrals(a, b, omega):
    """``int_a^b e^{i w t} dt`` and ``int_a^b t e^{i w t} dt`` for arrays a, b."""
    d = b - a
    # (e^{iwb} - e^{iwa})/(iw) written to stay finite as w -> 0
    j0 = d * np.exp(1j * omega * (a + b) / 2.0) * np.sinc(omega * d / (2.0 * np.pi))
    if abs(omega) * max(np.max(np.abs(b)) if np.size(b) else 0.0, 1e-300) < 1e-6:
        j1 = (b**2 - a**2) / 2.0 + 1j * omega * (b**3 - a**3) / 3.0
    else:
        eb, ea = np.exp(1j * omega * b), np.exp(1j * omega * a)
        j1 = (eb * (b / (1j * omega) + 1.0 / omega**2)
              - ea * (a / (1j * omega) + 1.0 / omega**2))
    return j0, j1


def switching_fourier(f: SwitchingFunction, omega: float) -> complex:
    """``F[w] = int_0^T F(t) e^{i w t} dt`` evaluated segment by segment."""
    e = f.edges
    j0, _ = _seg_exp_integrals(e[:-1], e[1:], float(omega))
    return complex(np.sum(f.values * j0))


def _switching_moment(f: SwitchingFunction, omega: float) -> complex:
    e = f.edges
    _, j1 = _seg_exp_integrals(e[:-1], e[1:], float(omega))
    return complex(np.sum(f.values * j1))


def gaussian_response_general(f: SwitchingFunction, bath: BathConfig, omega_L: float,
                              t_wait: float = 0.0) -> tuple[float, float, float]:
    """Gaussian ``(chi, phi_m, phi_q)`` for an arbitrary switching function.

    Uses the exact first and second moments of a product state of
    independent spin-1/2 nuclei precessing at ``omega_L`` and coupled to the
    probe through ``A_par I_z + A_perp I_x``.  Every time integral reduces to
    the segment sums ``int F``, ``int F e^{iwt}`` and ``int F t e^{iwt}``,
    which are done in closed form.

    With axial-only polarization and a balanced ``F`` this reduces to
    ``chi = sum A_perp^2 |F[w]|^2 / 8`` and
    ``phi_q = sum p_z A_perp^2 Re F[w] / (4 w)``.  Transverse polarization
    adds its own (state-dependent) terms to ``chi`` and ``phi_q``.
    """
    if len(bath) == 0:
        return 0.0, 0.0, 0.0
    w = float(omega_L)
    a, b = bath.a_par, bath.a_perp
    px, py = _precessed_transverse(bath, t_wait, w)
    pz = bath.bloch_vectors[:, 2]
    q = px + 1j * py

    i0 = complex(switching_fourier(f, 0.0)).real
    fw = switching_fourier(f, w)
    f1 = _switching_moment(f, w)

    # first moment <xi(t)> = (a p_z + b p_x(t)) / 2
    mean_int = 0.5 * (a * pz * i0 + b * np.real(q * fw))
    phi_m = float(np.sum(mean_int))

    # connected symmetrized correlator, integrated over the full square / 2
    chi = float(np.sum(0.5 * (a**2 * i0**2 / 4.0 + b**2 * abs(fw) ** 2 / 4.0 - mean_int**2)))

    # retarded response: b^2 p_z sin(w(t1-t2))/2 + a b (p_y(t2) - p_y(t1))/2
    int_f_py_cum = np.imag(q * (fw - i0) / (1j * w))       # int F(t) P_y(t) dt
    int_f_t_py = np.imag(q * f1)                           # int F(t) t p_y(t) dt
    phi_q = -0.25 * np.sum(a * b * (int_f_py_cum - int_f_t_py)
                           + b**2 * pz * (i0 - fw.real) / w)
    return chi, phi_m, float(phi_q)


def gaussian_trace(tau_grid, eps: float, pz_bar: float, omega_L: float, M: int = 1,
                   phi_m=0.0) -> CoherenceTrace:
    """Gaussian ``<X>``/``<Y>`` versus pulse spacing for an M-pulse sequence."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    chi = chi_cpmg(tau_grid, M, eps, omega_L)
    phi = phi_q_cpmg(tau_grid, M, eps, pz_bar, omega_L) + phi_m
    return CoherenceTrace.from_w(tau_grid, np.exp(-chi - 1j * phi), control_name="tau_us",
                                 meta={"model": f"gaussian-cpmg-M{M}", "eps": eps,
                                       "pz_bar": pz_bar})
