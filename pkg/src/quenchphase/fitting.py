"""Gaussian-model fits of coherence traces and non-Gaussian deviation profiles.

All fits are damped nonlinear least squares (``scipy.optimize.least_squares``
with ``method="lm"``) using analytic Jacobians and deterministic starting
points.  Uncertainties are 1-sigma: from the supplied measurement ``sigma``
when given, otherwise from the residual variance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .gaussian import chi_cpmg, phi_q_cpmg
from .trace import CoherenceTrace

TINY_CI = 1e-15


class FitError(ValueError):
    """Input data cannot support the requested fit."""


@dataclass
class FitResult:
    """Estimates with 1-sigma uncertainties.

    ``stderr`` values are strictly positive; an unresolvable parameter has
    ``inf``.  ``flags`` collects warnings such as out-of-range estimates or a
    suspected pulse-count mismatch.
    """

    model: str
    params: dict
    stderr: dict
    residual_norm: float
    covariance: np.ndarray
    param_names: tuple
    n_points: int
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def interval(self, name: str, n_sigma: float = 1.0) -> tuple[float, float]:
        v, s = self.params[name], self.stderr[name]
        return v - n_sigma * s, v + n_sigma * s

    def covers(self, name: str, value: float, n_sigma: float = 1.0) -> bool:
        lo, hi = self.interval(name, n_sigma)
        return lo <= value <= hi

    def to_dict(self) -> dict:
        def num(v):
            v = float(v)
            return v if math.isfinite(v) else str(v)

        return {
            "model": self.model,
            "params": {k: num(v) for k, v in self.params.items()},
            "stderr": {k: num(v) for k, v in self.stderr.items()},
            "residual_norm": num(self.residual_norm),
            "n_points": self.n_points,
            "covariance": {"names": list(self.param_names),
                           "matrix": [[num(c) for c in row] for row in np.atleast_2d(self.covariance)]},
            "flags": list(self.flags),
            "extra": {k: (num(v) if isinstance(v, (int, float, np.floating)) else v)
                      for k, v in self.extra.items()},
        }

    def to_json(self, **kw) -> str:
        kw.setdefault("indent", 2)
        kw.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kw)


def _covariance(jac: np.ndarray, resid: np.ndarray, weighted: bool) -> np.ndarray:
    """``(J^T J)^-1`` scaled by the residual variance unless weights were given."""
    n, p = jac.shape
    jtj = jac.T @ jac
    try:
        cov = np.linalg.pinv(jtj)
    except np.linalg.LinAlgError:
        cov = np.full((p, p), np.inf)
    if not weighted:
        dof = max(n - p, 1)
        cov = cov * float(resid @ resid) / dof
    return cov


def _stderr(cov: np.ndarray, values) -> np.ndarray:
    d = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    floor = TINY_CI * np.maximum(1.0, np.abs(np.asarray(values, dtype=float)))
    return np.where(np.isfinite(d), np.maximum(d, floor), np.inf)


def _sigma_array(sigma, n: int) -> np.ndarray | None:
    if sigma is None:
        return None
    s = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
    if np.any(s <= 0):
        raise FitError("sigma must be positive")
    return s


def _check_finite(trace: CoherenceTrace):
    if not (np.all(np.isfinite(trace.control)) and np.all(np.isfinite(trace.x))
            and np.all(np.isfinite(trace.y))):
        raise FitError("trace contains non-finite values")


# ---------------------------------------------------------------------------
# epsilon from <X>
# ---------------------------------------------------------------------------

def fit_epsilon(trace: CoherenceTrace, omega_L: float, sigma=None, M: int = 1) -> FitResult:
    """Fit ``<X> = exp(-chi(tau; eps))`` (phase taken as zero) for eps.

    Parameters
    ----------
    trace : CoherenceTrace
        ``<X>`` against pulse spacing tau (us).
    omega_L : float
        Larmor angular frequency, rad/us.
    sigma : float or array, optional
        Measurement uncertainty of ``<X>``.
    M : int
        Number of refocusing pulses (1 for a Hahn echo).

    Raises
    ------
    FitError
        Fewer than 8 points, a tau span under half a Larmor period, or every
        point on a full revival where ``<X>`` carries no information on eps.
    """
    _check_finite(trace)
    tau, xs = trace.control, trace.x
    n = tau.size
    if n < 8:
        raise FitError(f"need >= 8 points, got {n}")
    t_l = 2 * np.pi / omega_L
    if np.ptp(tau) < 0.5 * t_l - 1e-12:
        raise FitError(f"tau span {np.ptp(tau):.4g} us is under half a Larmor period")
    c = chi_cpmg(tau, M, 1.0, omega_L)
    if np.max(np.abs(c)) < 1e-9:
        raise FitError("degenerate sampling: every tau sits on a coherence revival")
    s = _sigma_array(sigma, n)
    w = np.ones(n) if s is None else 1.0 / s

    # log-linear start: -ln X = eps * c
    ok = (xs > 1e-6) & (c > 1e-6)
    eps0 = float(np.sum(c[ok] * -np.log(xs[ok])) / np.sum(c[ok] ** 2)) if ok.any() else 0.1

    def resid(p):
        return w * (np.exp(-p[0] * c) - xs)

    def jac(p):
        return (w * (-c * np.exp(-p[0] * c)))[:, None]

    sol = least_squares(resid, [eps0], jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    cov = _covariance(sol.jac, sol.fun, s is not None)
    eps = float(sol.x[0])
    flags = [] if eps > 0 else ["non-positive eps"]
    return FitResult("eq7-hahn" if M == 1 else f"cpmg-chi-M{M}", {"eps": eps},
                     {"eps": float(_stderr(cov, [eps])[0])},
                     float(np.linalg.norm(np.exp(-eps * c) - xs)), cov, ("eps",), n, flags)


# ---------------------------------------------------------------------------
# (pz_bar, p_perp, phi) from <Y> vs t_wait
# ---------------------------------------------------------------------------

def transverse_gain(a_perp, tau: float, omega_L: float) -> float:
    """Phase per unit uniform transverse polarization for a Hahn echo of length tau."""
    a_perp = np.asarray(a_perp, dtype=float)
    return float(2.0 * np.sin(omega_L * tau / 4.0) ** 2 / omega_L * np.sum(a_perp))


def twait_model(t_wait, pz_bar, p_perp, phi, eps, a_perp, omega_L, tau=None):
    """``<Y> = exp(-chi) sin(Phi_q + S p_perp sin(w t_wait + phi + w tau/2))``."""
    tau = np.pi / omega_L if tau is None else tau
    t_wait = np.asarray(t_wait, dtype=float)
    chi = chi_cpmg(tau, 1, eps, omega_L)
    q = phi_q_cpmg(tau, 1, eps, 1.0, omega_L)
    gain = transverse_gain(a_perp, tau, omega_L)
    phase = pz_bar * q + gain * p_perp * np.sin(omega_L * t_wait + phi + omega_L * tau / 2)
    return np.exp(-chi) * np.sin(phase)


def fit_twait(trace: CoherenceTrace, eps: float, a_perp, omega_L: float, tau: float | None = None,
              sigma=None) -> FitResult:
    """Fit ``<Y>`` against t_wait for ``pz_bar``, ``p_perp`` and ``phi``.

    The transverse polarization is taken uniform over the bath
    (``p_perp,j = p_perp``, ``phi_j = phi``) and eps is held fixed.  The fit
    runs on the linear parametrization ``Phi = pz_bar q + a cos + b sin`` and
    is seeded by projecting ``arcsin(<Y> e^chi)`` onto ``{1, cos, sin}`` at
    ``omega_L``.

    Raises
    ------
    FitError
        ``eps <= 0``, fewer than 12 points, a span under one Larmor period or
        a zero quench-phase gain at this tau.
    """
    _check_finite(trace)
    if not eps > 0:
        raise FitError(f"eps must be > 0, got {eps}")
    tau = np.pi / omega_L if tau is None else float(tau)
    t, ys = trace.control, trace.y
    n = t.size
    if n < 12:
        raise FitError(f"need >= 12 points, got {n}")
    t_l = 2 * np.pi / omega_L
    if np.ptp(t) < t_l - 1e-9:
        raise FitError(f"t_wait span {np.ptp(t):.4g} us is under one Larmor period ({t_l:.4g} us)")
    chi = float(chi_cpmg(tau, 1, eps, omega_L))
    q = float(phi_q_cpmg(tau, 1, eps, 1.0, omega_L))
    if abs(q) < 1e-12:
        raise FitError("quench phase has zero gain at this tau")
    gain = transverse_gain(a_perp, tau, omega_L)
    damp = math.exp(-chi)
    s = _sigma_array(sigma, n)
    w = np.ones(n) if s is None else 1.0 / s
    basis = np.column_stack([np.full(n, q), np.cos(omega_L * t), np.sin(omega_L * t)])

    seed_phase = np.arcsin(np.clip(ys / damp, -1.0, 1.0))
    p0 = np.linalg.lstsq(basis, seed_phase, rcond=None)[0]

    def resid(p):
        return w * (damp * np.sin(basis @ p) - ys)

    def jac(p):
        return (w * damp * np.cos(basis @ p))[:, None] * basis

    sol = least_squares(resid, p0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    cov_lin = _covariance(sol.jac, sol.fun, s is not None)
    pz, a, b = (float(v) for v in sol.x)

    # (a, b) = gain * p_perp * (sin psi, cos psi), psi = phi + w tau/2
    amp = math.hypot(a, b)
    offset = omega_L * tau / 2
    flags = []
    if gain == 0:
        p_perp, phi = 0.0, float("nan")
        g = np.array([[1, 0, 0], [0, 0, 0], [0, 0, 0]], dtype=float)
    else:
        p_perp = amp / abs(gain)
        psi = math.atan2(a, b) if gain > 0 else math.atan2(-a, -b)
        phi = float((psi - offset + np.pi) % (2 * np.pi) - np.pi)
        if amp > 0:
            g = np.array([[1, 0, 0],
                          [0, a / amp / abs(gain), b / amp / abs(gain)],
                          [0, b / amp**2, -a / amp**2]])
        else:
            g = np.array([[1, 0, 0], [0, 0, 0], [0, 0, 0]], dtype=float)
    cov = g @ cov_lin @ g.T
    err = _stderr(cov, [pz, p_perp, phi if math.isfinite(phi) else 0.0])
    amp_err = math.sqrt(max(cov_lin[1, 1] + cov_lin[2, 2], 0.0) / 2)
    if amp <= max(amp_err, 1e-12):
        # phase is not resolvable from a vanishing sinusoid
        err[2] = np.inf
        flags.append("phi unresolved: transverse amplitude consistent with zero")
    if abs(pz) > 1:
        flags.append("pz_bar outside [-1, 1]")
    if p_perp > 1:
        flags.append("p_perp_tilde exceeds 1")
    names = ("pz_bar", "p_perp_tilde", "phi")
    resid_raw = damp * np.sin(basis @ sol.x) - ys
    return FitResult("twait-eq12-14", dict(zip(names, (pz, p_perp, phi))),
                     dict(zip(names, (float(v) for v in err))), float(np.linalg.norm(resid_raw)),
                     cov, names, n, flags,
                     {"eps": float(eps), "tau": tau, "phi_q": pz * q, "phi_m_amplitude": amp})


# ---------------------------------------------------------------------------
# (eps, pz_bar) from a tau sweep
# ---------------------------------------------------------------------------

def _tau_sweep_solve(tau, xs, ys, M, omega_L, w, p0):
    c = chi_cpmg(tau, M, 1.0, omega_L)
    qd = phi_q_cpmg(tau, M, 1.0, 1.0, omega_L)   # Phi_q = eps * pz * qd

    def model(p):
        eps, pz = p
        return np.exp(-eps * c - 1j * eps * pz * qd)

    def resid(p):
        wm = model(p)
        return np.concatenate([w * (wm.real - xs), w * (-wm.imag - ys)])

    def jac(p):
        eps, pz = p
        wm = model(p)
        d_eps = wm * (-c - 1j * pz * qd)
        d_pz = wm * (-1j * eps * qd)
        jx = np.column_stack([d_eps.real, d_pz.real])
        jy = np.column_stack([-d_eps.imag, -d_pz.imag])
        return np.vstack([w[:, None] * jx, w[:, None] * jy])

    return least_squares(resid, p0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)


def _tau_sweep_seed(tau, trace, M, omega_L):
    c = chi_cpmg(tau, M, 1.0, omega_L)
    qd = phi_q_cpmg(tau, M, 1.0, 1.0, omega_L)
    mag, phi = trace.w_mag, trace.phi
    ok = (mag > 1e-6) & (c > 1e-9)
    eps0 = float(np.sum(c[ok] * -np.log(mag[ok])) / np.sum(c[ok] ** 2)) if ok.any() else 0.1
    eps0 = max(eps0, 1e-6)
    pz0 = float(np.sum(qd * phi) / (eps0 * np.sum(qd**2))) if np.any(qd) else 0.0
    return [eps0, pz0]


def fit_tau_sweep(trace: CoherenceTrace, M: int, omega_L: float, sigma=None,
                  check_m: bool = True) -> FitResult:
    """Joint fit of ``|W| = exp(-chi_M)`` and ``Phi = Phi_q,M`` for ``(eps, pz_bar)``.

    Residuals are taken on ``<X>`` and ``<Y>``, which constrains magnitude and
    phase together with homogeneous weights under additive readout noise.
    With ``check_m`` the other pulse counts ``1..max(M + 3, 6)`` are also
    fitted and a ``"M mismatch"`` flag is raised when one of them explains
    the data with under a quarter of the residual.
    """
    _check_finite(trace)
    tau, xs, ys = trace.control, trace.x, trace.y
    n = tau.size
    if n < 3:
        raise FitError(f"need >= 3 points, got {n}")
    s = _sigma_array(sigma, n)
    w = np.ones(n) if s is None else 1.0 / s
    sol = _tau_sweep_solve(tau, xs, ys, M, omega_L, w, _tau_sweep_seed(tau, trace, M, omega_L))
    cov = _covariance(sol.jac, sol.fun, s is not None)
    eps, pz = (float(v) for v in sol.x)
    rss = float(sol.fun @ sol.fun)
    flags = []
    extra = {}
    if check_m:
        best_m, best_rss = M, rss
        for m_alt in range(1, max(M + 3, 6) + 1):
            if m_alt == M:
                continue
            alt = _tau_sweep_solve(tau, xs, ys, m_alt, omega_L, w,
                                   _tau_sweep_seed(tau, trace, m_alt, omega_L))
            r = float(alt.fun @ alt.fun)
            if r < best_rss:
                best_m, best_rss = m_alt, r
        if best_m != M and best_rss < 0.25 * rss and rss > 1e-20 * n:
            flags.append(f"M mismatch: M={best_m} fits better")
            extra["best_M"] = best_m
    if abs(pz) > 1:
        flags.append("pz_bar outside [-1, 1]")
    names = ("eps", "pz_bar")
    err = _stderr(cov, [eps, pz])
    return FitResult(f"cpmg-eq15-16-M{M}", {"eps": eps, "pz_bar": pz},
                     dict(zip(names, (float(v) for v in err))),
                     float(np.sqrt(rss) if s is None else np.linalg.norm(sol.fun / np.tile(w, 2))),
                     cov, names, n, flags, extra)


# ---------------------------------------------------------------------------
# non-Gaussian deviation
# ---------------------------------------------------------------------------

@dataclass
class DeviationProfile:
    """Per-point deviations of an exact trace from its Gaussian counterpart.

    ``mode="absolute"`` compares ``max(|d|W||, |dPhi|)`` with the threshold.
    ``mode="relative"`` compares ``|d<Y>|`` divided by the largest
    ``|<Y>_gaussian|`` on the grid, which puts the small quench-phase signal
    on a unit scale.
    """

    tau: np.ndarray
    d_mag: np.ndarray
    d_phi: np.ndarray
    d_y_rel: np.ndarray
    threshold: float
    mode: str
    crossing: float | None

    @property
    def metric(self) -> np.ndarray:
        if self.mode == "relative":
            return self.d_y_rel
        return np.maximum(self.d_mag, self.d_phi)


def gaussian_deviation(exact: CoherenceTrace, gaussian: CoherenceTrace, threshold: float = 0.05,
                       mode: str = "absolute") -> DeviationProfile:
    """Deviation profile and the first control value where it exceeds ``threshold``.

    Raises
    ------
    ValueError
        If the two traces are not sampled on the same grid, or ``mode`` is
        unknown.
    """
    if mode not in ("absolute", "relative"):
        raise ValueError(f"mode must be 'absolute' or 'relative', got {mode!r}")
    if exact.control.shape != gaussian.control.shape or not np.allclose(
            exact.control, gaussian.control, rtol=0, atol=1e-12):
        raise ValueError("exact and Gaussian traces must share the same grid")
    d_mag = np.abs(exact.w_mag - gaussian.w_mag)
    d_phi = np.abs((exact.phi - gaussian.phi + np.pi) % (2 * np.pi) - np.pi)
    scale = np.max(np.abs(gaussian.y)) if gaussian.y.size else 0.0
    d_y = np.abs(exact.y - gaussian.y)
    d_y_rel = d_y / scale if scale > 0 else np.where(d_y > 0, np.inf, 0.0)
    prof = DeviationProfile(exact.control.copy(), d_mag, d_phi, d_y_rel, float(threshold), mode, None)
    above = np.nonzero(prof.metric > threshold)[0]
    prof.crossing = float(exact.control[above[0]]) if above.size else None
    return prof
