"""
Nuclear spin bath description and derived coupling summaries.

Units
-----
Configuration values follow the usual experimental tables: hyperfine
couplings are given as ``A/2pi`` in kHz, fields in gauss.  Everything that
leaves this module for computation is an angular frequency in rad/us and
times are in us, so ``A[rad/us] = 2*pi*A[kHz]*1e-3``.  The conversion is
done by :func:`khz_to_angular` and nowhere else.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import constants as sc

TWO_PI = 2.0 * math.pi

# 13C and NV electron gyromagnetic ratios
GAMMA_N_13C_KHZ_PER_G = 1.0705
GAMMA_E_MHZ_PER_G = 2.8025
D_ZFS_MHZ = 2870.0

_DATA_DIR = Path(__file__).resolve().parent / "data"


def khz_to_angular(value_khz):
    """Convert ``A/2pi`` in kHz to angular frequency in rad/us."""
    out = TWO_PI * np.asarray(value_khz, dtype=float) * 1e-3
    return float(out) if out.ndim == 0 else out


def angular_to_khz(value):
    """Inverse of :func:`khz_to_angular`."""
    out = np.asarray(value, dtype=float) / TWO_PI * 1e3
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BathSpin:
    """One spin-1/2 nucleus coupled to the probe.

    Parameters
    ----------
    a_par : float
        Axial hyperfine coupling ``A_par/2pi`` in kHz (signed).
    a_perp : float
        Transverse hyperfine coupling ``A_perp/2pi`` in kHz (>= 0).
    p_z : float
        Axial polarization ``<2 I_z>``.
    p_perp : float
        Transverse polarization magnitude.
    phi0 : float
        Phase of the transverse polarization in rad, so that
        ``p_x = p_perp cos(phi0)`` and ``p_y = p_perp sin(phi0)``.
    """

    a_par: float
    a_perp: float
    p_z: float = 0.0
    p_perp: float = 0.0
    phi0: float = 0.0

    def __post_init__(self):
        if self.a_perp < 0:
            raise ValueError(f"a_perp must be >= 0, got {self.a_perp}")
        if not -1.0 <= self.p_z <= 1.0:
            raise ValueError(f"p_z must lie in [-1, 1], got {self.p_z}")
        if self.p_perp < 0:
            raise ValueError(f"p_perp must be >= 0, got {self.p_perp}")
        if self.p_z**2 + self.p_perp**2 > 1.0 + 1e-12:
            raise ValueError(
                f"Bloch vector too long: p_z={self.p_z}, p_perp={self.p_perp}"
            )

    @property
    def p_x(self) -> float:
        return self.p_perp * math.cos(self.phi0)

    @property
    def p_y(self) -> float:
        return self.p_perp * math.sin(self.phi0)

    @property
    def bloch(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.p_z])


@dataclass(frozen=True)
class FieldParams:
    """Static field and gyromagnetic constants.

    ``omega_L`` (rad/us) is authoritative.  Use :meth:`from_field` to derive
    it from ``b0 * gamma_n``, or :meth:`from_larmor_khz` to pin it to a
    quoted Larmor frequency.
    """

    b0: float
    omega_L: float
    gamma_n: float = GAMMA_N_13C_KHZ_PER_G
    gamma_e: float = GAMMA_E_MHZ_PER_G
    d_zfs: float = TWO_PI * D_ZFS_MHZ

    def __post_init__(self):
        if not self.omega_L > 0:
            raise ValueError(f"omega_L must be positive, got {self.omega_L}")

    @classmethod
    def from_field(cls, b0: float, gamma_n: float = GAMMA_N_13C_KHZ_PER_G,
                   gamma_e: float = GAMMA_E_MHZ_PER_G) -> "FieldParams":
        return cls(b0=b0, omega_L=khz_to_angular(gamma_n * b0),
                   gamma_n=gamma_n, gamma_e=gamma_e)

    @classmethod
    def from_larmor_khz(cls, f_larmor_khz: float, b0: float | None = None,
                        gamma_n: float = GAMMA_N_13C_KHZ_PER_G,
                        gamma_e: float = GAMMA_E_MHZ_PER_G) -> "FieldParams":
        if b0 is None:
            b0 = f_larmor_khz / gamma_n
        return cls(b0=b0, omega_L=khz_to_angular(f_larmor_khz),
                   gamma_n=gamma_n, gamma_e=gamma_e)

    @property
    def larmor_period(self) -> float:
        """Nuclear Larmor period ``T_L = 2pi/omega_L`` in us."""
        return TWO_PI / self.omega_L

    def with_field(self, b0: float) -> "FieldParams":
        """Same constants at a new field, with omega_L re-derived from b0."""
        return replace(self, b0=b0, omega_L=khz_to_angular(self.gamma_n * b0))


@dataclass(frozen=True)
class BathConfig:
    spins: tuple[BathSpin, ...] = ()
    label: str = ""
    field: FieldParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "spins", tuple(self.spins))

    def __len__(self) -> int:
        return len(self.spins)

    def __iter__(self):
        return iter(self.spins)

    @property
    def a_par(self) -> np.ndarray:
        """Axial couplings in rad/us."""
        return khz_to_angular(np.array([s.a_par for s in self.spins], dtype=float))

    @property
    def a_perp(self) -> np.ndarray:
        """Transverse couplings in rad/us."""
        return khz_to_angular(np.array([s.a_perp for s in self.spins], dtype=float))

    @property
    def bloch_vectors(self) -> np.ndarray:
        """Per-spin ``(p_x, p_y, p_z)``, shape ``(K, 3)``."""
        return np.array([s.bloch for s in self.spins], dtype=float).reshape(-1, 3)

    def with_polarization(self, p_z: float | Sequence[float] = 0.0,
                          p_perp: float | Sequence[float] = 0.0,
                          phi0: float | Sequence[float] = 0.0) -> "BathConfig":
        """Copy with (uniform or per-spin) polarization replaced."""
        k = len(self.spins)
        pz = np.broadcast_to(np.asarray(p_z, dtype=float), (k,))
        pp = np.broadcast_to(np.asarray(p_perp, dtype=float), (k,))
        ph = np.broadcast_to(np.asarray(phi0, dtype=float), (k,))
        spins = [replace(s, p_z=float(a), p_perp=float(b), phi0=float(c))
                 for s, a, b, c in zip(self.spins, pz, pp, ph)]
        return replace(self, spins=tuple(spins))

    def scaled(self, factor: float) -> "BathConfig":
        """Copy with every hyperfine coupling multiplied by ``factor`` (>= 0)."""
        if factor < 0:
            raise ValueError("coupling scale must be >= 0")
        spins = [replace(s, a_par=s.a_par * factor, a_perp=s.a_perp * factor)
                 for s in self.spins]
        return replace(self, spins=tuple(spins))


def epsilon(bath: BathConfig, field: FieldParams) -> float:
    """Dimensionless coupling strength ``sum_j A_perp,j^2 / omega_L^2``."""
    if not field.omega_L > 0:
        raise ValueError("omega_L must be positive")
    if len(bath) == 0:
        return 0.0
    return float(np.sum(bath.a_perp**2) / field.omega_L**2)


def weighted_axial_polarization(bath: BathConfig) -> float:
    """Coupling-weighted axial polarization ``sum p_z A_perp^2 / sum A_perp^2``.

    Raises
    ------
    ValueError
        If every transverse coupling is zero (the weighting is undefined).
    """
    w = np.array([s.a_perp for s in bath.spins], dtype=float) ** 2
    if w.size == 0 or not np.any(w > 0):
        raise ValueError("undefined weighting: all a_perp are zero")
    pz = np.array([s.p_z for s in bath.spins], dtype=float)
    return float(np.sum(pz * w) / np.sum(w))


def dipolar_constant_khz(r_nm: float, field: FieldParams) -> float:
    """Point-dipole scale ``(mu0/4pi) gamma_e gamma_n hbar / r^3`` as kHz."""
    if r_nm <= 0:
        raise ValueError(f"singular dipolar coupling: r must be > 0, got {r_nm}")
    gamma_e = TWO_PI * field.gamma_e * 1e6 * 1e4   # rad/s/T
    gamma_n = TWO_PI * field.gamma_n * 1e3 * 1e4
    mu0_4pi = sc.mu_0 / (4.0 * math.pi)
    d = mu0_4pi * gamma_e * gamma_n * sc.hbar / (r_nm * 1e-9) ** 3   # rad/s
    return d / TWO_PI * 1e-3


def couplings_from_geometry(r: float, theta: float,
                            constants: FieldParams) -> tuple[float, float]:
    """Hyperfine couplings of a point dipole at distance ``r`` (nm), angle ``theta``.

    Returns ``(a_par, a_perp)`` in kHz with ``a_par = d (1 - 3 cos^2 theta)``
    and ``a_perp = 3 d |sin 2 theta|``.  This is the convention that the
    tabulated NV A / NV B geometries were generated with (checked against all
    twelve rows); note the transverse term is twice the textbook
    ``3 d sin(theta) cos(theta)``.
    """
    d = dipolar_constant_khz(r, constants)
    a_par = d * (1.0 - 3.0 * math.cos(theta) ** 2)
    a_perp = abs(3.0 * d * math.sin(2.0 * theta))
    return a_par, a_perp


def geometry_from_couplings(a_par: float, a_perp: float,
                            constants: FieldParams) -> tuple[float, float]:
    """Invert :func:`couplings_from_geometry`; ``theta`` is returned in [0, pi/2]."""
    if a_par == 0 and a_perp == 0:
        raise ValueError("zero coupling has no finite geometry")
    # a_perp / a_par = 6 sin cos / (1 - 3 cos^2) -> solve for theta on a fine grid, then polish
    from scipy.optimize import brentq

    def mismatch(th):
        return a_perp * (1.0 - 3.0 * math.cos(th) ** 2) - a_par * 3.0 * math.sin(2.0 * th)

    grid = np.linspace(1e-6, math.pi / 2, 2001)
    vals = np.array([mismatch(t) for t in grid])
    roots = []
    for i in range(grid.size - 1):
        if vals[i] == 0 or vals[i] * vals[i + 1] < 0:
            roots.append(brentq(mismatch, grid[i], grid[i + 1], xtol=1e-14))
    # the root where the predicted axial sign matches the input
    for th in roots:
        ang = 1.0 - 3.0 * math.cos(th) ** 2
        if a_par == 0 or np.sign(ang) == np.sign(a_par):
            break
    else:
        raise ValueError("no geometry reproduces these couplings")
    amp = math.hypot(1.0 - 3.0 * math.cos(th) ** 2, 3.0 * math.sin(2.0 * th))
    d = math.hypot(a_par, a_perp) / amp
    d1 = dipolar_constant_khz(1.0, constants)
    return (d1 / d) ** (1.0 / 3.0), th


def gaussian_validity_horizon(bath: BathConfig) -> float:
    """Advisory time (us) up to which a Gaussian bath description holds.

    Returns ``1 / max_j max(|A_par,j|, A_perp,j)`` with the couplings taken as
    angular frequencies (rad/us), i.e. ``1/(2pi * 81 kHz) ~ 1.96 us`` for a
    spin with ``A_perp/2pi = 81 kHz``.
    """
    if len(bath) == 0:
        raise ValueError("gaussian_validity_horizon needs a nonempty bath")
    largest = float(np.max(np.maximum(np.abs(bath.a_par), bath.a_perp)))
    if largest == 0:
        return math.inf
    return 1.0 / largest


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

_FIELD_KEYS = {"b0_gauss", "omega_L_khz", "gamma_n_khz_per_gauss", "gamma_e_mhz_per_gauss"}
_SPIN_KEYS = {"a_par_khz", "a_perp_khz", "p_z", "p_perp", "phi0_rad"}
_TOP_KEYS = {"label", "field", "spins"}


class ConfigError(ValueError):
    """Malformed bath configuration; message carries the offending location."""


def _check_keys(obj, allowed: set, where: str, required: Iterable[str] = ()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ConfigError(f"{where}: missing field(s) {missing}")


def config_from_dict(data: dict) -> BathConfig:
    _check_keys(data, _TOP_KEYS, "config", required=("field", "spins"))
    f = data["field"]
    _check_keys(f, _FIELD_KEYS, "config.field", required=("b0_gauss",))
    gamma_n = float(f.get("gamma_n_khz_per_gauss", GAMMA_N_13C_KHZ_PER_G))
    gamma_e = float(f.get("gamma_e_mhz_per_gauss", GAMMA_E_MHZ_PER_G))
    b0 = float(f["b0_gauss"])
    if f.get("omega_L_khz") is not None:
        fld = FieldParams.from_larmor_khz(float(f["omega_L_khz"]), b0=b0,
                                          gamma_n=gamma_n, gamma_e=gamma_e)
    else:
        fld = FieldParams.from_field(b0, gamma_n=gamma_n, gamma_e=gamma_e)
    if not isinstance(data["spins"], list):
        raise ConfigError("config.spins: expected a list")
    spins = []
    for i, s in enumerate(data["spins"]):
        where = f"config.spins[{i}]"
        _check_keys(s, _SPIN_KEYS, where, required=("a_par_khz", "a_perp_khz"))
        try:
            spins.append(BathSpin(a_par=float(s["a_par_khz"]),
                                  a_perp=float(s["a_perp_khz"]),
                                  p_z=float(s.get("p_z", 0.0)),
                                  p_perp=float(s.get("p_perp", 0.0)),
                                  phi0=float(s.get("phi0_rad", 0.0))))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return BathConfig(spins=tuple(spins), label=str(data.get("label", "")), field=fld)


def config_to_dict(bath: BathConfig) -> dict:
    fld = bath.field
    out = {"label": bath.label}
    if fld is not None:
        out["field"] = {
            "b0_gauss": fld.b0,
            "omega_L_khz": angular_to_khz(fld.omega_L),
            "gamma_n_khz_per_gauss": fld.gamma_n,
            "gamma_e_mhz_per_gauss": fld.gamma_e,
        }
    out["spins"] = [
        {"a_par_khz": s.a_par, "a_perp_khz": s.a_perp, "p_z": s.p_z,
         "p_perp": s.p_perp, "phi0_rad": s.phi0}
        for s in bath.spins
    ]
    return out


def load_config(path: str | Path) -> BathConfig:
    """Read a bath configuration (JSON).

    ``path`` may also be the name of a bundled configuration, ``"nv_a"`` or
    ``"nv_b"``.
    """
    p = Path(path)
    if not p.exists():
        bundled = _DATA_DIR / (p.stem + ".json")
        if p.suffix in ("", ".json") and bundled.exists() and p.parent == Path("."):
            p = bundled
        else:
            raise FileNotFoundError(path)
    with open(p) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


def bundled_config_path(name: str) -> Path:
    return _DATA_DIR / f"{name}.json"
