"""Named sweep scenarios and their per-point evaluators.

A scenario fixes a bath configuration, sequence parameters and one sweep
axis.  Each sweep point yields one or more CSV rows; points are independent so
the harness may evaluate them in any order.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .bath import BathConfig, ConfigError, epsilon, load_config, weighted_axial_polarization
from .dynamics import (
    SPINLOCK_VARIANTS,
    BathChannel,
    CycleParams,
    Evolve,
    PulseSchedule,
    Reset,
    SpinModel,
    bath_polarization,
    maximally_mixed,
    product_bath_state,
    pse_schedule,
    spinlock_variants,
    twait_averaged_steady_y,
    xy8_schedule,
)
from .dynamics.protocols import novel_segments
from .gaussian import chi_cpmg, phi_q_cpmg

SCENARIO_FIELDS = {"name", "config", "params", "sweep", "outputs", "description"}
SWEEP_FIELDS = {"variable", "start", "stop", "steps"}


class ScenarioError(ValueError):
    """Invalid scenario definition; the message names the offending location."""


@dataclass(frozen=True)
class SweepAxis:
    variable: str
    start: float
    stop: float
    steps: int

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)


@dataclass
class Scenario:
    name: str
    config: str
    params: dict
    sweep: SweepAxis
    outputs: list = field(default_factory=list)
    description: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "config": self.config, "params": dict(self.params),
                "sweep": {"variable": self.sweep.variable, "start": self.sweep.start,
                          "stop": self.sweep.stop, "steps": self.sweep.steps},
                "outputs": list(self.outputs), "description": self.description}


class Context:
    """Per-run shared read-only state: bath, model and derived constants."""

    def __init__(self, bath: BathConfig, params: dict):
        self.bath = bath
        self.params = params
        self.field = bath.field
        self.omega_L = bath.field.omega_L
        self.eps = epsilon(bath, bath.field) if len(bath) else 0.0
        self.model = SpinModel(bath)
        self._rho = None

    def injected_rho(self) -> np.ndarray:
        if self._rho is None:
            self._rho = product_bath_state(self.injected_bath().bloch_vectors)
        return self._rho

    def injected_bath(self) -> BathConfig:
        p = self.params
        return self.bath.with_polarization(p.get("pz", 0.0), p.get("p_perp", 0.0),
                                           p.get("phi", 0.0))

    def tau(self, value=None) -> float:
        v = self.params.get("tau") if value is None else value
        return math.pi / self.omega_L if v in (None, "pi/omega_L") else float(v)


def _wrow(w: complex) -> list:
    x, y = w.real, -w.imag
    return [x, y, math.hypot(x, y), math.atan2(y, x)]


def _noisy(row: list, rng, sigma: float) -> list:
    if sigma <= 0:
        return row
    x = row[0] + rng.normal(0.0, sigma)
    y = row[1] + rng.normal(0.0, sigma)
    return [x, y, math.hypot(x, y), math.atan2(y, x)]


def _pse_tau(ctx: Context, tau: float, rng) -> list[list]:
    rho = ctx.injected_rho()
    w = BathChannel(ctx.model, pse_schedule(tau, int(ctx.params["M"]))).apply(rho)[1]["pse"][0]
    return [[tau] + _noisy(_wrow(w), rng, ctx.params["noise_sigma"])]


def _gaussian_tau(ctx: Context, tau: float, rng) -> list[list]:
    p = ctx.params
    eps = ctx.eps if p["eps"] is None else float(p["eps"])
    pz = p["pz"]
    M = int(p["M"])
    w = complex(np.exp(-chi_cpmg(tau, M, eps, ctx.omega_L)
                       - 1j * phi_q_cpmg(tau, M, eps, pz, ctx.omega_L)))
    return [[tau] + _noisy(_wrow(w), rng, p["noise_sigma"])]


def _twait(ctx: Context, t_wait: float, rng) -> list[list]:
    rho = ctx.injected_rho()
    sched = PulseSchedule([Reset(0), Evolve(t_wait)]) + pse_schedule(ctx.tau())
    w = BathChannel(ctx.model, sched).apply(rho)[1]["pse"][0]
    return [[t_wait] + _noisy(_wrow(w), rng, ctx.params["noise_sigma"])]


def _xy8(ctx: Context, tau: float, rng) -> list[list]:
    ch = BathChannel(ctx.model, xy8_schedule(tau, int(ctx.params["repeats"])))
    w = ch.apply(maximally_mixed(ctx.model.k))[1]["xy8"][0]
    return [[tau] + _wrow(w)]


def _cse_compare(ctx: Context, tau: float, rng) -> list[list]:
    p = ctx.params
    t_l = 2 * math.pi / ctx.omega_L
    rows = []
    for j in range(3):
        t_sum = p["t_sum"] + j * t_l / 3
        for cse in (False, True):
            cp = CycleParams(tau=tau, t_wait=0.0, t_sum=t_sum, n_novel=int(p["n_novel"]),
                             t_sl=p["t_sl"], cse=cse)
            y, _ = twait_averaged_steady_y(ctx.model, cp, int(p["n_twait"]))
            rows.append([tau, t_sum, int(cse), y])
    return rows


def _spinlock(ctx: Context, t: float, rng) -> list[list]:
    rows = []
    for variant in SPINLOCK_VARIANTS:
        rec = spinlock_variants(ctx.model, variant, [t])[0]
        for j, _, px, py, pz in rec.rows():
            rows.append([variant, j, t, px, py, pz])
    return rows


def _deviation(ctx: Context, tau: float, rng) -> list[list]:
    rho = ctx.injected_rho()
    M = int(ctx.params["M"])
    we = BathChannel(ctx.model, pse_schedule(tau, M)).apply(rho)[1]["pse"][0]
    pz = weighted_axial_polarization(ctx.injected_bath())
    wg = complex(np.exp(-chi_cpmg(tau, M, ctx.eps, ctx.omega_L)
                        - 1j * phi_q_cpmg(tau, M, ctx.eps, pz, ctx.omega_L)))
    xe, ye, xg, yg = we.real, -we.imag, wg.real, -wg.imag
    d_phi = abs(np.angle(we * np.conj(wg)))
    return [[tau, xe, ye, xg, yg, abs(abs(we) - abs(wg)), float(d_phi)]]


def _novel_resonance(ctx: Context, f_sl_khz: float, rng) -> list[list]:
    p = ctx.params
    model = ctx.model
    segs = novel_segments(model, p["t_sl"], 2 * math.pi * f_sl_khz * 1e-3, N=int(p["n_novel"]))
    rho, _ = BathChannel(model, PulseSchedule(segs)).apply(maximally_mixed(model.k))
    v = bath_polarization(rho).vectors
    w = model.bath.a_perp ** 2
    pz_bar = float(np.sum(w * v[:, 2]) / np.sum(w)) if np.sum(w) > 0 else 0.0
    return [[f_sl_khz, pz_bar, float(np.mean(np.hypot(v[:, 0], v[:, 1])))]]


@dataclass(frozen=True)
class ScenarioKind:
    name: str
    description: str
    config: str
    params: dict
    sweep: SweepAxis
    columns: tuple
    point: Callable


PSE_COLUMNS = ("x", "y", "w_mag", "phi")

REGISTRY: dict[str, ScenarioKind] = {k.name: k for k in [
    ScenarioKind("pse-tau", "exact Hahn/CPMG PSE versus tau on a uniformly polarized bath",
                 "nv_a", {"M": 1, "pz": 1.0, "p_perp": 0.0, "phi": 0.0, "noise_sigma": 0.0},
                 SweepAxis("tau", 0.1, 6.0, 119), ("tau_us",) + PSE_COLUMNS, _pse_tau),
    ScenarioKind("gaussian-tau", "closed-form Gaussian PSE versus tau",
                 "nv_a", {"M": 1, "pz": 1.0, "eps": None, "noise_sigma": 0.0},
                 SweepAxis("tau", 0.1, 6.0, 119), ("tau_us",) + PSE_COLUMNS, _gaussian_tau),
    ScenarioKind("twait", "exact PSE versus wait time after polarization (precessing bath)",
                 "nv_b", {"tau": None, "pz": 0.77, "p_perp": 0.3, "phi": 1.0,
                          "noise_sigma": 0.0},
                 SweepAxis("t_wait", 0.0, 6.0, 48), ("t_wait_us",) + PSE_COLUMNS, _twait),
    ScenarioKind("xy8", "XY8 coherence of an unpolarized bath versus pulse spacing",
                 "nv_a", {"repeats": 2}, SweepAxis("tau", 0.2, 3.0, 281),
                 ("tau_us",) + PSE_COLUMNS, _xy8),
    ScenarioKind("cse-compare", "steady-state <Y> averaged over t_wait, with and without CSE,"
                 " at three t_sum values", "nv_a",
                 {"t_sum": 41.25, "n_novel": 3, "t_sl": 4.0, "n_twait": 16},
                 SweepAxis("tau", 0.75, 3.0, 4), ("tau_us", "t_sum_us", "cse", "y_avg"),
                 _cse_compare),
    ScenarioKind("spinlock-variants", "bath polarization during one spin-lock pulse,"
                 " four Hamiltonian variants", "nv_a", {},
                 SweepAxis("t_sl", 0.0, 10.0, 101),
                 ("variant", "spin_index", "t_us", "px", "py", "pz"), _spinlock),
    ScenarioKind("deviation", "exact versus Gaussian PSE on a polarized bath",
                 "nv_a", {"M": 1, "pz": 1.0, "p_perp": 0.0, "phi": 0.0},
                 SweepAxis("tau", 0.1, 6.0, 119),
                 ("tau_us", "x_exact", "y_exact", "x_gauss", "y_gauss", "d_mag", "d_phi"),
                 _deviation),
    ScenarioKind("novel-resonance", "bath polarization after N NOVEL pulses versus drive"
                 " strength", "nv_a", {"t_sl": 4.0, "n_novel": 3},
                 SweepAxis("f_sl_khz", 250.0, 420.0, 35),
                 ("f_sl_khz", "pz_bar", "p_perp_mean"), _novel_resonance),
]}


def _require_number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {v!r}")
    return float(v)


def scenario_from_dict(data: dict, where: str = "scenario") -> Scenario:
    """Build a scenario from a (possibly partial) dict over a built-in kind.

    ``name`` selects the kind; every other field overrides its defaults.
    Unknown fields, parameters or sweep keys raise ``ScenarioError``.
    """
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: expected an object")
    unknown = sorted(set(data) - SCENARIO_FIELDS)
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {unknown}")
    name = data.get("name")
    if name not in REGISTRY:
        raise ScenarioError(f"{where}.name: unknown scenario {name!r}; "
                            f"choose from {sorted(REGISTRY)}")
    kind = REGISTRY[name]
    params = copy.deepcopy(kind.params)
    for key, val in (data.get("params") or {}).items():
        if key not in params:
            raise ScenarioError(f"{where}.params.{key}: unknown parameter for {name!r}; "
                                f"allowed {sorted(params)}")
        params[key] = val
    sw = dict(kind.sweep.__dict__)
    sweep_in = data.get("sweep") or {}
    if not isinstance(sweep_in, dict):
        raise ScenarioError(f"{where}.sweep: expected an object")
    bad = sorted(set(sweep_in) - SWEEP_FIELDS)
    if bad:
        raise ScenarioError(f"{where}.sweep: unknown field(s) {bad}")
    sw.update(sweep_in)
    if sw["variable"] != kind.sweep.variable:
        raise ScenarioError(f"{where}.sweep.variable: {name!r} sweeps "
                            f"{kind.sweep.variable!r}, got {sw['variable']!r}")
    start = _require_number(sw["start"], f"{where}.sweep.start")
    stop = _require_number(sw["stop"], f"{where}.sweep.stop")
    steps = sw["steps"]
    if isinstance(steps, bool) or not isinstance(steps, int) or steps < 2:
        raise ScenarioError(f"{where}.sweep.steps: must be an integer >= 2, got {steps!r}")
    if start == stop:
        raise ScenarioError(f"{where}.sweep: empty range (start == stop == {start})")
    outputs = data.get("outputs", list(kind.columns))
    bad_out = [c for c in outputs if c not in kind.columns]
    if bad_out:
        raise ScenarioError(f"{where}.outputs: unknown column(s) {bad_out}; "
                            f"available {list(kind.columns)}")
    return Scenario(name, str(data.get("config", kind.config)), params,
                    SweepAxis(kind.sweep.variable, start, stop, steps), list(outputs),
                    data.get("description", kind.description))


def load_scenario_file(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return scenario_from_dict(data, where=str(path))


def builtin(name: str) -> Scenario:
    return scenario_from_dict({"name": name})


def resolve_config(ref: str) -> BathConfig:
    try:
        return load_config(ref)
    except FileNotFoundError:
        raise ConfigError(f"config {ref!r}: no such file or bundled config") from None


def evaluate_point(kind: ScenarioKind, ctx: Context, value: float, rng) -> list[list]:
    return kind.point(ctx, float(value), rng)
