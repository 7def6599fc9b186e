"""Command-line front end.

Subcommands::

    quenchphase sweep --scenario pse-tau --out trace.csv
    quenchphase fit trace.csv --model eq7 --config nv_a
    quenchphase validate --config nv_a
    quenchphase scenarios list

Exit codes: 0 success, 1 runtime failure, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bath import (ConfigError, angular_to_khz, config_to_dict, epsilon,
                   gaussian_validity_horizon)
from .fitting import FitError, fit_epsilon, fit_tau_sweep, fit_twait
from .scenarios import (REGISTRY, Context, ScenarioError, builtin, evaluate_point,
                        load_scenario_file, resolve_config, scenario_from_dict)
from .trace import TraceFormatError, read_trace_csv

log = logging.getLogger("quenchphase")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
COUPLING_WARN_FRACTION = 0.5


class InputError(Exception):
    """Bad user input; mapped to exit code 2."""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def _parse_param(text: str):
    if "=" not in text:
        raise InputError(f"--param {text!r}: expected KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip(), val


def run_sweep(scenario, bath, seed: int, threads: int = 1) -> str:
    """Evaluate every sweep point and return the CSV text.

    Rows are ordered by sweep index; each point draws from its own
    ``default_rng([seed, index])`` so the output does not depend on the
    thread count or completion order.
    """
    kind = REGISTRY[scenario.name]
    ctx = Context(bath, scenario.params)
    values = scenario.sweep.values()

    def job(i):
        return evaluate_point(kind, ctx, values[i], np.random.default_rng([seed, i]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(len(values))))
    else:
        results = [job(i) for i in range(len(values))]

    cols = list(kind.columns)
    keep = [cols.index(c) for c in scenario.outputs]
    cfg_hash = hashlib.sha256(_canonical(config_to_dict(bath)).encode()).hexdigest()
    scen_hash = hashlib.sha256(_canonical(scenario.to_dict()).encode()).hexdigest()
    buf = io.StringIO()
    buf.write(f"# quenchphase {__version__}\n")
    buf.write(f"# scenario: {scenario.name}\n")
    buf.write(f"# config_sha256: {cfg_hash}\n")
    buf.write(f"# scenario_sha256: {scen_hash}\n")
    buf.write(f"# seed: {seed}\n")
    buf.write(f"# params: {_canonical(scenario.params)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(scenario.outputs)
    for rows in results:
        for row in rows:
            w.writerow([_fmt(row[k]) for k in keep])
    return buf.getvalue()


def _load_scenario(args):
    if args.scenario_file:
        scen = load_scenario_file(args.scenario_file)
    elif args.scenario:
        if args.scenario not in REGISTRY:
            raise InputError(f"--scenario: unknown scenario {args.scenario!r}; "
                             f"choose from {sorted(REGISTRY)}")
        scen = builtin(args.scenario)
    else:
        raise InputError("sweep needs --scenario NAME or --scenario-file PATH")
    overrides = dict(_parse_param(p) for p in args.param or [])
    sweep = {}
    for key, attr in (("start", "start"), ("stop", "stop"), ("steps", "steps")):
        val = getattr(args, attr)
        if val is not None:
            sweep[key] = val
    if overrides or sweep or args.config:
        data = scen.to_dict()
        data["params"] = {**data["params"], **overrides}
        data["sweep"].update(sweep)
        if args.config:
            data["config"] = args.config
        scen = scenario_from_dict(data, where="command line")
    return scen


def cmd_sweep(args) -> int:
    scen = _load_scenario(args)
    bath = resolve_config(scen.config)
    text = run_sweep(scen, bath, args.seed, max(1, args.threads))
    _emit(text, args.out)
    return EXIT_OK


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_fit(args) -> int:
    trace = read_trace_csv(args.input)
    bath = resolve_config(args.config) if args.config else None
    if bath is not None:
        omega_L = bath.field.omega_L
    elif args.larmor_khz is not None:
        omega_L = 2 * math.pi * args.larmor_khz * 1e-3
    else:
        raise InputError("fit needs --config or --larmor-khz for omega_L")
    if args.model == "eq7":
        res = fit_epsilon(trace, omega_L, sigma=args.sigma, M=args.M)
    elif args.model == "tau-sweep":
        res = fit_tau_sweep(trace, args.M, omega_L, sigma=args.sigma)
    else:
        if bath is None:
            raise InputError("--model twait needs --config (transverse couplings)")
        eps = args.eps if args.eps is not None else epsilon(bath, bath.field)
        res = fit_twait(trace, eps, bath.a_perp, omega_L, tau=args.tau, sigma=args.sigma)
    _emit(res.to_json() + "\n", args.out)
    return EXIT_OK


def validate_report(bath) -> tuple[str, list[str]]:
    """Human-readable summary and the list of warnings."""
    lines, warnings = [], []
    fld = bath.field
    w_l = fld.omega_L
    eps = epsilon(bath, fld)
    lines.append(f"label: {bath.label or '-'}")
    lines.append(f"spins: {len(bath)}")
    lines.append(f"omega_L/2pi: {angular_to_khz(w_l):.4f} kHz (T_L = {fld.larmor_period:.4f} us)")
    lines.append(f"epsilon: {eps:.6g}")
    if len(bath):
        horizon = gaussian_validity_horizon(bath)
        lines.append(f"gaussian validity horizon: {horizon:.4g} us")
        lines.append("spin  A_par/2pi(kHz)  A_perp/2pi(kHz)  |A|/omega_L")
        for j, s in enumerate(bath):
            ratio = math.hypot(s.a_par, s.a_perp) / angular_to_khz(w_l)
            lines.append(f"{j:>4}  {s.a_par:>14.3f}  {s.a_perp:>15.3f}  {ratio:>11.4f}")
            if ratio >= COUPLING_WARN_FRACTION:
                warnings.append(f"spin {j}: coupling is {ratio:.2f} omega_L; "
                                "Gaussian treatment is unreliable")
    if eps >= 1:
        warnings.append(f"epsilon = {eps:.3g} >= 1; echo coherence is strongly suppressed")
    return "\n".join(lines), warnings


def cmd_validate(args) -> int:
    if not args.config:
        raise InputError("validate needs --config")
    bath = resolve_config(args.config)
    text, warnings = validate_report(bath)
    out = text + "\n" + "".join(f"WARNING: {w}\n" for w in warnings)
    _emit(out, args.out)
    for w in warnings:
        log.warning(w)
    return EXIT_OK


def cmd_scenarios(args) -> int:
    lines = []
    for name in sorted(REGISTRY):
        k = REGISTRY[name]
        lines.append(f"{name:<18} [{k.config}; sweep {k.sweep.variable} "
                     f"{k.sweep.start:g}..{k.sweep.stop:g} x{k.sweep.steps}] {k.description}")
    _emit("\n".join(lines) + "\n", getattr(args, "out", None))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quenchphase", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="run a scenario sweep and write CSV")
    s.add_argument("--scenario", help="built-in scenario name")
    s.add_argument("--scenario-file", help="JSON scenario definition")
    s.add_argument("--config", help="bath config path or bundled name (nv_a, nv_b)")
    s.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="override a scenario parameter (repeatable)")
    s.add_argument("--start", type=float)
    s.add_argument("--stop", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fit", help="fit a coherence-trace CSV")
    f.add_argument("input")
    f.add_argument("--model", choices=("eq7", "twait", "tau-sweep"), default="eq7")
    f.add_argument("--config")
    f.add_argument("--larmor-khz", type=float)
    f.add_argument("--M", type=int, default=1)
    f.add_argument("--eps", type=float, help="fixed eps for --model twait")
    f.add_argument("--tau", type=float, help="echo spacing for --model twait (default pi/omega_L)")
    f.add_argument("--sigma", type=float, help="readout noise (1 sigma) of x and y")
    f.add_argument("--seed", type=int, default=0, help="accepted for interface symmetry")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    v = sub.add_parser("validate", help="summarize a bath config and flag strong coupling")
    v.add_argument("--config")
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate)

    sc = sub.add_parser("scenarios", help="list built-in scenarios")
    sc.add_argument("action", choices=("list",))
    sc.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ScenarioError, ConfigError, TraceFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("unhandled", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
