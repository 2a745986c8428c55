"""Command-line driver: ``ecsim {simulate,eseem,scan,validate}``.

Exit status: 0 success, 2 input or parse error, 3 engine or precondition error.
Every command that writes files also writes ``<prefix>.manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, SystemConfig, has_hamiltonian, load_config
from .dsl import format_program, parse_bytes
from .model import ScanGrid, cancellation_scan, proton_larmor_mhz
from .sequence import OBSERVABLES, ESEEM_PULSE_NS, SequenceError, eseem_3pulse, observe, run
from .sigproc import (
    RealTrace,
    apodize,
    baseline_correct,
    peak_pick,
    spectrum,
    spectrum_to_csv,
    trace_to_csv,
)
from .spincore import MHZ, NUM_TOL, named_state

EXIT_OK, EXIT_INPUT, EXIT_ENGINE = 0, 2, 3


class InputError(Exception):
    """Bad user input: exit status 2."""


class EngineError(Exception):
    """A failed engine precondition: exit status 3."""


# --- output helpers ---------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path: Path, text: str) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return str(path)


def _prefix(args, input_path: str | None, default: str) -> Path:
    stem = Path(input_path).stem if input_path else default
    if args.out is None:
        return Path(stem)
    out = Path(args.out)
    if out.is_dir() or args.out.endswith(("/", "\\")):
        return out / stem
    return out


def _manifest(args, command, inputs, parameters, flags, outputs) -> dict:
    return {
        "command": command,
        "inputs": list(inputs),
        "parameters": parameters,
        "flags": flags,
        "global": {"seed": args.seed, "tolerance": args.tolerance},
        "tool": {"name": "ecsim", "version": __version__},
        "outputs": list(outputs),
    }


def _finish(prefix: Path, manifest: dict, files: dict[str, str]) -> None:
    paths = {}
    for suffix, text in files.items():
        paths[suffix] = _write(Path(f"{prefix}{suffix}"), text)
    manifest["outputs"] = sorted(paths.values())
    _write(Path(f"{prefix}.manifest.json"), _json_text(manifest))


def _read_source(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: cannot read file: {exc.strerror or exc}") from None


def _parse_program(path: str):
    origin = "<stdin>" if path == "-" else path
    result = parse_bytes(_read_source(path), origin=origin)
    for d in result.diagnostics:
        print(d, file=sys.stderr)
    if not result.ok:
        raise InputError(f"{origin}: {len(result.errors)} error(s)")
    return result


def _load_config(path: str) -> SystemConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise InputError(str(exc)) from None


# --- commands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    result = _parse_program(args.program)
    observables = list(OBSERVABLES)
    if args.observables:
        wanted = [s.strip() for s in args.observables.split(",") if s.strip()]
        unknown = [s for s in wanted if s not in OBSERVABLES]
        if unknown or not wanted:
            raise InputError(f"unknown observable(s) {', '.join(unknown) or '(none)'}; choose from {', '.join(OBSERVABLES)}")
        observables = wanted
    try:
        rho0 = named_state(args.initial)
        p = result.system.to_params()
        rho, trace = run(rho0, p, result.sequence, tol=args.tolerance)
    except (SequenceError, ValueError) as exc:
        raise EngineError(str(exc)) from None
    times = list(trace.times)
    cols = {k: list(v) for k, v in trace.values.items()}
    if not times:
        # nothing sampled: report the final state
        final = observe(rho)
        times = [result.sequence.duration]
        cols = {k: [final[k]] for k in OBSERVABLES}
    rows = [[_fmt(t)] + [_fmt(cols[k][i]) for k in observables] for i, t in enumerate(times)]
    prefix = _prefix(args, None if args.program == "-" else args.program, "simulate")
    manifest = _manifest(
        args,
        "simulate",
        [args.program],
        result.system.resolved(),
        {"initial": args.initial, "observables": observables, "duration_ns": result.sequence.duration},
        [],
    )
    _finish(prefix, manifest, {".csv": _csv_text(["time_ns"] + observables, rows)})
    return EXIT_OK


def cmd_eseem(args) -> int:
    cfg = _load_config(args.config)
    if not has_hamiltonian(cfg):
        raise InputError(f"{args.config}: ESEEM needs omega_I_MHz, A_MHz and B_MHz (or a tensor field_dir)")
    try:
        p = cfg.to_params()
        tr = eseem_3pulse(
            p,
            tau=args.tau,
            T_start=args.t_start,
            dt=args.dt,
            n=args.n,
            omega1=args.w1 * MHZ,
            pulse_length=args.pulse_len,
            ideal=args.ideal_pulses,
            coherence_filter=not args.no_coherence_filter,
        )
        raw = RealTrace(args.t_start, args.dt, tr.values["V"])
        processed = raw
        fallback = None
        if not args.no_baseline:
            processed = baseline_correct(processed, model=args.baseline_model, seed=args.seed)
            fallback = processed.meta["baseline_fallback"]
        if not args.no_apodize:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                processed = apodize(processed, args.apodize_fraction)
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
        spec = spectrum(processed, args.zero_fill)
        peaks = peak_pick(spec, args.threshold)
    except ValueError as exc:
        raise EngineError(str(exc)) from None
    prefix = _prefix(args, args.config, "eseem")
    flags = {
        "tau_ns": args.tau,
        "dt_ns": args.dt,
        "n": args.n,
        "t_start_ns": args.t_start,
        "w1_MHz": args.w1,
        "pulse_len_ns": args.pulse_len,
        "ideal_pulses": args.ideal_pulses,
        "coherence_filter": not args.no_coherence_filter,
        "baseline": None if args.no_baseline else args.baseline_model,
        "baseline_fallback": fallback,
        "no_apodize": args.no_apodize,
        "apodize_fraction": None if args.no_apodize else args.apodize_fraction,
        "zero_fill": spec.n_fft,
        "threshold": args.threshold,
    }
    peak_doc = {
        "df_MHz": spec.df,
        "n_fft": spec.n_fft,
        "peaks": [{"freq_MHz": f, "magnitude": m} for f, m in peaks],
    }
    manifest = _manifest(args, "eseem", [args.config], cfg.resolved(), flags, [])
    _finish(
        prefix,
        manifest,
        {
            "_raw.csv": trace_to_csv(raw),
            "_processed.csv": trace_to_csv(processed),
            "_spectrum.csv": spectrum_to_csv(spec),
            "_peaks.json": _json_text(peak_doc),
        },
    )
    return EXIT_OK


def cmd_scan(args) -> int:
    cfg = _load_config(args.config)
    if cfg.tensor is None:
        raise InputError(f"{args.config}: scan needs a tensor block with principal_MHz")
    directions = None
    if args.direction:
        directions = []
        for d in args.direction:
            v = np.asarray(d, dtype=float)
            norm = float(np.linalg.norm(v))
            if not math.isfinite(norm) or norm == 0.0:
                raise InputError(f"--direction {d} is not a usable direction")
            directions.append(tuple(v / norm))
    elif args.use_config_direction:
        if cfg.tensor.field_dir is None:
            raise InputError(f"{args.config}: tensor block has no field_dir")
        v = np.asarray(cfg.tensor.field_dir, dtype=float)
        directions = [tuple(v / np.linalg.norm(v))]
    fields = args.b0 or [343.7]
    if args.omega_i is not None:
        omega_fn = lambda _b0, w=args.omega_i: w  # noqa: E731 - fixed nuclear frequency
    else:
        omega_fn = proton_larmor_mhz
    grid = ScanGrid(tuple(fields), args.theta_step, args.phi_step, None if directions is None else tuple(directions))
    try:
        rows = cancellation_scan(cfg.tensor.tensor, omega_fn, grid, workers=args.workers)
    except ValueError as exc:
        raise EngineError(str(exc)) from None
    if args.top:
        rows = rows[: args.top]
    body = [
        [_fmt(r.direction[0]), _fmt(r.direction[1]), _fmt(r.direction[2]), _fmt(r.b0_mT), _fmt(r.mismatch_MHz), _fmt(r.sin_eta_beta)]
        for r in rows
    ]
    prefix = _prefix(args, args.config, "scan")
    flags = {
        "theta_step_deg": args.theta_step,
        "phi_step_deg": args.phi_step,
        "B0_mT": list(fields),
        "omega_I_MHz": args.omega_i,
        "directions": None if directions is None else [list(d) for d in directions],
        "top": args.top,
    }
    params = {
        "tensor": {
            "principal_MHz": list(cfg.tensor.principal_MHz),
            "euler_deg": list(cfg.tensor.euler_deg),
        },
        "nuclear_frequency": "fixed" if args.omega_i is not None else "proton Larmor at B0",
    }
    manifest = _manifest(args, "scan", [args.config], params, flags, [])
    header = ["dir_x", "dir_y", "dir_z", "B0_mT", "mismatch_MHz", "sin_eta_beta"]
    _finish(prefix, manifest, {".csv": _csv_text(header, body)})
    return EXIT_OK


def cmd_validate(args) -> int:
    result = _parse_program(args.program)
    try:
        result.system.to_params()
        result.sequence.validate()
    except (SequenceError, ValueError) as exc:
        print(f"{args.program}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.write(format_program(result.system, result.sequence))
    return EXIT_OK


# --- argument parsing -------------------------------------------------------


def _positive_float(text):
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a number >= 0, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output prefix or existing directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for fit initialisation (default 0)")
    common.add_argument(
        "--tolerance", type=_positive_float, default=argparse.SUPPRESS, help=f"unitarity tolerance (default {NUM_TOL:g})"
    )

    ap = argparse.ArgumentParser(
        prog="ecsim",
        description="Electron-nuclear spin-pair simulator: lock/release sequences, ESEEM, cancellation scans.",
        parents=[common],
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run a pulse program and write a trace CSV")
    p.add_argument("program", help="pulse-program file ('-' for standard input)")
    p.add_argument("--initial", default="thermal", choices=["thermal", "aa", "ab", "ba", "bb"])
    p.add_argument("--observables", help=f"comma-separated subset of {','.join(OBSERVABLES)}")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eseem", parents=[common], help="three-pulse ESEEM trace, spectrum and peaks")
    p.add_argument("config", help="system configuration (JSON or pulse-program file)")
    p.add_argument("--tau", type=_nonneg_float, default=200.0, help="interpulse delay tau in ns (200)")
    p.add_argument("--dt", type=_positive_float, default=8.0, help="T increment in ns (8)")
    p.add_argument("--n", type=int, default=512, help="number of T points (512)")
    p.add_argument("--t-start", type=_nonneg_float, default=56.0, help="first T in ns (56)")
    p.add_argument("--w1", type=float, default=15.6, help="pulse strength w1/2pi in MHz (15.6)")
    p.add_argument("--pulse-len", type=_positive_float, default=ESEEM_PULSE_NS, help="pi/2 pulse length in ns (16)")
    p.add_argument("--ideal-pulses", action="store_true", help="instantaneous exp(-i pi/2 Sy) pulses")
    p.add_argument("--no-coherence-filter", action="store_true", help="keep electron coherences during T")
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--baseline-model", choices=["biexp", "polyexp"], default="biexp")
    p.add_argument("--no-apodize", action="store_true", help="skip the Gaussian window")
    p.add_argument("--apodize-fraction", type=_positive_float, default=0.4)
    p.add_argument("--zero-fill", type=int, default=None, help="FFT length, a power of two")
    p.add_argument("--threshold", type=float, default=0.1, help="peak threshold as a fraction of the maximum")
    p.set_defaults(func=cmd_eseem)

    p = sub.add_parser("scan", parents=[common], help="search orientations/fields for exact cancellation")
    p.add_argument("config", help="configuration with a tensor block")
    p.add_argument("--b0", type=_positive_float, action="append", help="field in mT (repeatable; default 343.7)")
    p.add_argument("--theta-step", type=_positive_float, default=10.0)
    p.add_argument("--phi-step", type=_positive_float, default=10.0)
    p.add_argument("--direction", type=float, nargs=3, action="append", metavar=("X", "Y", "Z"),
                   help="explicit field direction (repeatable); replaces the sphere grid")
    p.add_argument("--use-config-direction", action="store_true", help="scan only the tensor block's field_dir")
    p.add_argument("--omega-i", type=float, default=None, help="fixed nuclear frequency in MHz instead of the proton Larmor")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--top", type=int, default=None, help="keep only the best N rows")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("validate", parents=[common], help="check a pulse program and print it canonically")
    p.add_argument("program", help="pulse-program file ('-' for standard input)")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    for name, default in (("out", None), ("seed", 0), ("tolerance", NUM_TOL)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"ecsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EngineError as exc:
        print(f"ecsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
