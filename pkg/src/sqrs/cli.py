"""Command-line driver for the simulator and analysis pipeline.

Exit codes: 0 success, 2 configuration error, 3 calibration abort,
4 transport error.
"""

import argparse
import dataclasses
import os
import sys

from .experiment import (
    CalibrationAbortError,
    ConfigError,
    build_config,
    check_calibration,
    compute_cfi_table,
    load_model,
    parse_config_file,
    read_estimates_csv,
    read_report_config,
    read_sweep_csv,
    run_sweep,
    run_tomography,
    save_sweep_files,
    save_tomography_files,
    write_cfi_csv,
)
from .transport import TransportError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3
EXIT_TRANSPORT = 4


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="flat key=value config file")
    parser.add_argument("--phases", help="comma-separated phases in radians")
    parser.add_argument("--rounds", type=int, help="post-selected rounds per phase")
    parser.add_argument("--shots", type=int, help="tomography shots per setting")
    parser.add_argument("--werner-p", dest="werner_p", type=float,
                        help="singlet weight of the Werner mixture")
    parser.add_argument("--gamma", type=float, help="phase-damping strength on Bob's qubit")
    parser.add_argument("--eta0", type=float, help="detection efficiency for outcome 0")
    parser.add_argument("--eta1", type=float, help="detection efficiency for outcome 1")
    parser.add_argument("--seed", type=int, help="64-bit unsigned simulation seed")
    parser.add_argument("--grid-step", dest="grid_step", type=float,
                        help="phase-inversion grid resolution in radians")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--ideal", action="store_true", default=None,
                        help="use the exact singlet as the probability model")
    parser.add_argument("--centering", help="comma-separated centering sweep indices")
    parser.add_argument("--abort-fidelity", dest="abort_fidelity", type=float,
                        help="calibration abort threshold on singlet fidelity")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering next to the CSV output")


def _config_from_args(args):
    file_values = parse_config_file(args.config) if args.config else None
    overrides = dict(
        rounds=args.rounds,
        shots=args.shots,
        werner_p=args.werner_p,
        gamma=args.gamma,
        eta0=args.eta0,
        eta1=args.eta1,
        seed=args.seed,
        grid_step=args.grid_step,
        out=args.out,
        ideal=args.ideal,
        abort_fidelity=args.abort_fidelity,
    )
    if args.phases is not None:
        overrides["phases"] = tuple(float(p) for p in args.phases.split(","))
    if args.centering is not None:
        overrides["centering"] = tuple(int(c) for c in args.centering.split(","))
    return build_config(file_values, **overrides)


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"endpoint must look like host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError as err:
        raise ConfigError(f"bad port in endpoint {text!r}") from err


def _cmd_tomography(args) -> int:
    config = _config_from_args(args)
    counts, result = run_tomography(config)
    check_calibration(result, config.abort_fidelity)
    save_tomography_files(counts, result, config)
    print(f"tomography: fidelity_to_singlet={result.fidelity_to_singlet:.6f} "
          f"shots={config.tomography_shots} -> {config.output_dir}/counts.csv, "
          f"{config.output_dir}/rho_hat.json")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _config_from_args(args)
    model = load_model(config)
    report = run_sweep(config, model)
    save_sweep_files(report)
    for pt in report.points:
        est = " ".join(f"{lbl}={phi:.4f}" for lbl, phi in pt.estimates.per_group)
        print(f"phi_{pt.index}={pt.phi:.4f}: {est} pooled={pt.estimates.pooled_xor:.4f} "
              f"eve_p={pt.eve_p_exp:.4f}")
    if not args.no_figures:
        from .figures import render_sweep_figure

        table = read_sweep_csv(os.path.join(config.output_dir, "sweep.csv"))
        render_sweep_figure(table, os.path.join(config.output_dir, "sweep.png"), model=model)
        print(f"figure -> {config.output_dir}/sweep.png")
    print(f"reports -> {config.output_dir}/sweep.csv, {config.output_dir}/estimates.csv")
    return EXIT_OK


def _cmd_cfi(args) -> int:
    out = args.out if args.out is not None else "out"
    sweep_path = os.path.join(out, "sweep.csv")
    est_path = os.path.join(out, "estimates.csv")
    for path in (sweep_path, est_path):
        if not os.path.exists(path):
            raise ConfigError(f"missing sweep output {path}; run the sweep command first")
    # Provenance comes from the sweep files themselves; only the centering
    # choice may be overridden here.
    config = read_report_config(sweep_path)
    config = dataclasses.replace(config, output_dir=out)
    if args.centering is not None:
        config = dataclasses.replace(
            config, centering=tuple(int(c) for c in args.centering.split(",")))
    table = read_sweep_csv(sweep_path)
    _, est_matrix, _, _ = read_estimates_csv(est_path)
    n_points = len(table.phases)
    for c in config.centering:
        if not 1 <= c <= n_points - 2:
            raise ConfigError(f"centering index {c} needs neighbors within 0..{n_points - 1}")
    cfi_table = compute_cfi_table(table, est_matrix, config.centering)
    write_cfi_csv(cfi_table, config, os.path.join(out, "cfi.csv"))
    for note in cfi_table.notes:
        print(f"note: {note}")
    for phase, series, p, slope, f in cfi_table.rows:
        print(f"phase={phase:.4f} series={series} P={p:.5f} slope={slope:+.5f} F={f:.3e}")
    for c, rep in cfi_table.reports.items():
        print(f"center {c}: max Alice F={max(rep.per_group_F.values()):.4f} "
              f"eve F={rep.eve_F:.3e} asymmetry_ratio={rep.asymmetry_ratio:.3e}")
    if not args.no_figures:
        from .figures import render_cfi_figure

        render_cfi_figure(cfi_table.rows, os.path.join(config.output_dir, "cfi.png"))
        print(f"figure -> {config.output_dir}/cfi.png")
    return EXIT_OK


def _cmd_serve_bob(args) -> int:
    from .twoparty import serve_bob

    config = _config_from_args(args)
    host, port = _parse_endpoint(args.endpoint)
    serve_bob(config, host, port, max_sessions=args.max_sessions)
    return EXIT_OK


def _cmd_run_alice(args) -> int:
    from .twoparty import run_alice

    config = _config_from_args(args)
    host, port = _parse_endpoint(args.endpoint)
    report = run_alice(config, host, port, eve_tap_path=args.eve_tap)
    print(f"received and analyzed {len(report.points)} phase points "
          f"-> {config.output_dir}/sweep.csv")
    if not args.no_figures:
        from .figures import render_sweep_figure

        model = load_model(config)
        table = read_sweep_csv(os.path.join(config.output_dir, "sweep.csv"))
        render_sweep_figure(table, os.path.join(config.output_dir, "sweep.png"), model=model)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqrs",
        description="Simulate and analyze entanglement-steered remote phase sensing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tomography", help="calibrate the shared state and save it")
    _add_common_flags(p)
    p.set_defaults(func=_cmd_tomography)

    p = sub.add_parser("sweep", help="run the phase sweep and write sweep reports")
    _add_common_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("cfi", help="Fisher-information table from sweep reports")
    _add_common_flags(p)
    p.set_defaults(func=_cmd_cfi)

    p = sub.add_parser("serve-bob", help="serve sensing data over a socket")
    _add_common_flags(p)
    p.add_argument("--endpoint", required=True, help="host:port to listen on")
    p.add_argument("--max-sessions", type=int, default=1,
                   help="number of client sessions to serve before exiting")
    p.set_defaults(func=_cmd_serve_bob)

    p = sub.add_parser("run-alice", help="receive sensing data and write reports")
    _add_common_flags(p)
    p.add_argument("--endpoint", required=True, help="host:port of Bob's server")
    p.add_argument("--eve-tap", dest="eve_tap",
                   help="record the received byte stream to this file")
    p.set_defaults(func=_cmd_run_alice)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationAbortError as err:
        print(f"calibration abort: {err}", file=sys.stderr)
        return EXIT_CALIBRATION
    except TransportError as err:
        extra = ""
        last = getattr(err, "last_phase_point_id", None)
        if last is not None:
            extra = f" (last acknowledged phase point: {last})"
        print(f"transport error: {err}{extra}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
