"""Two-process realization: Bob serves sensing data, Alice receives and analyzes.

Both processes derive the joint simulation deterministically from the shared
(seed, config); the wire carries only what the protocol allows, Bob to Alice:
tomography counts, a sweep manifest, and the outcome bits s_B per phase
point. Alice cross-checks the received bits against her locally derived
records, so any wire corruption surfaces as an error instead of silently
skewing estimates.

Alice persists per-phase payloads under <out>/state, which makes an
interrupted sweep resumable: rerunning her against a fresh Bob session skips
already-stored phase points and completes the same report files.
"""

import os
import struct

from .experiment import (
    ConfigError,
    ExperimentConfig,
    SweepReport,
    check_calibration,
    header_lines,
    load_model,
    run_sweep,
    save_sweep_files,
    save_tomography_files,
)
from .protocol import run_protocol
from .source import shared_state
from .tomography import reconstruct, simulate_counts
from .transport import (
    KIND_SENSING_OUTCOMES,
    KIND_SWEEP_MANIFEST,
    KIND_TOMOGRAPHY_REPORT,
    BobServer,
    ChannelLostError,
    EveTap,
    connect_receiver,
    decode_sensing_outcomes,
    decode_sweep_manifest,
    decode_tomography_report,
    encode_sensing_outcomes,
    encode_sweep_manifest,
    encode_tomography_report,
)


def serve_bob(config: ExperimentConfig, host: str, port: int,
              max_sessions: int = 1, ready_callback=None) -> None:
    """Serve tomography counts, the manifest, and per-phase outcome bits.

    Every session replays the identical deterministic stream, so a client
    that lost its connection can reconnect and fill in what it misses.
    """
    src = config.source_config()
    rho_true = shared_state(src)
    counts = simulate_counts(rho_true, config.tomography_shots, config.seed)
    server = BobServer(host, port)
    if ready_callback is not None:
        ready_callback(server.address)
    try:
        for _ in range(max_sessions):
            sender = server.accept()
            try:
                sender.send(KIND_TOMOGRAPHY_REPORT, encode_tomography_report(counts))
                sender.send(KIND_SWEEP_MANIFEST, encode_sweep_manifest(
                    config.seed, config.rounds_per_phase, config.phases))
                for k, phi in enumerate(config.phases):
                    t = run_protocol(src, phi, config.rounds_per_phase, phase_point_id=k)
                    sender.send(KIND_SENSING_OUTCOMES,
                                encode_sensing_outcomes(k, t.records.s_b))
            except ChannelLostError:
                pass  # client dropped; a later session can resume it
            finally:
                sender.close()
    finally:
        server.close()


def _state_dir(config: ExperimentConfig) -> str:
    return os.path.join(config.output_dir, "state")


def _phase_file(config: ExperimentConfig, k: int) -> str:
    return os.path.join(_state_dir(config), f"phase_{k:04d}.bits")


def _load_stored_bits(config: ExperimentConfig) -> dict:
    stored = {}
    state = _state_dir(config)
    if not os.path.isdir(state):
        return stored
    for name in sorted(os.listdir(state)):
        if not (name.startswith("phase_") and name.endswith(".bits")):
            continue
        with open(os.path.join(state, name), "rb") as fh:
            payload = fh.read()
        k, bits = decode_sensing_outcomes(payload)
        stored[k] = bits
    return stored


def _validate_manifest(config: ExperimentConfig, payload: bytes) -> None:
    seed, rounds, phases = decode_sweep_manifest(payload)
    if seed != config.seed or rounds != config.rounds_per_phase:
        raise ConfigError(
            f"manifest (seed={seed}, rounds={rounds}) disagrees with local config "
            f"(seed={config.seed}, rounds={config.rounds_per_phase})")
    if len(phases) != len(config.phases) or any(
            struct.pack(">d", a) != struct.pack(">d", b)
            for a, b in zip(phases, config.phases)):
        raise ConfigError("manifest phase list disagrees with local config")


def run_alice(config: ExperimentConfig, host: str, port: int,
              eve_tap_path=None) -> SweepReport:
    """Receive Bob's stream, verify it, and produce the sweep report files.

    Raises ChannelLostError (resumable) if the stream ends before every
    phase point has been stored; received phase points survive under
    <out>/state either way.
    """
    os.makedirs(_state_dir(config), exist_ok=True)
    stored = _load_stored_bits(config)
    expected = set(range(len(config.phases)))

    tap = EveTap() if eve_tap_path else None
    receiver = connect_receiver(host, port, tap=tap)
    src = config.source_config()
    try:
        while True:
            env = receiver.recv()
            if env is None:
                break
            if env.kind == KIND_TOMOGRAPHY_REPORT:
                counts = decode_tomography_report(env.payload)
                result = reconstruct(counts)
                check_calibration(result, config.abort_fidelity)
                save_tomography_files(counts, result, config)
            elif env.kind == KIND_SWEEP_MANIFEST:
                _validate_manifest(config, env.payload)
            elif env.kind == KIND_SENSING_OUTCOMES:
                k, bits = decode_sensing_outcomes(env.payload)
                if k not in expected:
                    raise ConfigError(f"unexpected phase point {k} on the wire")
                if k not in stored:
                    with open(_phase_file(config, k), "wb") as fh:
                        fh.write(env.payload)
                    stored[k] = bits
    finally:
        receiver.close()
        if tap is not None and eve_tap_path:
            with open(eve_tap_path, "ab") as fh:
                fh.write(bytes(tap.raw))

    missing = sorted(expected - set(stored))
    if missing:
        raise ChannelLostError(
            f"stream ended with phase points {missing} missing",
            receiver.last_phase_point_id)

    model = load_model(config)
    # Local records are regenerated from the shared seed; run_sweep checks
    # them against every received bit before any estimate is produced.
    report = run_sweep(config, model, wire_bits=stored)
    save_sweep_files(report)
    if tap is not None:
        write_tap_report(config, tap, os.path.join(config.output_dir, "tap_report.csv"))
    return report


def write_tap_report(config: ExperimentConfig, tap: EveTap, path) -> None:
    """Per-phase outcome counts as recovered from the tapped bytes alone."""
    views = tap.views()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines(config):
            fh.write(f"# {line}\n")
        fh.write("phase_point_id,n0,n1,p_exp\n")
        for k in sorted(views):
            n0, n1 = views[k].counts()
            p = n0 / (n0 + n1) if (n0 + n1) else float("nan")
            fh.write(f"{k},{n0},{n1},{p!r}\n")
