import socket
import threading

import numpy as np
import pytest

from sqrs.estimation import ProbabilityModel, eve_report
from sqrs.experiment import (
    ConfigError,
    ExperimentConfig,
    check_calibration,
    load_model,
    read_estimates_csv,
    read_sweep_csv,
    run_sweep,
    run_tomography,
    save_sweep_files,
    save_tomography_files,
)
from sqrs.protocol import EveView, run_protocol
from sqrs.source import NoiseModel
from sqrs.transport import (
    KIND_SENSING_OUTCOMES,
    KIND_SWEEP_MANIFEST,
    KIND_TOMOGRAPHY_REPORT,
    ChannelLostError,
    EveTap,
    encode,
    encode_sensing_outcomes,
    encode_sweep_manifest,
    encode_tomography_report,
)
from sqrs.tomography import simulate_counts
from sqrs.twoparty import run_alice, serve_bob

PHASES = tuple(k * np.pi / 10 for k in range(11))


def make_config(out, **kwargs):
    defaults = dict(phases=PHASES, rounds_per_phase=2000, tomography_shots=1200,
                    noise=NoiseModel(werner_p=0.99), seed=21, output_dir=str(out))
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


def single_process_reference(out, **kwargs):
    cfg = make_config(out, **kwargs)
    counts, result = run_tomography(cfg)
    check_calibration(result, cfg.abort_fidelity)
    save_tomography_files(counts, result, cfg)
    save_sweep_files(run_sweep(cfg, load_model(cfg)))
    return cfg


def serve_in_thread(cfg, max_sessions=1):
    """Start serve_bob on an OS-assigned port; returns (thread, port)."""
    ready = threading.Event()
    address = {}

    def on_ready(addr):
        address["value"] = addr
        ready.set()

    thread = threading.Thread(target=serve_bob, args=(cfg, "127.0.0.1", 0),
                              kwargs={"max_sessions": max_sessions,
                                      "ready_callback": on_ready})
    thread.start()
    assert ready.wait(timeout=10), "server did not come up"
    return thread, address["value"][1]


class TestModeEquivalence:
    def test_two_process_equals_single_process(self, tmp_path):
        single_process_reference(tmp_path / "single")

        bob_cfg = make_config(tmp_path / "unused")
        alice_cfg = make_config(tmp_path / "wire")
        thread, port = serve_in_thread(bob_cfg)
        report = run_alice(alice_cfg, "127.0.0.1", port, eve_tap_path=None)
        thread.join(timeout=30)
        assert not thread.is_alive()

        assert len(report.points) == 11
        for name in ("counts.csv", "rho_hat.json", "sweep.csv", "estimates.csv"):
            a = (tmp_path / "single" / name).read_bytes()
            b = (tmp_path / "wire" / name).read_bytes()
            assert a == b, f"{name} differs between modes"

    def test_eve_tap_report_matches_local(self, tmp_path):
        single_process_reference(tmp_path / "single")
        thread, port = serve_in_thread(make_config(tmp_path / "x"))
        alice_cfg = make_config(tmp_path / "tapped")
        tap_path = tmp_path / "tapped" / "tap.bin"
        (tmp_path / "tapped").mkdir()
        run_alice(alice_cfg, "127.0.0.1", port, eve_tap_path=str(tap_path))
        thread.join(timeout=30)

        assert tap_path.exists() and tap_path.stat().st_size > 0
        tap = EveTap()
        tap.feed(tap_path.read_bytes())
        views = tap.views()
        assert sorted(views) == list(range(11))

        # tapped outcome counts equal the local sweep's unclassified rows
        table = read_sweep_csv(tmp_path / "single" / "sweep.csv")
        n0s, n1s = table.eve_counts
        for k in range(11):
            assert views[k].counts() == (int(n0s[k]), int(n1s[k]))

        # tapped Fisher-information report equals the locally computed one
        _, est_matrix, _, _ = read_estimates_csv(tmp_path / "single" / "estimates.csv")
        model = ProbabilityModel(load_model(make_config(tmp_path / "single")).rho_hat)
        tap_views = [views[k] for k in range(11)]
        local_views = [EveView(np.arange(len(v.s_b)), v.s_b) for v in tap_views]
        rep_tap = eve_report(tap_views, est_matrix, model, centering=(2, 7))
        rep_local = eve_report(local_views, est_matrix, model, centering=(2, 7))
        for c in (2, 7):
            assert rep_tap.cfi_by_center[c] == rep_local.cfi_by_center[c]

    def test_manifest_mismatch_rejected(self, tmp_path):
        thread, port = serve_in_thread(make_config(tmp_path / "b", seed=99))
        alice_cfg = make_config(tmp_path / "a", seed=21)
        with pytest.raises(ConfigError):
            run_alice(alice_cfg, "127.0.0.1", port)
        thread.join(timeout=30)


def _partial_bob(cfg, n_phases, corrupt_phase=None):
    """Serve one truncated (or corrupted) session of the deterministic stream."""
    src = cfg.source_config()
    from sqrs.source import shared_state
    counts = simulate_counts(shared_state(src), cfg.tomography_shots, cfg.seed)
    frames = [encode(KIND_TOMOGRAPHY_REPORT, encode_tomography_report(counts)),
              encode(KIND_SWEEP_MANIFEST, encode_sweep_manifest(
                  cfg.seed, cfg.rounds_per_phase, cfg.phases))]
    for k in range(n_phases):
        t = run_protocol(src, cfg.phases[k], cfg.rounds_per_phase, phase_point_id=k)
        bits = t.records.s_b.copy()
        if corrupt_phase == k:
            bits[0] ^= 1
        frames.append(encode(KIND_SENSING_OUTCOMES, encode_sensing_outcomes(k, bits)))

    server = socket.create_server(("127.0.0.1", 0))
    port = server.getsockname()[1]

    def run():
        conn, _ = server.accept()
        for frame in frames:
            conn.sendall(frame)
        conn.close()
        server.close()

    thread = threading.Thread(target=run)
    thread.start()
    return thread, port


class TestResume:
    def test_interrupted_sweep_resumes_to_identical_files(self, tmp_path):
        single_process_reference(tmp_path / "single")

        alice_cfg = make_config(tmp_path / "resumed")
        thread, port = _partial_bob(alice_cfg, n_phases=5)
        with pytest.raises(ChannelLostError) as exc:
            run_alice(alice_cfg, "127.0.0.1", port)
        thread.join(timeout=30)
        assert exc.value.last_phase_point_id == 4
        state = tmp_path / "resumed" / "state"
        assert len(list(state.glob("phase_*.bits"))) == 5

        thread, port = serve_in_thread(make_config(tmp_path / "y"))
        run_alice(alice_cfg, "127.0.0.1", port)
        thread.join(timeout=30)
        for name in ("sweep.csv", "estimates.csv", "counts.csv", "rho_hat.json"):
            assert (tmp_path / "resumed" / name).read_bytes() == \
                (tmp_path / "single" / name).read_bytes(), name

    def test_corrupted_wire_bits_detected(self, tmp_path):
        alice_cfg = make_config(tmp_path / "bad")
        thread, port = _partial_bob(alice_cfg, n_phases=11, corrupt_phase=6)
        from sqrs.experiment import WireMismatchError
        with pytest.raises(WireMismatchError):
            run_alice(alice_cfg, "127.0.0.1", port)
        thread.join(timeout=30)
