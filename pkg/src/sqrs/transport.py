"""Classical wire between Bob and Alice, with a passive eavesdropper tap.

Framing is a fixed 14-byte header followed by the payload:

    offset  size  field
    0       4     magic "SQRS"
    4       1     version (1)
    5       1     kind (1 = TomographyReport, 2 = SensingOutcomes,
                        3 = SweepManifest)
    6       4     payload length, unsigned big-endian
    10      4     CRC-32 (IEEE) over bytes 0..9 and the payload

All multi-byte integers are big-endian. Outcome bits in SensingOutcomes are
packed eight per byte, least-significant bit first, zero-padded. The channel
is strictly Bob -> Alice: receiver handles expose no send capability.
"""

import queue
import socket
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .protocol import EveView
from .tomography import TomographyCounts, all_settings

MAGIC = b"SQRS"
VERSION = 1

KIND_TOMOGRAPHY_REPORT = 1
KIND_SENSING_OUTCOMES = 2
KIND_SWEEP_MANIFEST = 3
_KNOWN_KINDS = (KIND_TOMOGRAPHY_REPORT, KIND_SENSING_OUTCOMES, KIND_SWEEP_MANIFEST)

_HEADER = struct.Struct(">4sBBII")
HEADER_SIZE = _HEADER.size  # 14
_SENSING_PREFIX = struct.Struct(">HI")
_MANIFEST_PREFIX = struct.Struct(">QIH")
MAX_PAYLOAD = 2**32 - 1


class TransportError(Exception):
    """Base class for wire and channel failures."""


class TruncatedStreamError(TransportError):
    """The byte stream ended before a complete message."""


class BadMagicError(TransportError):
    """Frame does not start with the protocol magic."""


class UnsupportedVersionError(TransportError):
    """Frame carries a version this implementation does not speak."""


class UnknownKindError(TransportError):
    """Frame kind byte is not a known message type."""


class ChecksumMismatchError(TransportError):
    """Frame checksum does not match its contents."""


class ChannelLostError(TransportError):
    """Connection dropped; carries the last acknowledged phase point."""

    def __init__(self, message: str, last_phase_point_id):
        super().__init__(message)
        self.last_phase_point_id = last_phase_point_id


@dataclass(frozen=True)
class MessageEnvelope:
    magic: bytes
    version: int
    kind: int
    payload_length: int
    payload: bytes
    checksum: int


def encode(kind: int, payload: bytes) -> bytes:
    """Frame a payload; decode(encode(k, p)) round-trips bit-exactly."""
    if kind not in _KNOWN_KINDS:
        raise UnknownKindError(f"unknown message kind {kind}")
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload too large: {len(payload)} bytes")
    prefix = MAGIC + struct.pack(">BBI", VERSION, kind, len(payload))
    checksum = zlib.crc32(prefix + payload) & 0xFFFFFFFF
    return prefix + struct.pack(">I", checksum) + payload


def decode(data: bytes) -> MessageEnvelope:
    """Parse exactly one framed message from a byte string."""
    if len(data) < HEADER_SIZE:
        raise TruncatedStreamError(f"need {HEADER_SIZE} header bytes, got {len(data)}")
    magic, version, kind, length, checksum = _HEADER.unpack(data[:HEADER_SIZE])
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if len(data) != HEADER_SIZE + length:
        if len(data) < HEADER_SIZE + length:
            raise TruncatedStreamError(
                f"payload truncated: expected {length} bytes, got {len(data) - HEADER_SIZE}")
        raise ValueError(f"{len(data) - HEADER_SIZE - length} trailing bytes after message")
    payload = data[HEADER_SIZE:]
    expected = zlib.crc32(data[:HEADER_SIZE - 4] + payload) & 0xFFFFFFFF
    if checksum != expected:
        raise ChecksumMismatchError(f"checksum {checksum:#010x} != computed {expected:#010x}")
    if kind not in _KNOWN_KINDS:
        raise UnknownKindError(f"unknown message kind {kind}")
    return MessageEnvelope(magic=magic, version=version, kind=kind,
                           payload_length=length, payload=payload, checksum=checksum)


# ---------------------------------------------------------------------------
# Payload codecs
# ---------------------------------------------------------------------------

def encode_sensing_outcomes(phase_point_id: int, s_b_bits) -> bytes:
    """Pack one phase point's outcome bits: id, count, then packed bits."""
    bits = np.asarray(s_b_bits, dtype=np.uint8)
    if bits.ndim != 1 or not np.all(bits <= 1):
        raise ValueError("s_b_bits must be a flat array of 0/1 values")
    packed = np.packbits(bits, bitorder="little").tobytes()
    return _SENSING_PREFIX.pack(phase_point_id, len(bits)) + packed


def decode_sensing_outcomes(payload: bytes) -> tuple[int, np.ndarray]:
    if len(payload) < _SENSING_PREFIX.size:
        raise TruncatedStreamError("sensing payload shorter than its prefix")
    phase_point_id, count = _SENSING_PREFIX.unpack(payload[:_SENSING_PREFIX.size])
    body = payload[_SENSING_PREFIX.size:]
    if len(body) != (count + 7) // 8:
        raise ValueError(f"expected {(count + 7) // 8} bit bytes, got {len(body)}")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8),
                         count=count, bitorder="little")
    return phase_point_id, bits.astype(np.uint8)


def eve_view_from_outcomes(payload: bytes) -> tuple[int, EveView]:
    """Parse a SensingOutcomes payload into the eavesdropper's view."""
    phase_point_id, bits = decode_sensing_outcomes(payload)
    return phase_point_id, EveView(np.arange(len(bits), dtype=np.int64), bits)


def encode_tomography_report(counts: TomographyCounts) -> bytes:
    body = struct.pack(">I", counts.shots_per_setting)
    for setting in all_settings():
        body += struct.pack(">I", counts.counts[setting])
    return body


def decode_tomography_report(payload: bytes) -> TomographyCounts:
    expected = 4 * (1 + 36)
    if len(payload) != expected:
        raise ValueError(f"tomography payload must be {expected} bytes, got {len(payload)}")
    values = struct.unpack(f">{1 + 36}I", payload)
    return TomographyCounts(
        shots_per_setting=values[0],
        counts={s: c for s, c in zip(all_settings(), values[1:])},
    )


def encode_sweep_manifest(seed: int, rounds_per_phase: int, phases) -> bytes:
    phases = [float(p) for p in phases]
    body = _MANIFEST_PREFIX.pack(seed, rounds_per_phase, len(phases))
    body += struct.pack(f">{len(phases)}d", *phases)
    return body


def decode_sweep_manifest(payload: bytes) -> tuple[int, int, list]:
    if len(payload) < _MANIFEST_PREFIX.size:
        raise TruncatedStreamError("manifest payload shorter than its prefix")
    seed, rounds, n = _MANIFEST_PREFIX.unpack(payload[:_MANIFEST_PREFIX.size])
    body = payload[_MANIFEST_PREFIX.size:]
    if len(body) != 8 * n:
        raise ValueError(f"expected {8 * n} phase bytes, got {len(body)}")
    phases = list(struct.unpack(f">{n}d", body))
    return seed, rounds, phases


def _phase_id_of_frame(kind: int, payload: bytes):
    if kind == KIND_SENSING_OUTCOMES and len(payload) >= _SENSING_PREFIX.size:
        return _SENSING_PREFIX.unpack(payload[:_SENSING_PREFIX.size])[0]
    return None


# ---------------------------------------------------------------------------
# Channels (Bob -> Alice only)
# ---------------------------------------------------------------------------

class EveTap:
    """Passive tap: records the exact bytes Alice's receiver consumes."""

    def __init__(self):
        self.raw = bytearray()

    def feed(self, data: bytes) -> None:
        self.raw.extend(data)

    def envelopes(self) -> list:
        out = []
        buf = bytes(self.raw)
        offset = 0
        while offset < len(buf):
            if len(buf) - offset < HEADER_SIZE:
                raise TruncatedStreamError("tap ends mid-header")
            _, _, _, length, _ = _HEADER.unpack(buf[offset:offset + HEADER_SIZE])
            end = offset + HEADER_SIZE + length
            out.append(decode(buf[offset:end]))
            offset = end
        return out

    def views(self) -> dict:
        """phase_point_id -> EveView for every tapped SensingOutcomes."""
        out = {}
        for env in self.envelopes():
            if env.kind == KIND_SENSING_OUTCOMES:
                phase_id, view = eve_view_from_outcomes(env.payload)
                out[phase_id] = view
        return out


class InMemorySender:
    """Bob's end of an in-process channel."""

    def __init__(self, frames: queue.Queue):
        self._frames = frames
        self.last_phase_point_id = None

    def send(self, kind: int, payload: bytes) -> None:
        frame = encode(kind, payload)
        self._frames.put(frame)  # blocks when the buffer is full (backpressure)
        phase_id = _phase_id_of_frame(kind, payload)
        if phase_id is not None:
            self.last_phase_point_id = phase_id

    def close(self) -> None:
        self._frames.put(None)


class InMemoryReceiver:
    """Alice's end of an in-process channel; has no send capability."""

    def __init__(self, frames: queue.Queue, tap: EveTap | None):
        self._frames = frames
        self._tap = tap
        self.last_phase_point_id = None

    def recv(self):
        """Next envelope, or None once the sender has closed."""
        frame = self._frames.get()
        if frame is None:
            return None
        if self._tap is not None:
            self._tap.feed(frame)
        env = decode(frame)
        phase_id = _phase_id_of_frame(env.kind, env.payload)
        if phase_id is not None:
            self.last_phase_point_id = phase_id
        return env


class InMemoryChannel:
    """Bounded in-process queue delivering frames in order, Bob -> Alice."""

    def __init__(self, maxsize: int = 64):
        self._frames = queue.Queue(maxsize=maxsize)
        self._tap = None

    def attach_tap(self, tap: EveTap) -> None:
        self._tap = tap

    def sender(self) -> InMemorySender:
        return InMemorySender(self._frames)

    def receiver(self) -> InMemoryReceiver:
        return InMemoryReceiver(self._frames, self._tap)


class SocketSender:
    """Bob's end of a TCP connection."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self.last_phase_point_id = None

    def send(self, kind: int, payload: bytes) -> None:
        frame = encode(kind, payload)
        try:
            self._sock.sendall(frame)
        except OSError as err:
            raise ChannelLostError(f"send failed: {err}", self.last_phase_point_id) from err
        phase_id = _phase_id_of_frame(kind, payload)
        if phase_id is not None:
            self.last_phase_point_id = phase_id

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self._sock.close()


class SocketReceiver:
    """Alice's end of a TCP connection; read-only by construction."""

    def __init__(self, sock: socket.socket, tap: EveTap | None = None):
        self._sock = sock
        self._tap = tap
        self.last_phase_point_id = None

    def _read_exact(self, n: int, at_message_start: bool) -> bytes | None:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except OSError as err:
                raise ChannelLostError(f"recv failed: {err}", self.last_phase_point_id) from err
            if not chunk:
                if at_message_start and not buf:
                    return None  # clean end of stream
                raise ChannelLostError("connection dropped mid-message",
                                       self.last_phase_point_id)
            buf.extend(chunk)
        return bytes(buf)

    def recv(self):
        """Next envelope, or None on clean end of stream."""
        header = self._read_exact(HEADER_SIZE, at_message_start=True)
        if header is None:
            return None
        length = _HEADER.unpack(header)[3]
        payload = self._read_exact(length, at_message_start=False) if length else b""
        if self._tap is not None:
            self._tap.feed(header + payload)
        env = decode(header + payload)
        phase_id = _phase_id_of_frame(env.kind, env.payload)
        if phase_id is not None:
            self.last_phase_point_id = phase_id
        return env

    def close(self) -> None:
        self._sock.close()


class BobServer:
    """Listening endpoint on Bob's side; yields one SocketSender per client."""

    def __init__(self, host: str, port: int):
        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()

    def accept(self) -> SocketSender:
        conn, _ = self._listener.accept()
        return SocketSender(conn)

    def close(self) -> None:
        self._listener.close()


def connect_receiver(host: str, port: int, tap: EveTap | None = None,
                     timeout: float | None = 30.0) -> SocketReceiver:
    """Alice dials Bob and gets a receive-only channel handle."""
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as err:
        raise ChannelLostError(f"connect failed: {err}", None) from err
    sock.settimeout(timeout)
    return SocketReceiver(sock, tap=tap)
