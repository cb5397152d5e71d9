"""Event-stream serialization and the exfiltration channel.

Two codecs: the human-readable CSV log format (one `dt_us,dx,dy` line per
packet) and a compact binary wire format used by the upload client and the
TCP collector service. Both are bit-exact contracts with roundtrip
identity.
"""

from __future__ import annotations

import logging
import os
import secrets
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import CodecError, TransportError
from .sensor_sim import EventStream, SensorConfig

log = logging.getLogger(__name__)

WIRE_MAGIC = b"MEM1"
WIRE_VERSION = 1
SESSION_ID_BYTES = 12
HEADER_SIZE = 27  # magic 4 + version 1 + dpi 4 + poll 4 + saturation 2 + id 12
FRAME_SIZE = 8  # dt_us u32 + dx i16 + dy i16, little-endian

_FRAME_DTYPE = np.dtype([("dt", "<u4"), ("dx", "<i2"), ("dy", "<i2")])


@dataclass(frozen=True)
class SessionHeader:
    dpi: int
    poll_rate_hz: int
    count_saturation: int
    session_id: bytes
    version: int = WIRE_VERSION

    def __post_init__(self):
        if self.version != WIRE_VERSION:
            raise CodecError(f"unsupported session version {self.version}")
        if len(self.session_id) != SESSION_ID_BYTES:
            raise CodecError(
                f"session_id must be {SESSION_ID_BYTES} bytes, got {len(self.session_id)}"
            )

    @classmethod
    def new(cls, cfg: SensorConfig) -> "SessionHeader":
        return cls(cfg.dpi, cfg.poll_rate_hz, cfg.count_saturation,
                   secrets.token_bytes(SESSION_ID_BYTES))

    @property
    def session_hex(self) -> str:
        return self.session_id.hex()


# --- CSV codec ----------------------------------------------------------

def encode_csv(ev: EventStream) -> str:
    """Headerless CSV, one `dt_us,dx,dy` line per packet, `\\n` newlines."""
    if len(ev) == 0:
        return ""
    return "\n".join(
        f"{t},{x},{y}"
        for t, x, y in zip(ev.dt_us.tolist(), ev.dx.tolist(), ev.dy.tolist())
    ) + "\n"


def decode_csv(text: str, meta: SensorConfig | None = None) -> EventStream:
    dts, dxs, dys = [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise CodecError(f"line {lineno}: expected 3 fields, got {len(parts)}")
        try:
            t, x, y = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise CodecError(f"line {lineno}: non-integer field in {line!r}") from None
        if t <= 0:
            raise CodecError(f"line {lineno}: dt_us must be > 0, got {t}")
        dts.append(t)
        dxs.append(x)
        dys.append(y)
    return EventStream(np.array(dts, np.int64), np.array(dxs, np.int64),
                       np.array(dys, np.int64), meta or SensorConfig())


# --- Binary wire codec ---------------------------------------------------

def encode_wire(hdr: SessionHeader, ev: EventStream) -> bytes:
    head = WIRE_MAGIC + struct.pack(
        "<BIIH", hdr.version, hdr.dpi, hdr.poll_rate_hz, hdr.count_saturation
    ) + hdr.session_id
    assert len(head) == HEADER_SIZE
    if len(ev) == 0:
        return head
    if ev.dt_us.max() > 0xFFFFFFFF:
        raise CodecError("dt_us exceeds u32 range")
    lo, hi = min(ev.dx.min(), ev.dy.min()), max(ev.dx.max(), ev.dy.max())
    if lo < -32768 or hi > 32767:
        raise CodecError("count overflow beyond i16")
    frames = np.empty(len(ev), dtype=_FRAME_DTYPE)
    frames["dt"] = ev.dt_us
    frames["dx"] = ev.dx
    frames["dy"] = ev.dy
    return head + frames.tobytes()


def decode_wire(blob: bytes, meta: SensorConfig | None = None):
    """Parse header + frames; returns (SessionHeader, EventStream)."""
    if len(blob) < HEADER_SIZE:
        raise CodecError(f"truncated header: {len(blob)} bytes")
    if blob[:4] != WIRE_MAGIC:
        raise CodecError(f"bad magic {blob[:4]!r}")
    version, dpi, poll, sat = struct.unpack_from("<BIIH", blob, 4)
    if version != WIRE_VERSION:
        raise CodecError(f"unsupported version {version}")
    sid = blob[15:HEADER_SIZE]
    body = blob[HEADER_SIZE:]
    if len(body) % FRAME_SIZE:
        raise CodecError(f"truncated frame: {len(body) % FRAME_SIZE} trailing bytes")
    hdr = SessionHeader(dpi, poll, sat, sid, version)
    frames = np.frombuffer(body, dtype=_FRAME_DTYPE)
    if len(frames) and frames["dt"].min() == 0:
        raise CodecError("frame with dt_us = 0")
    if meta is None:
        meta = SensorConfig(dpi=dpi or 1, poll_rate_hz=poll or 1,
                            count_saturation=max(int(sat), 1))
    ev = EventStream(frames["dt"].astype(np.int64), frames["dx"].astype(np.int64),
                     frames["dy"].astype(np.int64), meta)
    return hdr, ev


def write_meta(path, hdr: SessionHeader) -> None:
    with open(path, "w") as fh:
        fh.write(f"dpi={hdr.dpi}\n")
        fh.write(f"poll_rate_hz={hdr.poll_rate_hz}\n")
        fh.write(f"count_saturation={hdr.count_saturation}\n")
        fh.write(f"version={hdr.version}\n")


# --- Collector service ----------------------------------------------------

class _SessionHandler(socketserver.BaseRequestHandler):
    def handle(self):
        blob = b""
        with self.request.makefile("rb") as fh:
            blob = fh.read()
        try:
            hdr, ev = decode_wire(blob)
        except CodecError as exc:
            log.warning("discarding session from %s: %s", self.client_address, exc)
            return
        out_dir = self.server.output_dir
        base = os.path.join(out_dir, hdr.session_hex)
        tmp_csv, tmp_meta = base + ".csv.part", base + ".meta.part"
        with open(tmp_csv, "w", newline="") as fh:
            fh.write(encode_csv(ev))
        write_meta(tmp_meta, hdr)
        os.replace(tmp_csv, base + ".csv")
        os.replace(tmp_meta, base + ".meta")
        log.info("stored session %s (%d packets)", hdr.session_hex, len(ev))


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class CollectorService:
    """TCP collector: one wire-format session per connection, EOF-delimited.

    Valid sessions are persisted as `<session-hex>.csv` + `.meta` in the
    output directory; malformed sessions are logged and dropped without
    disturbing other connections.
    """

    def __init__(self, bind_address, output_dir):
        host, port = bind_address
        self.output_dir = str(output_dir)
        os.makedirs(self.output_dir, exist_ok=True)
        try:
            self._server = _Server((host, int(port)), _SessionHandler)
        except OSError as exc:
            raise TransportError(f"cannot bind {bind_address}: {exc}") from exc
        self._server.output_dir = self.output_dir
        self._thread = None

    @property
    def address(self):
        return self._server.server_address

    def start(self) -> "CollectorService":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="collector", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever()

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def collector_serve(bind_address, output_dir) -> CollectorService:
    """Start a collector in a background thread; call .close() to stop."""
    return CollectorService(bind_address, output_dir).start()


def collector_upload(server_address, hdr: SessionHeader, ev: EventStream) -> None:
    """Stream one session to a collector and close. No implicit retry."""
    payload = encode_wire(hdr, ev)
    try:
        with socket.create_connection(server_address, timeout=30) as sock:
            sock.sendall(payload)
            sock.shutdown(socket.SHUT_WR)
            # wait for the server to finish reading before tearing down
            sock.settimeout(30)
            while sock.recv(4096):
                pass
    except OSError as exc:
        raise TransportError(f"upload to {server_address} failed: {exc}") from exc
