"""Length-prefixed JSON framing and the two-process protocol session.

Each frame is a 4-byte big-endian body length followed by a UTF-8 JSON
object ``{"type", "seq", "payload"}``. States and unitaries travel as exact
float lists (Python's float repr round-trips), so a networked session
reproduces the in-process run bit for bit.
"""

from __future__ import annotations

import json
import logging
import socket
import struct
from dataclasses import dataclass, field

import numpy as np

from .fock import PureFockState
from .optics import ModeUnitary
from .protocol import (
    ERROR,
    ERROR_TYPES,
    MESSAGE_TYPES,
    AliceClient,
    BobServer,
    MalformedFrameError,
    ProtocolConfig,
    ProtocolError,
    RemoteError,
    SessionResult,
    SessionTimeoutError,
)

log = logging.getLogger(__name__)

HEADER = struct.Struct("!I")
MAX_FRAME_BYTES = 1 << 28


def encode_value(value):
    if isinstance(value, PureFockState):
        t = value.tensor
        return {
            "__state__": {
                "shape": list(t.shape),
                "max_photons": int(value.max_photons),
                "re": t.real.ravel().tolist(),
                "im": t.imag.ravel().tolist(),
            }
        }
    if isinstance(value, ModeUnitary):
        return {"__unitary__": json.loads(value.to_json())}
    if isinstance(value, dict):
        return {str(k): encode_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [encode_value(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def decode_value(value):
    if isinstance(value, dict):
        if "__state__" in value:
            d = value["__state__"]
            tensor = (np.array(d["re"], dtype=float) + 1j * np.array(d["im"], dtype=float)).reshape(d["shape"])
            return PureFockState(tensor, max_photons=int(d["max_photons"]))
        if "__unitary__" in value:
            return ModeUnitary.from_json(json.dumps(value["__unitary__"]))
        return {k: decode_value(v) for k, v in value.items()}
    if isinstance(value, list):
        return [decode_value(v) for v in value]
    return value


def encode_frame(kind: str, seq: int, payload: dict) -> bytes:
    body = json.dumps({"type": kind, "seq": seq, "payload": encode_value(payload)}).encode("utf-8")
    return HEADER.pack(len(body)) + body


def decode_body(body: bytes) -> tuple[str, int, dict]:
    try:
        msg = json.loads(body.decode("utf-8"))
        kind, seq, payload = msg["type"], msg["seq"], msg["payload"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedFrameError(f"undecodable frame: {exc}") from exc
    if kind not in MESSAGE_TYPES or not isinstance(seq, int) or not isinstance(payload, dict):
        raise MalformedFrameError(f"bad frame fields: type={kind!r} seq={seq!r}")
    try:
        return kind, seq, decode_value(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFrameError(f"bad payload: {exc}") from exc


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout as exc:
            raise SessionTimeoutError("peer did not answer in time") from exc
        if not chunk:
            raise ProtocolError("connection closed by peer")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[str, int, dict]:
    (length,) = HEADER.unpack(_recv_exact(sock, HEADER.size))
    if length > MAX_FRAME_BYTES:
        raise MalformedFrameError(f"frame length {length} exceeds {MAX_FRAME_BYTES}")
    return decode_body(_recv_exact(sock, length))


class SocketChannel:
    """Channel over a connected socket; sequence numbers checked per direction."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sent = 0
        self.received = 0

    def send(self, kind: str, payload: dict):
        self.sock.sendall(encode_frame(kind, self.sent, payload))
        self.sent += 1

    def recv(self) -> tuple[str, dict]:
        kind, seq, payload = read_frame(self.sock)
        if seq != self.received:
            raise MalformedFrameError(f"sequence number {seq}, expected {self.received}")
        self.received += 1
        if kind == ERROR:
            code, message = payload.get("code"), payload.get("message")
            cls = ERROR_TYPES.get(code)
            exc = cls(message) if cls else RemoteError(code, message)
            exc.remote = True
            raise exc
        return kind, payload

    def send_error(self, exc: Exception):
        code = getattr(exc, "code", "protocol")
        try:
            self.send(ERROR, {"code": code, "message": str(exc)})
        except OSError:
            pass


@dataclass
class BobSessionReport:
    status: str
    error: str | None = None
    received: list[str] = field(default_factory=list)


class BobListener:
    """Listening socket for Bob; :meth:`serve_one` handles a single session."""

    def __init__(self, config: ProtocolConfig, port: int = 0, host: str = "127.0.0.1", timeout: float = 30.0):
        self.config = config
        self.timeout = timeout
        self.sock = socket.create_server((host, port))
        self.address = self.sock.getsockname()[:2]

    @property
    def port(self) -> int:
        return self.address[1]

    def serve_one(self) -> BobSessionReport:
        self.sock.settimeout(self.timeout)
        try:
            conn, peer = self.sock.accept()
        except socket.timeout:
            return BobSessionReport("error", "timeout: no client connected")
        with conn:
            conn.settimeout(self.timeout)
            return run_bob_session(SocketChannel(conn), self.config)

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_bob_session(channel: SocketChannel, config: ProtocolConfig) -> BobSessionReport:
    bob = BobServer(config)
    try:
        while not bob.done:
            kind, payload = channel.recv()
            for reply in bob.handle(kind, payload):
                channel.send(*reply)
    except ProtocolError as exc:
        log.warning("session closed: %s", exc)
        if not getattr(exc, "remote", False):
            channel.send_error(exc)
        return BobSessionReport("error", f"{exc.code}: {exc}", [k for _, k in bob.log])
    except Exception as exc:  # the server must survive any single bad session
        log.exception("session failed")
        channel.send_error(ProtocolError(str(exc)))
        return BobSessionReport("error", f"internal: {exc}", [k for _, k in bob.log])
    return BobSessionReport("ok", None, [k for _, k in bob.log])


def serve_bob(port: int, config: ProtocolConfig, host: str = "127.0.0.1", timeout: float = 30.0) -> BobSessionReport:
    with BobListener(config, port, host, timeout) as listener:
        log.info("Bob listening on %s:%d", *listener.address)
        return listener.serve_one()


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {address!r}")
    return host, int(port)


def connect_alice(address, psi: PureFockState, sigma: float, seed: int, timeout: float = 30.0, max_leakage: float = 1e-6) -> SessionResult:
    """Run Alice's side against a Bob server at ``address`` (``"host:port"`` or a tuple)."""
    if isinstance(address, str):
        address = parse_address(address)
    try:
        sock = socket.create_connection(address, timeout=timeout)
    except socket.timeout as exc:
        raise SessionTimeoutError(f"could not reach {address}") from exc
    with sock:
        channel = SocketChannel(sock)
        client = AliceClient(psi, sigma, seed, max_leakage)
        try:
            return client.run(channel)
        except ProtocolError as exc:
            if not getattr(exc, "remote", False):
                channel.send_error(exc)
            raise
