"""Denoiser implementations for the samplers.

A denoiser is called as ``den(z_t, t, cond)`` and returns an array shaped like
``z_t``.  ``prediction`` says whether that array is the clean latent (``"v"``)
or the noise (``"eps"``); :func:`predict_clean` converts either to the clean
estimate.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading
from typing import Optional

import numpy as np

MAGIC = b"PVDN"


class DenoiserInterface:
    prediction = "v"

    def __call__(self, z: np.ndarray, t: int, cond: Optional[dict] = None) -> np.ndarray:
        raise NotImplementedError


def predict_clean(den: DenoiserInterface, z, t, schedule, cond=None) -> np.ndarray:
    out = np.asarray(den(z, t, cond or {}), dtype=np.float64)
    if out.shape != z.shape:
        raise ValueError(f"denoiser returned shape {out.shape}, expected {z.shape}")
    if den.prediction == "v":
        return out
    if den.prediction == "eps":
        ab = schedule.alpha_bar(t)
        return (z - np.sqrt(1.0 - ab) * out) / np.sqrt(ab)
    raise ValueError(f"unknown prediction type {den.prediction!r}")


def _roll_target(target, cond):
    shift = int((cond or {}).get("column_shift", 0))
    return np.roll(target, shift, axis=-2) if shift else target


class OracleDenoiser(DenoiserInterface):
    """Returns a fixed clean target.

    With ``shift_aware`` the target is rolled by ``cond["column_shift"]``
    columns, which makes it equivariant under the panorama cycle shift.
    """

    prediction = "v"

    def __init__(self, target, shift_aware: bool = False):
        self.target = np.asarray(target, dtype=np.float64)
        self.shift_aware = shift_aware

    def __call__(self, z, t, cond=None):
        tgt = _roll_target(self.target, cond) if self.shift_aware else self.target
        return np.broadcast_to(tgt, z.shape).copy()


class EpsilonOracle(DenoiserInterface):
    """Noise-predicting oracle: the exact noise that maps ``target`` to ``z_t``."""

    prediction = "eps"

    def __init__(self, target, schedule, shift_aware: bool = False):
        self.target = np.asarray(target, dtype=np.float64)
        self.schedule = schedule
        self.shift_aware = shift_aware

    def __call__(self, z, t, cond=None):
        tgt = _roll_target(self.target, cond) if self.shift_aware else self.target
        ab = self.schedule.alpha_bar(t)
        return (z - np.sqrt(ab) * tgt) / np.sqrt(1.0 - ab)


class StubDenoiser(DenoiserInterface):
    """Cheap deterministic stand-in: a seeded per-channel squashing of the input."""

    prediction = "v"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def __call__(self, z, t, cond=None):
        rng = np.random.default_rng([self.seed, z.shape[-1]])
        gain = rng.uniform(0.3, 0.7, size=z.shape[-1])
        return 0.5 + 0.5 * np.tanh(gain * (z - 0.5))


# ---------------------------------------------------------------------------
# out-of-process protocol
#
# request : MAGIC | u32 header length | header JSON | u64 payload bytes | payload
# response: MAGIC | u32 status        | u64 payload bytes | payload
#
# header = {"shape": [...], "t": int, "cond": {json-safe entries}}; payloads
# are little-endian float64 in C order.  status 0 is success; otherwise the
# payload is a UTF-8 error message.
# ---------------------------------------------------------------------------

def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-message")
        buf.extend(chunk)
    return bytes(buf)


def _json_safe(cond: Optional[dict]) -> dict:
    out = {}
    for k, v in (cond or {}).items():
        if isinstance(v, (bool, int, float, str)) or v is None:
            out[k] = v
        elif isinstance(v, np.ndarray) and v.ndim == 1 and v.size <= 4096:
            out[k] = [float(x) for x in v]
    return out


def encode_request(z: np.ndarray, t: int, cond: Optional[dict] = None) -> bytes:
    header = json.dumps({"shape": list(z.shape), "t": int(t), "cond": _json_safe(cond)}).encode()
    payload = np.ascontiguousarray(z, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + struct.pack("<Q", len(payload)) + payload


def read_request(sock):
    if _recv_exact(sock, 4) != MAGIC:
        raise ValueError("bad request magic")
    (hlen,) = struct.unpack("<I", _recv_exact(sock, 4))
    header = json.loads(_recv_exact(sock, hlen))
    (plen,) = struct.unpack("<Q", _recv_exact(sock, 8))
    z = np.frombuffer(_recv_exact(sock, plen), dtype="<f8").reshape(header["shape"])
    return z, header["t"], header["cond"]


def _parse_address(address: str):
    if address.startswith("unix:"):
        return socket.AF_UNIX, address[5:]
    host, _, port = address.rpartition(":")
    return socket.AF_INET, (host or "127.0.0.1", int(port))


class SocketDenoiser(DenoiserInterface):
    """Client for a denoiser served in another process (``host:port`` or ``unix:/path``)."""

    def __init__(self, address: str, prediction: str = "v", timeout: float = 60.0):
        self.address = address
        self.prediction = prediction
        self.timeout = timeout

    def __call__(self, z, t, cond=None):
        family, addr = _parse_address(self.address)
        with socket.socket(family, socket.SOCK_STREAM) as s:
            s.settimeout(self.timeout)
            s.connect(addr)
            s.sendall(encode_request(np.asarray(z, dtype=np.float64), t, cond))
            if _recv_exact(s, 4) != MAGIC:
                raise ValueError("bad response magic")
            (status,) = struct.unpack("<I", _recv_exact(s, 4))
            (plen,) = struct.unpack("<Q", _recv_exact(s, 8))
            body = _recv_exact(s, plen)
        if status != 0:
            raise RuntimeError(f"remote denoiser failed: {body.decode(errors='replace')}")
        return np.frombuffer(body, dtype="<f8").reshape(z.shape).astype(np.float64)


def serve_denoiser(denoiser: DenoiserInterface, address: str = "127.0.0.1:0"):
    """Serve ``denoiser`` on a background thread.

    Returns ``(server, address)``; call ``server.shutdown()`` to stop.  Port 0
    picks a free port, reflected in the returned address.
    """
    family, addr = _parse_address(address)

    class Handler(socketserver.BaseRequestHandler):
        def handle(self):
            try:
                z, t, cond = read_request(self.request)
                out = np.ascontiguousarray(denoiser(z, t, cond), dtype="<f8")
                if out.shape != z.shape:
                    raise ValueError("denoiser changed the latent shape")
                self.request.sendall(MAGIC + struct.pack("<IQ", 0, out.nbytes) + out.tobytes())
            except Exception as exc:  # report to the client instead of dropping the socket
                msg = str(exc).encode()
                self.request.sendall(MAGIC + struct.pack("<IQ", 1, len(msg)) + msg)

    if family == socket.AF_UNIX:
        server = socketserver.ThreadingUnixStreamServer(addr, Handler)
        bound = "unix:" + addr
    else:
        server = socketserver.ThreadingTCPServer(addr, Handler)
        bound = f"{server.server_address[0]}:{server.server_address[1]}"
    server.daemon_threads = True
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server, bound
