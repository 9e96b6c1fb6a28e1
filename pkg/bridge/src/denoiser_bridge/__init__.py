"""Volume-denoiser sidecar speaking a framed binary protocol on stdio.

The parent process frames requests as: magic ``CLDN``, version u8 = 1,
opcode u8, reserved u16 = 0, three u32 dims, payload length u64, then the
payload as little-endian 32-bit floats in row-major order.  One reply per
request, in order.  A malformed frame earns an error reply (opcode 255,
UTF-8 message payload) and the loop continues; a shutdown frame or end of
input ends the process cleanly.
"""

import pickle
import struct
import sys
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

MAGIC = b"CLDN"
VERSION = 1
HEADER = struct.Struct("<4sBBH3IQ")

OP_REQUEST = 1
OP_REPLY = 2
OP_HANDSHAKE = 3
OP_SHUTDOWN = 4
OP_ERROR = 255

# refuse to buffer absurd frames; also the cutoff between "skip the declared
# payload" and "the length field is garbage too, rescan for magic"
MAX_PAYLOAD = 1 << 30

KINDS = ("identity", "gaussian", "model")


@dataclass(frozen=True)
class BridgeConfig:
    kind: str
    width: float = 1.0
    model_path: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "gaussian" and self.width < 0:
            raise ValueError(f"width must be >= 0, got {self.width}")
        if self.kind == "model" and not self.model_path:
            raise ValueError("model kind needs a model path")


def make_denoiser(config: BridgeConfig):
    """Volume -> volume callable for the configured kind.

    The model kind unpickles an opaque callable; anything the file defines
    runs with this process's privileges, so point it only at trusted files.
    """
    if config.kind == "identity":
        return lambda v: v
    if config.kind == "gaussian":
        width = float(config.width)
        if width == 0.0:
            return lambda v: v
        return lambda v: ndimage.gaussian_filter(v, sigma=width, mode="nearest")
    with open(config.model_path, "rb") as fh:
        model = pickle.load(fh)
    if not callable(model):
        raise ValueError(f"model file {config.model_path!r} did not hold a callable")
    return model


class _Eof(Exception):
    pass


class _BadFrame(Exception):
    pass


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        piece = stream.read(n - got)
        if not piece:
            raise _Eof
        chunks.append(piece)
        got += len(piece)
    return b"".join(chunks)


def _discard(stream, n: int) -> None:
    while n > 0:
        piece = stream.read(min(n, 1 << 16))
        if not piece:
            raise _Eof
        n -= len(piece)


class _FrameReader:
    """Header parser that can resynchronize after garbage.

    A bad-magic header with a believable length field skips the declared
    payload (the usual case: a single corrupted frame in an otherwise valid
    stream).  When the length is garbage too, the stream is scanned for the
    next magic, which then seeds the following header read.
    """

    def __init__(self, stream):
        self.stream = stream
        self._resynced = False

    def _scan_for_magic(self) -> None:
        window = b""
        while window != MAGIC:
            window = (window + _read_exact(self.stream, 1))[-4:]
        self._resynced = True

    def next_header(self):
        if self._resynced:
            self._resynced = False
            raw = MAGIC + _read_exact(self.stream, HEADER.size - 4)
        else:
            raw = _read_exact(self.stream, HEADER.size)
        magic, version, opcode, _reserved, nx, ny, nt, length = HEADER.unpack(raw)
        if magic != MAGIC:
            if length <= MAX_PAYLOAD:
                _discard(self.stream, length)
            else:
                self._scan_for_magic()
            raise _BadFrame(f"bad magic {magic!r}")
        if length > MAX_PAYLOAD:
            self._scan_for_magic()
            raise _BadFrame(f"payload length {length} exceeds the {MAX_PAYLOAD} limit")
        if version != VERSION:
            _discard(self.stream, length)
            raise _BadFrame(f"unsupported protocol version {version}")
        return opcode, (nx, ny, nt), length


def _send(out, opcode: int, dims=(0, 0, 0), payload: bytes = b"") -> None:
    out.write(HEADER.pack(MAGIC, VERSION, opcode, 0, *dims, len(payload)))
    if payload:
        out.write(payload)
    out.flush()


def serve(config: BridgeConfig, stdin=None, stdout=None) -> int:
    """Request loop; returns the process exit code.

    Replies to every well-formed request before reading the next frame, so
    the parent never observes reordering.  End of input is a normal ending:
    the parent closing the pipe is how sidecars retire.
    """
    inp = stdin if stdin is not None else sys.stdin.buffer
    out = stdout if stdout is not None else sys.stdout.buffer
    denoiser = make_denoiser(config)
    reader = _FrameReader(inp)
    ready = False
    while True:
        try:
            opcode, dims, length = reader.next_header()
        except _Eof:
            return 0
        except _BadFrame as e:
            _send(out, OP_ERROR, payload=str(e).encode())
            continue
        try:
            payload = _read_exact(inp, length) if length else b""
        except _Eof:
            return 0
        if opcode == OP_SHUTDOWN:
            return 0
        if opcode == OP_HANDSHAKE:
            ready = True
            _send(out, OP_HANDSHAKE)
            continue
        if opcode != OP_REQUEST:
            _send(out, OP_ERROR, payload=f"unknown opcode {opcode}".encode())
            continue
        if not ready:
            _send(out, OP_ERROR, payload=b"request before handshake")
            continue
        nx, ny, nt = dims
        if min(dims) < 1:
            _send(out, OP_ERROR, payload=f"bad dims {dims}".encode())
            continue
        if length != 4 * nx * ny * nt:
            msg = f"payload holds {length} bytes but dims {dims} require {4 * nx * ny * nt}"
            _send(out, OP_ERROR, payload=msg.encode())
            continue
        if config.kind == "identity":
            # byte-level echo: exact even for payloads with unusual NaN bits
            _send(out, OP_REPLY, dims, payload)
            continue
        v = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
        try:
            result = np.asarray(denoiser(v), dtype=np.float64)
        except Exception as e:  # noqa: BLE001 - any model fault becomes a reply
            _send(out, OP_ERROR, payload=f"denoiser failure: {e}".encode())
            continue
        if result.shape != v.shape:
            msg = f"denoiser returned shape {result.shape} for input {v.shape}"
            _send(out, OP_ERROR, payload=msg.encode())
            continue
        if not np.isfinite(result).all():
            _send(out, OP_ERROR, payload=b"denoiser returned non-finite values")
            continue
        _send(out, OP_REPLY, dims, np.ascontiguousarray(result, dtype="<f4").tobytes())
