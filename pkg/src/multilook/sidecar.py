"""Client for an out-of-process volume denoiser over framed stdio.

Frame layout (little-endian, 28-byte header, bit-exact):

    magic   4 bytes  "CLDN"
    version u8       1
    opcode  u8       1 request, 2 reply, 3 handshake, 4 shutdown, 255 error
    reserved u16     0
    dims    3 x u32  volume shape (0,0,0 when no volume applies)
    length  u64      payload byte count

The payload is the volume as 32-bit little-endian IEEE-754 floats in
row-major order (UTF-8 text for error frames).  The client sends a
handshake before the first request and keeps exactly one request in
flight.  Each request read is bounded by a timeout; timeouts and process
death surface as ProtocolError so the run aborts with context.
"""

from __future__ import annotations

import os
import select
import struct
import subprocess
import time

import numpy as np

MAGIC = b"CLDN"
PROTOCOL_VERSION = 1
HEADER = struct.Struct("<4sBBH3IQ")

OP_REQUEST = 1
OP_REPLY = 2
OP_HANDSHAKE = 3
OP_SHUTDOWN = 4
OP_ERROR = 255


class ProtocolError(RuntimeError):
    """Malformed traffic, sidecar death, or a request timeout."""


def pack_frame(opcode: int, dims=(0, 0, 0), payload: bytes = b"") -> bytes:
    header = HEADER.pack(MAGIC, PROTOCOL_VERSION, opcode, 0, *dims, len(payload))
    return header + payload


def unpack_header(raw: bytes):
    """Parse and validate a 28-byte header; returns (opcode, dims, length)."""
    magic, version, opcode, reserved, nx, ny, nt, length = HEADER.unpack(raw)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if reserved != 0:
        raise ProtocolError(f"reserved header field must be 0, got {reserved}")
    return opcode, (nx, ny, nt), length


def _read_exact(fd: int, n: int, deadline: float) -> bytes:
    """Read exactly n bytes from fd, honoring an absolute deadline."""
    chunks = []
    remaining = n
    while remaining > 0:
        budget = deadline - time.monotonic()
        if budget <= 0:
            raise ProtocolError(f"timed out waiting for {remaining} of {n} bytes")
        ready, _, _ = select.select([fd], [], [], budget)
        if not ready:
            raise ProtocolError(f"timed out waiting for {remaining} of {n} bytes")
        chunk = os.read(fd, min(remaining, 1 << 20))
        if not chunk:
            raise ProtocolError("sidecar closed its output stream")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class ExternalDenoiser:
    """Spawns a denoiser sidecar and proxies volumes through it.

    Not thread-safe: requests are strictly serialized and concurrent use
    from multiple threads requires external ordering.
    """

    def __init__(self, command, timeout: float = 60.0):
        if not command:
            raise ValueError("sidecar command must be nonempty")
        if timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {timeout}")
        self.timeout = float(timeout)
        self._busy = False
        self._proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        try:
            self._handshake()
        except Exception:
            self._kill()
            raise

    def _send(self, frame: bytes):
        if self._proc.poll() is not None:
            raise ProtocolError(f"sidecar exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(frame)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise ProtocolError(f"sidecar pipe closed: {e}") from e

    def _recv(self):
        """Read one frame; returns (opcode, dims, payload)."""
        deadline = time.monotonic() + self.timeout
        fd = self._proc.stdout.fileno()
        opcode, dims, length = unpack_header(_read_exact(fd, HEADER.size, deadline))
        payload = _read_exact(fd, length, deadline) if length else b""
        if opcode == OP_ERROR:
            raise ProtocolError(f"sidecar error: {payload.decode('utf-8', 'replace')}")
        return opcode, dims, payload

    def _handshake(self):
        self._send(pack_frame(OP_HANDSHAKE))
        opcode, _, _ = self._recv()
        if opcode != OP_HANDSHAKE:
            raise ProtocolError(f"expected handshake reply, got opcode {opcode}")

    def denoise(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"expected a 3-axis volume, got shape {v.shape}")
        if self._busy:
            raise ProtocolError("one request already in flight")
        self._busy = True
        try:
            payload = np.ascontiguousarray(v, dtype="<f4").tobytes()
            self._send(pack_frame(OP_REQUEST, v.shape, payload))
            opcode, dims, reply = self._recv()
        finally:
            self._busy = False
        if opcode != OP_REPLY:
            raise ProtocolError(f"expected denoise reply, got opcode {opcode}")
        if dims != v.shape:
            raise ProtocolError(f"reply dims {dims} do not match request {v.shape}")
        if len(reply) != 4 * v.size:
            raise ProtocolError(
                f"reply payload is {len(reply)} bytes, expected {4 * v.size}"
            )
        out = np.frombuffer(reply, dtype="<f4").astype(np.float64)
        return out.reshape(v.shape)

    __call__ = denoise

    def _kill(self):
        if self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        for pipe in (self._proc.stdin, self._proc.stdout):
            if pipe is not None:
                try:
                    pipe.close()
                except OSError:
                    pass

    def close(self):
        """Ask the sidecar to exit; escalate to kill after a short grace."""
        if self._proc.poll() is None:
            try:
                self._send(pack_frame(OP_SHUTDOWN))
                self._proc.wait(timeout=5.0)
            except (ProtocolError, subprocess.TimeoutExpired):
                pass
        self._kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
