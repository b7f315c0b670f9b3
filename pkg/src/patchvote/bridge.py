"""Wire protocol for driving an environment hosted in another process.

The harness side (client) speaks to an adapter process (server) over stdio
pipes or a local TCP socket. The adapter owns the environment; the client
sees the same reset/step contract as a built-in environment.

Wire format (all integers little-endian):

    message   := length:u32  tag:u8  payload
                 (length counts the tag byte plus the payload)
    tags      := 1 HANDSHAKE   server -> client, sent once on connect
                 2 RESET       client -> server
                 3 STEP        client -> server
                 4 OBS         server -> client, one per RESET/STEP
                 5 ERROR       either direction, then the session is dead
                 6 CLOSE       client -> server, server exits cleanly

    HANDSHAKE := version:u32  name_len:u16  name:utf8
                 height:u32  width:u32  channels:u32
                 action_kind:u8 (0 continuous, 1 discrete)  action_dim:u32
                 [lo:f64 hi:f64] * action_dim      (continuous only)
                 max_steps:u32
    RESET     := seed:u64
    STEP      := value:f64 * action_dim            (continuous)
               | index:i64                         (discrete)
    OBS       := reward:f64  done:u8  pixels:u8 * (height*width*channels)
                 (pixels row-major RGB, one byte per channel; the client
                 divides by 255 on receipt)
    ERROR     := code:u32  text_len:u16  text:utf8
    CLOSE     := (empty)

Every RESET/STEP is answered by exactly one OBS or ERROR; there is no
pipelining. An OBS whose pixel payload is not exactly height*width*channels
bytes is a protocol violation, never silently truncated.
"""

from __future__ import annotations

import os
import select
import shlex
import socket
import struct
import subprocess
import sys
from dataclasses import dataclass

import numpy as np

from .controller import CONTINUOUS, DISCRETE, ActionSpec
from .envs.base import Env, EnvSpec, EnvStep
from .errors import (
    ConfigurationError,
    HandshakeError,
    ProtocolViolation,
    SessionError,
)

PROTOCOL_VERSION = 1

TAG_HANDSHAKE = 1
TAG_RESET = 2
TAG_STEP = 3
TAG_OBS = 4
TAG_ERROR = 5
TAG_CLOSE = 6

DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class Handshake:
    version: int
    name: str
    height: int
    width: int
    channels: int
    action: ActionSpec
    max_steps: int


# -- encoding -----------------------------------------------------------


def frame_message(tag: int, payload: bytes = b"") -> bytes:
    return struct.pack("<IB", 1 + len(payload), tag) + payload


def encode_handshake(h: Handshake) -> bytes:
    name = h.name.encode("utf-8")
    out = struct.pack("<IH", h.version, len(name)) + name
    out += struct.pack("<III", h.height, h.width, h.channels)
    kind = 0 if h.action.kind == CONTINUOUS else 1
    out += struct.pack("<BI", kind, h.action.dim)
    if h.action.kind == CONTINUOUS:
        for lo, hi in h.action.bounds:
            out += struct.pack("<dd", lo, hi)
    out += struct.pack("<I", h.max_steps)
    return frame_message(TAG_HANDSHAKE, out)


def decode_handshake(payload: bytes) -> Handshake:
    try:
        version, name_len = struct.unpack_from("<IH", payload, 0)
        pos = 6
        name = payload[pos : pos + name_len].decode("utf-8")
        pos += name_len
        height, width, channels = struct.unpack_from("<III", payload, pos)
        pos += 12
        kind_code, dim = struct.unpack_from("<BI", payload, pos)
        pos += 5
        if kind_code == 0:
            bounds = []
            for _ in range(dim):
                lo, hi = struct.unpack_from("<dd", payload, pos)
                bounds.append((lo, hi))
                pos += 16
            action = ActionSpec(CONTINUOUS, dim, tuple(bounds))
        else:
            action = ActionSpec(DISCRETE, dim)
        (max_steps,) = struct.unpack_from("<I", payload, pos)
        pos += 4
    except (struct.error, UnicodeDecodeError, ConfigurationError) as exc:
        raise HandshakeError(f"malformed handshake: {exc}") from exc
    if pos != len(payload):
        raise HandshakeError("handshake has trailing bytes")
    if height <= 0 or width <= 0 or channels <= 0:
        raise HandshakeError(f"non-positive observation shape {(height, width, channels)}")
    return Handshake(version, name, height, width, channels, action, max_steps)


def encode_reset(seed: int) -> bytes:
    return frame_message(TAG_RESET, struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF))


def encode_step(action, spec: ActionSpec) -> bytes:
    if spec.kind == CONTINUOUS:
        values = np.asarray(action, dtype="<f8")
        if values.shape != (spec.dim,):
            raise ProtocolViolation(f"action shape {values.shape} != ({spec.dim},)")
        return frame_message(TAG_STEP, values.tobytes())
    return frame_message(TAG_STEP, struct.pack("<q", int(action)))


def encode_obs(frame_u8: np.ndarray, reward: float, done: bool) -> bytes:
    payload = struct.pack("<dB", reward, 1 if done else 0) + frame_u8.astype(np.uint8).tobytes()
    return frame_message(TAG_OBS, payload)


def encode_error(code: int, text: str) -> bytes:
    data = text.encode("utf-8")
    return frame_message(TAG_ERROR, struct.pack("<IH", code, len(data)) + data)


def encode_close() -> bytes:
    return frame_message(TAG_CLOSE)


# -- streams -------------------------------------------------------------


class FdStream:
    """Blocking reads with a timeout over a pair of file descriptors."""

    def __init__(self, read_fd: int, write_fd: int):
        self._read_fd = read_fd
        self._write_fd = write_fd
        self._buffer = b""

    def read_exact(self, n: int, timeout: float | None) -> bytes:
        while len(self._buffer) < n:
            if timeout is not None:
                ready, _, _ = select.select([self._read_fd], [], [], timeout)
                if not ready:
                    raise SessionError(f"timed out waiting for {n} bytes")
            chunk = os.read(self._read_fd, 65536)
            if not chunk:
                raise SessionError("connection closed by remote side")
            self._buffer += chunk
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def write_all(self, data: bytes) -> None:
        view = memoryview(data)
        while view:
            try:
                written = os.write(self._write_fd, view)
            except (BrokenPipeError, OSError) as exc:
                raise SessionError(f"write failed: {exc}") from exc
            view = view[written:]


def read_message(stream: FdStream, timeout: float | None) -> tuple[int, bytes]:
    header = stream.read_exact(5, timeout)
    (length, tag) = struct.unpack("<IB", header)
    if length < 1:
        raise ProtocolViolation(f"message length {length} < 1")
    payload = stream.read_exact(length - 1, timeout)
    return tag, payload


# -- client ---------------------------------------------------------------


class BridgeSession:
    """Client side of one adapter connection."""

    def __init__(self, stream: FdStream, handshake: Handshake,
                 process: subprocess.Popen | None = None,
                 sock: socket.socket | None = None,
                 timeout: float | None = DEFAULT_TIMEOUT):
        self.stream = stream
        self.handshake = handshake
        self._process = process
        self._sock = sock
        self.timeout = timeout

    @classmethod
    def connect(cls, endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> "BridgeSession":
        """Open a session. Endpoints: ``tcp:HOST:PORT`` connects a socket;
        ``cmd:SHELL-COMMAND`` spawns the adapter and talks over its stdio."""
        process: subprocess.Popen | None = None
        sock: socket.socket | None = None
        if endpoint.startswith("tcp:"):
            _, host, port = endpoint.split(":", 2)
            sock = socket.create_connection((host, int(port)), timeout=timeout)
            sock.setblocking(True)
            stream = FdStream(sock.fileno(), sock.fileno())
        elif endpoint.startswith("cmd:"):
            argv = shlex.split(endpoint[4:])
            process = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
            assert process.stdin is not None and process.stdout is not None
            stream = FdStream(process.stdout.fileno(), process.stdin.fileno())
        else:
            raise ConfigurationError(
                f"endpoint {endpoint!r} must start with 'tcp:' or 'cmd:'"
            )
        tag, payload = read_message(stream, timeout)
        if tag != TAG_HANDSHAKE:
            raise HandshakeError(f"expected handshake, got tag {tag}")
        handshake = decode_handshake(payload)
        if handshake.version != PROTOCOL_VERSION:
            raise HandshakeError(
                f"protocol version mismatch: local {PROTOCOL_VERSION}, remote {handshake.version}"
            )
        return cls(stream, handshake, process=process, sock=sock, timeout=timeout)

    def _exchange(self, request: bytes) -> tuple[np.ndarray, float, bool]:
        self.stream.write_all(request)
        tag, payload = read_message(self.stream, self.timeout)
        if tag == TAG_ERROR:
            code, text_len = struct.unpack_from("<IH", payload, 0)
            text = payload[6 : 6 + text_len].decode("utf-8", "replace")
            raise SessionError(f"remote error {code}: {text}")
        if tag != TAG_OBS:
            raise ProtocolViolation(f"expected observation, got tag {tag}")
        h = self.handshake
        expect = h.height * h.width * h.channels
        if len(payload) != 9 + expect:
            raise ProtocolViolation(
                f"observation payload {len(payload) - 9} bytes, expected {expect}"
            )
        reward, done = struct.unpack_from("<dB", payload, 0)
        pixels = np.frombuffer(payload, dtype=np.uint8, offset=9)
        frame = pixels.reshape(h.height, h.width, h.channels).astype(np.float64) / 255.0
        return frame, float(reward), bool(done)

    def reset(self, seed: int) -> np.ndarray:
        frame, _, _ = self._exchange(encode_reset(seed))
        return frame

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        return self._exchange(encode_step(action, self.handshake.action))

    def close(self) -> None:
        try:
            self.stream.write_all(encode_close())
        except SessionError:
            pass
        if self._process is not None:
            try:
                self._process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._process.kill()
        if self._sock is not None:
            self._sock.close()


class BridgedEnv(Env):
    """Adapter session presented through the built-in environment protocol.

    The rollout code cannot tell this apart from a local environment except
    by its spec name.
    """

    def __init__(self, session: BridgeSession):
        self.session = session
        h = session.handshake
        self.spec = EnvSpec(
            name=f"bridge:{h.name}",
            obs_size=max(h.height, h.width),
            action=h.action,
            max_steps=h.max_steps,
            solve_threshold=float("nan"),
            min_score=float("nan"),
        )

    @classmethod
    def connect(cls, endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> "BridgedEnv":
        return cls(BridgeSession.connect(endpoint, timeout))

    def reset(self, seed: int) -> np.ndarray:
        return self.session.reset(seed)

    def step(self, action) -> EnvStep:
        frame, reward, done = self.session.step(action)
        return EnvStep(frame, reward, done)

    def with_modification(self, mod):
        raise ConfigurationError(
            "bridged environments apply modifications on the adapter side"
        )

    def close(self) -> None:
        self.session.close()


# -- server (loopback adapter in this package) ----------------------------


class ScriptedEnv(Env):
    """Deterministic fake environment used to freeze protocol fixtures.

    Frames are 8x8x3 with byte values
    ``(7*seed + 13*step + r + 2*c + 3*ch + action_acc) % 256`` where
    ``action_acc`` accumulates ``round(4 * sum(action))`` per step (or the
    action index for discrete variants). Rewards are the 1-based step index;
    the episode ends at step 3.
    """

    SIDE = 8
    EPISODE_LEN = 3

    def __init__(self, kind: str = CONTINUOUS):
        action = (
            ActionSpec(CONTINUOUS, 3, ((-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)))
            if kind == CONTINUOUS
            else ActionSpec(DISCRETE, 3)
        )
        self.spec = EnvSpec("scripted", self.SIDE, action, self.EPISODE_LEN, 3.0, 0.0)
        self._seed = 0
        self._step = 0
        self._acc = 0
        self._done = True

    def _frame(self) -> np.ndarray:
        r = np.arange(self.SIDE)[:, None, None]
        c = np.arange(self.SIDE)[None, :, None]
        ch = np.arange(3)[None, None, :]
        vals = (7 * self._seed + 13 * self._step + r + 2 * c + 3 * ch + self._acc) % 256
        return vals.astype(np.float64) / 255.0

    def reset(self, seed: int) -> np.ndarray:
        self._seed = int(seed) % 1009
        self._step = 0
        self._acc = 0
        self._done = False
        return self._frame()

    def step(self, action) -> EnvStep:
        if self._done:
            raise ConfigurationError("scripted episode is over")
        if self.spec.action.kind == CONTINUOUS:
            self._acc += int(round(4 * float(np.sum(np.asarray(action)))))
        else:
            self._acc += int(action)
        self._step += 1
        self._done = self._step >= self.EPISODE_LEN
        return EnvStep(self._frame(), float(self._step), self._done)

    def with_modification(self, mod):
        raise ConfigurationError("scripted env takes no modifications")


def env_handshake(env: Env) -> Handshake:
    return Handshake(
        version=PROTOCOL_VERSION,
        name=env.spec.name,
        height=env.spec.obs_size,
        width=env.spec.obs_size,
        channels=3,
        action=env.spec.action,
        max_steps=env.spec.max_steps,
    )


def _quantize(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)


def serve_connection(env: Env, rfile, wfile) -> None:
    """Drive ``env`` over file-like streams until CLOSE or EOF.

    This is the reference adapter: any other implementation must produce
    byte-identical output for the same input bytes.
    """
    wfile.write(encode_handshake(env_handshake(env)))
    wfile.flush()
    while True:
        header = rfile.read(5)
        if len(header) < 5:
            return
        length, tag = struct.unpack("<IB", header)
        payload = rfile.read(length - 1)
        if len(payload) != length - 1:
            return
        if tag == TAG_CLOSE:
            return
        try:
            if tag == TAG_RESET:
                (seed,) = struct.unpack("<Q", payload)
                frame = env.reset(seed)
                wfile.write(encode_obs(_quantize(frame), 0.0, False))
            elif tag == TAG_STEP:
                if env.spec.action.kind == CONTINUOUS:
                    action = np.frombuffer(payload, dtype="<f8")
                else:
                    (action,) = struct.unpack("<q", payload)
                result = env.step(action)
                wfile.write(encode_obs(_quantize(result.frame), result.reward, result.done))
            else:
                wfile.write(encode_error(400, f"unexpected tag {tag}"))
                wfile.flush()
                return
        except Exception as exc:  # noqa: BLE001 - report, then die loudly
            wfile.write(encode_error(500, str(exc)))
            wfile.flush()
            return
        wfile.flush()


def main(argv: list[str] | None = None) -> int:
    """Loopback adapter entry point: serve a built-in env over stdio or TCP."""
    import argparse

    from .envs import make_env
    from .envs.base import EnvModification

    parser = argparse.ArgumentParser(prog="patchvote.bridge", description=main.__doc__)
    parser.add_argument("--env", required=True, help="built-in env name, or 'scripted'")
    parser.add_argument("--size", type=int, default=None)
    parser.add_argument("--max-steps", type=int, default=None)
    parser.add_argument("--modification", default=None)
    parser.add_argument("--transport", default="stdio", help="'stdio' or 'tcp:PORT'")
    args = parser.parse_args(argv)

    if args.env == "scripted":
        env: Env = ScriptedEnv()
    else:
        mod = EnvModification(args.modification) if args.modification else None
        env = make_env(args.env, size=args.size, max_steps=args.max_steps, modification=mod)

    if args.transport == "stdio":
        serve_connection(env, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    if args.transport.startswith("tcp:"):
        port = int(args.transport.split(":", 1)[1])
        with socket.create_server(("127.0.0.1", port)) as server:
            conn, _ = server.accept()
            with conn, conn.makefile("rb") as rf, conn.makefile("wb") as wf:
                serve_connection(env, rf, wf)
        return 0
    print(f"unknown transport {args.transport!r}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
