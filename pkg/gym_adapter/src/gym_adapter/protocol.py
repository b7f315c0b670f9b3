"""Server side of the bridge wire protocol.

Independent implementation of the byte format the training toolkit speaks;
the normative description lives with the client. Summary (little-endian):

    message   := length:u32  tag:u8  payload      (length = 1 + len(payload))
    tags      := 1 HANDSHAKE  2 RESET  3 STEP  4 OBS  5 ERROR  6 CLOSE
    HANDSHAKE := version:u32 name_len:u16 name H:u32 W:u32 C:u32
                 kind:u8 (0 cont, 1 disc) dim:u32 [lo:f64 hi:f64]*dim max:u32
    RESET     := seed:u64
    STEP      := f64*dim (continuous) | i64 (discrete)
    OBS       := reward:f64 done:u8 pixels:u8*(H*W*C)
    ERROR     := code:u32 len:u16 text
    CLOSE     := empty

The server answers every RESET/STEP with exactly one OBS (or ERROR and
then exits). Protocol version 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PROTOCOL_VERSION = 1

TAG_HANDSHAKE = 1
TAG_RESET = 2
TAG_STEP = 3
TAG_OBS = 4
TAG_ERROR = 5
TAG_CLOSE = 6

CONTINUOUS = 0
DISCRETE = 1


@dataclass(frozen=True)
class HandshakeInfo:
    name: str
    height: int
    width: int
    channels: int
    action_kind: int
    action_dim: int
    bounds: tuple[tuple[float, float], ...] | None
    max_steps: int


def frame_message(tag: int, payload: bytes = b"") -> bytes:
    return struct.pack("<IB", 1 + len(payload), tag) + payload


def encode_handshake(info: HandshakeInfo) -> bytes:
    name = info.name.encode("utf-8")
    out = struct.pack("<IH", PROTOCOL_VERSION, len(name)) + name
    out += struct.pack("<III", info.height, info.width, info.channels)
    out += struct.pack("<BI", info.action_kind, info.action_dim)
    if info.action_kind == CONTINUOUS:
        assert info.bounds is not None and len(info.bounds) == info.action_dim
        for lo, hi in info.bounds:
            out += struct.pack("<dd", lo, hi)
    out += struct.pack("<I", info.max_steps)
    return frame_message(TAG_HANDSHAKE, out)


def encode_obs(frame_u8: np.ndarray, reward: float, done: bool) -> bytes:
    payload = struct.pack("<dB", float(reward), 1 if done else 0)
    return frame_message(TAG_OBS, payload + frame_u8.astype(np.uint8).tobytes())


def encode_error(code: int, text: str) -> bytes:
    data = text.encode("utf-8")
    return frame_message(TAG_ERROR, struct.pack("<IH", code, len(data)) + data)


def serve(env, rfile, wfile) -> None:
    """Answer one client over file-like byte streams until CLOSE or EOF.

    ``env`` provides ``handshake() -> HandshakeInfo``,
    ``reset(seed) -> u8 frame`` and ``step(action) -> (u8 frame, reward,
    done)`` with frames already sized to the declared shape.
    """
    info = env.handshake()
    wfile.write(encode_handshake(info))
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
                wfile.write(encode_obs(frame, 0.0, False))
            elif tag == TAG_STEP:
                if info.action_kind == CONTINUOUS:
                    action = np.frombuffer(payload, dtype="<f8")
                else:
                    (action,) = struct.unpack("<q", payload)
                frame, reward, done = env.step(action)
                wfile.write(encode_obs(frame, reward, done))
            else:
                wfile.write(encode_error(400, f"unexpected tag {tag}"))
                wfile.flush()
                return
        except Exception as exc:  # noqa: BLE001 - reported to the peer, then exit
            wfile.write(encode_error(500, str(exc)))
            wfile.flush()
            return
        wfile.flush()
