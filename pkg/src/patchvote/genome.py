"""Flat genome layout and codec.

Every trainable value of the agent lives in one flat float64 vector. The
layout is a fixed, versioned sequence of named segments; matrices are filled
row-major from their segment. Checkpoints embed a hash of the layout so that
a stored genome can never be decoded against a drifted layout.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .controller import ActionSpec, LstmParams
from .attention import AttentionParams
from .errors import CodecError, ConfigurationError
from .patches import PatchGrid

GENOME_MAGIC = b"PVG1"
GENOME_FORMAT = 1


@dataclass(frozen=True)
class AgentConfig:
    """Agent hyper-parameters; defaults are the full-scale settings.

    ``input_size``/``window``/``stride`` define the patch grid, ``embed_dim``
    the Key/Query projection width, ``top_k`` how many patches survive the
    vote, ``hidden_size`` the LSTM width, and ``action`` the action space.
    """

    action: ActionSpec
    input_size: int = 96
    window: int = 7
    stride: int = 4
    embed_dim: int = 4
    top_k: int = 10
    hidden_size: int = 16

    def __post_init__(self) -> None:
        grid = self.grid  # validates window/stride against input_size
        if not 1 <= self.top_k <= grid.count:
            raise ConfigurationError(
                f"top_k={self.top_k} must be in [1, {grid.count}] for this grid"
            )
        if self.embed_dim < 1 or self.hidden_size < 1:
            raise ConfigurationError("embed_dim and hidden_size must be >= 1")

    @property
    def grid(self) -> PatchGrid:
        return PatchGrid(self.input_size, self.window, self.stride)

    @property
    def feature_dim(self) -> int:
        """Controller input width: two coordinates per selected patch."""
        return 2 * self.top_k

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "input_size": self.input_size,
            "window": self.window,
            "stride": self.stride,
            "embed_dim": self.embed_dim,
            "top_k": self.top_k,
            "hidden_size": self.hidden_size,
            "action": {"kind": self.action.kind, "dim": self.action.dim},
        }
        if self.action.bounds is not None:
            d["action"]["bounds"] = [list(b) for b in self.action.bounds]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AgentConfig":
        act = d["action"]
        bounds = act.get("bounds")
        spec = ActionSpec(
            kind=act["kind"],
            dim=act["dim"],
            bounds=tuple(tuple(b) for b in bounds) if bounds is not None else None,
        )
        return cls(
            action=spec,
            input_size=d["input_size"],
            window=d["window"],
            stride=d["stride"],
            embed_dim=d["embed_dim"],
            top_k=d["top_k"],
            hidden_size=d["hidden_size"],
        )


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int
    shape: tuple[int, ...]


@dataclass(frozen=True)
class GenomeLayout:
    """Ordered, contiguous, non-overlapping segments covering [0, total)."""

    segments: tuple[Segment, ...]
    total: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        offset = 0
        for seg in self.segments:
            if seg.offset != offset:
                raise CodecError(f"segment {seg.name} at {seg.offset}, expected {offset}")
            offset += seg.length
        object.__setattr__(self, "total", offset)

    def __getitem__(self, name: str) -> Segment:
        for seg in self.segments:
            if seg.name == name:
                return seg
        raise KeyError(name)

    def hash(self) -> str:
        blob = json.dumps(
            [[s.name, s.offset, s.length, list(s.shape)] for s in self.segments]
        ).encode()
        return hashlib.sha256(blob).hexdigest()


# Segment order is frozen: changing it would silently scramble every stored
# genome and optimizer mean, so treat this list as an on-disk format.
def build_layout(config: AgentConfig) -> GenomeLayout:
    d_in = config.grid.patch_len
    d = config.embed_dim
    h = config.hidden_size
    f = config.feature_dim
    a = config.action.dim
    shapes = [
        ("w_query", (d_in, d)),
        ("b_query", (d,)),
        ("w_key", (d_in, d)),
        ("b_key", (d,)),
        ("w_input", (4 * h, f)),
        ("w_hidden", (4 * h, h)),
        ("b_input", (4 * h,)),
        ("b_hidden", (4 * h,)),
        ("w_out", (a, h)),
        ("b_out", (a,)),
    ]
    segments = []
    offset = 0
    for name, shape in shapes:
        length = int(np.prod(shape))
        segments.append(Segment(name, offset, length, shape))
        offset += length
    return GenomeLayout(tuple(segments))


def count_params(config: AgentConfig) -> dict[str, int]:
    """Trainable-value counts per group and in total."""
    d_in = config.grid.patch_len
    d = config.embed_dim
    h = config.hidden_size
    query = d_in * d + d
    lstm = (
        4 * h * (config.feature_dim + h)
        + 8 * h
        + h * config.action.dim
        + config.action.dim
    )
    return {"query": query, "key": query, "lstm": lstm, "total": 2 * query + lstm}


def decode(values: np.ndarray, config: AgentConfig) -> tuple[AttentionParams, LstmParams]:
    """Split a flat genome into attention and controller parameters."""
    layout = build_layout(config)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (layout.total,):
        raise CodecError(
            f"genome length {values.shape} does not match layout total ({layout.total},)"
        )

    def seg(name: str) -> np.ndarray:
        s = layout[name]
        return values[s.offset : s.offset + s.length].reshape(s.shape).copy()

    attn = AttentionParams(
        w_query=seg("w_query"),
        b_query=seg("b_query"),
        w_key=seg("w_key"),
        b_key=seg("b_key"),
    )
    lstm = LstmParams(
        w_input=seg("w_input"),
        w_hidden=seg("w_hidden"),
        b_input=seg("b_input"),
        b_hidden=seg("b_hidden"),
        w_out=seg("w_out"),
        b_out=seg("b_out"),
    )
    return attn, lstm


def encode(attn: AttentionParams, lstm: LstmParams, config: AgentConfig) -> np.ndarray:
    """Inverse of :func:`decode`; exact round trip."""
    layout = build_layout(config)
    values = np.empty(layout.total, dtype=np.float64)
    parts = {
        "w_query": attn.w_query,
        "b_query": attn.b_query,
        "w_key": attn.w_key,
        "b_key": attn.b_key,
        "w_input": lstm.w_input,
        "w_hidden": lstm.w_hidden,
        "b_input": lstm.b_input,
        "b_hidden": lstm.b_hidden,
        "w_out": lstm.w_out,
        "b_out": lstm.b_out,
    }
    for seg in layout.segments:
        a = np.asarray(parts[seg.name], dtype=np.float64)
        if a.shape != seg.shape:
            raise CodecError(f"{seg.name} has shape {a.shape}, layout expects {seg.shape}")
        values[seg.offset : seg.offset + seg.length] = a.reshape(-1)
    return values


def save_genome(
    path: str,
    values: np.ndarray,
    config: AgentConfig,
    env: dict[str, Any] | None = None,
    fitness: float | None = None,
) -> None:
    """Write a genome checkpoint: versioned JSON header + raw little-endian
    float64 values. The round trip is bit exact."""
    layout = build_layout(config)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (layout.total,):
        raise CodecError(
            f"genome length {values.shape[0]} does not match layout total {layout.total}"
        )
    header = {
        "format": GENOME_FORMAT,
        "layout_hash": layout.hash(),
        "length": layout.total,
        "config": config.to_dict(),
        "env": env,
        "fitness": fitness,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(GENOME_MAGIC)
        f.write(len(blob).to_bytes(4, "little"))
        f.write(blob)
        f.write(values.astype("<f8").tobytes())


def load_genome(path: str) -> tuple[np.ndarray, AgentConfig, dict[str, Any]]:
    """Read a genome checkpoint; verifies magic, format, layout hash, and
    payload length. Returns (values, config, header)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != GENOME_MAGIC:
            raise CodecError(f"{path}: not a genome checkpoint (magic {magic!r})")
        (hlen,) = (int.from_bytes(f.read(4), "little"),)
        header = json.loads(f.read(hlen).decode())
        if header.get("format") != GENOME_FORMAT:
            raise CodecError(f"{path}: unsupported checkpoint format {header.get('format')}")
        config = AgentConfig.from_dict(header["config"])
        layout = build_layout(config)
        if header["layout_hash"] != layout.hash():
            raise CodecError(f"{path}: layout hash mismatch; refusing to decode")
        raw = f.read(layout.total * 8)
        if len(raw) != layout.total * 8:
            raise CodecError(f"{path}: truncated genome payload")
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return values, config, header
