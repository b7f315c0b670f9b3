"""Frame I/O and attention overlays.

Frames are written as binary PPM (P6), which needs no codec dependency; PNG
output is available when Pillow is installed. The overlay renderer whitens
the selected patch windows with opacity scaled by each patch's importance
relative to the other selected patches in the same step.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .patches import PatchGrid


def write_ppm(path: str, image_u8: np.ndarray) -> None:
    if image_u8.ndim != 3 or image_u8.shape[2] != 3 or image_u8.dtype != np.uint8:
        raise ConfigurationError(f"PPM needs a uint8 (H, W, 3) array, got {image_u8.shape} {image_u8.dtype}")
    h, w = image_u8.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(image_u8.tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise ConfigurationError(f"{path} is not a binary PPM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(v) for v in fields)
    if maxval != 255:
        raise ConfigurationError(f"{path}: only maxval 255 is supported")
    pixels = np.frombuffer(data, np.uint8, count=h * w * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()


def write_png(path: str, image_u8: np.ndarray) -> None:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on extras
        raise ConfigurationError(
            "PNG output needs Pillow; install the 'png' extra or use PPM"
        ) from exc
    Image.fromarray(image_u8, mode="RGB").save(path)


def to_u8(frame: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float frame to bytes (exact for byte-born frames)."""
    return np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)


def resize_nearest(frame: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resize to (size, size, C) using floor index mapping."""
    h, w = frame.shape[:2]
    if h == size and w == size:
        return frame
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return frame[rows][:, cols]


def overlay_opacities(selected_importance: np.ndarray,
                      low: float = 0.25, high: float = 1.0) -> np.ndarray:
    """Per-patch overlay opacity from importance, normalized within the step.

    The most important selected patch gets ``high``, the least ``low``; if
    all selected importances are equal, every patch gets ``high``.
    """
    imp = np.asarray(selected_importance, dtype=np.float64)
    span = imp.max() - imp.min()
    if span <= 0:
        return np.full(imp.shape, high)
    return low + (high - low) * (imp - imp.min()) / span


def overlay_selection(
    frame: np.ndarray,
    selected: np.ndarray,
    selected_importance: np.ndarray,
    grid: PatchGrid,
) -> np.ndarray:
    """White-highlight the selected patch windows on a copy of ``frame``.

    ``frame`` is float in [0, 1] at the grid's input size. Overlapping
    patches keep the strongest (whitest) overlay per pixel.
    """
    if frame.shape[0] != grid.input_side or frame.shape[1] != grid.input_side:
        raise ConfigurationError(
            f"frame side {frame.shape[:2]} does not match grid {grid.input_side}"
        )
    alphas = overlay_opacities(selected_importance)
    alpha_map = np.zeros(frame.shape[:2])
    for index, alpha in zip(np.asarray(selected, dtype=np.int64), alphas):
        r, c = divmod(int(index), grid.cols)
        r0, c0 = r * grid.stride, c * grid.stride
        window = alpha_map[r0 : r0 + grid.window, c0 : c0 + grid.window]
        np.maximum(window, alpha, out=window)
    out = frame + (1.0 - frame) * alpha_map[..., None]
    return to_u8(out)
