"""Tiny raster helpers for the built-in environments.

Everything draws into uint8 (H, W, 3) arrays in place. Coordinates are in
pixels; callers convert from normalized world units.
"""

from __future__ import annotations

import numpy as np


def to_u8(color: tuple[float, float, float]) -> np.ndarray:
    return np.clip(np.round(np.asarray(color) * 255.0), 0, 255).astype(np.uint8)


def fill_rect(img: np.ndarray, r0: int, r1: int, c0: int, c1: int, color) -> None:
    h, w = img.shape[:2]
    r0, r1 = max(0, r0), min(h, r1)
    c0, c1 = max(0, c0), min(w, c1)
    if r0 < r1 and c0 < c1:
        img[r0:r1, c0:c1] = to_u8(color)


def fill_disk(img: np.ndarray, row: float, col: float, radius: float, color) -> None:
    h, w = img.shape[:2]
    r0 = max(0, int(np.floor(row - radius)))
    r1 = min(h, int(np.ceil(row + radius)) + 1)
    c0 = max(0, int(np.floor(col - radius)))
    c1 = min(w, int(np.ceil(col + radius)) + 1)
    if r0 >= r1 or c0 >= c1:
        return
    rr, cc = np.mgrid[r0:r1, c0:c1]
    mask = (rr - row) ** 2 + (cc - col) ** 2 <= radius**2
    img[r0:r1, c0:c1][mask] = to_u8(color)


def fill_rotated_rect(
    img: np.ndarray,
    row: float,
    col: float,
    half_len: float,
    half_wid: float,
    heading: float,
    color,
) -> None:
    """Axis of length runs along ``heading`` (radians, image coords)."""
    h, w = img.shape[:2]
    reach = float(np.hypot(half_len, half_wid)) + 1
    r0 = max(0, int(np.floor(row - reach)))
    r1 = min(h, int(np.ceil(row + reach)) + 1)
    c0 = max(0, int(np.floor(col - reach)))
    c1 = min(w, int(np.ceil(col + reach)) + 1)
    if r0 >= r1 or c0 >= c1:
        return
    rr, cc = np.mgrid[r0:r1, c0:c1]
    dr = rr - row
    dc = cc - col
    cos, sin = np.cos(heading), np.sin(heading)
    u = dc * cos + dr * sin     # along heading
    v = -dc * sin + dr * cos    # across heading
    mask = (np.abs(u) <= half_len) & (np.abs(v) <= half_wid)
    img[r0:r1, c0:c1][mask] = to_u8(color)


def checkerboard(
    size: int, cell: int, color_a, color_b, row0: int = 0, row1: int | None = None
) -> np.ndarray:
    """A (rows, size, 3) checker strip covering rows [row0, row1)."""
    row1 = size if row1 is None else row1
    rows = np.arange(row0, row1)
    cols = np.arange(size)
    parity = ((rows[:, None] // cell) + (cols[None, :] // cell)) % 2
    out = np.where(parity[..., None] == 0, to_u8(color_a), to_u8(color_b))
    return out.astype(np.uint8)
