"""Sliding-window patch geometry: grids, extraction, and center coordinates.

A square RGB frame is chopped into overlapping square windows laid out on a
regular grid. Each window becomes one row of a matrix so that downstream
modules can treat the frame as a batch of patch vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError

CHANNELS = 3


@dataclass(frozen=True)
class PatchGrid:
    """Geometry of a sliding-window segmentation of a square RGB frame.

    Parameters
    ----------
    input_side:
        Side length of the (square) input frame, in pixels.
    window:
        Side length of each square patch, in pixels.
    stride:
        Step between consecutive windows, in pixels.
    """

    input_side: int
    window: int
    stride: int

    def __post_init__(self) -> None:
        if self.window > self.input_side:
            raise ConfigurationError(
                f"window {self.window} exceeds input side {self.input_side}"
            )
        if self.window < 1 or self.stride < 1:
            raise ConfigurationError(
                f"window and stride must be >= 1, got {self.window}, {self.stride}"
            )

    @property
    def rows(self) -> int:
        return (self.input_side - self.window) // self.stride + 1

    @property
    def cols(self) -> int:
        # Square frames only, so the grid is square as well.
        return self.rows

    @property
    def count(self) -> int:
        """Total number of patches."""
        return self.rows * self.cols

    @property
    def patch_len(self) -> int:
        """Length of one flattened RGB patch."""
        return self.window * self.window * CHANNELS


def patchify(frame: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Extract all windows of ``grid`` from ``frame`` as a (count, patch_len) matrix.

    Windows are enumerated row-major over the grid and each window is
    flattened row-major (rows, then columns, then channels).

    ``frame`` must be ``(input_side, input_side, 3)`` with values in [0, 1].
    """
    expect = (grid.input_side, grid.input_side, CHANNELS)
    if frame.shape != expect:
        raise ConfigurationError(
            f"frame shape {frame.shape} does not match grid {expect}"
        )
    windows = sliding_window_view(frame, (grid.window, grid.window, CHANNELS))
    windows = windows[:: grid.stride, :: grid.stride, 0]
    return np.ascontiguousarray(windows).reshape(grid.count, grid.patch_len)


def patch_center(index: int, grid: PatchGrid) -> tuple[float, float]:
    """Pixel coordinates (row, col) of the center of patch ``index``."""
    if not 0 <= index < grid.count:
        raise ConfigurationError(
            f"patch index {index} out of range for grid with {grid.count} patches"
        )
    r, c = divmod(index, grid.cols)
    half = (grid.window - 1) / 2.0
    return (r * grid.stride + half, c * grid.stride + half)


def patch_centers(indices: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Normalized center coordinates for a list of patch indices.

    Each center coordinate is divided by the largest attainable center
    coordinate on the grid, so values lie in [0, 1] and the bottom-right
    patch maps to exactly (1, 1). A single-row (or single-column) grid has
    only one attainable value on that axis; its normalized coordinate is
    defined as 0. Output order preserves input order.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= grid.count):
        raise ConfigurationError(
            f"patch indices out of range for grid with {grid.count} patches"
        )
    half = (grid.window - 1) / 2.0
    rows = indices // grid.cols
    cols = indices % grid.cols
    out = np.empty((indices.size, 2), dtype=np.float64)
    for axis, (n, idx) in enumerate(((grid.rows, rows), (grid.cols, cols))):
        if n == 1:
            out[:, axis] = 0.0
        else:
            largest = (n - 1) * grid.stride + half
            out[:, axis] = (idx * grid.stride + half) / largest
    return out
