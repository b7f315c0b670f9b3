"""Top-down lap-driving environment on procedurally generated closed tracks.

Each reset builds a fresh closed loop from a jittered control polygon,
smooths it, and discretizes it into tiles ordered counter-clockwise. The car
earns ``1000 / n`` for every one of the ``n`` tiles it touches for the first
time and pays 0.1 per step, so a clean full lap approaches a score of 1000.
The episode ends when every tile is visited or after ``max_steps``.

Rendering is split into a per-episode static layer (grass, lane, curbs) and
cheap per-step sprites, and never consumes the dynamics random stream.
"""

from __future__ import annotations

import numpy as np

from ..controller import ActionSpec
from ..errors import ConfigurationError, EnvProtocolError
from .base import Env, EnvModification, EnvSpec, EnvStep
from .draw import checkerboard, fill_disk, fill_rotated_rect

HALF_WIDTH = 0.045      # lane half-width, world units
TILE_SPACING = 0.045
VISIT_RADIUS = 0.055
MAX_SPEED = 0.028
CAR_HALF_LEN = 0.026
CAR_HALF_WID = 0.013

COL_GRASS = (0.35, 0.62, 0.33)
COL_LANE = (0.40, 0.40, 0.40)
COL_CAR = (0.85, 0.10, 0.10)
COL_CURB_A = (0.85, 0.10, 0.10)
COL_CURB_B = (0.95, 0.95, 0.95)

BOUNDS = (
    (-1.0, 1.0),  # steer: positive turns counter-clockwise
    (0.0, 1.0),   # gas
    (0.0, 1.0),   # brake
)


class LaneRacer(Env):
    MODS = frozenset({"color_perturb", "vertical_bars", "background_blob"})

    def __init__(self, size: int = 96, max_steps: int = 1000,
                 modification: EnvModification | None = None):
        if modification is not None and modification.kind not in self.MODS:
            raise ConfigurationError(
                f"modification {modification.kind!r} is not compatible with lane_racer"
            )
        self.size = size
        self.modification = modification
        self.spec = EnvSpec(
            name="lane_racer",
            obs_size=size,
            action=ActionSpec("continuous", 3, BOUNDS),
            max_steps=max_steps,
            solve_threshold=900.0,
            min_score=-0.1 * max_steps,
        )
        self._rng: np.random.Generator | None = None
        self._done = True
        self._steps = 0
        self._tiles = np.zeros((0, 2))
        self._visited = np.zeros(0, dtype=bool)
        self._pos = np.zeros(2)
        self._heading = 0.0
        self._speed = 0.0
        self._static = np.zeros((size, size, 3), dtype=np.uint8)

    @property
    def tile_count(self) -> int:
        """Tiles on the current episode's track (varies with the layout)."""
        return len(self._tiles)

    def with_modification(self, mod: EnvModification) -> "LaneRacer":
        return LaneRacer(self.size, self.spec.max_steps, mod)

    # -- track generation ----------------------------------------------------

    def _generate_track(self) -> np.ndarray:
        assert self._rng is not None
        n_ctrl = 10
        jitter = self._rng.uniform(-0.25, 0.25, n_ctrl)
        angles = 2.0 * np.pi * (np.arange(n_ctrl) + jitter) / n_ctrl
        radii = self._rng.uniform(0.30, 0.44, n_ctrl)
        pts = 0.5 + np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)

        for _ in range(3):  # corner cutting; doubles the point count each pass
            nxt = np.roll(pts, -1, axis=0)
            smoothed = np.empty((2 * len(pts), 2))
            smoothed[0::2] = 0.75 * pts + 0.25 * nxt
            smoothed[1::2] = 0.25 * pts + 0.75 * nxt
            pts = smoothed

        seg = np.roll(pts, -1, axis=0) - pts
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        perimeter = float(seg_len.sum())
        n_tiles = max(24, int(round(perimeter / TILE_SPACING)))
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        targets = np.linspace(0.0, perimeter, n_tiles, endpoint=False)
        idx = np.searchsorted(cum, targets, side="right") - 1
        frac = (targets - cum[idx]) / seg_len[idx]
        tiles = pts[idx] + frac[:, None] * seg[idx]

        # Traversal must be counter-clockwise (positive signed area).
        x, y = tiles[:, 0], tiles[:, 1]
        area = 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
        if area < 0:
            tiles = tiles[::-1].copy()
        return tiles

    # -- episode protocol ------------------------------------------------

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x7A2C])))
        mod_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x90D])))
        self._tiles = self._generate_track()
        self._visited = np.zeros(len(self._tiles), dtype=bool)
        self._pos = self._tiles[0].copy()
        direction = self._tiles[1] - self._tiles[0]
        self._heading = float(np.arctan2(direction[1], direction[0]))
        self._speed = 0.0
        self._steps = 0
        self._done = False
        self._static = self._build_static(mod_rng)
        # Tiles under the car at the start are credited on the first step,
        # so the full 1000 of tile reward stays attainable.
        return self._render()

    def step(self, action) -> EnvStep:
        if self._done or self._rng is None:
            raise EnvProtocolError("step() called on a finished episode")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (3,):
            raise ConfigurationError(f"lane_racer action must have shape (3,), got {action.shape}")
        steer = float(np.clip(action[0], -1.0, 1.0))
        gas = float(np.clip(action[1], 0.0, 1.0))
        brake = float(np.clip(action[2], 0.0, 1.0))

        self._speed += 0.004 * gas - 0.008 * brake
        self._speed *= 0.95  # drag
        self._speed = float(np.clip(self._speed, 0.0, MAX_SPEED))
        # No turning at standstill; full authority from ~half speed.
        self._heading += steer * 0.28 * min(self._speed / 0.014, 1.0)
        self._pos[0] = np.clip(self._pos[0] + self._speed * np.cos(self._heading), 0.03, 0.97)
        self._pos[1] = np.clip(self._pos[1] + self._speed * np.sin(self._heading), 0.03, 0.97)

        new_visits = self._mark_visits()
        n = len(self._tiles)
        reward = -0.1 + (1000.0 / n) * new_visits
        self._steps += 1
        self._done = bool(self._visited.all()) or self._steps >= self.spec.max_steps
        return EnvStep(self._render(), reward, self._done)

    def _mark_visits(self) -> int:
        d2 = np.sum((self._tiles - self._pos) ** 2, axis=1)
        fresh = (d2 < VISIT_RADIUS**2) & ~self._visited
        self._visited |= fresh
        return int(fresh.sum())

    # -- rendering ---------------------------------------------------------

    def _row(self, y: float) -> float:
        return (1.0 - y) * self.size

    def _build_static(self, mod_rng: np.random.Generator) -> np.ndarray:
        s = self.size
        mod = self.modification
        grass, lane = np.asarray(COL_GRASS), np.asarray(COL_LANE)
        if mod is not None and mod.kind == "color_perturb":
            amp = float(mod.get("amplitude", 0.2))
            lane = lane + mod_rng.uniform(-amp, amp)
            grass = grass + mod_rng.uniform(-amp, amp)
            lane, grass = np.clip(lane, 0, 1), np.clip(grass, 0, 1)

        img = checkerboard(s, max(4, s // 12), grass, np.clip(grass - 0.03, 0, 1))
        for tx, ty in self._tiles:
            fill_disk(img, self._row(ty), tx * s, HALF_WIDTH * s, lane)

        # Curb dashes on the outside of sharp turns, alternating red/white.
        prev = np.roll(self._tiles, 1, axis=0)
        nxt = np.roll(self._tiles, -1, axis=0)
        v_in = self._tiles - prev
        v_out = nxt - self._tiles
        turn = np.arctan2(
            v_in[:, 0] * v_out[:, 1] - v_in[:, 1] * v_out[:, 0],
            np.sum(v_in * v_out, axis=1),
        )
        for i, ((tx, ty), t) in enumerate(zip(self._tiles, turn)):
            if abs(t) < 0.06:
                continue
            d = v_out[i] / (np.hypot(*v_out[i]) + 1e-12)
            normal = np.array([d[1], -d[0]]) if t > 0 else np.array([-d[1], d[0]])
            ox, oy = self._tiles[i] + normal * (HALF_WIDTH + 0.012)
            color = COL_CURB_A if i % 2 == 0 else COL_CURB_B
            fill_disk(img, self._row(oy), ox * s, 0.014 * s, color)

        sx, sy = self._tiles[0]
        fill_disk(img, self._row(sy), sx * s, 0.016 * s, (0.95, 0.95, 0.95))
        return img

    def _render(self) -> np.ndarray:
        s = self.size
        img = self._static.copy()
        fill_rotated_rect(
            img,
            self._row(self._pos[1]),
            self._pos[0] * s,
            CAR_HALF_LEN * s,
            CAR_HALF_WID * s,
            -self._heading,
            COL_CAR,
        )
        mod = self.modification
        if mod is not None:
            if mod.kind == "background_blob":
                off = float(mod.get("offset_frac", 0.14))
                radius = float(mod.get("radius_frac", 0.04))
                fill_disk(
                    img,
                    self._row(self._pos[1]) - off * s,
                    self._pos[0] * s + off * s,
                    radius * s,
                    (0.90, 0.05, 0.05),
                )
            elif mod.kind == "vertical_bars":
                bar = int(round(float(mod.get("width_frac", 0.075)) * s))
                img[:, :bar] = 0
                img[:, s - bar :] = 0
        return img.astype(np.float64) / 255.0
