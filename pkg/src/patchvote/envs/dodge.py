"""Projectile-dodging environment.

The agent is a sprite near the bottom of the screen that can shuffle left or
right while projectiles rain down from the top of the play field. Every
survived step is worth +1; the episode ends on a hit or after ``max_steps``.
A non-functional status panel occupies the bottom strip of the frame so that
attention analyses can show whether the agent anchors on it.

All randomness comes from the reset seed. Rendering never touches the
dynamics stream, so every modification is provably cosmetic.
"""

from __future__ import annotations

import numpy as np

from ..controller import ActionSpec
from ..errors import ConfigurationError, EnvProtocolError
from .base import Env, EnvModification, EnvSpec, EnvStep
from .draw import checkerboard, fill_disk, fill_rect, to_u8

ACTIONS = ("left", "right", "stay")

# Geometry as fractions of the frame side.
WALL_W = 0.08
BACK_BOTTOM = 0.12
PANEL_TOP = 0.85
SPAWN_ROW = 0.14
AGENT_ROW = 0.80
HIT_BAND = (0.77, 0.83)
AGENT_HALF_W = 0.05
AGENT_HALF_H = 0.03
AGENT_SPEED = 0.035
PROJ_RADIUS = 0.05
HIT_DIST = 0.10
SPAWN_PROB = 0.045
AIMED_PROB = 0.85

COL_BACK = (0.13, 0.12, 0.11)
COL_FLOOR_A = (0.40, 0.38, 0.36)
COL_FLOOR_B = (0.36, 0.34, 0.32)
COL_WALL = (0.35, 0.22, 0.12)
COL_PANEL = (0.08, 0.08, 0.09)
COL_PHOTO = (0.45, 0.40, 0.35)
COL_PROJ = (1.0, 0.55, 0.10)
COL_PROJ_CORE = (1.0, 0.90, 0.30)
COL_AGENT = (0.20, 0.40, 1.00)


class Dodge(Env):
    MODS = frozenset({"higher_walls", "floor_texture", "hover_text"})

    def __init__(self, size: int = 96, max_steps: int = 2100,
                 modification: EnvModification | None = None):
        if modification is not None and modification.kind not in self.MODS:
            raise ConfigurationError(
                f"modification {modification.kind!r} is not compatible with dodge"
            )
        self.size = size
        self.modification = modification
        self.spec = EnvSpec(
            name="dodge",
            obs_size=size,
            action=ActionSpec("discrete", 3),
            max_steps=max_steps,
            solve_threshold=750.0,
            min_score=0.0,
        )
        self._static = self._build_static()
        self._rng: np.random.Generator | None = None
        self._done = True
        self._agent_x = 0.5
        self._agent_vx = 0.0
        self._projectiles = np.zeros((0, 4))  # columns: x, y, vx, vy
        self._steps = 0

    # -- configuration -------------------------------------------------

    def with_modification(self, mod: EnvModification) -> "Dodge":
        return Dodge(self.size, self.spec.max_steps, mod)

    # -- episode protocol ------------------------------------------------

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xD0D9])))
        self._agent_x = 0.5
        self._agent_vx = 0.0
        self._steps = 0
        self._done = False
        self._projectiles = np.zeros((0, 4))
        # An opening volley already mid-flight, one projectile per lane
        # third: the first frames contain something to attend to, and no
        # fixed lateral position (center, corners) is safe to idle in.
        for lane in range(3):
            self._spawn(initial=True, lane=lane)
        return self._render()

    def step(self, action) -> EnvStep:
        if self._done or self._rng is None:
            raise EnvProtocolError("step() called on a finished episode")
        action = int(action)
        if not 0 <= action < 3:
            raise ConfigurationError(f"dodge action must be 0..2, got {action}")
        lo = WALL_W + AGENT_HALF_W
        hi = 1.0 - WALL_W - AGENT_HALF_W
        previous_x = self._agent_x
        if action == 0:
            self._agent_x = max(lo, self._agent_x - AGENT_SPEED)
        elif action == 1:
            self._agent_x = min(hi, self._agent_x + AGENT_SPEED)
        self._agent_vx = self._agent_x - previous_x

        if len(self._projectiles):
            self._projectiles[:, 0] += self._projectiles[:, 2]
            self._projectiles[:, 1] += self._projectiles[:, 3]
            np.clip(self._projectiles[:, 0], WALL_W + PROJ_RADIUS,
                    1.0 - WALL_W - PROJ_RADIUS, out=self._projectiles[:, 0])

        hit = False
        if len(self._projectiles):
            in_band = (self._projectiles[:, 1] >= HIT_BAND[0]) & (
                self._projectiles[:, 1] <= HIT_BAND[1]
            )
            close = np.abs(self._projectiles[:, 0] - self._agent_x) < HIT_DIST
            hit = bool(np.any(in_band & close))
            self._projectiles = self._projectiles[self._projectiles[:, 1] <= 0.86]

        if self._rng.random() < SPAWN_PROB:
            self._spawn()

        self._steps += 1
        self._done = hit or self._steps >= self.spec.max_steps
        reward = 0.0 if hit else 1.0
        return EnvStep(self._render(), reward, self._done)

    def _spawn(self, initial: bool = False, lane: int | None = None) -> None:
        assert self._rng is not None
        lo = WALL_W + PROJ_RADIUS
        hi = 1.0 - WALL_W - PROJ_RADIUS
        if lane is None:
            x = self._rng.uniform(lo, hi)
        else:
            width = (hi - lo) / 3.0
            x = self._rng.uniform(lo + lane * width, lo + (lane + 1) * width)
        if initial:
            y = self._rng.uniform(0.50, 0.68)
            vy = self._rng.uniform(0.008, 0.012)
            vx = self._rng.uniform(-0.003, 0.003)
        else:
            y = SPAWN_ROW
            vy = self._rng.uniform(0.007, 0.011)
            if self._rng.random() < AIMED_PROB:
                # Lead the shot: intercept where the agent will be if it
                # keeps its current velocity. Holding still or cruising in
                # one direction is punished; changing course evades.
                steps_to_agent = (AGENT_ROW - y) / vy
                predicted = np.clip(
                    self._agent_x + self._agent_vx * steps_to_agent, lo, hi
                )
                vx = float(np.clip((predicted - x) / steps_to_agent, -0.012, 0.012))
            else:
                vx = self._rng.uniform(-0.004, 0.004)
        self._projectiles = np.vstack([self._projectiles, [x, y, vx, vy]])

    # -- rendering ---------------------------------------------------------

    def _build_static(self) -> np.ndarray:
        s = self.size
        mod = self.modification
        img = np.zeros((s, s, 3), dtype=np.uint8)
        img[:] = to_u8(COL_BACK)

        floor_a, floor_b, cell = COL_FLOOR_A, COL_FLOOR_B, max(3, s // 12)
        if mod is not None and mod.kind == "floor_texture":
            floor_a = tuple(mod.get("color_a", (0.30, 0.36, 0.30)))
            floor_b = tuple(mod.get("color_b", (0.47, 0.45, 0.40)))
            cell = int(mod.get("cell_frac", 1 / 6) * s)
        r_floor0, r_floor1 = int(BACK_BOTTOM * s), int(PANEL_TOP * s)
        img[r_floor0:r_floor1] = checkerboard(s, cell, floor_a, floor_b, r_floor0, r_floor1)

        wall_height = 0.55
        if mod is not None and mod.kind == "higher_walls":
            wall_height = float(mod.get("height_frac", 0.95))
        wall_top = int((PANEL_TOP - wall_height * (PANEL_TOP - BACK_BOTTOM)) * s)
        wall_w = int(WALL_W * s)
        fill_rect(img, wall_top, r_floor1, 0, wall_w, COL_WALL)
        fill_rect(img, wall_top, r_floor1, s - wall_w, s, COL_WALL)

        fill_rect(img, r_floor1, s, 0, s, COL_PANEL)
        ph = max(2, int(0.08 * s))
        mid = s // 2
        pr0 = r_floor1 + max(1, int(0.03 * s))
        fill_rect(img, pr0, pr0 + ph, mid - ph // 2, mid + ph // 2, COL_PHOTO)
        fill_rect(img, pr0, pr0 + ph // 2, int(0.12 * s), int(0.12 * s) + ph, (0.30, 0.12, 0.10))
        fill_rect(img, pr0, pr0 + ph // 2, s - int(0.12 * s) - ph, s - int(0.12 * s), (0.12, 0.28, 0.15))

        if mod is not None and mod.kind == "hover_text":
            c0 = int(mod.get("left_frac", 0.30) * s)
            c1 = int(mod.get("right_frac", 0.70) * s)
            r1 = int(mod.get("bottom_frac", 0.09) * s)
            fill_rect(img, max(1, s // 96), r1, c0, c1, (0.10, 0.20, 0.80))
            # Blocky pseudo-glyphs; fixed pattern, no randomness.
            glyph_w = max(1, (c1 - c0) // 12)
            for k in range(5):
                g0 = c0 + (2 * k + 1) * glyph_w
                fill_rect(img, max(1, s // 96) + 1, r1 - 1, g0, g0 + glyph_w, (0.95, 0.95, 0.95))
        return img

    def _render(self) -> np.ndarray:
        s = self.size
        img = self._static.copy()
        for x, y, _, _ in self._projectiles:
            fill_disk(img, y * s, x * s, PROJ_RADIUS * s, COL_PROJ)
            fill_disk(img, y * s, x * s, PROJ_RADIUS * s * 0.45, COL_PROJ_CORE)
        r = AGENT_ROW * s
        fill_rect(
            img,
            int(round(r - AGENT_HALF_H * s)),
            int(round(r + AGENT_HALF_H * s)),
            int(round((self._agent_x - AGENT_HALF_W) * s)),
            int(round((self._agent_x + AGENT_HALF_W) * s)),
            COL_AGENT,
        )
        return img.astype(np.float64) / 255.0
