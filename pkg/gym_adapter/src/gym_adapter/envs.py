"""Environment backends served over the wire.

The real tasks need their optional dependencies (``gym[box2d]`` for the
racing task, ``vizdoom`` for the dodging task); importing is deferred so the
adapter, its handshake metadata, and the scripted test backend all work
without them.
"""

from __future__ import annotations

import numpy as np

from .mods import FrameModifier
from .protocol import CONTINUOUS, DISCRETE, HandshakeInfo

RENDER_SIZE = 96

CARRACING_HANDSHAKE = HandshakeInfo(
    name="carracing",
    height=RENDER_SIZE,
    width=RENDER_SIZE,
    channels=3,
    action_kind=CONTINUOUS,
    action_dim=3,
    bounds=((-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
    max_steps=1000,
)

DOOM_HANDSHAKE = HandshakeInfo(
    name="doomtakecover",
    height=RENDER_SIZE,
    width=RENDER_SIZE,
    channels=3,
    action_kind=DISCRETE,
    action_dim=3,
    bounds=None,
    max_steps=2100,
)


def resize_nearest(frame: np.ndarray, size: int) -> np.ndarray:
    h, w = frame.shape[:2]
    if h == size and w == size:
        return frame
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return frame[rows][:, cols]


class ScriptedEnv:
    """Deterministic fake backend mirroring the client's fixture recipe.

    8x8x3 frames with bytes ``(7*seed + 13*step + r + 2*c + 3*ch +
    action_acc) % 256`` where ``action_acc`` accumulates
    ``round(4 * sum(action))`` per step; reward is the 1-based step index and
    the episode ends at step 3.
    """

    SIDE = 8
    EPISODE_LEN = 3

    def __init__(self) -> None:
        self._seed = 0
        self._step = 0
        self._acc = 0

    def handshake(self) -> HandshakeInfo:
        return HandshakeInfo(
            name="scripted",
            height=self.SIDE,
            width=self.SIDE,
            channels=3,
            action_kind=CONTINUOUS,
            action_dim=3,
            bounds=((-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
            max_steps=self.EPISODE_LEN,
        )

    def _frame(self) -> np.ndarray:
        r = np.arange(self.SIDE)[:, None, None]
        c = np.arange(self.SIDE)[None, :, None]
        ch = np.arange(3)[None, None, :]
        vals = (7 * self._seed + 13 * self._step + r + 2 * c + 3 * ch + self._acc) % 256
        return vals.astype(np.uint8)

    def reset(self, seed: int) -> np.ndarray:
        self._seed = int(seed) % 1009
        self._step = 0
        self._acc = 0
        return self._frame()

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        self._acc += int(round(4 * float(np.sum(np.asarray(action)))))
        self._step += 1
        return self._frame(), float(self._step), self._step >= self.EPISODE_LEN


class CarRacingEnv:
    """CarRacing-v0 behind the wire contract; rewards pass through untouched."""

    def __init__(self, modifier: FrameModifier | None = None, size: int = RENDER_SIZE):
        import gym

        self._env = gym.make("CarRacing-v0", verbose=0)
        self._modifier = modifier
        self._size = size
        self._steps = 0

    def handshake(self) -> HandshakeInfo:
        return HandshakeInfo(
            name="carracing", height=self._size, width=self._size, channels=3,
            action_kind=CARRACING_HANDSHAKE.action_kind,
            action_dim=CARRACING_HANDSHAKE.action_dim,
            bounds=CARRACING_HANDSHAKE.bounds,
            max_steps=CARRACING_HANDSHAKE.max_steps,
        )

    def _emit(self, frame: np.ndarray) -> np.ndarray:
        frame = resize_nearest(np.asarray(frame, dtype=np.uint8), self._size)
        if self._modifier is not None:
            frame = self._modifier.apply(frame, self._car_position())
        return frame

    def _car_position(self) -> tuple[float, float] | None:
        # The viewport tracks the car; its sprite sits near the lower middle.
        return (0.72, 0.5)

    def reset(self, seed: int) -> np.ndarray:
        self._env.seed(int(seed) % 2**31)
        self._steps = 0
        if self._modifier is not None:
            self._modifier.start_episode(int(seed))
        return self._emit(self._env.reset())

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        frame, reward, done, _ = self._env.step(np.asarray(action, dtype=np.float32))
        self._steps += 1
        return self._emit(frame), float(reward), bool(done or self._steps >= 1000)


class DoomTakeCoverEnv:
    """DoomTakeCover behind the wire contract.

    Action indices: 0 move left, 1 move right, 2 stay. The higher-walls and
    floor-texture variants come from a modified scenario file supplied by the
    caller; text overlays are applied to the emitted frame.
    """

    def __init__(self, modifier: FrameModifier | None = None,
                 scenario: str | None = None, size: int = RENDER_SIZE):
        import vizdoom

        self._game = vizdoom.DoomGame()
        self._game.load_config(
            scenario or vizdoom.scenarios_path + "/take_cover.cfg"
        )
        self._game.set_window_visible(False)
        self._game.set_screen_format(vizdoom.ScreenFormat.RGB24)
        self._game.init()
        self._modifier = modifier
        self._size = size
        self._steps = 0

    def handshake(self) -> HandshakeInfo:
        return HandshakeInfo(
            name="doomtakecover", height=self._size, width=self._size, channels=3,
            action_kind=DOOM_HANDSHAKE.action_kind,
            action_dim=DOOM_HANDSHAKE.action_dim,
            bounds=DOOM_HANDSHAKE.bounds,
            max_steps=DOOM_HANDSHAKE.max_steps,
        )

    def _emit(self) -> np.ndarray:
        state = self._game.get_state()
        if state is None or state.screen_buffer is None:
            frame = np.zeros((self._size, self._size, 3), dtype=np.uint8)
        else:
            frame = resize_nearest(np.asarray(state.screen_buffer, dtype=np.uint8), self._size)
        if self._modifier is not None:
            frame = self._modifier.apply(frame, None)
        return frame

    def reset(self, seed: int) -> np.ndarray:
        self._game.set_seed(int(seed) % 2**31)
        self._game.new_episode()
        self._steps = 0
        if self._modifier is not None:
            self._modifier.start_episode(int(seed))
        return self._emit()

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        buttons = {0: [True, False], 1: [False, True], 2: [False, False]}[int(action)]
        reward = self._game.make_action(buttons, 1)
        self._steps += 1
        done = self._game.is_episode_finished() or self._steps >= 2100
        return self._emit(), float(reward), bool(done)
