"""Per-frame pipeline: patches -> vote -> top-K centers -> LSTM -> action."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (
    AttentionOutcome,
    AttentionParams,
    attention_matrix,
    importance_vector,
    select_top_k,
)
from .controller import LstmParams, reset_controller, step_controller
from .genome import AgentConfig, decode
from .patches import patch_centers, patchify


@dataclass
class StepInfo:
    """What the agent looked at while producing one action."""

    selected: np.ndarray            # (K,) patch indices, importance-descending
    centers: np.ndarray             # (K, 2) normalized (row, col)
    selected_importance: np.ndarray  # (K,) vote totals of the selected patches
    importance: np.ndarray          # (N,) full vote vector


def frame_outcome(frame: np.ndarray, params: AttentionParams, config: AgentConfig) -> AttentionOutcome:
    """Run the voting stage alone on one preprocessed frame."""
    grid = config.grid
    x = patchify(frame, grid)
    a = attention_matrix(x, params)
    importance = importance_vector(a)
    selected = select_top_k(importance, config.top_k)
    centers = patch_centers(selected, grid)
    return AttentionOutcome(a, importance, selected, centers)


class Agent:
    """Stateful wrapper owning controller state across one episode.

    Parameters are immutable for the lifetime of the agent; call
    :meth:`reset` at every episode start.
    """

    def __init__(self, config: AgentConfig, attn: AttentionParams, lstm: LstmParams):
        self.config = config
        self.attn = attn
        self.lstm = lstm
        self.state = reset_controller(config.hidden_size)

    @classmethod
    def from_genome(cls, values: np.ndarray, config: AgentConfig) -> "Agent":
        attn, lstm = decode(values, config)
        return cls(config, attn, lstm)

    def reset(self) -> None:
        self.state = reset_controller(self.config.hidden_size)

    def act(self, frame: np.ndarray) -> tuple[np.ndarray | int, StepInfo]:
        """Produce the action for one preprocessed (L, L, 3) frame in [0, 1]."""
        outcome = frame_outcome(frame, self.attn, self.config)
        features = outcome.centers.reshape(-1)
        action, self.state = step_controller(features, self.state, self.lstm, self.config.action)
        info = StepInfo(
            selected=outcome.selected,
            centers=outcome.centers,
            selected_importance=outcome.importance[outcome.selected],
            importance=outcome.importance,
        )
        return action, info
