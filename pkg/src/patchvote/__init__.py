"""Patch-voting agents trained with a covariance-adapting evolution strategy.

A frame is cut into overlapping patches; a Key/Query self-attention vote
ranks them; the top-K patch centers feed a small LSTM policy; everything is
evolved end to end against pixel environments. Subpackages add a wire bridge
to external environments, a training harness, an HTTP service, and a CLI.
"""

__version__ = "0.1.0"

from .agent import Agent
from .attention import AttentionOutcome, AttentionParams
from .controller import ActionSpec, ControllerState, LstmParams
from .genome import AgentConfig
from .patches import PatchGrid

__all__ = [
    "Agent",
    "AgentConfig",
    "ActionSpec",
    "AttentionOutcome",
    "AttentionParams",
    "ControllerState",
    "LstmParams",
    "PatchGrid",
    "__version__",
]
