"""Recurrent policy: a single small LSTM cell plus a linear action head.

The controller sees only the normalized centers of the selected patches, so
its hidden state is what carries velocity-like information between frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError

CONTINUOUS = "continuous"
DISCRETE = "discrete"


@dataclass(frozen=True)
class ActionSpec:
    """Shape of the environment's action space.

    ``bounds`` is a per-dimension (low, high) tuple for continuous spaces and
    must be None for discrete ones, where actions are indices in [0, dim).
    """

    kind: str
    dim: int
    bounds: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise ConfigurationError(f"unknown action kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigurationError("action dim must be >= 1")
        if self.kind == CONTINUOUS:
            if self.bounds is None or len(self.bounds) != self.dim:
                raise ConfigurationError("continuous actions need one (lo, hi) per dim")
            for lo, hi in self.bounds:
                if not lo < hi:
                    raise ConfigurationError(f"bad action bound ({lo}, {hi})")
        elif self.bounds is not None:
            raise ConfigurationError("discrete actions take no bounds")


@dataclass(frozen=True)
class LstmParams:
    """LSTM cell weights plus the action head.

    Gate rows are stacked in the fixed order (input, forget, candidate,
    output), each block of ``hidden`` rows. There are two bias vectors,
    ``b_input`` and ``b_hidden``, both added to every gate preactivation.
    """

    w_input: np.ndarray   # (4*hidden, in_dim)
    w_hidden: np.ndarray  # (4*hidden, hidden)
    b_input: np.ndarray   # (4*hidden,)
    b_hidden: np.ndarray  # (4*hidden,)
    w_out: np.ndarray     # (act_dim, hidden)
    b_out: np.ndarray     # (act_dim,)

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def in_dim(self) -> int:
        return self.w_input.shape[1]

    @property
    def count(self) -> int:
        """Number of trainable values, action head included."""
        return sum(
            int(a.size)
            for a in (self.w_input, self.w_hidden, self.b_input, self.b_hidden, self.w_out, self.b_out)
        )


@dataclass
class ControllerState:
    """Hidden and cell vectors; zeroed at every episode start."""

    h: np.ndarray
    c: np.ndarray

    def copy(self) -> "ControllerState":
        return ControllerState(self.h.copy(), self.c.copy())


def reset_controller(hidden_size: int) -> ControllerState:
    """Fresh all-zero state for the start of an episode."""
    return ControllerState(
        np.zeros(hidden_size, dtype=np.float64),
        np.zeros(hidden_size, dtype=np.float64),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Piecewise form is stable for large |z|.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def step_controller(
    features: np.ndarray,
    state: ControllerState,
    params: LstmParams,
    spec: ActionSpec,
) -> tuple[np.ndarray | int, ControllerState]:
    """Advance the LSTM one step and emit an action.

    Preactivations are ``w_input @ features + b_input + w_hidden @ h +
    b_hidden``, split into the four gate blocks. Continuous action logits are
    squashed with tanh and rescaled into the declared bounds; discrete
    actions take the argmax logit (lowest index on ties).
    """
    if features.shape[0] != params.in_dim:
        raise ConfigurationError(
            f"feature length {features.shape[0]} != controller input {params.in_dim}"
        )
    if not np.isfinite(features).all():
        raise NumericError("non-finite controller features")
    n = params.hidden_size
    pre = params.w_input @ features + params.b_input + params.w_hidden @ state.h + params.b_hidden
    if not np.isfinite(pre).all():
        raise NumericError("non-finite LSTM preactivation (check parameters)")
    gate_in = _sigmoid(pre[0:n])
    gate_forget = _sigmoid(pre[n : 2 * n])
    candidate = np.tanh(pre[2 * n : 3 * n])
    gate_out = _sigmoid(pre[3 * n : 4 * n])
    c_new = gate_forget * state.c + gate_in * candidate
    h_new = gate_out * np.tanh(c_new)
    logits = params.w_out @ h_new + params.b_out
    new_state = ControllerState(h_new, c_new)
    if spec.kind == DISCRETE:
        return int(np.argmax(logits)), new_state
    assert spec.bounds is not None
    lo = np.array([b[0] for b in spec.bounds])
    hi = np.array([b[1] for b in spec.bounds])
    action = lo + (np.tanh(logits) + 1.0) * 0.5 * (hi - lo)
    return action, new_state
