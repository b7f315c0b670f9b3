"""Self-attention importance voting over patch vectors.

The attention matrix is built from Key and Query projections only; there is
no Value projection, no positional encoding, and a single head. Row i of the
matrix describes how patch i distributes one unit of vote mass over all
patches, so column sums measure how much attention each patch received. The
agent keeps only the most-voted patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError


@dataclass(frozen=True)
class AttentionParams:
    """Key/Query projection weights, both with bias terms.

    ``w_query``/``w_key`` have shape (patch_len, embed_dim); ``b_query``/
    ``b_key`` have shape (embed_dim,).
    """

    w_query: np.ndarray
    b_query: np.ndarray
    w_key: np.ndarray
    b_key: np.ndarray

    @property
    def embed_dim(self) -> int:
        return self.w_query.shape[1]

    @property
    def count(self) -> int:
        """Number of trainable values across both projections."""
        return sum(int(a.size) for a in (self.w_query, self.b_query, self.w_key, self.b_key))


@dataclass(frozen=True)
class AttentionOutcome:
    """Everything the voting step produces for one frame.

    ``matrix`` is the (N, N) row-stochastic attention matrix, ``importance``
    its column sums, ``selected`` the chosen patch indices ordered by
    descending importance, and ``centers`` their normalized (row, col)
    centers in selection order.
    """

    matrix: np.ndarray
    importance: np.ndarray
    selected: np.ndarray
    centers: np.ndarray


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.isfinite(a).all():
        bad = np.argwhere(~np.isfinite(np.atleast_1d(a)))[0]
        raise NumericError(f"non-finite value in {name} at index {tuple(bad)}")


def attention_matrix(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Row-stochastic attention matrix of the patch batch ``x``.

    Computes ``rowsoftmax((x @ w_key + b_key) @ (x @ w_query + b_query)^T /
    sqrt(patch_len))``. The scaling constant uses the input dimension, which
    keeps dot-product magnitudes comparable across patch sizes. Softmax is
    evaluated with per-row max subtraction; that changes nothing
    mathematically but avoids overflow.
    """
    _check_finite("x", x)
    for name in ("w_query", "b_query", "w_key", "b_key"):
        _check_finite(name, getattr(params, name))
    keys = x @ params.w_key + params.b_key
    queries = x @ params.w_query + params.b_query
    logits = (keys @ queries.T) / np.sqrt(x.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits


def weighted_output(matrix: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Attention-weighted average of ``x``: each output row is a convex
    combination of input rows. Not used on the agent's decision path; the
    agent relies on vote totals alone."""
    if matrix.shape[1] != x.shape[0]:
        raise ConfigurationError(
            f"matrix columns {matrix.shape[1]} != input rows {x.shape[0]}"
        )
    return matrix @ x


def importance_vector(matrix: np.ndarray) -> np.ndarray:
    """Column sums of the attention matrix: total votes per patch."""
    return matrix.sum(axis=0)


def select_top_k(importance: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` highest-importance patches.

    Sorted by importance descending; ties broken by ascending patch index so
    selection is deterministic. The returned order is also the feature order
    handed to the controller.
    """
    n = importance.shape[0]
    if not 1 <= k <= n:
        raise ConfigurationError(f"k={k} must be in [1, {n}]")
    order = np.argsort(-importance, kind="stable")
    return order[:k].astype(np.int64)
