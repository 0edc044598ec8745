"""Cosine-attention recall math shared by the two memory modules.

Scores are cosine similarities; recall weights clamp negative scores to
zero and add a small epsilon before normalizing, so the aggregation is
always a convex combination even when every score is non-positive (the
epsilon then yields uniform weights). Backward passes are exact; the
clamp uses the zero subgradient at the kink.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

WEIGHT_EPS = 1e-8
_NORM_FLOOR = 1e-30


def row_norms(x: np.ndarray, what: str) -> np.ndarray:
    """L2 norms of rows, rejecting numerically zero vectors."""
    norms = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(norms < _NORM_FLOOR):
        bad = int(np.argmax(norms < _NORM_FLOOR))
        raise NumericError(f"zero-norm {what} vector at index {bad}")
    return norms


def cosine_score(block: np.ndarray, query: np.ndarray) -> float:
    """Cosine similarity of two nonzero vectors, in [-1, 1]."""
    block = np.asarray(block, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    nb = row_norms(block[None, :], "block")[0]
    nq = row_norms(query[None, :], "query")[0]
    return float(block @ query / (nb * nq))


def cosine_matrix(blocks: np.ndarray, queries: np.ndarray):
    """All-pairs cosine scores.

    blocks: (B, d), queries: (R, d) -> scores (R, B) plus cached norms.
    """
    nb = row_norms(blocks, "block")
    nq = row_norms(queries, "query")
    scores = (queries @ blocks.T) / (nq[:, None] * nb[None, :])
    return scores, nq, nb


def clamp_normalize(scores: np.ndarray):
    """Rows of clamped scores to convex weights: (max(s,0)+eps) / rowsum."""
    pos = np.maximum(scores, 0.0) + WEIGHT_EPS
    z = pos.sum(axis=-1)
    return pos / z[..., None], z


def weights_backward(d_weights: np.ndarray, weights: np.ndarray, z: np.ndarray,
                     scores: np.ndarray) -> np.ndarray:
    """Backprop through clamp_normalize: d(loss)/d(scores)."""
    rowdot = np.sum(weights * d_weights, axis=-1, keepdims=True)
    d_pos = (d_weights - rowdot) / z[..., None]
    return d_pos * (scores > 0.0)


def cosine_matrix_backward(d_scores: np.ndarray, blocks: np.ndarray, queries: np.ndarray,
                           scores: np.ndarray, nq: np.ndarray, nb: np.ndarray):
    """Backprop through cosine_matrix: returns (d_queries, d_blocks)."""
    scaled = d_scores / (nq[:, None] * nb[None, :])
    ds_dot = np.sum(d_scores * scores, axis=1)
    d_queries = scaled @ blocks - (ds_dot / (nq * nq))[:, None] * queries
    ds_dot_b = np.sum(d_scores * scores, axis=0)
    d_blocks = scaled.T @ queries - (ds_dot_b / (nb * nb))[:, None] * blocks
    return d_queries, d_blocks
