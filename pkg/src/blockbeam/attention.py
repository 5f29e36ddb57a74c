"""Monotonic selection, expected alignment, and chunkwise windows.

At inference the boundary decision is hard: the first frame whose
selection probability reaches the threshold stops the scan. The soft
expected-alignment recursion exists for analysis and for scoring-time
diagnostics; both live here so they share one definition of the
selection probability semantics.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from blockbeam.core import DecodeError, EncoderBlock

# A (num_steps x num_frames) matrix of per-step selection probabilities.
SelectionProbs = np.ndarray
# A (num_steps x num_frames) matrix of expected alignment mass.
AlignmentDist = np.ndarray


def expected_alignment(probs: SelectionProbs, emit_scale: float = 0.0) -> AlignmentDist:
    """Expected alignment mass for every (output step, frame) pair.

    Implements the marginal recursion

        a[i, j] = p[i, j] * ((1 - p[i, j-1]) * a[i, j-1] / p[i, j-1]
                             + a[i-1, j])

    in its division-free form: with q[i, j] = a[i, j] / p[i, j],

        q[i, j] = (1 - p[i, j-1]) * q[i, j-1] + a[i-1, j]

    which never divides by a vanishing probability. Attention starts
    just before frame 0, so the virtual previous-step alignment is a
    one-hot at frame 0.

    ``emit_scale`` discounts every selection probability to
    ``(1 - emit_scale) * p`` before the recursion, shifting alignment
    mass to later frames (a training-side regularizer; exposed here so
    scoring-time diagnostics can reproduce it).
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise DecodeError("selection probabilities must be 2-D (steps x frames)")
    if not 0.0 <= emit_scale < 1.0:
        raise DecodeError("emit_scale must lie in [0, 1)")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise DecodeError("selection probabilities must lie in [0, 1]")
    p = (1.0 - emit_scale) * p
    num_steps, num_frames = p.shape
    alpha = np.zeros((num_steps, num_frames), dtype=np.float64)
    if num_frames == 0:
        return alpha
    prev = np.zeros(num_frames, dtype=np.float64)
    prev[0] = 1.0
    for i in range(num_steps):
        q = prev[0]
        alpha[i, 0] = p[i, 0] * q
        for j in range(1, num_frames):
            q = (1.0 - p[i, j - 1]) * q + prev[j]
            alpha[i, j] = p[i, j] * q
        prev = alpha[i]
    return alpha


def softmax(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return np.zeros_like(x)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def chunk_attention_weights(energies: np.ndarray) -> np.ndarray:
    """Attention weights over a chunk window from raw energies."""
    e = np.asarray(energies, dtype=np.float64)
    if e.ndim != 1:
        raise DecodeError("chunk energies must be 1-D")
    return softmax(e)


def chunk_context(window: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Context vector: weighted sum of window frames.

    An empty window yields the all-zero context, which is what a
    hypothesis that found no boundary attends to when it completes.
    """
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2:
        raise DecodeError("chunk window must be 2-D (frames x dims)")
    if w.shape[0] == 0:
        return np.zeros(w.shape[1], dtype=np.float64)
    a = np.asarray(weights, dtype=np.float64)
    if a.shape != (w.shape[0],):
        raise DecodeError("weights must have one entry per window frame")
    return a @ w


def chunk_window(block: EncoderBlock, head: int, chunk_width: int) -> np.ndarray:
    """Frames attended from a boundary at global encoder frame ``head``.

    The window covers the ``chunk_width`` frames ending at ``head``,
    clipped at the start of available history (the retained tail of the
    previous block, or the block start right after a reset). The result
    may therefore hold fewer than ``chunk_width`` rows.
    """
    if chunk_width < 1:
        raise DecodeError("chunk_width must be positive")
    history_start = block.global_offset - block.tail_len
    if not history_start <= head <= block.last_frame:
        raise DecodeError(
            f"head {head} outside attendable range [{history_start}, {block.last_frame}]"
        )
    start = max(head - chunk_width + 1, history_start)
    rows = [block.frame(g) for g in range(start, head + 1)]
    return np.stack(rows, axis=0)


def empty_window(dim: int) -> np.ndarray:
    """The zero-frame window used when no boundary was found."""
    return np.zeros((0, dim), dtype=np.float64)


def detect_boundary(selection_prob: float, threshold: float = 0.5) -> bool:
    """Hard boundary decision for a single frame: stop when p >= threshold.

    Ties stop the scan; a probability exactly at the threshold is a
    boundary.
    """
    if not 0.0 <= selection_prob <= 1.0:
        raise DecodeError(f"selection probability {selection_prob} outside [0, 1]")
    return selection_prob >= threshold


def scan_for_boundary(
    prob_at: Callable[[int], float],
    start: int,
    stop: int,
    threshold: float,
) -> tuple[int | None, int]:
    """Find the first boundary in global frames [start, stop].

    Probes ``prob_at`` frame by frame; the first frame whose probability
    passes ``detect_boundary`` ends the scan. Returns the boundary frame
    (or None when the range is exhausted) and the number of frames
    probed, which the caller charges to its work counters.
    """
    probed = 0
    for j in range(start, stop + 1):
        probed += 1
        if detect_boundary(prob_at(j), threshold):
            return j, probed
    return None, probed
