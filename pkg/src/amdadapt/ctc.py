"""CTC loss, greedy decoding, and the collapse mapping.

The loss is the mean negative log-likelihood of each target transcript
under the usual sum over alignment paths, computed with the forward
recursion on the blank-interleaved label in log space.  The gradient is
exact (forward-backward posteriors), exposed to the autodiff graph as a
single custom node on the log-probabilities.
"""

from __future__ import annotations

import numpy as np

from .alphabet import BLANK
from .autodiff import Tensor
from .errors import ContractError, DivergenceError

NEG_INF = -np.inf


def interleave(labels) -> np.ndarray:
    """Blank-interleaved label sequence: b l1 b l2 ... lN b (length 2N+1)."""
    ext = np.full(2 * len(labels) + 1, BLANK, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels) -> int:
    """Shortest feasible alignment: N plus one blank per adjacent repeat."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _forward_table(log_y: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Log-alpha over (frames, interleaved states)."""
    K = log_y.shape[0]
    S = ext.shape[0]
    alpha = np.full((K, S), NEG_INF)
    alpha[0, 0] = log_y[0, ext[0]]
    if S > 1:
        alpha[0, 1] = log_y[0, ext[1]]
    # skip transition s-2 -> s allowed when the two states differ and s is a label
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    for t in range(1, K):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        merged = np.logaddexp(stay, step)
        merged = np.where(skip_ok, np.logaddexp(merged, skip), merged)
        alpha[t] = merged + log_y[t, ext]
    return alpha


def _backward_table(log_y: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Log-beta: probability of completing the label from state s after frame t."""
    K = log_y.shape[0]
    S = ext.shape[0]
    beta = np.full((K, S), NEG_INF)
    beta[K - 1, S - 1] = 0.0
    if S > 1:
        beta[K - 1, S - 2] = 0.0
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[:-2] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    emit = log_y[:, ext]  # (K, S)
    for t in range(K - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
        merged = np.logaddexp(stay, step)
        merged = np.where(skip_ok, np.logaddexp(merged, skip), merged)
        beta[t] = merged
    return beta


def ctc_loss(log_probs: Tensor, targets, frame_counts) -> Tensor:
    """Mean negative log-likelihood of the targets.

    log_probs: Tensor[B, K, C] of per-frame log-probabilities.
    targets:   per-sample label index lists (blank-free).
    frame_counts: per-sample true frame counts K_i <= K; padded frames
    contribute nothing to the loss or gradient.
    """
    B, K, C = log_probs.shape
    if len(targets) != B or len(frame_counts) != B:
        raise ContractError("ctc_loss: batch size mismatch")

    total = 0.0
    grad = np.zeros((B, K, C))
    for i in range(B):
        k_i = int(frame_counts[i])
        if not 1 <= k_i <= K:
            raise ContractError(f"ctc_loss: frame count {k_i} outside [1, {K}]")
        labels = list(targets[i])
        need = min_frames(labels)
        if need > k_i:
            raise ContractError(
                f"ctc_loss: target of length {len(labels)} needs {need} frames, sample has {k_i}"
            )
        log_y = log_probs.data[i, :k_i]
        ext = interleave(labels)
        alpha = _forward_table(log_y, ext)
        beta = _backward_table(log_y, ext)
        tail = alpha[k_i - 1, -1] if ext.shape[0] == 1 else np.logaddexp(alpha[k_i - 1, -1], alpha[k_i - 1, -2])
        if not np.isfinite(tail):
            raise DivergenceError("ctc_loss: zero-probability target")
        total += -tail
        # d(-log P)/d log y[t,c] = -sum_{s: ext_s = c} exp(alpha + beta - log P)
        gamma = alpha + beta - tail  # (k_i, S)
        with np.errstate(under="ignore"):
            post = np.exp(gamma)
        for c in np.unique(ext):
            grad[i, :k_i, c] -= post[:, ext == c].sum(axis=1)
    total /= B
    grad /= B

    def backward(g):
        return (g * grad,)

    return Tensor._result(np.asarray(total), (log_probs,), backward)


def greedy_decode(probs: np.ndarray, frame_counts) -> list:
    """Per-frame argmax paths; ties resolve to the lowest class index."""
    paths = []
    for i in range(probs.shape[0]):
        k_i = int(frame_counts[i])
        paths.append(probs[i, :k_i].argmax(axis=1).tolist())
    return paths


def collapse(path) -> list:
    """Merge maximal runs, then drop blanks."""
    out = []
    prev = None
    for sym in path:
        if sym != prev and sym != BLANK:
            out.append(int(sym))
        prev = sym
    return out


def decode_batch(probs: np.ndarray, frame_counts, alphabet) -> list:
    """Greedy decode straight to text."""
    return [alphabet.decode(collapse(p)) for p in greedy_decode(probs, frame_counts)]
