"""Dynamic time warping, the expert-corpus threshold and the half-episode gate."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit

from awet.errors import InsufficientCorpusError, RejectedInputError


@njit(cache=True)
def _dtw_kernel(x, y):
    n, m = x.shape[0], y.shape[0]
    dim = x.shape[1]
    prev = np.full(m + 1, np.inf)
    cur = np.full(m + 1, np.inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = np.inf
        for j in range(1, m + 1):
            acc = 0.0
            for k in range(dim):
                diff = x[i - 1, k] - y[j - 1, k]
                acc += diff * diff
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = math.sqrt(acc) + best
        prev, cur = cur, prev
    return prev[m]


def as_feature_seq(x) -> np.ndarray:
    """Coerce to a non-empty ``(length, dim)`` float array; 1-D input is scalar-valued."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise RejectedInputError(f"feature sequence must be a non-empty (length, dim) array, got {arr.shape}")
    return np.ascontiguousarray(arr)


def dtw_distance(x, y) -> float:
    """Classic DTW with Euclidean local cost and unit-weight moves.

    Returns the accumulated cost of the cheapest monotone alignment of ``x``
    and ``y`` (no path-length normalisation).
    """
    x, y = as_feature_seq(x), as_feature_seq(y)
    if x.shape[1] != y.shape[1]:
        raise RejectedInputError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    return float(_dtw_kernel(x, y))


def compute_threshold(corpus: Sequence, distance: Callable = dtw_distance) -> float:
    """Mean DTW distance over the ``(M^2 - M) / 2`` distinct expert pairs."""
    seqs = [as_feature_seq(c) for c in corpus]
    m = len(seqs)
    if m < 2:
        raise InsufficientCorpusError(f"threshold needs at least 2 expert trajectories, got {m}")
    total = 0.0
    for i in range(1, m):
        for j in range(i):
            total += distance(seqs[i], seqs[j])
    return total / ((m * m - m) / 2)


class GateDecision(enum.Enum):
    CONTINUE = "continue"
    TERMINATE = "terminate_and_discard"


@dataclass(frozen=True)
class TerminationMonitor:
    """Expert corpus, its threshold ``s_th`` and the step at which rollouts are gated.

    ``comparison_mode='prefix_match'`` truncates each expert sequence to the
    partial rollout's length before comparing; ``'full_expert'`` compares
    against whole expert trajectories.
    """

    corpus: tuple[np.ndarray, ...]
    s_th: float
    gate_step: int
    comparison_mode: str = "prefix_match"

    @classmethod
    def from_corpus(cls, corpus: Sequence, max_steps: int, comparison_mode: str = "prefix_match") -> "TerminationMonitor":
        if comparison_mode not in ("prefix_match", "full_expert"):
            raise RejectedInputError(f"unknown comparison mode {comparison_mode!r}")
        seqs = tuple(as_feature_seq(c) for c in corpus)
        for s in seqs:
            s.setflags(write=False)
        return cls(seqs, compute_threshold(seqs), math.ceil(max_steps / 2), comparison_mode)

    def min_distance(self, partial) -> float:
        partial = as_feature_seq(partial)
        n = len(partial)
        if self.comparison_mode == "prefix_match":
            return min(dtw_distance(partial, tau[:n]) for tau in self.corpus)
        return min(dtw_distance(partial, tau) for tau in self.corpus)


def gate_rollout(monitor: TerminationMonitor, partial) -> tuple[GateDecision, float]:
    """Decide whether a half-finished rollout is kept.

    Terminates iff the smallest distance to any expert sequence is strictly
    greater than ``monitor.s_th``. Returns the decision and that distance.
    """
    s = monitor.min_distance(partial)
    decision = GateDecision.TERMINATE if s > monitor.s_th else GateDecision.CONTINUE
    return decision, s
