"""Memory buffer, binary readout weights and readout-weight selection.

The prior for a new batch is the conjugate posterior of the base prior given
the union of the remembered batches. Weights are chosen by maximising

    log p(target | W) - lam * sqrt(2 KL[prior(W) || base])

over binary ``W`` with one of three strategies: bottom-up greedy addition,
independent per-batch ("parallel") scoring with a quantile cutoff, or
exhaustive enumeration for small buffers.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import conjugate as cj

GREEDY_SLACK = 1e-12


class BufferFullError(RuntimeError):
    pass


class MemoryBuffer:
    """Append-only store of past batches, kept as sufficient statistics.

    Batch ids are the insertion positions, so they increase strictly. For the
    scalar families a dense matrix of statistics is maintained alongside the
    objects to allow vectorised candidate scoring.
    """

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self._stats: list = []
        self._matrix: np.ndarray | None = None
        self._family: str | None = None

    def __len__(self) -> int:
        return len(self._stats)

    def __iter__(self) -> Iterator[tuple[int, cj.SufficientStats]]:
        return iter(enumerate(self._stats))

    def __getitem__(self, batch_id: int):
        return self._stats[batch_id]

    @property
    def family(self) -> str | None:
        return self._family

    @property
    def ids(self) -> range:
        return range(len(self._stats))

    def append(self, stats: cj.SufficientStats) -> int:
        if self.capacity is not None and len(self) >= self.capacity:
            raise BufferFullError(f"memory buffer is full ({self.capacity} batches)")
        if self._stats:
            first = self._stats[0]
            if type(stats) is not type(first):
                raise ValueError(f"family mismatch: buffer holds {first.family} statistics")
            if isinstance(stats, cj.RegressionStats) and stats.cross.shape != first.cross.shape:
                raise ValueError("dimension mismatch with buffered regression statistics")
        self._family = stats.family
        self._stats.append(stats)
        if hasattr(stats, "to_vector"):
            row = stats.to_vector()
            n = len(self._stats)
            if self._matrix is None:
                self._matrix = np.empty((16, row.size))
            elif n > self._matrix.shape[0]:
                grown = np.empty((2 * self._matrix.shape[0], row.size))
                grown[: n - 1] = self._matrix[: n - 1]
                self._matrix = grown
            self._matrix[n - 1] = row
        return len(self._stats) - 1

    def matrix(self) -> np.ndarray | None:
        """Statistics vectors, one row per batch (scalar families only)."""
        if self._matrix is None:
            return None
        return self._matrix[: len(self)]

    def merged(self, ids: Iterable[int]):
        """Union of the given batches, summed in id order; ``None`` if empty."""
        total = None
        for i in sorted(ids):
            total = self._stats[i] if total is None else total + self._stats[i]
        return total


@dataclass(frozen=True)
class ReadoutWeights:
    selected: frozenset
    buffer_len: int

    def __post_init__(self):
        object.__setattr__(self, "selected", frozenset(int(i) for i in self.selected))
        bad = [i for i in self.selected if not 0 <= i < self.buffer_len]
        if bad:
            raise ValueError(f"selected ids {sorted(bad)} are outside the buffer")

    @classmethod
    def none(cls, buffer: MemoryBuffer) -> ReadoutWeights:
        return cls(frozenset(), len(buffer))

    @classmethod
    def all(cls, buffer: MemoryBuffer) -> ReadoutWeights:
        return cls(frozenset(buffer.ids), len(buffer))

    @classmethod
    def from_dense(cls, w) -> ReadoutWeights:
        w = np.asarray(w)
        if not np.all((w == 0) | (w == 1)):
            raise ValueError("readout weights must be binary")
        return cls(frozenset(np.flatnonzero(w).tolist()), w.size)

    def dense(self) -> np.ndarray:
        w = np.zeros(self.buffer_len)
        w[sorted(self.selected)] = 1.0
        return w

    def __len__(self) -> int:
        return len(self.selected)


STRATEGIES = ("bottom_up", "parallel", "exhaustive")


@dataclass(frozen=True)
class SelectionConfig:
    lam: float = 0.0
    strategy: str = "bottom_up"
    quantile_q: float = 0.5
    max_exhaustive: int = 15

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 <= self.quantile_q <= 1.0:
            raise ValueError(f"quantile_q must lie in [0, 1], got {self.quantile_q}")


@dataclass(frozen=True)
class Selection:
    weights: ReadoutWeights
    score: float
    candidates: int
    strategy: str
    lam: float

    def to_dict(self) -> dict:
        return {
            "selected": sorted(self.weights.selected),
            "buffer_len": self.weights.buffer_len,
            "score": self.score,
            "lambda": self.lam,
            "strategy": self.strategy,
            "candidates": self.candidates,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# Prior construction and objective
# ---------------------------------------------------------------------------


def _check_family(base, buffer: MemoryBuffer):
    if buffer.family is not None and buffer.family != base.family:
        raise ValueError(f"family mismatch: {base.family} prior, {buffer.family} buffer")


def bam_prior(base: cj.Belief, buffer: MemoryBuffer, weights: ReadoutWeights) -> cj.Belief:
    """Posterior of ``base`` given the union of the selected batches."""
    _check_family(base, buffer)
    if weights.buffer_len > len(buffer):
        raise ValueError("readout weights are longer than the buffer")
    merged = buffer.merged(weights.selected)
    return base if merged is None else base.update(merged)


def _score(prior: cj.Belief, base: cj.Belief, target, lam: float) -> float:
    score = prior.log_marginal(target)
    if lam:
        score -= lam * math.sqrt(2.0 * prior.kl(base))
    return score


def weight_score(base, buffer, weights, target, lam: float) -> float:
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return _score(bam_prior(base, buffer, weights), base, target, lam)


# ---------------------------------------------------------------------------
# Selection strategies
# ---------------------------------------------------------------------------


def select(base, buffer: MemoryBuffer, target, cfg: SelectionConfig = SelectionConfig()) -> Selection:
    _check_family(base, buffer)
    if cfg.strategy == "bottom_up":
        return _bottom_up(base, buffer, target, cfg.lam)
    if cfg.strategy == "parallel":
        return _parallel(base, buffer, target, cfg.lam, cfg.quantile_q)
    return _exhaustive(base, buffer, target, cfg.lam, cfg.max_exhaustive)


def select_bottom_up(base, buffer, target, cfg: SelectionConfig = SelectionConfig()) -> ReadoutWeights:
    return _bottom_up(base, buffer, target, cfg.lam).weights


def select_parallel(base, buffer, target, cfg: SelectionConfig = SelectionConfig()) -> ReadoutWeights:
    return _parallel(base, buffer, target, cfg.lam, cfg.quantile_q).weights


def select_exhaustive(base, buffer, target, cfg: SelectionConfig = SelectionConfig()) -> ReadoutWeights:
    return _exhaustive(base, buffer, target, cfg.lam, cfg.max_exhaustive).weights


def _bottom_up(base, buffer, target, lam) -> Selection:
    n = len(buffer)
    incumbent = _score(base, base, target, lam)
    if n == 0:
        return Selection(ReadoutWeights(frozenset(), 0), incumbent, 1, "bottom_up", lam)

    if _nearest_sum_applicable(base, buffer, target, lam):
        chosen, incumbent, candidates = _bottom_up_nearest_sum(base, buffer, target, incumbent)
        return Selection(ReadoutWeights(chosen, n), incumbent, candidates, "bottom_up", lam)

    selected: list[int] = []
    remaining = np.ones(n, dtype=bool)
    candidates = 1
    matrix = buffer.matrix() if cj.supports_vector_scores(base) else None
    acc_vec = np.zeros(matrix.shape[1]) if matrix is not None else None
    acc_stats = None

    for _ in range(n):
        idx = np.flatnonzero(remaining)
        candidates += idx.size
        if matrix is not None:
            scores = cj.candidate_scores(base, acc_vec, matrix[idx], target, lam)
        else:
            scores = np.array([
                _score(
                    base.update(buffer[i] if acc_stats is None else acc_stats + buffer[i]),
                    base, target, lam,
                )
                for i in idx
            ])
        best = int(np.argmax(scores))  # first maximum -> lowest batch id
        if not scores[best] > incumbent + GREEDY_SLACK:
            break
        i = int(idx[best])
        incumbent = float(scores[best])
        selected.append(i)
        remaining[i] = False
        if matrix is not None:
            acc_vec = acc_vec + matrix[i]
        acc_stats = buffer[i] if acc_stats is None else acc_stats + buffer[i]

    return Selection(ReadoutWeights(frozenset(selected), n), incumbent, candidates, "bottom_up", lam)


def _single_scores(base, buffer, target, lam) -> np.ndarray:
    if cj.supports_vector_scores(base):
        matrix = buffer.matrix()
        return cj.candidate_scores(base, np.zeros(matrix.shape[1]), matrix, target, lam)
    return np.array([_score(base.update(s), base, target, lam) for _, s in buffer])


def _parallel(base, buffer, target, lam, q) -> Selection:
    n = len(buffer)
    base_score = _score(base, base, target, lam)
    if n == 0:
        return Selection(ReadoutWeights(frozenset(), 0), base_score, 1, "parallel", lam)
    scores = _single_scores(base, buffer, target, lam)
    survivors = scores > base_score
    if not survivors.any():
        return Selection(ReadoutWeights(frozenset(), n), base_score, n + 1, "parallel", lam)
    cutoff = np.quantile(scores[survivors], q)  # linear interpolation
    chosen = frozenset(np.flatnonzero(survivors & (scores >= cutoff)).tolist())
    weights = ReadoutWeights(chosen, n)
    return Selection(weights, weight_score(base, buffer, weights, target, lam), n + 1, "parallel", lam)


def _exhaustive(base, buffer, target, lam, max_exhaustive) -> Selection:
    n = len(buffer)
    if n > max_exhaustive:
        raise ValueError(f"buffer of {n} batches exceeds max_exhaustive={max_exhaustive}")
    best_ids: tuple = ()
    best = _score(base, base, target, lam)
    count = 1
    for size in range(1, n + 1):
        for ids in itertools.combinations(range(n), size):
            count += 1
            s = _score(base.update(buffer.merged(ids)), base, target, lam)
            if s > best:
                best, best_ids = s, ids
    return Selection(ReadoutWeights(frozenset(best_ids), n), best, count, "exhaustive", lam)


# ---------------------------------------------------------------------------
# Exact fast path: Gaussian family, lam = 0, every buffered batch has the same n
# ---------------------------------------------------------------------------
#
# With a fixed number of remembered observations the candidate priors share
# one variance and differ only in their mean, and the evidence of the target
# is a downward parabola in that mean. The best addition is therefore the
# unselected batch whose sum lies closest to the sum that would put the prior
# mean on the target's sample mean, so each greedy round is a nearest-neighbour
# query over the sorted batch sums.


def _nearest_sum_applicable(base, buffer, target, lam) -> bool:
    if lam != 0 or not isinstance(base, cj.GaussianBelief) or target.n <= 0:
        return False
    counts = buffer.matrix()[:, 0]
    return len(buffer) > 32 and counts[0] > 0 and bool(np.all(counts == counts[0]))


def _bottom_up_nearest_sum(base, buffer, target, incumbent):
    matrix = buffer.matrix()
    n = matrix.shape[0]
    order = np.lexsort((np.arange(n), matrix[:, 1]))
    from ._nearest import nearest_sum_greedy

    chosen_sorted, score = nearest_sum_greedy(
        matrix[order, 1].copy(),
        order.astype(np.int64),
        float(matrix[0, 0]),
        base.mean,
        base.variance,
        base.noise_variance,
        target.n,
        target.sum_y,
        target.sum_sq,
        incumbent,
        GREEDY_SLACK,
    )
    k = chosen_sorted.size
    # equivalent generic candidate count: n + (n-1) + ... for the rounds run
    rounds = min(k + 1, n)
    candidates = 1 + rounds * n - rounds * (rounds - 1) // 2
    return frozenset(chosen_sorted.tolist()), score, candidates


# ---------------------------------------------------------------------------
# One BAM step
# ---------------------------------------------------------------------------


def bam_step(base, buffer: MemoryBuffer, target, cfg: SelectionConfig = SelectionConfig(),
             weights: ReadoutWeights | None = None, append: bool = True):
    """Select readout weights, condition on ``target`` and store it.

    Passing ``weights`` bypasses selection (used for reductions and ablations).
    Returns ``(weights, posterior, selection)``.
    """
    if weights is None:
        selection = select(base, buffer, target, cfg)
    else:
        selection = Selection(weights, weight_score(base, buffer, weights, target, cfg.lam),
                              1, "fixed", cfg.lam)
    prior = bam_prior(base, buffer, selection.weights)
    post = prior.update(target)
    if append:
        buffer.append(target)
    return selection.weights, post, selection
