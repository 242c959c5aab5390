"""Comparison learners: recursive Bayes, forgetting, power priors, unlearning, BOCD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import conjugate as cj
from .memory import MemoryBuffer, ReadoutWeights, bam_prior


def recursive_step(state: cj.Belief, batch: cj.SufficientStats) -> cj.Belief:
    return state.update(batch)


@dataclass(frozen=True)
class ForgettingState:
    """Geometrically decayed statistics of everything seen so far."""

    alpha: float
    decayed_stats: cj.SufficientStats | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def forgetting_step(state: ForgettingState, batch, base: cj.Belief):
    if state.decayed_stats is None:
        stats = batch
    else:
        stats = state.decayed_stats.scale(state.alpha) + batch
    return ForgettingState(state.alpha, stats), base.update(stats)


def power_prior_step(buffer: MemoryBuffer, batch, base: cj.Belief, alpha: float) -> cj.Belief:
    """Posterior with every buffered batch tempered by the same ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    past = buffer.merged(buffer.ids)
    stats = batch if past is None else past.scale(alpha) + batch
    return base.update(stats)


def unlearn(buffer: MemoryBuffer, forget_ids, base: cj.Belief) -> cj.Belief:
    forget = set(forget_ids)
    unknown = forget.difference(buffer.ids)
    if unknown:
        raise ValueError(f"cannot forget unknown batch ids {sorted(unknown)}")
    keep = frozenset(i for i in buffer.ids if i not in forget)
    return bam_prior(base, buffer, ReadoutWeights(keep, len(buffer)))


# ---------------------------------------------------------------------------
# Bayesian online changepoint detection
# ---------------------------------------------------------------------------


@dataclass
class RunLengthDistribution:
    """Posterior over run lengths with the segment statistics of each run length.

    Run length ``r`` means the current segment holds the ``r + 1`` most recent
    batches, so after a step the belief at run length 0 is the base prior
    updated with the newest batch only. For scalar families ``segments`` is a
    matrix of statistics vectors and beliefs are built on demand; for
    regression it is a list and beliefs are kept alongside.
    """

    hazard: float
    prune_threshold: float = 1e-8
    run_lengths: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    log_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    segments: object = None
    base: cj.Belief | None = None
    map_run_length: int | None = None
    _beliefs: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.hazard <= 1.0:
            raise ValueError(f"hazard must lie in (0, 1], got {self.hazard}")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise ValueError("prune_threshold must lie in [0, 1)")

    @classmethod
    def from_timescale(cls, timescale: float, **kwargs) -> RunLengthDistribution:
        return cls(hazard=1.0 / timescale, **kwargs)

    def __len__(self) -> int:
        return int(self.run_lengths.size)

    @property
    def weights(self) -> dict:
        return dict(zip(self.run_lengths.tolist(), np.exp(self.log_weights).tolist()))

    def segment_stats(self, i: int):
        if isinstance(self.segments, np.ndarray):
            return self._stats_type(*self.segments[i])
        return self.segments[i]

    @property
    def _stats_type(self):
        return self.base.stats_type

    def belief_at(self, i: int):
        if self._beliefs is not None:
            return self._beliefs[i]
        return self.base.update(self.segment_stats(i))

    @property
    def beliefs(self) -> list:
        if self._beliefs is None:
            self._beliefs = [self.belief_at(i) for i in range(len(self))]
        return self._beliefs

    def map_belief(self):
        return self.belief_at(int(np.argmax(self.log_weights)))

    def mixture_mean(self) -> float:
        """Run-length-averaged posterior mean (scalar families)."""
        w = np.exp(self.log_weights)
        return float(sum(wi * self.belief_at(i).mean for i, wi in enumerate(w)))

    def sample_belief(self, rng: np.random.Generator):
        w = np.exp(self.log_weights)
        return self.belief_at(int(rng.choice(w.size, p=w / w.sum())))


def bocd_step(dist: RunLengthDistribution, batch, base: cj.Belief):
    """Advance the run-length posterior by one batch.

    Returns ``(new_dist, changepoint_flag, point_belief)``. The flag is raised
    when the MAP run length falls below its previous value minus one.
    """
    log_h = math.log(dist.hazard)
    log_1mh = math.log1p(-dist.hazard) if dist.hazard < 1 else -math.inf
    vector = cj.supports_vector_scores(base)

    if len(dist):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                if vector:
                    zero = np.zeros(dist.segments.shape[1])
                    pred = cj.candidate_scores(base, zero, dist.segments, batch, 0.0)
                else:
                    pred = np.array([b.log_marginal(batch) for b in dist.beliefs])
                # a new segment draws fresh parameters from the base prior
                cp_pred = base.log_marginal(batch)
        except OverflowError as exc:
            raise cj.NumericalError("predictive evaluation overflowed") from exc
        if np.isnan(pred).any():
            raise cj.NumericalError("non-finite run-length predictive")
        growth = dist.log_weights + log_1mh + pred
        cp = log_h + cp_pred + logsumexp(dist.log_weights)
        log_w = np.concatenate([[cp], growth])
        run_lengths = np.concatenate([[0], dist.run_lengths + 1])
    else:
        log_w = np.zeros(1)
        run_lengths = np.zeros(1, dtype=int)

    if not np.isfinite(log_w).any():
        raise cj.NumericalError("every run-length hypothesis has zero probability")
    log_w = log_w - logsumexp(log_w)
    keep = np.isfinite(log_w) & (np.exp(log_w) >= dist.prune_threshold)
    keep[np.argmax(log_w)] = True
    idx = np.flatnonzero(keep)
    log_w = log_w[idx] - logsumexp(log_w[idx])
    run_lengths = run_lengths[idx]

    if vector:
        b = batch.to_vector()
        old = dist.segments if len(dist) else np.zeros((0, b.size))
        segments = np.vstack([b[None, :], old + b])[idx]
        beliefs = None
    else:
        old = dist.segments if len(dist) else []
        segments = [batch if j == 0 else old[j - 1] + batch for j in idx]
        beliefs = [base.update(batch) if j == 0 else dist.beliefs[j - 1].update(batch)
                   for j in idx]

    best = int(np.argmax(log_w))
    new_map = int(run_lengths[best])
    flag = dist.map_run_length is not None and new_map < dist.map_run_length - 1
    new = RunLengthDistribution(dist.hazard, dist.prune_threshold, run_lengths, log_w,
                                segments, base, new_map, beliefs)
    return new, flag, new.belief_at(best)
