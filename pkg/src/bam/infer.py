"""Tracking a drifting Binomial rate with the different learners."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import conjugate as cj
from .baselines import ForgettingState, RunLengthDistribution, bocd_step, forgetting_step
from .memory import MemoryBuffer, SelectionConfig, bam_step
from .rng import stream


def sinusoid_rate(t, amplitude: float = 0.3, offset: float = 0.5, period: float = 100.0):
    return amplitude * np.sin(2.0 * np.pi * np.asarray(t) / period) + offset


@dataclass(frozen=True)
class InferConfig:
    steps: int = 500
    trials: int = 15
    seeds: tuple = tuple(range(20))
    bf_alpha: float = 0.8
    bocd_hazard: float = 0.01
    bam_lams: tuple = (0.0, 0.1)
    bam_strategy: str = "bottom_up"
    bam_quantile_q: float = 0.5

    def __post_init__(self):
        if self.steps < 1 or self.trials < 1:
            raise ValueError("steps and trials must be positive")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if not 0.0 <= self.bf_alpha <= 1.0:
            raise ValueError("bf_alpha must lie in [0, 1]")
        if not 0.0 < self.bocd_hazard <= 1.0:
            raise ValueError("bocd_hazard must lie in (0, 1]")

    def methods(self) -> list:
        return ["recursive", "bocd", "bf"] + [bam_name(lam) for lam in self.bam_lams]


def bam_name(lam: float) -> str:
    return f"bam_lam{lam:g}"


def simulate_counts(cfg: InferConfig, master_seed: int, replicate: int):
    rng = stream(master_seed, "infer-data", replicate)
    theta = sinusoid_rate(np.arange(cfg.steps))
    return theta, rng.binomial(cfg.trials, theta)


def run_infer_replicate(cfg: InferConfig, master_seed: int, replicate: int) -> list:
    """Rows ``(method, seed, t, theta, mean, mixture_mean, log_variance, changepoint)``.

    ``mean`` is the point estimate; for BOCD it comes from the MAP run length
    and ``mixture_mean`` averages over run lengths.
    """
    theta, counts = simulate_counts(cfg, master_seed, replicate)
    base = cj.BetaBelief(1.0, 1.0)
    batches = [cj.binomial_stats(k, cfg.trials) for k in counts]
    rows = []

    def log(method, t, belief, flag=False, mixture_mean=None):
        mean = float(belief.mean)
        rows.append(dict(method=method, seed=replicate, t=t, theta=float(theta[t]), mean=mean,
                         mixture_mean=mean if mixture_mean is None else mixture_mean,
                         log_variance=math.log(belief.variance()), changepoint=int(flag)))

    belief = base
    for t, b in enumerate(batches):
        belief = belief.update(b)
        log("recursive", t, belief)

    dist = RunLengthDistribution(cfg.bocd_hazard)
    for t, b in enumerate(batches):
        dist, flag, point = bocd_step(dist, b, base)
        log("bocd", t, point, flag, dist.mixture_mean())

    state = ForgettingState(cfg.bf_alpha)
    for t, b in enumerate(batches):
        state, belief = forgetting_step(state, b, base)
        log("bf", t, belief)

    for lam in cfg.bam_lams:
        sel = SelectionConfig(lam=lam, strategy=cfg.bam_strategy, quantile_q=cfg.bam_quantile_q)
        buffer = MemoryBuffer()
        for t, b in enumerate(batches):
            _, belief, _ = bam_step(base, buffer, b, sel)
            log(bam_name(lam), t, belief)
    return rows


def run_infer(cfg: InferConfig, master_seed: int = 0) -> list:
    rows = []
    for replicate in cfg.seeds:
        rows.extend(run_infer_replicate(cfg, master_seed, replicate))
    return rows


def _series(rows, method, field):
    out = {}
    for r in rows:
        if r["method"] == method:
            out.setdefault(r["seed"], []).append(r[field])
    return {k: np.asarray(v) for k, v in out.items()}


def tracking_error(rows, method) -> dict:
    """Time-averaged |posterior mean - theta| per seed."""
    means, theta = _series(rows, method, "mean"), _series(rows, method, "theta")
    return {s: float(np.mean(np.abs(means[s] - theta[s]))) for s in means}


def final_log_variance(rows, method) -> dict:
    return {s: float(v[-1]) for s, v in _series(rows, method, "log_variance").items()}


def post_changepoint_variances(rows, bam_method: str, min_t: int = 100) -> tuple:
    """Log variances of BAM and BOCD at steps where BOCD just flagged a change.

    Only steps from ``min_t`` on count, so the rate has already visited the
    same region once.
    """
    flags = _series(rows, "bocd", "changepoint")
    bocd_v = _series(rows, "bocd", "log_variance")
    bam_v = _series(rows, bam_method, "log_variance")
    a, b = [], []
    for s, f in flags.items():
        idx = np.flatnonzero(f[min_t:]) + min_t
        a.extend(bam_v[s][idx])
        b.extend(bocd_v[s][idx])
    return np.asarray(a), np.asarray(b)


def step_changes(rows, method) -> np.ndarray:
    return np.concatenate([np.abs(np.diff(v)) for v in _series(rows, method, "mean").values()])
