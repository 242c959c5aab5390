"""Trial loop and the episodic and continual adaptation experiments."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .. import conjugate as cj
from ..baselines import RunLengthDistribution, bocd_step
from ..memory import MemoryBuffer, ReadoutWeights, SelectionConfig, bam_step
from ..rng import stream
from .cartpole import EARTH, MARS, NEPTUNE, CartpoleParams, cartpole_step, initial_state, state_difference
from .features import BANDWIDTH, N_FEATURES, RffMap, model_input
from .mppi import LearnedModel, MppiConfig, MppiPlanner

EPISODIC_GRAVITIES = (EARTH, NEPTUNE, MARS, NEPTUNE, MARS, EARTH)
CONTINUAL_GRAVITIES = (EARTH, MARS, EARTH, MARS)


@dataclass(frozen=True)
class TrialBatch:
    """Model inputs ``[x_{j-1}, a_j]`` and targets ``x_j - x_{j-1}``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must have the same length")

    def __len__(self) -> int:
        return len(self.inputs)

    def stats(self, rff: RffMap) -> cj.RegressionStats:
        if len(self) == 0:
            return cj.RegressionStats.zeros(rff.n_features, 4)
        return cj.regression_stats(rff(self.inputs), self.targets)


@dataclass(frozen=True)
class ControlConfig:
    n_steps: int = 200
    trials_per_episode: int = 15
    episodic_gravities: tuple = EPISODIC_GRAVITIES
    continual_gravities: tuple = CONTINUAL_GRAVITIES
    hazard: float = 0.11
    prior_precision: float = 1e-4
    noise_variance: float = 1e-6
    n_features: int = N_FEATURES
    bandwidth: float = BANDWIDTH
    lam: float = 0.0
    mppi: MppiConfig = field(default_factory=MppiConfig)

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        if self.trials_per_episode < 1:
            raise ValueError("trials_per_episode must be positive")
        if not self.episodic_gravities or not self.continual_gravities:
            raise ValueError("gravity schedules must not be empty")

    def base(self) -> cj.RegressionBelief:
        return cj.RegressionBelief.isotropic(4, self.n_features, self.prior_precision,
                                             self.noise_variance)

    def rff(self, seed: int) -> RffMap:
        return RffMap.draw(stream(seed, "control-rff"), 5, self.n_features, self.bandwidth)


def run_trial(model, params: CartpoleParams, x0, n_steps: int, planner: MppiPlanner,
              rng: np.random.Generator):
    """Run MPC from ``x0``; returns the trial batch and the mean cos(angle) score."""
    if n_steps < 1:
        raise ValueError("a trial needs at least one step")
    planner.reset()
    x = np.asarray(x0, dtype=float)
    inputs = np.empty((n_steps, 5))
    targets = np.empty((n_steps, 4))
    reward = np.empty(n_steps)
    for j in range(n_steps):
        u = planner.plan(x, model, rng)
        x_next = cartpole_step(x, params.force_limit * u, params)
        inputs[j] = model_input(x, u)
        targets[j] = state_difference(x_next, x)
        reward[j] = np.cos(x_next[2])
        x = x_next
    return TrialBatch(inputs, targets), float(reward.mean())


def _record(rows, experiment, seed, episode, trial, method, score, optimizations):
    rows.append(dict(experiment=experiment, seed=seed, episode=episode, trial=trial,
                     method=method, score=score, optimizations=optimizations))


EPISODIC_METHODS = ("recursive", "bam", "recursive_replica")


def episodic_experiment(cfg: ControlConfig, seed: int, methods=EPISODIC_METHODS) -> list:
    """Known episode boundaries with a gravity change at each boundary.

    ``recursive`` restarts from the base prior every episode. ``bam`` also
    starts from the base, then after the first trial selects a prior from all
    stored trials using that trial as the target. ``recursive_replica`` is
    recursive Bayes with an independent planner stream (a noise reference) and
    ``bam_empty`` forces the empty selection. All other methods consume the
    same planner noise, so differences come from the beliefs alone.
    """
    base = cfg.base()
    rff = cfg.rff(seed)
    sel_cfg = SelectionConfig(lam=cfg.lam)
    rows = []
    for method in methods:
        if method not in ("recursive", "recursive_replica", "bam", "bam_empty"):
            raise ValueError(f"unknown episodic method {method!r}")
        # compared learners share planner noise; the replica gets its own draws
        role = "replica" if method == "recursive_replica" else "shared"
        rng = stream(seed, "control-planner", "episodic", role)
        planner = MppiPlanner(cfg.mppi)
        buffer = MemoryBuffer()
        optimizations = 0
        for episode, gravity in enumerate(cfg.episodic_gravities):
            params = CartpoleParams(gravity=gravity)
            belief = base
            for trial in range(cfg.trials_per_episode):
                x0 = initial_state(stream(seed, "control-init", "episodic", episode, trial))
                batch, score = run_trial(LearnedModel(belief, rff), params, x0, cfg.n_steps,
                                         planner, rng)
                stats = batch.stats(rff)
                if method.startswith("bam") and trial == 0:
                    forced = ReadoutWeights.none(buffer) if method == "bam_empty" else None
                    _, belief, _ = bam_step(base, buffer, stats, sel_cfg, weights=forced)
                    optimizations += 1
                else:
                    belief = belief.update(stats)
                    if method.startswith("bam"):
                        buffer.append(stats)
                _record(rows, "cartpole-episodic", seed, episode, trial, method, score,
                        optimizations)
    return rows


CONTINUAL_METHODS = ("bocd", "bam", "bam_bocd")


def continual_schedule(cfg: ControlConfig) -> list:
    return [g for g in cfg.continual_gravities for _ in range(cfg.trials_per_episode)]


def continual_experiment(cfg: ControlConfig, seed: int, methods=CONTINUAL_METHODS) -> list:
    """Unannounced gravity changes.

    ``bocd`` plans with the MAP run-length belief. ``bam`` selects a prior
    every trial. ``bam_bocd`` updates recursively and selects only when the
    changepoint detector fires. The episode column holds the gravity segment.
    """
    base = cfg.base()
    rff = cfg.rff(seed)
    sel_cfg = SelectionConfig(lam=cfg.lam)
    schedule = continual_schedule(cfg)
    rows = []
    for method in methods:
        if method not in CONTINUAL_METHODS:
            raise ValueError(f"unknown continual method {method!r}")
        rng = stream(seed, "control-planner", "continual")
        planner = MppiPlanner(cfg.mppi)
        buffer = MemoryBuffer()
        dist = RunLengthDistribution(cfg.hazard)
        belief = base
        optimizations = 0
        for trial, gravity in enumerate(schedule):
            x0 = initial_state(stream(seed, "control-init", "continual", trial))
            batch, score = run_trial(LearnedModel(belief, rff), CartpoleParams(gravity=gravity),
                                     x0, cfg.n_steps, planner, rng)
            stats = batch.stats(rff)
            if method == "bam":
                _, belief, _ = bam_step(base, buffer, stats, sel_cfg)
                optimizations += 1
            else:
                dist, flag, point = bocd_step(dist, stats, base)
                if method == "bocd":
                    belief = point
                elif flag:
                    _, belief, _ = bam_step(base, buffer, stats, sel_cfg)
                    optimizations += 1
                else:
                    belief = belief.update(stats)
                    buffer.append(stats)
            _record(rows, "cartpole-continual", seed, trial // cfg.trials_per_episode, trial,
                    method, score, optimizations)
    return rows


def score_dips(scores, change_trials, pre: int = 5, post: int = 3) -> np.ndarray:
    """Median of the ``pre`` trials before each change minus the mean of trials c+1..c+post."""
    scores = np.asarray(scores, dtype=float)
    out = []
    for c in change_trials:
        if c - pre < 0 or c + post >= scores.size:
            raise ValueError(f"change at trial {c} leaves too few trials around it")
        out.append(np.median(scores[c - pre:c]) - scores[c + 1:c + 1 + post].mean())
    return np.array(out)


CONTROL_COLUMNS = ("experiment", "seed", "episode", "trial", "method", "score", "optimizations")


def write_control_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CONTROL_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "score": repr(float(row["score"]))})
