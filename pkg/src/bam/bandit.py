"""Switching-arm Gaussian bandit and the agents compared on it."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import conjugate as cj
from .baselines import ForgettingState, RunLengthDistribution, bocd_step, forgetting_step
from .memory import MemoryBuffer, SelectionConfig, bam_step
from .rng import stream

NOISE_SD = 0.25


@dataclass(frozen=True)
class ArmProcess:
    """An arm whose mean flips between two levels at the given times."""

    high_value: float
    low_value: float
    switch_times: tuple = ()
    start_high: bool = True
    noise_sd: float = NOISE_SD

    def __post_init__(self):
        times = tuple(int(t) for t in self.switch_times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("switch_times must be strictly increasing")
        object.__setattr__(self, "switch_times", times)

    def mean_at(self, t: int) -> float:
        flips = int(np.searchsorted(self.switch_times, t, side="right"))
        high = self.start_high ^ (flips % 2 == 1)
        return self.high_value if high else self.low_value

    def means(self, horizon: int) -> np.ndarray:
        t = np.arange(horizon)
        flips = np.searchsorted(np.asarray(self.switch_times, dtype=int), t, side="right")
        high = np.logical_xor(self.start_high, flips % 2 == 1)
        return np.where(high, self.high_value, self.low_value)


@dataclass(frozen=True)
class BanditRunConfig:
    n_arms: int = 10
    horizon: int = 5000
    switch_rate: float = 0.016
    n_configs: int = 5
    seeds: tuple = (0, 1, 2, 3, 4)
    noise_sd: float = NOISE_SD
    min_gap: float = 0.2

    def __post_init__(self):
        if self.n_arms < 2:
            raise ValueError("n_arms must be at least 2")
        if not 0.0 < self.switch_rate < 1.0:
            raise ValueError("switch_rate must lie in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if not self.seeds:
            raise ValueError("seeds must not be empty")


class BanditEnv:
    """K independent switching arms with Gaussian reward noise.

    Noise is pre-drawn per (arm, step) from the supplied stream so that every
    agent facing the same environment and seed sees the same draws.
    """

    def __init__(self, arms, horizon: int, noise_rng: np.random.Generator | None = None):
        self.arms = list(arms)
        self.horizon = int(horizon)
        self.means = np.stack([a.means(self.horizon) for a in self.arms])
        sd = np.array([a.noise_sd for a in self.arms])[:, None]
        if noise_rng is None:
            self.noise = np.zeros_like(self.means)
        else:
            self.noise = sd * noise_rng.standard_normal(self.means.shape)

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    @classmethod
    def generate(cls, n_arms, horizon, switch_rate, rng, noise_sd=NOISE_SD, min_gap=0.2,
                 noise_rng=None) -> BanditEnv:
        arms = []
        for _ in range(n_arms):
            while True:
                a, b = rng.uniform(0.0, 1.0, size=2)
                if abs(a - b) >= min_gap:
                    break
            # geometric gaps between switches
            times, t = [], 0
            while True:
                t += int(rng.geometric(switch_rate))
                if t >= horizon:
                    break
                times.append(t)
            arms.append(ArmProcess(max(a, b), min(a, b), tuple(times), bool(rng.integers(2)), noise_sd))
        return cls(arms, horizon, noise_rng)

    def with_noise(self, noise_rng) -> BanditEnv:
        return BanditEnv(self.arms, self.horizon, noise_rng)

    def step(self, arm: int, t: int) -> float:
        if not 0 <= arm < self.n_arms:
            raise IndexError(f"arm index {arm} outside [0, {self.n_arms})")
        return float(self.means[arm, t] + self.noise[arm, t])


def env_step(env: BanditEnv, arm_index: int, t: int) -> float:
    return env.step(arm_index, t)


def ucb_confidence(t: int) -> float:
    return 1.0 + t * math.log(t) ** 2


def ucb_select(counts, means, t: int) -> int:
    counts = np.asarray(counts, dtype=float)
    unpulled = np.flatnonzero(counts == 0)
    if unpulled.size:
        return int(unpulled[0])
    bonus = np.sqrt(2.0 * math.log(ucb_confidence(t)) / counts)
    return int(np.argmax(np.asarray(means) + bonus))


def thompson_select(beliefs, rng: np.random.Generator) -> int:
    draws = np.array([b.sample(rng) for b in beliefs])
    return int(np.argmax(draws))


# ---------------------------------------------------------------------------
# Agents. ``select(t, rng)`` uses 1-based steps; ``observe`` records a reward.
# ---------------------------------------------------------------------------


class UcbAgent:
    name = "ucb"

    def __init__(self, n_arms: int):
        self.counts = np.zeros(n_arms)
        self.sums = np.zeros(n_arms)

    def _means(self):
        return np.divide(self.sums, self.counts, out=np.zeros_like(self.sums), where=self.counts > 0)

    def select(self, t, rng):
        return ucb_select(self.counts, self._means(), t)

    def observe(self, arm, reward):
        self.counts[arm] += 1
        self.sums[arm] += reward


class ThompsonAgent:
    """Thompson sampling with recursive Bayes per arm."""

    name = "thompson"

    def __init__(self, n_arms: int, base: cj.GaussianBelief):
        self.beliefs = [base] * n_arms

    def select(self, t, rng):
        return thompson_select(self.beliefs, rng)

    def observe(self, arm, reward):
        self.beliefs[arm] = self.beliefs[arm].update(cj.gaussian_stats([reward]))


class ForgettingThompsonAgent(ThompsonAgent):
    """Thompson sampling on exponentially forgotten statistics (decay per pull)."""

    name = "bf_thompson"

    def __init__(self, n_arms, base, alpha=0.8):
        super().__init__(n_arms, base)
        self.base = base
        self.states = [ForgettingState(alpha) for _ in range(n_arms)]

    def observe(self, arm, reward):
        self.states[arm], self.beliefs[arm] = forgetting_step(
            self.states[arm], cj.gaussian_stats([reward]), self.base
        )


class BocdThompsonAgent:
    """Per-arm BOCD; Thompson draws a run length, then a mean from its belief."""

    name = "bocd_thompson"

    def __init__(self, n_arms, base, hazard=0.016):
        self.base = base
        self.dists = [RunLengthDistribution(hazard) for _ in range(n_arms)]

    def select(self, t, rng):
        draws = []
        for d in self.dists:
            belief = d.sample_belief(rng) if len(d) else self.base
            draws.append(belief.sample(rng))
        return int(np.argmax(draws))

    def observe(self, arm, reward):
        self.dists[arm], _, _ = bocd_step(self.dists[arm], cj.gaussian_stats([reward]), self.base)


@dataclass
class UcbamArmState:
    belief: cj.GaussianBelief
    memory: MemoryBuffer = field(default_factory=MemoryBuffer)
    known: bool = False
    pull_count: int = 0


class UcbamAgent:
    """UCB exploration with BAM beliefs used for Thompson exploitation.

    After each pull the agent compares the predictive density of the observed
    value under the arm's current belief with that under the base prior; while
    the arm belief explains observations better, the next choice is a Thompson
    draw over all arm beliefs, otherwise the UCB index decides.
    """

    name = "ucbam"

    def __init__(self, n_arms, base, cfg: SelectionConfig = SelectionConfig(), force_unknown=False):
        self.base = base
        self.cfg = cfg
        self.force_unknown = force_unknown
        self.states = [UcbamArmState(base) for _ in range(n_arms)]
        self.known = False
        self.ucb = UcbAgent(n_arms)

    def select(self, t, rng):
        if self.known:
            return thompson_select([s.belief for s in self.states], rng)
        return self.ucb.select(t, rng)

    def observe(self, arm, reward):
        state = self.states[arm]
        known = self.base.predictive_logpdf(reward) < state.belief.predictive_logpdf(reward)
        self.known = state.known = known and not self.force_unknown
        _, state.belief, _ = bam_step(self.base, state.memory, cj.gaussian_stats([reward]), self.cfg)
        state.pull_count += 1
        self.ucb.observe(arm, reward)


def ucbam_step(agent: UcbamAgent, env: BanditEnv, t: int, rng) -> int:
    """One interaction at 1-based step ``t``; returns the pulled arm."""
    arm = agent.select(t, rng)
    agent.observe(arm, env.step(arm, t - 1))
    return arm


AGENTS = ("thompson", "bf_thompson", "bocd_thompson", "ucb", "ucbam")


def default_base() -> cj.GaussianBelief:
    return cj.GaussianBelief(mean=0.0, variance=0.02, noise_variance=NOISE_SD**2)


def make_agent(name, n_arms, base=None, alpha=0.8, hazard=0.016, cfg=SelectionConfig()):
    base = default_base() if base is None else base
    if name == "thompson":
        return ThompsonAgent(n_arms, base)
    if name == "bf_thompson":
        return ForgettingThompsonAgent(n_arms, base, alpha)
    if name == "bocd_thompson":
        return BocdThompsonAgent(n_arms, base, hazard)
    if name == "ucb":
        return UcbAgent(n_arms)
    if name == "ucbam":
        return UcbamAgent(n_arms, base, cfg)
    raise ValueError(f"unknown agent {name!r}; expected one of {AGENTS}")


def run_agent(env: BanditEnv, agent, rng: np.random.Generator) -> np.ndarray:
    chosen = np.empty(env.horizon, dtype=int)
    for t in range(1, env.horizon + 1):
        arm = agent.select(t, rng)
        agent.observe(arm, env.step(arm, t - 1))
        chosen[t - 1] = arm
    return chosen


def cumulative_regret(chosen_arms, env: BanditEnv) -> np.ndarray:
    chosen_arms = np.asarray(chosen_arms, dtype=int)
    steps = np.arange(chosen_arms.size)
    gap = env.means[:, steps].max(axis=0) - env.means[chosen_arms, steps]
    return np.cumsum(gap)


def run_bandit_experiment(cfg: BanditRunConfig, agents=AGENTS, master_seed: int = 0, **agent_kwargs):
    """Regret curves keyed by ``(config_id, seed, agent)``."""
    curves = {}
    for config_id in range(cfg.n_configs):
        env0 = BanditEnv.generate(
            cfg.n_arms, cfg.horizon, cfg.switch_rate,
            stream(master_seed, "bandit-config", cfg.n_arms, config_id),
            cfg.noise_sd, cfg.min_gap,
        )
        for seed in cfg.seeds:
            env = env0.with_noise(stream(master_seed, "bandit-noise", cfg.n_arms, config_id, seed))
            for name in agents:
                agent = make_agent(name, cfg.n_arms, **agent_kwargs)
                rng = stream(master_seed, "bandit-agent", name, cfg.n_arms, config_id, seed)
                curves[(config_id, seed, name)] = cumulative_regret(run_agent(env, agent, rng), env)
    return curves


REGRET_COLUMNS = ("config_id", "seed", "t", "agent", "regret")


def write_regret_csv(curves, path, every: int = 1):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REGRET_COLUMNS)
        for (config_id, seed, agent), curve in sorted(curves.items()):
            for t in range(0, curve.size, every):
                writer.writerow((config_id, seed, t + 1, agent, repr(float(curve[t]))))
