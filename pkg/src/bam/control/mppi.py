"""Model predictive path integral control with sampled dynamics models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..conjugate import NumericalError, RegressionBelief
from .cartpole import CartpoleParams, _step
from .features import RffMap


@dataclass(frozen=True)
class MppiConfig:
    horizon: int = 50
    num_samples: int = 32
    sampling_sd: float = math.sqrt(0.4)
    temperature: float = 0.5
    noise_variance: float = 1e-6

    def __post_init__(self):
        if self.horizon < 1 or self.num_samples < 1:
            raise ValueError("horizon and num_samples must be positive")
        for name in ("sampling_sd", "temperature", "noise_variance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@njit(cache=True, fastmath=True)
def _rollout_learned(x0, actions, models, omega, phases, bandwidth, noise):
    # state and input sizes are fixed (4 and 5), so the projections are unrolled
    n_samples, horizon = actions.shape
    n_feat = phases.shape[0]
    scale = math.sqrt(2.0 / n_feat)
    w = omega / bandwidth
    costs = np.zeros(n_samples)
    arg = np.empty(n_feat)
    phi = np.empty(n_feat)
    for s in range(n_samples):
        x0_, x1, x2, x3 = x0[0], x0[1], x0[2], x0[3]
        for k in range(horizon):
            theta = math.pi - (math.pi - x2) % (2.0 * math.pi)
            u = actions[s, k]
            for j in range(n_feat):
                arg[j] = (phases[j] + w[j, 0] * x0_ + w[j, 1] * x1 + w[j, 2] * theta
                          + w[j, 3] * x3 + w[j, 4] * u)
            for j in range(n_feat):
                phi[j] = math.cos(arg[j])
            d0 = d1 = d2 = d3 = 0.0
            for j in range(n_feat):
                p = phi[j]
                d0 += models[s, 0, j] * p
                d1 += models[s, 1, j] * p
                d2 += models[s, 2, j] * p
                d3 += models[s, 3, j] * p
            x0_ += scale * d0 + noise[s, k, 0]
            x1 += scale * d1 + noise[s, k, 1]
            x2 += scale * d2 + noise[s, k, 2]
            x3 += scale * d3 + noise[s, k, 3]
            costs[s] -= math.cos(x2)
    return costs


@njit(cache=True)
def _rollout_true(x0, actions, params):
    n_samples, horizon = actions.shape
    costs = np.zeros(n_samples)
    for s in range(n_samples):
        x = x0.copy()
        for k in range(horizon):
            x = _step(x, params[5] * actions[s, k], params)
            costs[s] -= math.cos(x[2])
    return costs


class TrueModel:
    """Planner model with access to the real dynamics."""

    def __init__(self, params: CartpoleParams):
        self.params = params

    def rollout_costs(self, x0, actions, cfg: MppiConfig, rng) -> np.ndarray:
        return _rollout_true(np.asarray(x0, dtype=float), actions, self.params.as_array())


class LearnedModel:
    """Residual dynamics x' = x + M phi(x, u) + eps with M drawn per trajectory."""

    def __init__(self, belief: RegressionBelief, rff: RffMap):
        if belief.d_feat != rff.n_features or belief.d_out != 4 or rff.d_in != 5:
            raise ValueError("belief must map 5-input RFF features to 4 state differences")
        self.belief = belief
        self.rff = rff

    def rollout_costs(self, x0, actions, cfg: MppiConfig, rng) -> np.ndarray:
        n_samples, horizon = actions.shape
        models = np.ascontiguousarray(self.belief.sample(rng, n_samples))
        noise = math.sqrt(cfg.noise_variance) * rng.standard_normal((n_samples, horizon, 4))
        return _rollout_learned(np.asarray(x0, dtype=float), actions, models,
                                self.rff.frequencies, self.rff.phases, self.rff.bandwidth, noise)


def mppi_weights(costs, temperature: float) -> np.ndarray:
    costs = np.asarray(costs, dtype=float)
    if not np.all(np.isfinite(costs)):
        raise NumericalError("non-finite rollout cost")
    logits = -(costs - costs.min()) / temperature
    w = np.exp(logits)
    return w / w.sum()


class MppiPlanner:
    """Receding-horizon planner over normalized actions in [-1, 1]."""

    def __init__(self, cfg: MppiConfig = MppiConfig()):
        self.cfg = cfg
        self.nominal = np.zeros(cfg.horizon)

    def reset(self):
        self.nominal = np.zeros(self.cfg.horizon)

    def plan(self, state, model, rng: np.random.Generator) -> float:
        cfg = self.cfg
        eps = cfg.sampling_sd * rng.standard_normal((cfg.num_samples, cfg.horizon))
        actions = np.clip(self.nominal + eps, -1.0, 1.0)
        costs = model.rollout_costs(state, actions, cfg, rng)
        w = mppi_weights(costs, cfg.temperature)
        self.nominal = np.clip(self.nominal + w @ (actions - self.nominal), -1.0, 1.0)
        action = float(self.nominal[0])
        # warm start: shift by one step and zero-fill the tail
        self.nominal = np.concatenate([self.nominal[1:], [0.0]])
        return action


def mppi_plan(model, state, cfg: MppiConfig, rng, planner: MppiPlanner | None = None) -> float:
    planner = MppiPlanner(cfg) if planner is None else planner
    return planner.plan(state, model, rng)
