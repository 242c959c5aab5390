"""Random Fourier features over cartpole state-action inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cartpole import wrap_angle

N_FEATURES = 200
BANDWIDTH = 6.0


@dataclass(frozen=True)
class RffMap:
    """phi(z) = sqrt(2/D) cos(Omega z / bandwidth + b) approximating an RBF kernel."""

    frequencies: np.ndarray
    phases: np.ndarray
    bandwidth: float = BANDWIDTH

    def __post_init__(self):
        if self.frequencies.ndim != 2 or self.frequencies.shape[0] != self.phases.shape[0]:
            raise ValueError("frequencies must be (D, d_in) with one phase per row")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    @classmethod
    def draw(cls, rng: np.random.Generator, d_in: int = 5, n_features: int = N_FEATURES,
             bandwidth: float = BANDWIDTH) -> RffMap:
        return cls(rng.standard_normal((n_features, d_in)),
                   rng.uniform(0.0, 2.0 * np.pi, n_features), bandwidth)

    @property
    def n_features(self) -> int:
        return self.phases.shape[0]

    @property
    def d_in(self) -> int:
        return self.frequencies.shape[1]

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        proj = z @ self.frequencies.T / self.bandwidth + self.phases
        return np.sqrt(2.0 / self.n_features) * np.cos(proj)


def model_input(state, action) -> np.ndarray:
    """Concatenate state (angle wrapped) and action along the last axis."""
    state = np.array(state, dtype=float)
    state[..., 2] = wrap_angle(state[..., 2])
    action = np.asarray(action, dtype=float)
    if action.ndim < state.ndim:
        action = action[..., None]
    return np.concatenate([state, action], axis=-1)


def rff_features(state, action, rff: RffMap) -> np.ndarray:
    return rff(model_input(state, action))
