"""Analytical cartpole (Barto, Sutton and Anderson) with angle 0 pointing up."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..conjugate import NumericalError

EARTH, MARS, NEPTUNE = 9.81, 3.72, 11.15


@dataclass(frozen=True)
class CartpoleParams:
    gravity: float = EARTH
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    dt: float = 0.02
    force_limit: float = 10.0

    def __post_init__(self):
        for name in ("gravity", "cart_mass", "pole_mass", "pole_half_length", "dt", "force_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.gravity, self.cart_mass, self.pole_mass,
                         self.pole_half_length, self.dt, self.force_limit])


@dataclass(frozen=True)
class CartpoleState:
    cart_position: float
    cart_velocity: float
    pole_angle: float
    pole_angular_velocity: float

    def to_array(self) -> np.ndarray:
        return np.array([self.cart_position, self.cart_velocity,
                         self.pole_angle, self.pole_angular_velocity])

    @classmethod
    def from_array(cls, x) -> CartpoleState:
        return cls(*(float(v) for v in x))


STATE_DIM = 4
ACTION_DIM = 1


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    out = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    return float(out) if np.ndim(out) == 0 else out


def state_difference(x_next, x_prev) -> np.ndarray:
    d = np.asarray(x_next, dtype=float) - np.asarray(x_prev, dtype=float)
    d[..., 2] = wrap_angle(d[..., 2])
    return d


@njit(cache=True)
def _accelerations(x, force, p):
    g, mc, mp, l = p[0], p[1], p[2], p[3]
    total = mc + mp
    s, c = math.sin(x[2]), math.cos(x[2])
    temp = (force + mp * l * x[3] * x[3] * s) / total
    theta_acc = (g * s - c * temp) / (l * (4.0 / 3.0 - mp * c * c / total))
    x_acc = temp - mp * l * theta_acc * c / total
    return x_acc, theta_acc


@njit(cache=True)
def _step(x, force, p):
    limit = p[5]
    force = min(max(force, -limit), limit)
    x_acc, theta_acc = _accelerations(x, force, p)
    dt = p[4]
    out = np.empty(4)
    out[1] = x[1] + dt * x_acc
    out[0] = x[0] + dt * out[1]
    out[3] = x[3] + dt * theta_acc
    out[2] = x[2] + dt * out[3]
    return out


def accelerations(state, force: float, params: CartpoleParams) -> tuple:
    """Cart and pole accelerations for the clamped force."""
    limit = params.force_limit
    return _accelerations(np.asarray(state, dtype=float), min(max(force, -limit), limit),
                          params.as_array())


def cartpole_step(state, force: float, params: CartpoleParams) -> np.ndarray:
    """Semi-implicit Euler step; velocities update first, then positions."""
    out = _step(np.asarray(state, dtype=float), float(force), params.as_array())
    if not np.all(np.isfinite(out)):
        raise NumericalError("cartpole state became non-finite")
    return out


def total_energy(state, params: CartpoleParams) -> float:
    """Kinetic plus potential energy, with the pole as a uniform rod."""
    x, xd, th, thd = np.asarray(state, dtype=float)
    mc, mp, l, g = params.cart_mass, params.pole_mass, params.pole_half_length, params.gravity
    vx = xd + l * math.cos(th) * thd
    vy = -l * math.sin(th) * thd
    inertia = mp * l * l / 3.0
    kinetic = 0.5 * mc * xd**2 + 0.5 * mp * (vx**2 + vy**2) + 0.5 * inertia * thd**2
    return kinetic + mp * g * l * math.cos(th)


def initial_state(rng: np.random.Generator) -> np.ndarray:
    """Small uniform perturbation of the hanging-down rest state."""
    x = rng.uniform(-0.05, 0.05, size=STATE_DIM)
    x[2] = wrap_angle(np.pi + x[2])
    return x
