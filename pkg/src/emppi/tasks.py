"""Task definitions: cost functions, success predicates and initial states."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import DynamicsModel, Pusher, make_model


@dataclass(frozen=True)
class CostSpec:
    """Running cost and terminal cost, both vectorized over leading axes of ``x``."""

    running_cost: Callable[[np.ndarray], np.ndarray]
    terminal_cost: Callable[[np.ndarray], np.ndarray]


def zero_cost(x):
    return np.zeros(np.shape(x)[:-1])


ZERO_COST = CostSpec(zero_cost, zero_cost)


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class Task:
    name: str
    model: DynamicsModel
    cost: CostSpec
    is_success: Callable[[np.ndarray], bool]
    hold_time: float
    x0: np.ndarray


# -- pendulum ---------------------------------------------------------------


def pendulum_cost(x):
    angle, rate = x[..., 0], x[..., 1]
    c = 1.0 + np.cos(angle)
    return 10.0 * c * c + 0.1 * rate * rate


def pendulum_success(x) -> bool:
    return abs(wrap_angle(x[0] - np.pi)) < 0.1 and abs(x[1]) < 0.5


# -- cart-pole --------------------------------------------------------------


def cartpole_cost(x):
    pos, vel, phi, rate = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    c = 1.0 + np.cos(phi)
    return 50.0 * c * c + 0.5 * pos * pos + 0.1 * vel * vel + 0.05 * rate * rate


def cartpole_success(x) -> bool:
    return abs(wrap_angle(x[2] - np.pi)) < 0.1 and abs(x[3]) < 0.5 and abs(x[0]) < 2.4


# -- pusher -----------------------------------------------------------------


def make_pusher_cost(model: Pusher, target) -> CostSpec:
    target = np.asarray(target, dtype=float)

    def running(x):
        reach = np.linalg.norm(x[..., 0:2] - x[..., 4:6], axis=-1)
        place = np.linalg.norm(target - x[..., 4:6], axis=-1)
        force = np.linalg.norm(model.contact_force(x), axis=-1)
        return reach + 2.0 * place + force

    return CostSpec(running, zero_cost)


def make_pusher_success(target, tol=0.02):
    target = np.asarray(target, dtype=float)

    def success(x) -> bool:
        return bool(np.linalg.norm(x[4:6] - target) < tol)

    return success


DEFAULT_X0 = {
    "pendulum": (0.0, 0.0),
    "cartpole": (0.0, 0.0, 0.0, 0.0),
    "pusher": (0.0, 0.0, 0.0, 0.0, 0.06, 0.0, 0.0, 0.0),
}
DEFAULT_TARGET = {"pusher": (0.3, 0.0)}


def make_task(name: str, x0=None, target=None, model_options=None) -> Task:
    model = make_model(name, **(model_options or {}))
    x0 = np.asarray(DEFAULT_X0[name] if x0 is None else x0, dtype=float)
    if x0.shape != (model.state_dim,):
        raise ValueError(f"{name}: x0 must have {model.state_dim} entries")
    if name == "pendulum":
        return Task(name, model, CostSpec(pendulum_cost, pendulum_cost), pendulum_success, 1.0, x0)
    if name == "cartpole":
        return Task(name, model, CostSpec(cartpole_cost, cartpole_cost), cartpole_success, 1.0, x0)
    target = DEFAULT_TARGET["pusher"] if target is None else target
    return Task(name, model, make_pusher_cost(model, target), make_pusher_success(target), 0.5, x0)
