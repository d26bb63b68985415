"""One planning cycle of the ensemble path-integral controller.

Shapes used throughout (``T`` horizon, ``K`` rollouts per particle, ``N``
particles, ``m`` control dim):

* noise          ``(K, N, T, m)``
* step/suffix    ``(T + 1, K, N)``; row ``T`` holds the terminal cost
* weights        ``(T, K, N)``
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .config import ControllerConfig
from .dynamics import DynamicsModel
from .tasks import CostSpec

PENALTY_COST = 1e12


class DegenerateWeights(FloatingPointError):
    """The softmax normalizer vanished or became non-finite."""


@dataclass(frozen=True)
class RolloutCostTable:
    step_costs: np.ndarray
    suffix_costs: np.ndarray

    @property
    def beta0(self) -> float:
        """Minimum cost-to-go over all samples at the first horizon slot."""
        return float(self.suffix_costs[0].min())


@dataclass(frozen=True)
class ControllerState:
    nominal: np.ndarray
    config: ControllerConfig
    cycle_index: int = 0

    @classmethod
    def initial(cls, config: ControllerConfig) -> "ControllerState":
        return cls(_frozen(np.zeros((config.horizon, config.control_dim))), config, 0)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def clamp(u, config: ControllerConfig):
    return np.clip(u, config.u_min, config.u_max)


def noise_stream(seed: int, cycle: int, k: int, n: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(cycle, k, n))))


def sample_noise(config: ControllerConfig, cycle: int, k: int, n: int) -> np.ndarray:
    """Draw the ``(T, m)`` perturbation sequence for rollout ``(k, n)`` of ``cycle``.

    Each ``(seed, cycle, k, n)`` gets its own stream, so the draw does not
    depend on how many other rollouts exist or the order they are sampled in.
    """
    z = noise_stream(config.seed, cycle, k, n).standard_normal((config.horizon, config.control_dim))
    return z * np.sqrt(np.asarray(config.sigma))


def sample_all_noise(config: ControllerConfig, cycle: int) -> np.ndarray:
    K, N = config.n_rollouts, config.n_particles
    out = np.empty((K, N, config.horizon, config.control_dim))
    for k in range(K):
        for n in range(N):
            out[k, n] = sample_noise(config, cycle, k, n)
    return out


def rollout_batch(model: DynamicsModel, thetas, x0, nominal, noise, cost: CostSpec, config: ControllerConfig, dt: float):
    """Simulate ``B`` rollouts and return per-step costs of shape ``(T + 1, B)``.

    ``thetas`` is ``(B, p)`` and ``noise`` is ``(B, T, m)``.  Once a rollout's
    state turns non-finite every later cost, terminal included, is
    ``PENALTY_COST``.
    """
    x0 = np.asarray(x0, dtype=float)
    B = noise.shape[0]
    T = config.horizon
    sigma = np.asarray(config.sigma)
    x = np.broadcast_to(x0, (B, model.state_dim)).copy()
    costs = np.empty((T + 1, B))
    dead = np.zeros(B, dtype=bool)
    with np.errstate(all="ignore"):
        for t in range(T):
            du = noise[:, t, :]
            costs[t] = cost.running_cost(x) + config.lam * np.sum(nominal[t] / sigma * du, axis=-1)
            costs[t, dead] = PENALTY_COST
            x = model.step(x, clamp(nominal[t] + du, config), thetas, dt)
            dead |= ~np.all(np.isfinite(x), axis=-1)
            x[dead] = x0
        costs[T] = cost.terminal_cost(x)
        costs[T, dead] = PENALTY_COST
    costs[~np.isfinite(costs)] = PENALTY_COST
    return costs


def rollout(model: DynamicsModel, theta, x0, nominal, noise, cost: CostSpec, config: ControllerConfig, dt: float):
    """Single rollout; returns ``(step_costs[T], terminal_cost)``."""
    theta = np.asarray(theta, dtype=float)[None, :]
    costs = rollout_batch(model, theta, x0, np.asarray(nominal), np.asarray(noise)[None], cost, config, dt)[:, 0]
    return costs[:-1], float(costs[-1])


def evaluate_rollouts(model, particles, x0, nominal, noise, cost, config, dt, executor: Executor | None = None, chunks: int = 1):
    """Run all ``K x N`` rollouts; returns step costs ``(T + 1, K, N)``.

    With an executor the batch is split into ``chunks`` contiguous pieces that
    run concurrently.  Rows are independent so the result does not depend on
    the split.
    """
    K, N, T, m = noise.shape
    flat_noise = noise.reshape(K * N, T, m)
    thetas = np.tile(np.asarray(particles, dtype=float), (K, 1))
    if executor is None or chunks <= 1:
        flat = rollout_batch(model, thetas, x0, nominal, flat_noise, cost, config, dt)
    else:
        bounds = np.linspace(0, K * N, min(chunks, K * N) + 1).astype(int)
        parts = executor.map(
            lambda ab: rollout_batch(model, thetas[ab[0]:ab[1]], x0, nominal, flat_noise[ab[0]:ab[1]], cost, config, dt),
            list(zip(bounds[:-1], bounds[1:])),
        )
        flat = np.concatenate(list(parts), axis=1)
    return flat.reshape(T + 1, K, N)


def suffix_sums(step_costs) -> RolloutCostTable:
    """Cost-to-go from every horizon slot: ``suffix[t] = step[t] + suffix[t + 1]``."""
    step_costs = np.asarray(step_costs, dtype=float)
    suffix = np.empty_like(step_costs)
    suffix[-1] = step_costs[-1]
    for t in range(step_costs.shape[0] - 2, -1, -1):
        suffix[t] = step_costs[t] + suffix[t + 1]
    return RolloutCostTable(step_costs, suffix)


def compute_weights(costs: RolloutCostTable, belief_weights, lam: float, mode: str = "per_step") -> np.ndarray:
    """Softmax weights over all ``(k, n)`` samples for each horizon slot.

    ``omega[t, k, n]`` is proportional to ``exp(-(S[t, k, n] - beta_t) / lam) * p[n]``
    with ``beta_t`` the smallest cost-to-go at slot ``t``.  The product is
    formed in log space and shifted by its maximum before exponentiating, so a
    tiny belief weight on the cheapest sample cannot make the normalizer
    underflow.  ``mode="trajectory"`` reuses the slot-0 weights everywhere.
    """
    S = costs.suffix_costs[:-1]
    if mode == "trajectory":
        S = np.broadcast_to(S[:1], S.shape)
    p = np.asarray(belief_weights, dtype=float)
    beta = S.min(axis=(1, 2), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logw = -(S - beta) / lam + np.log(p)
        logw = logw - logw.max(axis=(1, 2), keepdims=True)
        w = np.exp(logw)
        Z = _ordered_sum(w.reshape(w.shape[0], -1))[:, None, None]
    if not np.all(np.isfinite(Z)) or np.any(Z <= 0):
        raise DegenerateWeights("softmax normalizer is zero or non-finite")
    return w / Z


def _ordered_sum(terms):
    """Sum ``terms[:, j, ...]`` over ``j`` strictly left to right.

    Pins the floating-point summation order (samples in ``(k, n)`` order) so
    results do not depend on numpy's pairwise/SIMD reduction strategy.
    """
    total = np.zeros_like(terms[:, 0])
    for j in range(terms.shape[1]):
        total += terms[:, j]
    return total


def update_controls(nominal, noise, weights, config: ControllerConfig) -> np.ndarray:
    """Add the weighted perturbation to every slot and clamp to the bounds."""
    T, K, N = weights.shape
    w = weights.reshape(T, K * N)
    du = np.moveaxis(noise.reshape(K * N, T, -1), 0, 1)  # (T, K*N, m)
    delta = _ordered_sum(w[:, :, None] * du)
    return clamp(np.asarray(nominal) + delta, config)


def shift_horizon(nominal) -> np.ndarray:
    nominal = np.asarray(nominal)
    return np.concatenate([nominal[1:], nominal[-1:]], axis=0)


def smooth_controls(nominal, window: int, config: ControllerConfig | None = None) -> np.ndarray:
    """Centred moving average per control dimension.

    Windows at the ends are truncated to the samples that exist.  Averages are
    taken of deviations from the centre sample, which keeps constant
    sequences exactly fixed.  ``window <= 1`` is the identity.
    """
    u = np.array(nominal, dtype=float)
    if window > 1:
        if window % 2 == 0:
            raise ValueError("moving-average window must be odd")
        half = window // 2
        T = u.shape[0]
        out = np.empty_like(u)
        for t in range(T):
            lo, hi = max(0, t - half), min(T, t + half + 1)
            out[t] = u[t] + np.mean(u[lo:hi] - u[t], axis=0)
        u = out
    return u if config is None else clamp(u, config)


def control_step(state: ControllerState, x_measured, belief, model: DynamicsModel, cost: CostSpec, dt: float,
                 executor: Executor | None = None, chunks: int = 1):
    """Plan from ``x_measured`` and return ``(action, next_state, cost_table)``.

    ``belief`` needs ``particles`` of shape ``(N, p)`` and normalized
    ``weights`` of shape ``(N,)``.  The returned state already has its horizon
    shifted, ready for the next cycle.
    """
    cfg = state.config
    particles = np.asarray(belief.particles, dtype=float)
    if particles.shape[0] != cfg.n_particles:
        raise ValueError(f"belief has {particles.shape[0]} particles, config expects {cfg.n_particles}")
    noise = sample_all_noise(cfg, state.cycle_index)
    step_costs = evaluate_rollouts(model, particles, x_measured, state.nominal, noise, cost, cfg, dt, executor, chunks)
    table = suffix_sums(step_costs)
    weights = compute_weights(table, belief.weights, cfg.lam, cfg.weights_mode)
    u = update_controls(state.nominal, noise, weights, cfg)
    u = smooth_controls(u, cfg.smoothing_window, cfg)
    action = u[0].copy()
    return action, ControllerState(_frozen(shift_horizon(u)), cfg, state.cycle_index + 1), table
