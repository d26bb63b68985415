"""Particle belief over model parameters.

Weights are updated with a diagonal Gaussian likelihood of the one-step
prediction error and renormalized in log space.  When the effective sample
size drops below the threshold the whole population is redrawn around the
weighted mean.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ControllerConfig, PriorSpec
from .dynamics import DynamicsModel


class AllZeroLikelihood(FloatingPointError):
    """No particle assigns finite likelihood to the observation."""


@dataclass(frozen=True)
class ParameterBelief:
    particles: np.ndarray  # (N, p)
    weights: np.ndarray  # (N,)
    likelihood_variance: np.ndarray  # (n,)
    ess_threshold: float
    jitter_scale: float = 0.1
    lower: np.ndarray | None = None  # positivity clamp per parameter
    fixed: np.ndarray | None = None  # parameters known exactly, never jittered

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def sample_prior(prior: PriorSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    a = prior.args
    if prior.kind == "uniform":
        return rng.uniform(a[0], a[1], size)
    if prior.kind == "normal":
        return rng.normal(a[0], np.sqrt(a[1]), size)
    if prior.kind == "binomial":
        return rng.binomial(int(a[0]), a[1], size).astype(float)
    return np.full(size, a[0])


def init_belief(
    priors: Sequence[PriorSpec],
    n_particles: int,
    rng: np.random.Generator,
    likelihood_variance,
    ess_threshold: float,
    jitter_scale: float = 0.1,
    lower=None,
) -> ParameterBelief:
    """Draw ``n_particles`` i.i.d. parameter vectors with uniform weights."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    cols = [sample_prior(p, n_particles, rng) for p in priors]
    particles = np.stack(cols, axis=-1)
    if lower is not None:
        lower = np.asarray(lower, dtype=float)
        particles = np.maximum(particles, lower)
    return ParameterBelief(
        particles=_readonly(particles),
        weights=_readonly(np.full(n_particles, 1.0 / n_particles)),
        likelihood_variance=_readonly(likelihood_variance),
        ess_threshold=ess_threshold,
        jitter_scale=jitter_scale,
        lower=lower,
        fixed=np.array([p.kind == "fixed" for p in priors]),
    )


def belief_from_config(config: ControllerConfig, priors: Sequence[PriorSpec], model: DynamicsModel,
                       rng: np.random.Generator) -> ParameterBelief:
    return init_belief(priors, config.n_particles, rng, config.likelihood_variance, config.ess_threshold,
                       config.jitter_scale, model.param_lower)


def point_belief(theta, config: ControllerConfig) -> ParameterBelief:
    """Single particle with weight one, for plain single-model control."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    return ParameterBelief(
        particles=_readonly(theta),
        weights=_readonly(np.ones(1)),
        likelihood_variance=_readonly(config.likelihood_variance),
        ess_threshold=config.ess_threshold,
        jitter_scale=config.jitter_scale,
        fixed=np.ones(theta.shape[1], dtype=bool),
    )


def gaussian_log_likelihood(x_observed, x_predicted, variance) -> np.ndarray:
    """Log density of a diagonal normal, vectorized over leading axes."""
    r = np.asarray(x_observed, dtype=float) - np.asarray(x_predicted, dtype=float)
    var = np.asarray(variance, dtype=float)
    return -0.5 * np.sum(r * r / var + np.log(2.0 * np.pi * var), axis=-1)


def gaussian_likelihood(x_observed, x_predicted, variance) -> np.ndarray:
    return np.exp(gaussian_log_likelihood(x_observed, x_predicted, variance))


def normalize_log_weights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    if not finite.any():
        raise AllZeroLikelihood("every particle has zero likelihood")
    logw = np.where(finite, logw, -np.inf)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def update_belief(belief: ParameterBelief, x_prev, u_prev, x_observed, model: DynamicsModel, dt: float) -> ParameterBelief:
    """Reweight every particle by how well it predicted ``x_observed``.

    Raises AllZeroLikelihood (and the caller keeps the old belief) if no
    particle gives a finite log-likelihood.
    """
    N = belief.n_particles
    x_prev = np.broadcast_to(np.asarray(x_prev, dtype=float), (N, model.state_dim))
    u_prev = np.broadcast_to(np.asarray(u_prev, dtype=float), (N, model.control_dim))
    with np.errstate(all="ignore"):
        predicted = model.step(x_prev, u_prev, belief.particles, dt)
        loglik = gaussian_log_likelihood(x_observed, predicted, belief.likelihood_variance)
        logw = np.log(belief.weights) + loglik
    weights = normalize_log_weights(logw)
    return dataclasses.replace(belief, weights=_readonly(weights))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def weighted_mean(belief: ParameterBelief) -> np.ndarray:
    return belief.weights @ belief.particles


def weighted_std(belief: ParameterBelief) -> np.ndarray:
    mean = weighted_mean(belief)
    return np.sqrt(belief.weights @ (belief.particles - mean) ** 2)


def needs_resample(belief: ParameterBelief) -> bool:
    return effective_sample_size(belief.weights) < belief.ess_threshold


def resample(belief: ParameterBelief, rng: np.random.Generator) -> ParameterBelief:
    """Redraw every particle from a Gaussian around the weighted mean.

    The per-dimension spread is ``jitter_scale`` times the current weighted
    std, floored at ``1e-4 * |mean| + 1e-6`` so the cloud never collapses to
    a point.  Known (fixed) parameters are copied, not jittered.
    """
    mean = weighted_mean(belief)
    std = np.maximum(belief.jitter_scale * weighted_std(belief), 1e-4 * np.abs(mean) + 1e-6)
    N, p = belief.particles.shape
    particles = mean + std * rng.standard_normal((N, p))
    if belief.fixed is not None:
        particles[:, belief.fixed] = belief.particles[0, belief.fixed]
    if belief.lower is not None:
        particles = np.maximum(particles, belief.lower)
    return dataclasses.replace(belief, particles=_readonly(particles), weights=_readonly(np.full(N, 1.0 / N)))


def maybe_resample(belief: ParameterBelief, rng: np.random.Generator) -> ParameterBelief:
    """Resample when ESS falls below the threshold; otherwise return ``belief`` itself."""
    if needs_resample(belief):
        return resample(belief, rng)
    return belief
