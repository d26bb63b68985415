"""Parameterized analytic plants integrated with fixed-step RK4.

Every ``derivative`` broadcasts over leading batch axes: ``x`` is ``(..., n)``,
``u`` is ``(..., m)`` and ``theta`` is ``(..., p)``.  The controller relies on
this to roll out all ensemble members in one vectorized pass.
"""

from __future__ import annotations

import numpy as np

GRAVITY = 9.81


class NonFiniteState(FloatingPointError):
    """The integrator produced NaN or Inf (usually a wild parameter sample)."""


class DynamicsModel:
    # squares are written as products: scalar ``**`` goes through pow() and can
    # round differently from the array path, breaking batch/single agreement
    name: str = ""
    state_dim: int = 0
    control_dim: int = 0
    param_names: tuple[str, ...] = ()
    # lower clamp per parameter, enforces physical positivity
    param_lower: tuple[float, ...] = ()

    @property
    def param_dim(self) -> int:
        return len(self.param_names)

    def derivative(self, x, u, theta):
        raise NotImplementedError

    def _out(self, x, u, theta):
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1], theta.shape[:-1])
        return np.empty(batch + (self.state_dim,))

    def clamp_params(self, theta):
        return np.maximum(np.asarray(theta, dtype=float), self.param_lower)

    def step(self, x, u, theta, dt):
        return rk4(self.derivative, x, u, theta, dt)


def rk4(deriv, x, u, theta, dt):
    k1 = deriv(x, u, theta)
    k2 = deriv(x + 0.5 * dt * k1, u, theta)
    k3 = deriv(x + 0.5 * dt * k2, u, theta)
    k4 = deriv(x + dt * k3, u, theta)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rk4(model: DynamicsModel, x, v, theta, dt: float) -> np.ndarray:
    """Advance ``x`` by one RK4 step of length ``dt`` under control ``v``.

    Raises NonFiniteState when the result contains NaN/Inf.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x.shape[-1] != model.state_dim or v.shape[-1] != model.control_dim:
        raise ValueError(f"{model.name}: expected state dim {model.state_dim}, control dim {model.control_dim}")
    if theta.shape[-1] != model.param_dim:
        raise ValueError(f"{model.name}: expected {model.param_dim} parameters")
    with np.errstate(all="ignore"):
        out = model.step(x, v, theta, dt)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"{model.name} step produced a non-finite state")
    return out


class Pendulum(DynamicsModel):
    """Torque-driven pendulum; angle is measured from the hanging-down position."""

    name = "pendulum"
    state_dim = 2
    control_dim = 1
    param_names = ("mass", "length", "damping")
    param_lower = (1e-3, 1e-3, 0.0)

    def derivative(self, x, u, theta):
        angle, rate = x[..., 0], x[..., 1]
        mass, length, damping = theta[..., 0], theta[..., 1], theta[..., 2]
        accel = (u[..., 0] - damping * rate - mass * GRAVITY * length * np.sin(angle)) / (mass * length * length)
        out = self._out(x, u, theta)
        out[..., 0] = rate
        out[..., 1] = accel
        return out

    @staticmethod
    def energy(x, theta):
        angle, rate = x[..., 0], x[..., 1]
        mass, length = theta[..., 0], theta[..., 1]
        return 0.5 * mass * length * length * rate * rate - mass * GRAVITY * length * np.cos(angle)


class CartPole(DynamicsModel):
    """Cart with a uniform pole on a frictionless pivot.

    ``pole_length`` is the full pole length, the centre of mass sits at its
    midpoint and the inertia about the centre of mass is
    ``pole_inertia_scale * pole_mass * pole_length**2 / 12``.  The pole angle
    is zero hanging down and pi upright.
    """

    name = "cartpole"
    state_dim = 4
    control_dim = 1
    param_names = ("pole_mass", "pole_inertia_scale", "cart_mass", "pole_length")
    param_lower = (1e-3, 0.0, 1e-3, 1e-3)

    def derivative(self, x, u, theta):
        vel, phi, rate = x[..., 1], x[..., 2], x[..., 3]
        m, scale, cart_m, length = theta[..., 0], theta[..., 1], theta[..., 2], theta[..., 3]
        force = u[..., 0]
        l = 0.5 * length
        inertia = scale * m * length * length / 12.0
        s, c = np.sin(phi), np.cos(phi)
        # [[M + m, m l c], [m l c, I + m l^2]] @ [xdd, phidd] = rhs
        a11 = cart_m + m
        a12 = m * l * c
        a22 = inertia + m * l * l
        r1 = force + m * l * s * rate * rate
        r2 = -m * GRAVITY * l * s
        det = a11 * a22 - a12 * a12
        xdd = (a22 * r1 - a12 * r2) / det
        phidd = (a11 * r2 - a12 * r1) / det
        out = self._out(x, u, theta)
        out[..., 0] = vel
        out[..., 1] = xdd
        out[..., 2] = rate
        out[..., 3] = phidd
        return out


class Pusher(DynamicsModel):
    """Planar pusher disk shoving an object disk across a table.

    The pusher follows its commanded acceleration and is not deflected by the
    object.  Overlap produces a penalty force ``stiffness * depth`` on the
    object along the centre line; the object slides under Coulomb friction
    regularized by ``tanh(speed / v_eps)``.
    """

    name = "pusher"
    state_dim = 8
    control_dim = 2
    param_names = ("object_mass", "friction_coeff")
    param_lower = (1e-3, 0.0)

    def __init__(self, stiffness=500.0, pusher_radius=0.02, object_radius=0.03, v_eps=1e-3):
        self.stiffness = stiffness
        self.pusher_radius = pusher_radius
        self.object_radius = object_radius
        self.v_eps = v_eps

    def contact_force(self, x):
        """Force on the object from the pusher, shape ``(..., 2)``."""
        d = x[..., 4:6] - x[..., 0:2]
        dist = np.sqrt(np.sum(d * d, axis=-1))
        depth = np.maximum(self.pusher_radius + self.object_radius - dist, 0.0)
        safe = np.where(dist > 1e-12, dist, 1.0)
        # coincident centres push along +x
        direction = np.where((dist > 1e-12)[..., None], d / safe[..., None], np.array([1.0, 0.0]))
        return (self.stiffness * depth)[..., None] * direction

    def derivative(self, x, u, theta):
        mass, mu = theta[..., 0], theta[..., 1]
        vel = x[..., 6:8]
        speed = np.sqrt(np.sum(vel * vel, axis=-1))
        # tanh(s/eps)/s, with its limit 1/eps at s = 0
        gain = np.where(speed > 1e-12, np.tanh(speed / self.v_eps) / np.where(speed > 1e-12, speed, 1.0), 1.0 / self.v_eps)
        friction = -(mu * GRAVITY * gain)[..., None] * vel
        accel = self.contact_force(x) / mass[..., None] + friction
        out = self._out(x, u, theta)
        out[..., 0:2] = x[..., 2:4]
        out[..., 2:4] = u
        out[..., 4:6] = vel
        out[..., 6:8] = accel
        return out


MODELS = {"pendulum": Pendulum, "cartpole": CartPole, "pusher": Pusher}


def make_model(name: str, **options) -> DynamicsModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**options)
