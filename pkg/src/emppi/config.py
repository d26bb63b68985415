"""Configuration types, validation and the TOML experiment file format.

An experiment file has four required tables::

    [task]        name, dt, episode_steps (+ optional noise / initial state / model options)
    [controller]  T, N, K, sigma, lambda, likelihood_variance, ess_fraction, smoothing, seed, ...
    [belief]      one prior per model parameter, e.g. mass = "uniform(0.5, 2.0)"
    [truth]       true parameter values used by the simulated plant

and an optional ``[compare]`` table holding the wrong model used by the
comparison runner.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import tomli
import tomli_w

WEIGHT_MODES = ("per_step", "trajectory")


class ConfigError(ValueError):
    """Raised when a config violates one or more invariants.

    ``issues`` lists every violation as ``(kind, field)`` pairs where kind is
    one of ``NonPositive``, ``DimensionMismatch``, ``OutOfRange``, ``Invalid``.
    """

    def __init__(self, issues: Sequence[tuple[str, str]]):
        self.issues = list(issues)
        super().__init__("; ".join(f"{kind}({name})" for kind, name in self.issues))


class InvalidPrior(ValueError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    """Hyperparameters of one ensemble planner.

    ``sigma`` and ``likelihood_variance`` are the diagonals of the control
    noise covariance and of the belief likelihood covariance.
    """

    horizon: int
    n_particles: int
    n_rollouts: int
    sigma: tuple[float, ...]
    lam: float
    likelihood_variance: tuple[float, ...]
    u_min: tuple[float, ...]
    u_max: tuple[float, ...]
    ess_fraction: float = 0.5
    ess_cap_at_n: bool = True
    jitter_scale: float = 0.1
    smoothing: str = "off"
    weights_mode: str = "per_step"
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma", "likelihood_variance", "u_min", "u_max"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def control_dim(self) -> int:
        return len(self.u_min)

    @property
    def smoothing_window(self) -> int:
        """Moving-average window, or 0 when smoothing is off."""
        return parse_smoothing(self.smoothing)

    @property
    def ess_threshold(self) -> float:
        n_eff = self.ess_fraction * self.n_particles * self.n_rollouts
        if self.ess_cap_at_n:
            n_eff = min(n_eff, self.ess_fraction * self.n_particles)
        return n_eff


def parse_smoothing(policy: str) -> int:
    policy = policy.strip()
    if policy == "off":
        return 0
    m = re.fullmatch(r"moving_average\(\s*(\d+)\s*\)", policy)
    if m is None:
        raise ValueError(f"unknown smoothing policy {policy!r}")
    return int(m.group(1))


def validate_config(
    config: ControllerConfig,
    control_dim: int | None = None,
    state_dim: int | None = None,
) -> ControllerConfig:
    """Return ``config`` unchanged if every invariant holds.

    Otherwise raise :class:`ConfigError` listing all violated fields, not
    just the first one found.
    """
    issues: list[tuple[str, str]] = []
    for name in ("horizon", "n_particles", "n_rollouts"):
        value = getattr(config, name)
        if not isinstance(value, int) or value <= 0:
            issues.append(("NonPositive", name))
    if not (math.isfinite(config.lam) and config.lam > 0):
        issues.append(("NonPositive", "lambda"))
    if not all(math.isfinite(s) and s > 0 for s in config.sigma):
        issues.append(("NonPositive", "sigma"))
    if not all(math.isfinite(s) and s > 0 for s in config.likelihood_variance):
        issues.append(("NonPositive", "likelihood_variance"))
    if not 0.0 < config.ess_fraction <= 1.0:
        issues.append(("OutOfRange", "ess_fraction"))
    if config.jitter_scale < 0:
        issues.append(("OutOfRange", "jitter_scale"))
    if config.weights_mode not in WEIGHT_MODES:
        issues.append(("Invalid", "weights_mode"))
    try:
        window = config.smoothing_window
        if window and window % 2 == 0:
            issues.append(("Invalid", "smoothing"))
    except ValueError:
        issues.append(("Invalid", "smoothing"))
    if not isinstance(config.seed, int) or config.seed < 0:
        issues.append(("OutOfRange", "seed"))

    m = control_dim if control_dim is not None else len(config.u_min)
    if len(config.u_min) != m:
        issues.append(("DimensionMismatch", "u_min"))
    if len(config.u_max) != m:
        issues.append(("DimensionMismatch", "u_max"))
    elif len(config.u_min) == m and any(lo > hi for lo, hi in zip(config.u_min, config.u_max)):
        issues.append(("Invalid", "u_max"))
    if len(config.sigma) != m:
        issues.append(("DimensionMismatch", "sigma"))
    if state_dim is not None and len(config.likelihood_variance) != state_dim:
        issues.append(("DimensionMismatch", "likelihood_variance"))

    if issues:
        raise ConfigError(issues)
    return config


# -- priors ------------------------------------------------------------------

_PRIOR_RE = re.compile(r"^\s*(uniform|normal|binomial)\s*\(\s*([^)]*)\)\s*$")


@dataclass(frozen=True)
class PriorSpec:
    """One-dimensional prior: uniform(a, b), normal(mu, var), binomial(n, p) or fixed(v)."""

    kind: str
    args: tuple[float, ...]

    def __post_init__(self):
        kind, args = self.kind, self.args
        if kind == "uniform":
            if len(args) != 2 or not args[0] < args[1]:
                raise InvalidPrior(f"uniform needs a < b, got {args}")
        elif kind == "normal":
            if len(args) != 2 or not args[1] > 0:
                raise InvalidPrior(f"normal needs variance > 0, got {args}")
        elif kind == "binomial":
            if len(args) != 2 or args[0] < 0 or args[0] != int(args[0]) or not 0 <= args[1] <= 1:
                raise InvalidPrior(f"binomial needs integer n >= 0 and p in [0, 1], got {args}")
        elif kind == "fixed":
            if len(args) != 1:
                raise InvalidPrior(f"fixed needs one value, got {args}")
        else:
            raise InvalidPrior(f"unknown prior kind {kind!r}")

    @classmethod
    def parse(cls, text: str | float | int) -> "PriorSpec":
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            return cls("fixed", (float(text),))
        m = _PRIOR_RE.match(str(text))
        if m is None:
            raise InvalidPrior(f"cannot parse prior {text!r}")
        try:
            args = tuple(float(a) for a in m.group(2).split(","))
        except ValueError as exc:
            raise InvalidPrior(f"cannot parse prior {text!r}") from exc
        return cls(m.group(1), args)

    def to_config(self) -> str | float:
        if self.kind == "fixed":
            return self.args[0]
        return f"{self.kind}({', '.join(repr(a) for a in self.args)})"

    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.args[0] + self.args[1])
        if self.kind == "binomial":
            return self.args[0] * self.args[1]
        return self.args[0]


# -- experiment file ---------------------------------------------------------


@dataclass(frozen=True)
class TaskConfig:
    name: str
    dt: float
    episode_steps: int
    observation_noise: float = 1e-3
    process_noise: float = 0.0
    stop_on_success: bool = True
    x0: tuple[float, ...] | None = None
    target: tuple[float, ...] | None = None
    model: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class CompareConfig:
    wrong_theta: dict[str, float] = field(default_factory=dict)
    mppi_rollouts: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig
    controller: ControllerConfig
    priors: dict[str, PriorSpec]
    truth: dict[str, float]
    compare: CompareConfig = field(default_factory=CompareConfig)

    def replace_controller(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, controller=dataclasses.replace(self.controller, **changes))

    def to_dict(self) -> dict[str, Any]:
        task = {
            "name": self.task.name,
            "dt": self.task.dt,
            "episode_steps": self.task.episode_steps,
            "observation_noise": self.task.observation_noise,
            "process_noise": self.task.process_noise,
            "stop_on_success": self.task.stop_on_success,
        }
        if self.task.x0 is not None:
            task["x0"] = list(self.task.x0)
        if self.task.target is not None:
            task["target"] = list(self.task.target)
        if self.task.model:
            task["model"] = dict(self.task.model)
        c = self.controller
        controller = {
            "T": c.horizon,
            "N": c.n_particles,
            "K": c.n_rollouts,
            "sigma": list(c.sigma),
            "lambda": c.lam,
            "likelihood_variance": list(c.likelihood_variance),
            "u_min": list(c.u_min),
            "u_max": list(c.u_max),
            "ess_fraction": c.ess_fraction,
            "ess_cap_at_N": c.ess_cap_at_n,
            "jitter_scale": c.jitter_scale,
            "smoothing": c.smoothing,
            "weights_mode": c.weights_mode,
            "seed": c.seed,
        }
        out: dict[str, Any] = {
            "task": task,
            "controller": controller,
            "belief": {k: p.to_config() for k, p in self.priors.items()},
            "truth": dict(self.truth),
        }
        compare: dict[str, Any] = {}
        if self.compare.wrong_theta:
            compare["wrong_theta"] = dict(self.compare.wrong_theta)
        if self.compare.mppi_rollouts is not None:
            compare["mppi_rollouts"] = self.compare.mppi_rollouts
        if compare:
            out["compare"] = compare
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        missing = [t for t in ("task", "controller", "belief", "truth") if t not in data]
        if missing:
            raise ConfigError([("Invalid", t) for t in missing])
        t = dict(data["task"])
        absent = [k for k in ("name", "dt", "episode_steps") if k not in t]
        if absent:
            raise ConfigError([("Invalid", f"task.{k}") for k in absent])
        task = TaskConfig(
            name=str(t.pop("name")),
            dt=float(t.pop("dt")),
            episode_steps=int(t.pop("episode_steps")),
            observation_noise=float(t.pop("observation_noise", 1e-3)),
            process_noise=float(t.pop("process_noise", 0.0)),
            stop_on_success=bool(t.pop("stop_on_success", True)),
            x0=_opt_tuple(t.pop("x0", None)),
            target=_opt_tuple(t.pop("target", None)),
            model={k: float(v) for k, v in t.pop("model", {}).items()},
        )
        if t:
            raise ConfigError([("Invalid", f"task.{k}") for k in t])
        c = dict(data["controller"])
        try:
            controller = ControllerConfig(
                horizon=c.pop("T"),
                n_particles=c.pop("N"),
                n_rollouts=c.pop("K"),
                sigma=_as_list(c.pop("sigma")),
                lam=float(c.pop("lambda")),
                likelihood_variance=_as_list(c.pop("likelihood_variance")),
                u_min=_as_list(c.pop("u_min")),
                u_max=_as_list(c.pop("u_max")),
                ess_fraction=float(c.pop("ess_fraction", 0.5)),
                ess_cap_at_n=bool(c.pop("ess_cap_at_N", True)),
                jitter_scale=float(c.pop("jitter_scale", 0.1)),
                smoothing=str(c.pop("smoothing", "off")),
                weights_mode=str(c.pop("weights_mode", "per_step")),
                seed=int(c.pop("seed", 0)),
            )
        except KeyError as exc:
            raise ConfigError([("Invalid", f"controller.{exc.args[0]}")]) from exc
        if c:
            raise ConfigError([("Invalid", f"controller.{k}") for k in c])
        cmp = dict(data.get("compare", {}))
        compare = CompareConfig(
            wrong_theta={k: float(v) for k, v in cmp.get("wrong_theta", {}).items()},
            mppi_rollouts=cmp.get("mppi_rollouts"),
        )
        return cls(
            task=task,
            controller=controller,
            priors={k: PriorSpec.parse(v) for k, v in data["belief"].items()},
            truth={k: float(v) for k, v in data["truth"].items()},
            compare=compare,
        )


def _as_list(value: Any) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(v) for v in value]


def _opt_tuple(value: Any) -> tuple[float, ...] | None:
    return None if value is None else tuple(float(v) for v in value)


def dumps(config: ExperimentConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def loads(text: str) -> ExperimentConfig:
    return ExperimentConfig.from_dict(tomli.loads(text))


def load(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return ExperimentConfig.from_dict(tomli.load(fh))


def save(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(config))
