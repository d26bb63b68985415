"""Closed-loop experiments: single episodes, three-arm comparisons and N/K sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from concurrent.futures import Executor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as cfgmod
from .belief import (
    AllZeroLikelihood,
    ParameterBelief,
    belief_from_config,
    effective_sample_size,
    maybe_resample,
    point_belief,
    update_belief,
    weighted_mean,
)
from .config import ExperimentConfig, validate_config
from .controller import ControllerState, DegenerateWeights, control_step
from .dynamics import NonFiniteState
from .tasks import Task, make_task

log = logging.getLogger(__name__)

CSV_VERSION = "emppi-episode-v1"
ARMS = ("emppi", "mppi_perfect", "mppi_wrong")

# spawn keys for the per-episode random streams; controller noise uses 3-tuples
_OBS, _PLANT, _PRIOR, _RESAMPLE = 1, 2, 3, 4


class IoFailure(OSError):
    pass


def episode_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def build_task(config: ExperimentConfig) -> Task:
    t = config.task
    return make_task(t.name, x0=t.x0, target=t.target, model_options=t.model)


def true_theta(config: ExperimentConfig, task: Task) -> np.ndarray:
    return np.array([config.truth[name] for name in task.model.param_names])


def priors_in_order(config: ExperimentConfig, task: Task):
    missing = [n for n in task.model.param_names if n not in config.priors]
    if missing:
        raise cfgmod.ConfigError([("Invalid", f"belief.{n}") for n in missing])
    return [config.priors[n] for n in task.model.param_names]


def check_experiment(config: ExperimentConfig) -> Task:
    task = build_task(config)
    validate_config(config.controller, task.model.control_dim, task.model.state_dim)
    issues = []
    if not config.task.dt > 0:
        issues.append(("NonPositive", "dt"))
    if config.task.episode_steps < 0:
        issues.append(("OutOfRange", "episode_steps"))
    for name in task.model.param_names:
        if name not in config.truth:
            issues.append(("Invalid", f"truth.{name}"))
        if name not in config.priors:
            issues.append(("Invalid", f"belief.{name}"))
    if issues:
        raise cfgmod.ConfigError(issues)
    return task


@dataclass
class EpisodeLog:
    task: str
    seed: int
    state_names: list[str]
    control_names: list[str]
    param_names: list[str]
    theta_true: np.ndarray
    step: list[int] = field(default_factory=list)
    t_sim: list[float] = field(default_factory=list)
    x: list[np.ndarray] = field(default_factory=list)
    u: list[np.ndarray] = field(default_factory=list)
    theta_hat: list[np.ndarray] = field(default_factory=list)
    ess: list[float] = field(default_factory=list)
    beta0: list[float] = field(default_factory=list)
    resampled: list[bool] = field(default_factory=list)
    cycle_ms: list[float] = field(default_factory=list)
    running_cost: list[float] = field(default_factory=list)
    success: bool = False
    steps_to_success: int | None = None
    aborted: bool = False
    abort_reason: str = ""
    likelihood_failures: int = 0

    def __len__(self) -> int:
        return len(self.step)

    @property
    def param_sq_error(self) -> np.ndarray:
        if not self.theta_hat:
            return np.zeros(0)
        return np.sum((np.asarray(self.theta_hat) - self.theta_true) ** 2, axis=1)

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.running_cost)) if self.running_cost else 0.0

    def columns(self) -> list[str]:
        return (["step", "t_sim"] + [f"x{i}" for i in range(len(self.state_names))]
                + [f"u{i}" for i in range(len(self.control_names))]
                + [f"theta_hat{i}" for i in range(len(self.param_names))]
                + ["ess", "beta0", "resampled", "cycle_ms"])

    def rows(self):
        for i in range(len(self)):
            yield ([self.step[i], self.t_sim[i], *self.x[i], *self.u[i], *self.theta_hat[i],
                    self.ess[i], self.beta0[i], int(self.resampled[i]), self.cycle_ms[i]])

    def summary(self) -> dict:
        err = self.param_sq_error
        return {
            "task": self.task,
            "seed": self.seed,
            "n_steps": len(self),
            "success": self.success,
            "steps_to_success": self.steps_to_success,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "mean_running_cost": self.mean_cost,
            "resample_count": int(sum(self.resampled)),
            "likelihood_failures": self.likelihood_failures,
            "param_names": self.param_names,
            "theta_true": [float(v) for v in self.theta_true],
            "theta_hat_final": [float(v) for v in self.theta_hat[-1]] if self.theta_hat else None,
            "param_sq_error": [float(v) for v in err],
        }


def run_episode(
    config: ExperimentConfig,
    seed: int,
    *,
    belief: ParameterBelief | None = None,
    adapt: bool = True,
    executor: Executor | None = None,
    chunks: int = 1,
    record_timing: bool = False,
) -> EpisodeLog:
    """Run one closed-loop episode on the true plant.

    Every cycle: observe the true state plus Gaussian noise, plan with the
    current belief, reweight the belief with the previous (observation,
    action) pair and the new observation, maybe resample, then apply the
    first planned control.  ``belief`` overrides the prior draw (used for the
    single-model arms) and ``adapt=False`` freezes it.
    """
    task = check_experiment(config)
    model = task.model
    dt = config.task.dt
    ccfg = dataclasses.replace(config.controller, seed=seed)
    theta = model.clamp_params(true_theta(config, task))
    obs_rng = episode_rng(seed, _OBS)
    plant_rng = episode_rng(seed, _PLANT)
    resample_rng = episode_rng(seed, _RESAMPLE)
    if belief is None:
        belief = belief_from_config(ccfg, priors_in_order(config, task), model, episode_rng(seed, _PRIOR))

    out = EpisodeLog(
        task=task.name, seed=seed,
        state_names=[f"x{i}" for i in range(model.state_dim)],
        control_names=[f"u{i}" for i in range(model.control_dim)],
        param_names=list(model.param_names), theta_true=theta,
    )
    obs_std = np.sqrt(config.task.observation_noise)
    proc_std = np.sqrt(config.task.process_noise)
    hold_steps = max(1, int(round(task.hold_time / dt)))
    held = 0
    x_true = task.x0.copy()
    state = ControllerState.initial(ccfg)
    prev_obs = prev_u = None

    for step in range(config.task.episode_steps):
        x_obs = x_true + obs_std * obs_rng.standard_normal(model.state_dim)
        theta_hat = weighted_mean(belief)
        ess = effective_sample_size(belief.weights)
        t0 = time.perf_counter()
        try:
            action, state, table = control_step(state, x_obs, belief, model, task.cost, dt, executor, chunks)
        except DegenerateWeights as exc:
            out.aborted, out.abort_reason = True, f"DegenerateWeights: {exc}"
            break
        elapsed = (time.perf_counter() - t0) * 1e3 if record_timing else 0.0

        resampled = False
        if adapt and prev_obs is not None:
            try:
                belief = update_belief(belief, prev_obs, prev_u, x_obs, model, dt)
            except AllZeroLikelihood:
                out.likelihood_failures += 1
            new = maybe_resample(belief, resample_rng)
            resampled = new is not belief
            belief = new
        prev_obs, prev_u = x_obs, action

        out.step.append(step)
        out.t_sim.append(step * dt)
        out.x.append(x_obs)
        out.u.append(action)
        out.theta_hat.append(theta_hat)
        out.ess.append(ess)
        out.beta0.append(table.beta0)
        out.resampled.append(resampled)
        out.cycle_ms.append(elapsed)
        out.running_cost.append(float(task.cost.running_cost(x_true)))

        with np.errstate(all="ignore"):
            x_true = model.step(x_true, action, theta, dt)
        if proc_std > 0:
            x_true = x_true + proc_std * plant_rng.standard_normal(model.state_dim)
        if not np.all(np.isfinite(x_true)):
            out.aborted, out.abort_reason = True, str(NonFiniteState("plant state diverged"))
            break

        held = held + 1 if task.is_success(x_true) else 0
        if held >= hold_steps and not out.success:
            out.success = True
            out.steps_to_success = step + 1
            if config.task.stop_on_success:
                break
    return out


# -- comparison -------------------------------------------------------------


@dataclass
class ArmStats:
    arm: str
    successes: list[bool]
    steps_to_success: list[int | None]
    mean_costs: list[float]

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes)) if self.successes else 0.0

    @property
    def success_std(self) -> float:
        return float(np.std(np.asarray(self.successes, dtype=float))) if self.successes else 0.0

    def _steps(self):
        return np.array([s for s in self.steps_to_success if s is not None], dtype=float)

    @property
    def mean_steps(self) -> float | None:
        s = self._steps()
        return float(s.mean()) if s.size else None

    @property
    def var_steps(self) -> float | None:
        s = self._steps()
        return float(s.var()) if s.size else None

    def as_dict(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "success_std": self.success_std,
            "mean_steps_to_success": self.mean_steps,
            "var_steps_to_success": self.var_steps,
            "mean_running_cost": float(np.mean(self.mean_costs)) if self.mean_costs else 0.0,
        }


@dataclass
class ComparisonReport:
    seeds: list[int]
    wrong_theta: list[float]
    arms: dict[str, ArmStats]

    def as_dict(self) -> dict:
        return {"seeds": self.seeds, "wrong_theta": self.wrong_theta,
                "arms": {name: arm.as_dict() for name, arm in self.arms.items()}}


def trial_seeds(config: ExperimentConfig, n_trials: int) -> list[int]:
    return [config.controller.seed + i for i in range(n_trials)]


def single_model_config(config: ExperimentConfig) -> ExperimentConfig:
    c = config.controller
    k = config.compare.mppi_rollouts or c.n_particles * c.n_rollouts
    return config.replace_controller(n_particles=1, n_rollouts=k)


def resolve_wrong_theta(config: ExperimentConfig, task: Task, wrong: Sequence[float] | dict | None = None) -> np.ndarray:
    names = task.model.param_names
    theta = true_theta(config, task)
    source = config.compare.wrong_theta if wrong is None else wrong
    if isinstance(source, dict):
        unknown = set(source) - set(names)
        if unknown:
            raise cfgmod.ConfigError([("Invalid", f"compare.wrong_theta.{n}") for n in sorted(unknown)])
        return np.array([source.get(n, theta[i]) for i, n in enumerate(names)])
    source = [float(v) for v in source]
    if len(source) != len(names):
        raise cfgmod.ConfigError([("DimensionMismatch", "wrong_theta")])
    return np.array(source)


def run_arm(config: ExperimentConfig, arm: str, seeds: Sequence[int], wrong_theta=None, **kw) -> tuple[ArmStats, list[EpisodeLog]]:
    task = check_experiment(config)
    logs = []
    for seed in seeds:
        if arm == "emppi":
            logs.append(run_episode(config, seed, **kw))
            continue
        cfg1 = single_model_config(config)
        theta = true_theta(config, task) if arm == "mppi_perfect" else resolve_wrong_theta(config, task, wrong_theta)
        belief = point_belief(task.model.clamp_params(theta), dataclasses.replace(cfg1.controller, seed=seed))
        logs.append(run_episode(cfg1, seed, belief=belief, adapt=False, **kw))
    stats = ArmStats(arm, [lg.success for lg in logs], [lg.steps_to_success for lg in logs], [lg.mean_cost for lg in logs])
    return stats, logs


def run_comparison(config: ExperimentConfig, n_trials: int, wrong_theta=None, **kw) -> tuple[ComparisonReport, dict]:
    """EMPPI vs single-model MPPI with the true and with a wrong parameter vector.

    All arms run on the same seeds, so they share observation and plant
    noise streams.  Returns the report and the per-arm episode logs.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    task = check_experiment(config)
    seeds = trial_seeds(config, n_trials)
    wrong = resolve_wrong_theta(config, task, wrong_theta)
    arms, logs = {}, {}
    for arm in ARMS:
        log.info("comparison arm %s over %d seeds", arm, n_trials)
        arms[arm], logs[arm] = run_arm(config, arm, seeds, wrong, **kw)
    return ComparisonReport(seeds, [float(v) for v in wrong], arms), logs


# -- ablation ---------------------------------------------------------------


@dataclass
class AblationRow:
    n_particles: int
    n_rollouts: int
    success_rate: float
    mean_cost: float
    mean_steps: float | None


def run_ablation(config: ExperimentConfig, n_values: Sequence[int], k_values: Sequence[int], n_trials: int, **kw) -> list[AblationRow]:
    """Success rate and mean running cost on an N x K grid, same seeds per cell."""
    if any(v < 1 for v in (*n_values, *k_values)) or n_trials < 1:
        raise ValueError("sweep values and n_trials must be >= 1")
    seeds = trial_seeds(config, n_trials)
    rows = []
    for n in n_values:
        for k in k_values:
            cell = config.replace_controller(n_particles=n, n_rollouts=k)
            stats, _ = run_arm(cell, "emppi", seeds, **kw)
            log.info("ablation N=%d K=%d success=%.2f", n, k, stats.success_rate)
            rows.append(AblationRow(n, k, stats.success_rate, float(np.mean(stats.mean_costs)), stats.mean_steps))
    return rows


# -- output -----------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return format(float(v), ".17g")


def episode_csv(episode: EpisodeLog) -> str:
    buf = io.StringIO()
    buf.write(f"# {CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(episode.columns())
    for row in episode.rows():
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def read_episode_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, data = rows[0], rows[1:]
    arr = np.array([[float(v) for v in r] for r in data]) if data else np.zeros((0, len(header)))
    return header, arr


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    return out


def write_logs(result, out_dir, config: ExperimentConfig | None = None) -> list[Path]:
    """Write an EpisodeLog, ComparisonReport or ablation row list to ``out_dir``.

    Files are overwritten on every call.  Returns the paths written.
    """
    out = _prepare(out_dir)
    written = []
    if isinstance(result, EpisodeLog):
        written.append(out / "episode.csv")
        _write(written[-1], episode_csv(result))
        written.append(out / "summary.json")
        _write(written[-1], _json(result.summary()))
    elif isinstance(result, ComparisonReport):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["arm", "seed", "success", "steps_to_success", "mean_running_cost"])
        for name, arm in result.arms.items():
            for seed, ok, steps, cost in zip(result.seeds, arm.successes, arm.steps_to_success, arm.mean_costs):
                w.writerow([name, seed, int(ok), fmt(steps), fmt(cost)])
        written.append(out / "comparison.csv")
        _write(written[-1], buf.getvalue())
        written.append(out / "summary.json")
        _write(written[-1], _json(result.as_dict()))
    else:
        rows = list(result)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "K", "success_rate", "mean_running_cost", "mean_steps_to_success"])
        for r in rows:
            w.writerow([r.n_particles, r.n_rollouts, fmt(r.success_rate), fmt(r.mean_cost), fmt(r.mean_steps)])
        written.append(out / "ablation.csv")
        _write(written[-1], buf.getvalue())
        written.append(out / "summary.json")
        _write(written[-1], _json({"rows": [dataclasses.asdict(r) for r in rows]}))
    if config is not None:
        written.append(out / "config_echo.toml")
        _write(written[-1], cfgmod.dumps(config))
    return written
