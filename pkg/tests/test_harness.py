import csv
import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from emppi import config as cfgmod
from emppi.belief import point_belief
from emppi.harness import (
    CSV_VERSION,
    ComparisonReport,
    IoFailure,
    episode_csv,
    read_episode_csv,
    run_ablation,
    run_arm,
    run_comparison,
    run_episode,
    write_logs,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def pendulum():
    return cfgmod.load(CONFIGS / "pendulum.toml")


def short(cfg, steps=15, **ctrl):
    cfg = dataclasses.replace(cfg, task=dataclasses.replace(cfg.task, episode_steps=steps))
    return cfg.replace_controller(**ctrl) if ctrl else cfg


def test_presets_load():
    for path in sorted(CONFIGS.glob("*.toml")):
        cfg = cfgmod.load(path)
        run_episode(short(cfg, 2), 0)


def test_deterministic(pendulum):
    a = run_episode(short(pendulum, 20), 5)
    b = run_episode(short(pendulum, 20), 5)
    assert episode_csv(a) == episode_csv(b)


def test_threads_do_not_change_results(pendulum):
    cfg = short(pendulum, 10)
    with ThreadPoolExecutor(3) as pool:
        threaded = run_episode(cfg, 2, executor=pool, chunks=3)
    assert episode_csv(threaded) == episode_csv(run_episode(cfg, 2))


def test_seeds_are_isolated(pendulum):
    a = run_episode(short(pendulum, 10), 1)
    b = run_episode(short(pendulum, 10), 2)
    assert not np.array_equal(a.x[0], b.x[0])
    assert not np.array_equal(a.u, b.u)


def test_zero_steps(pendulum, tmp_path):
    log = run_episode(short(pendulum, 0), 0)
    assert len(log) == 0 and not log.success
    write_logs(log, tmp_path)
    header, data = read_episode_csv(tmp_path / "episode.csv")
    assert header[:2] == ["step", "t_sim"] and data.shape == (0, len(header))


def test_log_layout(pendulum):
    log = run_episode(short(pendulum, 5), 0)
    assert log.columns() == ["step", "t_sim", "x0", "x1", "u0", "theta_hat0", "theta_hat1", "theta_hat2",
                             "ess", "beta0", "resampled", "cycle_ms"]
    assert log.step == list(range(5))
    assert all(c == 0.0 for c in log.cycle_ms)
    assert all(1.0 <= e <= 8.0 + 1e-9 for e in log.ess)


def test_csv_round_trip(pendulum, tmp_path):
    log = run_episode(short(pendulum, 12), 4)
    write_logs(log, tmp_path, pendulum)
    text = (tmp_path / "episode.csv").read_text()
    assert text.startswith(f"# {CSV_VERSION}\n")
    header, data = read_episode_csv(tmp_path / "episode.csv")
    assert header == log.columns()
    expected = np.array([[float(v) for v in row] for row in log.rows()])
    assert np.array_equal(data, expected)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_steps"] == 12
    assert cfgmod.load(tmp_path / "config_echo.toml") == pendulum


def test_overwrite_is_idempotent(pendulum, tmp_path):
    log = run_episode(short(pendulum, 5), 0)
    write_logs(log, tmp_path)
    first = (tmp_path / "episode.csv").read_bytes()
    write_logs(log, tmp_path)
    assert (tmp_path / "episode.csv").read_bytes() == first


def test_unwritable_output(pendulum, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        write_logs(run_episode(short(pendulum, 1), 0), blocker / "sub")


def test_missing_truth_is_config_error(pendulum):
    bad = dataclasses.replace(pendulum, truth={"mass": 1.0})
    with pytest.raises(cfgmod.ConfigError) as err:
        run_episode(bad, 0)
    assert ("Invalid", "truth.length") in err.value.issues


def test_single_true_particle_swings_up(pendulum):
    cfg = dataclasses.replace(pendulum, task=dataclasses.replace(pendulum.task, episode_steps=int(round(10 / pendulum.task.dt))))
    stats, logs = run_arm(cfg, "mppi_perfect", range(10))
    assert sum(stats.successes) >= 9
    assert all(lg.steps_to_success * cfg.task.dt <= 10.0 for lg in logs if lg.success)


def test_comparison_with_correct_wrong_model(pendulum):
    cfg = short(pendulum, 25)
    report, logs = run_comparison(cfg, 2, wrong_theta=[1.0, 1.0, 0.1])
    assert isinstance(report, ComparisonReport)
    assert report.seeds == [0, 1]
    for a, b in zip(logs["mppi_perfect"], logs["mppi_wrong"]):
        assert episode_csv(a) == episode_csv(b)


def test_single_model_arms_use_full_budget(pendulum):
    _, logs = run_arm(short(pendulum, 3), "mppi_perfect", [0])
    assert logs[0].theta_hat[0].tolist() == [1.0, 1.0, 0.1]
    assert logs[0].ess == [1.0, 1.0, 1.0]


def test_point_belief_matches_single_particle(pendulum):
    cfg = short(pendulum, 8, n_particles=1)
    b = point_belief(np.array([1.0, 1.0, 0.1]), cfg.controller)
    a = run_episode(cfg, 3, belief=b, adapt=False)
    c = run_episode(dataclasses.replace(cfg, priors={k: cfgmod.PriorSpec.parse(v) for k, v in cfg.truth.items()}), 3)
    assert np.array_equal(a.u, c.u)


def test_ablation_single_cell(pendulum):
    cfg = short(pendulum, 10)
    rows = run_ablation(cfg, [cfg.controller.n_particles], [cfg.controller.n_rollouts], 2)
    stats, _ = run_arm(cfg, "emppi", [0, 1])
    assert len(rows) == 1
    assert rows[0].success_rate == stats.success_rate
    assert rows[0].mean_cost == float(np.mean(stats.mean_costs))


def test_ablation_rejects_bad_sweep(pendulum):
    with pytest.raises(ValueError):
        run_ablation(pendulum, [0], [1], 1)


def test_ablation_cell_matches_frozen_baseline():
    with open(Path(__file__).parent / "data" / "cartpole_ablation.csv") as fh:
        frozen = {(int(r["N"]), int(r["K"])): r for r in csv.DictReader(fh)}
    assert set(frozen) == {(n, k) for n in (1, 5, 10, 20) for k in (1, 4)}
    cfg = cfgmod.load(CONFIGS / "cartpole.toml")
    row = run_ablation(cfg, [1], [1], 20)[0]
    want = frozen[(1, 1)]
    assert row.success_rate == float(want["success_rate"])
    assert row.mean_cost == float(want["mean_running_cost"])
