import subprocess
import sys
from pathlib import Path

import pytest

from emppi.cli import EXIT_CONFIG, EXIT_IO, main, parse_sweep, parse_wrong_theta

PENDULUM = str(Path(__file__).resolve().parents[1] / "configs" / "pendulum.toml")


@pytest.fixture
def short_config(tmp_path):
    text = Path(PENDULUM).read_text().replace("episode_steps = 200", "episode_steps = 12")
    path = tmp_path / "short.toml"
    path.write_text(text)
    return str(path)


def outputs(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.suffix in (".csv", ".json", ".toml")}


def test_parse_sweep():
    assert parse_sweep("N=1,5,10,K=1,4") == ([1, 5, 10], [1, 4])
    assert parse_sweep("K=2") == ([], [2])
    assert parse_sweep("N=1:2, K=3") == ([1, 2], [3])
    for bad in ("X=1", "N=", "N=1,K=a", ""):
        with pytest.raises(ValueError):
            parse_sweep(bad)


def test_parse_wrong_theta():
    assert parse_wrong_theta("2,1,0.1") == [2.0, 1.0, 0.1]
    assert parse_wrong_theta("mass=2.5") == {"mass": 2.5}


def test_run_writes_files(short_config, tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", short_config, "--seed", "1", "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"episode.csv", "summary.json", "config_echo.toml", "episode.png", "param_error.png"} <= names


@pytest.mark.parametrize("argv", [
    ["run", "--seed", "3"],
    ["compare", "--trials", "2", "--wrong-theta", "mass=2.0"],
    ["ablate", "--sweep", "N=1,2,K=1,2", "--trials", "1"],
])
def test_byte_identical_reruns(short_config, tmp_path, argv):
    base = ["--config", short_config, "--no-plots"]
    assert main(argv + base + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + base + ["--out", str(tmp_path / "b")]) == 0
    assert main(argv + base + ["--threads", "3", "--out", str(tmp_path / "c")]) == 0
    a, b, c = (outputs(tmp_path / s) for s in "abc")
    assert a and a == b == c


def test_missing_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == EXIT_IO


def test_invalid_config(tmp_path, short_config):
    bad = tmp_path / "bad.toml"
    bad.write_text(Path(short_config).read_text().replace("lambda = 1.0", "lambda = 0.0"))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    broken = tmp_path / "broken.toml"
    broken.write_text("[task\n")
    assert main(["run", "--config", str(broken), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_unwritable_out(tmp_path, short_config):
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert main(["run", "--config", short_config, "--out", str(blocker / "x"), "--no-plots"]) == EXIT_IO


def test_bad_flags(short_config, tmp_path):
    assert main(["ablate", "--config", short_config, "--sweep", "Q=1", "--trials", "1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["compare", "--config", short_config, "--trials", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--config", short_config, "--threads", "0", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_module_entry_point(short_config, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "emppi", "run", "--config", short_config, "--no-plots",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "episode.csv" in proc.stdout
