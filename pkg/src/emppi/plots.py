"""Report figures for episodes, comparisons and ablations (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import ARMS, AblationRow, ComparisonReport, EpisodeLog  # noqa: E402

_LABELS = {"emppi": "EMPPI", "mppi_perfect": "MPPI (true model)", "mppi_wrong": "MPPI (wrong model)"}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_episode(episode: EpisodeLog, path) -> Path:
    """States, controls, parameter estimates and ESS against simulated time."""
    t = np.asarray(episode.t_sim)
    fig, axes = plt.subplots(2, 2, figsize=(10, 6.5), sharex=True)
    ax = axes[0, 0]
    if len(t):
        x = np.asarray(episode.x)
        for i in range(x.shape[1]):
            ax.plot(t, x[:, i], lw=1, label=f"x{i}")
    ax.set_title("observed state")
    ax.legend(fontsize=7, ncol=2)

    ax = axes[0, 1]
    if len(t):
        u = np.asarray(episode.u)
        for i in range(u.shape[1]):
            ax.step(t, u[:, i], where="post", lw=1, label=f"u{i}")
    ax.set_title("applied control")
    ax.legend(fontsize=7)

    ax = axes[1, 0]
    if len(t):
        th = np.asarray(episode.theta_hat)
        for i, name in enumerate(episode.param_names):
            line, = ax.plot(t, th[:, i], lw=1, label=name)
            ax.axhline(episode.theta_true[i], color=line.get_color(), ls=":", lw=0.8)
    ax.set_title("belief mean (dotted: truth)")
    ax.set_xlabel("time [s]")
    ax.legend(fontsize=7)

    ax = axes[1, 1]
    if len(t):
        ax.plot(t, episode.ess, lw=1, color="k")
        hits = t[np.asarray(episode.resampled, dtype=bool)]
        ax.plot(hits, np.zeros_like(hits), "r|", ms=10, label="resample")
        ax.legend(fontsize=7)
    ax.set_title("effective sample size")
    ax.set_xlabel("time [s]")

    status = "success" if episode.success else ("aborted" if episode.aborted else "no success")
    fig.suptitle(f"{episode.task}, seed {episode.seed}: {status}")
    return _save(fig, Path(path))


def plot_param_error(episode: EpisodeLog, path) -> Path:
    err = episode.param_sq_error
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if err.size:
        ax.semilogy(episode.step, np.maximum(err, 1e-16), lw=1)
    ax.set_xlabel("control step")
    ax.set_ylabel("squared parameter error")
    return _save(fig, Path(path))


def plot_comparison(report: ComparisonReport, path) -> Path:
    """Success rate per arm with one standard deviation across seeds."""
    names = [a for a in ARMS if a in report.arms]
    rates = [report.arms[a].success_rate for a in names]
    errs = [report.arms[a].success_std for a in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(names)), rates, yerr=errs, capsize=4, color=["C0", "C2", "C3"][: len(names)])
    ax.set_xticks(range(len(names)), [_LABELS.get(a, a) for a in names])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("success rate")
    ax.set_title(f"{len(report.seeds)} shared seeds")
    return _save(fig, Path(path))


def plot_ablation(rows: list[AblationRow], path) -> Path:
    """Heat map of success rate over the N x K grid."""
    ns = sorted({r.n_particles for r in rows})
    ks = sorted({r.n_rollouts for r in rows})
    grid = np.full((len(ns), len(ks)), np.nan)
    for r in rows:
        grid[ns.index(r.n_particles), ks.index(r.n_rollouts)] = r.success_rate
    fig, ax = plt.subplots(figsize=(1.2 * len(ks) + 2.5, 0.9 * len(ns) + 2))
    im = ax.imshow(grid, vmin=0, vmax=1, cmap="viridis", origin="lower", aspect="auto")
    for i in range(len(ns)):
        for j in range(len(ks)):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", color="w" if grid[i, j] < 0.6 else "k")
    ax.set_xticks(range(len(ks)), [str(k) for k in ks])
    ax.set_yticks(range(len(ns)), [str(n) for n in ns])
    ax.set_xlabel("K (rollouts per particle)")
    ax.set_ylabel("N (particles)")
    fig.colorbar(im, ax=ax, label="success rate")
    return _save(fig, Path(path))


def render(result, out_dir) -> list[Path]:
    """Draw the figures matching whatever ``write_logs`` wrote to ``out_dir``."""
    out = Path(out_dir)
    if isinstance(result, EpisodeLog):
        return [plot_episode(result, out / "episode.png"), plot_param_error(result, out / "param_error.png")]
    if isinstance(result, ComparisonReport):
        return [plot_comparison(result, out / "comparison.png")]
    return [plot_ablation(list(result), out / "ablation.png")]
