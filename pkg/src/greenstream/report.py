"""Figure rendering for run artifacts.

Renders matplotlib figures to files next to the delimited outputs they are
derived from.  Stored CSVs stay raw; smoothing (the 40-episode window used
for learning curves) happens only here, at analysis time.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

SMOOTH_WINDOW = 40


def _smooth(values, window=SMOOTH_WINDOW):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return values
    win = min(window, len(values))
    kernel = np.ones(win) / win
    # trailing window so early episodes are not averaged with later ones
    padded = np.concatenate([np.full(win - 1, values[0]), values])
    return np.convolve(padded, kernel, mode="valid")


def render_learning_curve(log_rows, out_path, title="Training"):
    """Per-episode energy (raw + smoothed) and cumulative violation ratio."""
    episodes = [r["episode"] for r in log_rows]
    energy = [r["energy_j"] for r in log_rows]
    violations = np.array([r["violations"] for r in log_rows], dtype=float)
    steps = np.array([r["real_steps"] for r in log_rows], dtype=float)
    cum_ratio = np.cumsum(violations) / np.maximum(np.cumsum(steps), 1.0)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(episodes, energy, color="0.8", lw=0.8, label="per episode")
    ax1.plot(episodes, _smooth(energy), color="C0", lw=1.8,
             label=f"{SMOOTH_WINDOW}-episode mean")
    ax1.set_ylabel("energy per episode (J)")
    ax1.legend(frameon=False)
    ax1.set_title(title)
    ax2.plot(episodes, cum_ratio, color="C3", lw=1.5)
    ax2.set_ylabel("cumulative violation ratio")
    ax2.set_xlabel("real episode")
    ax2.set_ylim(bottom=-0.01)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def render_energy_cdf(energies_by_label, out_path,
                      title="Episode energy CDF"):
    """Empirical CDFs of per-episode energy for one or more policies."""
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for label, energies in energies_by_label.items():
        xs = np.sort(np.asarray(energies, dtype=float))
        ys = np.arange(1, len(xs) + 1) / len(xs)
        ax.step(xs, ys, where="post", lw=1.6, label=label)
    ax.set_xlabel("energy per episode (J)")
    ax.set_ylabel("empirical CDF")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False, loc="lower right")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def render_policy_trace(frames, alpha, rates_by_label, out_path,
                        title="Policy behavior"):
    """Per-frame average rate for each policy against the serving-BS gain."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for label, rates in rates_by_label.items():
        n = min(len(frames), len(rates))
        ax.plot(frames[:n], np.asarray(rates[:n]) / 1e6, lw=1.4, label=label)
    ax.set_xlabel("frame")
    ax.set_ylabel("average rate (Mbps)")
    ax.legend(frameon=False, loc="upper left")
    ax2 = ax.twinx()
    ax2.plot(frames, 10.0 * np.log10(np.asarray(alpha)), color="0.6",
             lw=1.0, ls="--")
    ax2.set_ylabel("serving-BS gain (dB)", color="0.45")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
