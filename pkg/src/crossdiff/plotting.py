"""PNG figures rendered next to the CSV output (headless backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .entropy import vacancy  # noqa: E402
from .stepper import Trajectory  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_profiles(traj: Trajectory, path, max_curves: int = 6) -> Path:
    """Every fraction at a few snapshot times, one panel per fraction."""
    n = traj.fields[0].shape[0]
    picks = np.unique(np.linspace(0, len(traj.times) - 1, min(max_curves, len(traj.times))).astype(int))
    fig, axes = plt.subplots(1, n + 1, figsize=(4 * (n + 1), 3.2), squeeze=False)
    x = traj.grid.x
    for k in picks:
        full = np.vstack([traj.fields[k], vacancy(traj.fields[k])])
        for i, ax in enumerate(axes[0]):
            ax.plot(x, full[i], label=f"t={traj.times[k]:.3g}")
    for i, ax in enumerate(axes[0]):
        ax.set_xlabel("x")
        ax.set_title(f"u_{i + 1}")
    axes[0][-1].legend(fontsize=7)
    return _save(fig, path)


def plot_series(series: Mapping[str, np.ndarray], path) -> Path:
    t = series["t"]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.4))
    a1.plot(t, series["entropy"], label="entropy")
    a1.plot(t, series["rel_entropy"], label="relative entropy")
    a1.set_xlabel("t")
    a1.legend()
    for key in sorted(k for k in series if k.startswith("dist_l2_")):
        vals = series[key]
        if np.any(vals > 0):
            a2.semilogy(t, np.where(vals > 0, vals, np.nan), label=key)
    a2.set_xlabel("t")
    a2.set_title("L2 distance to equilibrium")
    a2.legend(fontsize=7)
    return _save(fig, path)


def plot_decay(times, dist, lambda_hat: float, c_hat: float, path, envelope_c1=None) -> Path:
    times = np.asarray(times)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.semilogy(times, dist, "o", ms=3, label="distance")
    ax.semilogy(times, c_hat * np.exp(-lambda_hat * times), label=f"fit, rate {lambda_hat:.4g}")
    if envelope_c1 is not None:
        ax.semilogy(times, envelope_c1 * np.exp(-lambda_hat * times), "--", label="envelope")
    ax.set_xlabel("t")
    ax.legend()
    return _save(fig, path)


def plot_uniqueness(times, gajewski, hminus1, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(times, gajewski, label="Gajewski distance")
    ax.plot(times, hminus1, label="H^-1 seminorm")
    ax.set_xlabel("t")
    ax.legend()
    return _save(fig, path)


def plot_convergence(h: Sequence[float], err_max: Sequence[float], err_l2: Sequence[float],
                     path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.loglog(h, err_max, "o-", label="max error")
    ax.loglog(h, err_l2, "s-", label="L2 error")
    ax.set_xlabel("h")
    ax.legend()
    return _save(fig, path)
