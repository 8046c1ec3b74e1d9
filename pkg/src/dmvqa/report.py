"""Figure rendering for the analysis CLI; every function writes one file.

Uses the non-interactive matplotlib backend so runs work headless; the
output format follows the file extension (.svg by default throughout
the CLI, next to the CSV/JSON the same command emits).
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_answer_distributions(distributions, path, title="Answer distributions"):
    """Grouped bars, one group color per named distribution."""
    if not distributions:
        raise ConfigError("nothing to plot")
    names = list(distributions)
    n_answers = len(next(iter(distributions.values())))
    for name in names:
        if len(distributions[name]) != n_answers:
            raise ConfigError(f"distribution {name!r} has a different support")
    fig, ax = plt.subplots(figsize=(max(6.0, 0.32 * n_answers), 3.6))
    x = np.arange(n_answers)
    width = 0.8 / len(names)
    for k, name in enumerate(names):
        ax.bar(x + (k - (len(names) - 1) / 2) * width, distributions[name],
               width=width, label=name)
    ax.set_xlabel("answer index")
    ax.set_ylabel("probability")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_lambda_sweep(rows, path, title="Distinguishing-weight sweep"):
    """Train and test accuracy against the lambda2/lambda1 ratio.

    Ratios sit at evenly spaced positions (a zero ratio rules out a log
    axis) with the actual values as tick labels.
    """
    if not rows:
        raise ConfigError("nothing to plot")
    ratios = [r["ratio"] for r in rows]
    pos = np.arange(len(ratios))
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(pos, [r["train_accuracy"] for r in rows], marker="o", label="train")
    ax.plot(pos, [r["test_accuracy"] for r in rows], marker="s", label="test")
    ax.set_xticks(pos)
    ax.set_xticklabels([f"{r:g}" for r in ratios])
    ax.set_xlabel("lambda2 / lambda1")
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_class_distances(by_run, path, title="Answer-class geometry"):
    """Intra vs inter class distances per run, plus the ratio as text."""
    if not by_run:
        raise ConfigError("nothing to plot")
    names = list(by_run)
    pos = np.arange(len(names))
    intra = [by_run[n].mean_intra for n in names]
    inter = [by_run[n].inter for n in names]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(names)), 3.6))
    ax.bar(pos - 0.18, intra, width=0.36, label="intra-class")
    ax.bar(pos + 0.18, inter, width=0.36, label="inter-class")
    for i, name in enumerate(names):
        ax.text(i, max(intra[i], inter[i]) * 1.02,
                f"ratio {by_run[name].ratio:.2f}", ha="center", fontsize=8)
    ax.set_xticks(pos)
    ax.set_xticklabels(names)
    ax.set_ylabel("mean pairwise distance")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_answer_space(export, path, title="Fused features, 2-D projection"):
    """Scatter of projected fused features colored by answer class."""
    coords, labels = export["coords"], export["labels"]
    explained = export.get("explained")
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    for label in np.unique(labels):
        mask = labels == label
        ax.scatter(coords[mask, 0], coords[mask, 1], s=8, alpha=0.6,
                   label=str(label))
    if explained is not None:
        ax.set_xlabel(f"pc1 ({100 * explained[0]:.0f}% var)")
        ax.set_ylabel(f"pc2 ({100 * explained[1]:.0f}% var)")
    ax.set_title(title)
    if len(np.unique(labels)) <= 30:
        ax.legend(fontsize=6, markerscale=1.5, ncols=2)
    return _save(fig, path)


def plot_loss_curves(step_losses, path, title="Training loss"):
    """Total / vqa / dis loss per step from a run record."""
    if not step_losses:
        raise ConfigError("nothing to plot")
    arr = np.asarray([row[:5] for row in step_losses], dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(arr[:, 0], arr[:, 2], label="total", lw=1.0)
    ax.plot(arr[:, 0], arr[:, 3], label="vqa", lw=0.8, alpha=0.8)
    ax.plot(arr[:, 0], arr[:, 4], label="dis", lw=0.8, alpha=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)
