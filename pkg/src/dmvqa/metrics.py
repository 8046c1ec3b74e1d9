"""Diagnostics: answer distributions, divergences, answer-space geometry.

Two views matter when checking whether a model leans on the training
prior. First, how its predicted-answer histogram compares with the
ground-truth histogram of a split (Jensen-Shannon divergence). Second,
how well the fused features separate answers geometrically: mean
pairwise distance inside an answer class versus mean distance between
class centroids.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class PredictionRecord:
    id: str
    category: str
    predicted: int
    answer: str
    probability: float
    score: float


def answer_distribution(indices, n_answers: int) -> np.ndarray:
    """Normalized histogram of answer indices over a fixed support."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise DataError("cannot build a distribution from zero predictions")
    if indices.min() < 0 or indices.max() >= n_answers:
        raise DataError(f"answer index out of range [0, {n_answers})")
    counts = np.bincount(indices, minlength=n_answers).astype(np.float64)
    return counts / counts.sum()


def true_answer_indices(instances):
    return np.asarray([inst.m for inst in instances], dtype=np.int64)


def predicted_answer_indices(records):
    return np.asarray([r.predicted for r in records], dtype=np.int64)


def _as_distribution(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ConfigError(f"distribution must be 1-D, got shape {p.shape}")
    if (p < 0).any():
        raise ConfigError("distribution has negative mass")
    s = p.sum()
    if s <= 0:
        raise ConfigError("distribution has no mass")
    return p / s


def js_divergence(p, q, base: float = 2.0) -> float:
    """Jensen-Shannon divergence on a shared support; base 2 keeps it in [0, 1]."""
    p, q = _as_distribution(p), _as_distribution(q)
    if p.shape != q.shape:
        raise ConfigError(f"supports differ: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    def kl(a):
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / m[mask])))
    return 0.5 * (kl(p) + kl(q)) / np.log(base)


def total_variation(p, q) -> float:
    p, q = _as_distribution(p), _as_distribution(q)
    if p.shape != q.shape:
        raise ConfigError(f"supports differ: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


@dataclass
class GroupedDivergence:
    per_group: dict   # group key -> JS between predicted and true histograms
    mean: float       # unweighted mean over groups


def js_by_group(predicted, truth, groups, n_answers: int) -> GroupedDivergence:
    """Predicted-vs-true answer histogram divergence, one JS value per group.

    `predicted` and `truth` are aligned answer-index arrays; `groups` assigns
    each position to a bucket (typically the question type). Histograms are
    built on the full shared support so sparse groups stay comparable. The
    summary mean weights every group equally regardless of its size.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    groups = np.asarray(groups)
    if not (len(predicted) == len(truth) == len(groups)):
        raise ConfigError(f"aligned arrays required, got lengths "
                          f"{len(predicted)}, {len(truth)}, {len(groups)}")
    if len(predicted) == 0:
        raise DataError("cannot compute divergences over zero predictions")
    per_group = {}
    for g in np.unique(groups):
        mask = groups == g
        per_group[g.item()] = js_divergence(
            answer_distribution(predicted[mask], n_answers),
            answer_distribution(truth[mask], n_answers))
    return GroupedDivergence(per_group=per_group,
                             mean=float(np.mean(list(per_group.values()))))


@dataclass
class ClassDistances:
    per_class: dict        # label -> mean pairwise distance within the class
    mean_intra: float      # unweighted mean over classes with >= 2 members
    inter: float           # mean pairwise distance between class centroids
    ratio: float           # inter / mean_intra
    skipped: list          # labels with < 2 members, excluded from intra


def _mean_pairwise(points: np.ndarray) -> float:
    rows, cols = np.triu_indices(len(points), k=1)
    return float(np.mean(np.linalg.norm(points[rows] - points[cols], axis=1)))


def class_distances(points, labels) -> ClassDistances:
    """Intra/inter class geometry of a point cloud under integer labels."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2 or len(points) != len(labels):
        raise ConfigError(f"need (n, d) points with n labels, got {points.shape} "
                          f"and {labels.shape}")
    per_class = {}
    skipped = []
    centroids = []
    for label in np.unique(labels):
        members = points[labels == label]
        centroids.append(members.mean(axis=0))
        if len(members) < 2:
            skipped.append(label.item())
        else:
            per_class[label.item()] = _mean_pairwise(members)
    if not per_class:
        raise DataError("no class has two or more members")
    if len(centroids) < 2:
        raise DataError("need at least two classes for inter-class distance")
    mean_intra = float(np.mean(list(per_class.values())))
    inter = _mean_pairwise(np.stack(centroids))
    return ClassDistances(per_class=per_class, mean_intra=mean_intra, inter=inter,
                          ratio=inter / mean_intra, skipped=skipped)


def fused_features(model, instances, batch_size: int = 1024) -> np.ndarray:
    """Pre-output fused representation for each instance, run in chunks."""
    if not instances:
        raise DataError("no instances to featurize")
    feats = np.stack([inst.features for inst in instances])
    tokens = [inst.tokens for inst in instances]
    out = []
    for start in range(0, len(instances), batch_size):
        v, q = model.encode(feats[start:start + batch_size],
                            tokens[start:start + batch_size])
        fused, _ = model.head(v, q)
        out.append(fused.data)
    return np.vstack(out)


def pca_2d(points):
    """Center and project to the top two principal axes.

    Sign convention: each axis is flipped so its largest-magnitude
    loading is positive, making the projection reproducible.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2 or points.shape[1] < 2:
        raise ConfigError(f"need at least a (2, 2) matrix, got {points.shape}")
    centered = points - points.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:2]
    for i in range(2):
        if axes[i, np.argmax(np.abs(axes[i]))] < 0:
            axes[i] = -axes[i]
    coords = centered @ axes.T
    var = svals ** 2
    explained = var[:2] / var.sum() if var.sum() > 0 else np.zeros(2)
    return coords, explained


def export_answer_space(model, instances, path, labels=None) -> dict:
    """Write a 2-D projection of the fused features to CSV.

    Rows: instance id, class label (argmax answer by default), x, y.
    Returns the coordinates and explained-variance shares for plotting.
    """
    fused = fused_features(model, instances)
    if labels is None:
        labels = [inst.m for inst in instances]
    if len(labels) != len(instances):
        raise ConfigError(f"{len(labels)} labels for {len(instances)} instances")
    coords, explained = pca_2d(fused)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "x", "y"])
        for inst, label, (x, y) in zip(instances, labels, coords):
            w.writerow([inst.id, label, repr(float(x)), repr(float(y))])
    return {"coords": coords, "labels": np.asarray(labels),
            "explained": explained}
