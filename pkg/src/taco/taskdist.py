"""Task-sampling distributions and task-relation analysis.

* uniform / preset-weighted / group-balanced sampling probabilities;
* online regrouping: DBSCAN over the (normalised) policy parameters of each
  task's composed parameter vector;
* PCA projection of compositional vectors for plotting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from taco.paramspace import CompositionalMatrix, compose_all
from taco.trainer import TaskDistribution

NOISE = -1


@dataclass
class TaskGrouping:
    groups: list

    def __post_init__(self):
        self.groups = [sorted(int(t) for t in g) for g in self.groups]
        if any(len(g) == 0 for g in self.groups):
            raise ValueError("empty group")
        flat = [t for g in self.groups for t in g]
        if len(flat) != len(set(flat)):
            raise ValueError("groups overlap")
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("groups must partition task ids 0..T-1")

    @property
    def T(self):
        return sum(len(g) for g in self.groups)

    @classmethod
    def singletons(cls, T):
        return cls([[t] for t in range(T)])

    @classmethod
    def from_labels(cls, labels):
        """Clusters become groups; each noise point becomes its own singleton group."""
        groups = {}
        singles = []
        for t, lab in enumerate(labels):
            if lab == NOISE:
                singles.append([t])
            else:
                groups.setdefault(int(lab), []).append(t)
        return cls([groups[k] for k in sorted(groups)] + singles)


def group_balanced_probs(G: TaskGrouping) -> TaskDistribution:
    """Every group gets mass 1/|G|, split evenly among its tasks."""
    p = np.zeros(G.T)
    n_groups = len(G.groups)
    for g in G.groups:
        p[g] = 1.0 / (n_groups * len(g))
    return TaskDistribution(p / p.sum())


def preset_weighted_probs(weights) -> TaskDistribution:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    return TaskDistribution(w / w.sum())


def region_query(D, i, eps):
    return np.flatnonzero(D[i] <= eps)


def dbscan(points, eps, min_pts):
    """Density-based clustering, Euclidean metric.

    A point is *core* when its closed eps-ball (itself included) holds at
    least ``min_pts`` points. Clusters are grown from core points in index
    order; border points join the first cluster that reaches them. Returns an
    integer label per point, ``-1`` for noise.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    diff = X[:, None, :] - X[None, :, :]
    D = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    core = (D <= eps).sum(axis=1) >= min_pts
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        frontier = list(region_query(D, i, eps))
        while frontier:
            j = frontier.pop()
            if labels[j] == NOISE:
                labels[j] = cluster
            if visited[j]:
                continue
            visited[j] = True
            if core[j]:
                frontier.extend(k for k in region_query(D, j, eps) if not visited[k] or labels[k] == NOISE)
        cluster += 1
    return labels


def default_eps(points, scale=0.5):
    """``scale`` times the median pairwise distance (positive fallback for identical points)."""
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, 1)
    d = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)[iu]
    med = float(np.median(d))
    return scale * med if med > 0 else 1e-12


def policy_features(phi, W, layout):
    """L2-normalised policy slice of every composed task parameter vector (rows = tasks)."""
    theta = compose_all(phi, W)
    feats = theta[layout.policy_slice].T
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.where(norms > 0, norms, 1.0)


def online_adjust(phi, W, layout, eps=None, min_pts=1, eps_scale=0.5):
    """Regroup tasks by clustering their policy parameters; returns ``(grouping, distribution)``."""
    feats = policy_features(phi, W, layout)
    if eps is None:
        eps = default_eps(feats, eps_scale)
    G = TaskGrouping.from_labels(dbscan(feats, eps, min_pts))
    return G, group_balanced_probs(G)


def pca_project(W, dims=2):
    """Per-task coordinates on the top principal directions of the w vectors.

    Rows of the result are tasks. Directions are ordered by decreasing
    variance, and each is signed so that its largest-magnitude loading is
    positive. Also returns the explained-variance ratios.
    """
    Wd = W.data if isinstance(W, CompositionalMatrix) else np.asarray(W, dtype=np.float64)
    X = Wd.T  # tasks x K
    if X.shape[0] < 2:
        raise ValueError("PCA needs at least two tasks")
    Xc = X - X.mean(axis=0)
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    dims = min(dims, Vt.shape[0])
    V = Vt[:dims]
    for k in range(dims):
        if V[k, np.argmax(np.abs(V[k]))] < 0:
            V[k] = -V[k]
    var = S ** 2
    ratio = var[:dims] / var.sum() if var.sum() > 0 else np.zeros(dims)
    return Xc @ V.T, V, ratio
