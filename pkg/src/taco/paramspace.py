"""Parameter-compositional decomposition: each task's parameters are ``Phi @ w_task``.

``Phi`` (n x K) is shared by every task; ``w_task`` (K,) is a per-task
compositional vector. This module owns the composition, the chain rule back
onto ``Phi`` and ``w``, extreme-loss maskout and the simplex reset of ``w``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class NoValidTasksError(RuntimeError):
    """Every task in a gradient step exceeded the loss threshold; nothing to reset from."""


def _finite(a, what):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite entries")


class ParameterSet:
    """The shared n x K matrix; column ``i`` is the parameter vector phi_i."""

    def __init__(self, data):
        data = np.array(data, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"parameter set must be a non-empty n x K matrix, got {data.shape}")
        _finite(data, "parameter set")
        self.data = data

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def K(self):
        return self.data.shape[1]

    def copy(self):
        return ParameterSet(self.data)

    @classmethod
    def from_columns(cls, columns):
        return cls(np.stack(columns, axis=1))


@dataclass
class CompositionalVector:
    task_id: int
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1 or self.w.size < 1:
            raise ValueError("compositional vector must be a non-empty 1-D array")
        _finite(self.w, "compositional vector")


class CompositionalMatrix:
    """K x T matrix of compositional vectors, one column per task in task-id order."""

    def __init__(self, data, task_ids=None):
        data = np.array(data, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[1] < 1:
            raise ValueError("compositional matrix must be K x T with T >= 1")
        _finite(data, "compositional matrix")
        self.data = data
        self.task_ids = list(range(data.shape[1])) if task_ids is None else [int(t) for t in task_ids]
        if len(self.task_ids) != data.shape[1]:
            raise ValueError("one task id per column is required")

    @property
    def K(self):
        return self.data.shape[0]

    @property
    def T(self):
        return self.data.shape[1]

    def column(self, idx) -> CompositionalVector:
        return CompositionalVector(self.task_ids[idx], self.data[:, idx].copy())

    @classmethod
    def from_vectors(cls, vectors):
        vectors = list(vectors)
        return cls(np.stack([v.w for v in vectors], axis=1), [v.task_id for v in vectors])

    def copy(self):
        return CompositionalMatrix(self.data, self.task_ids)


def _w_array(w):
    return w.w if isinstance(w, CompositionalVector) else np.asarray(w, dtype=np.float64)


def _phi_array(phi):
    return phi.data if isinstance(phi, ParameterSet) else np.asarray(phi, dtype=np.float64)


def compose(phi, w):
    phi = _phi_array(phi)
    w = _w_array(w)
    if w.ndim != 1 or w.shape[0] != phi.shape[1]:
        raise ValueError(f"w has length {w.shape}, parameter set has K={phi.shape[1]}")
    return phi @ w


def compose_all(phi, W):
    phi = _phi_array(phi)
    Wd = W.data if isinstance(W, CompositionalMatrix) else np.asarray(W, dtype=np.float64)
    if Wd.ndim != 2 or Wd.shape[0] != phi.shape[1]:
        raise ValueError(f"W has shape {Wd.shape}, parameter set has K={phi.shape[1]}")
    return phi @ Wd


def grad_phi(grad_theta, w):
    """d L / d Phi for L(Phi w): the outer product grad_theta w^T."""
    g = np.asarray(grad_theta, dtype=np.float64)
    w = _w_array(w)
    _finite(g, "grad_theta")
    _finite(w, "w")
    return np.outer(g, w)


def grad_w(grad_theta, phi):
    """d L / d w for L(Phi w): Phi^T grad_theta."""
    g = np.asarray(grad_theta, dtype=np.float64)
    phi = _phi_array(phi)
    _finite(g, "grad_theta")
    if g.shape != (phi.shape[0],):
        raise ValueError(f"grad_theta must have length {phi.shape[0]}")
    return phi.T @ g


@dataclass(frozen=True)
class MaskoutPolicy:
    epsilon: float = 3e3

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def mask_losses(losses, policy: MaskoutPolicy):
    """Zeroes every loss above the threshold.

    Returns ``(masked, invalid, valid)`` where ``invalid``/``valid`` are sorted
    lists of positions. NaN and +inf count as above the threshold.
    """
    losses = np.asarray(losses, dtype=np.float64)
    ok = losses <= policy.epsilon  # False for NaN
    masked = np.where(ok, losses, 0.0)
    return masked, [int(i) for i in np.flatnonzero(~ok)], [int(i) for i in np.flatnonzero(ok)]


def sample_simplex(k, rng):
    """Uniform draw from the (k-1)-simplex via normalised unit exponentials."""
    e = rng.standard_exponential(k)
    return e / e.sum()


def reset_w(W, valid, rng, return_beta=False):
    """A uniform-simplex convex combination of the valid columns of ``W``."""
    valid = list(valid)
    if not valid:
        raise NoValidTasksError("no valid tasks: every task loss exceeded the maskout threshold")
    Wd = W.data if isinstance(W, CompositionalMatrix) else np.asarray(W)
    if len(valid) == 1:
        beta = np.ones(1)
        w = Wd[:, valid[0]].copy()
    else:
        beta = sample_simplex(len(valid), rng)
        w = Wd[:, valid] @ beta
    return (w, beta) if return_beta else w


# checkpoint I/O ------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, phi, W, layout_hash, extra=None, meta=None):
    """Writes an ``.npz`` holding n, K, layout hash, Phi (column-major) and every w.

    ``extra`` maps names to additional float arrays (temperatures, target
    shadows, optimiser moments); ``meta`` is JSON-serialisable metadata.
    """
    phi = _phi_array(phi)
    arrays = {
        "n": np.array(phi.shape[0], dtype=np.int64),
        "K": np.array(phi.shape[1], dtype=np.int64),
        "phi_colmajor": np.asfortranarray(phi).ravel(order="F"),
        "W": W.data,
        "task_ids": np.array(W.task_ids, dtype=np.int64),
        "header": np.array(json.dumps({"version": CHECKPOINT_VERSION, "layout_hash": layout_hash,
                                       "meta": meta or {}})),
    }
    for k, v in (extra or {}).items():
        arrays["extra__" + k] = np.asarray(v)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


@dataclass
class Checkpoint:
    phi: ParameterSet
    W: CompositionalMatrix
    layout_hash: str
    extra: dict
    meta: dict


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        n, K = int(z["n"]), int(z["K"])
        phi = z["phi_colmajor"].reshape((n, K), order="F")
        W = CompositionalMatrix(z["W"], z["task_ids"].tolist())
        extra = {k[len("extra__"):]: z[k].copy() for k in z.files if k.startswith("extra__")}
    if W.K != K:
        raise ValueError("checkpoint is inconsistent: W rows differ from K")
    return Checkpoint(ParameterSet(np.ascontiguousarray(phi)), W, header["layout_hash"], extra,
                      header.get("meta", {}))
