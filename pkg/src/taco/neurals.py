"""Tanh-squashed Gaussian policy and twin Q networks over flat parameter vectors.

Every network reads its weights out of one flat vector ``theta`` of length
``layout.n``; the slot map says which index range belongs to which network.
Gradients are hand-derived (reverse mode through the dense kernels), so a
composed ``theta = Phi @ w`` plugs in without any framework.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from taco.kernels import mlp_backward, mlp_forward, n_params

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
TANH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NetworkLayout:
    state_dim: int
    action_dim: int
    hidden_sizes: tuple[int, ...] = (64, 64)
    slots: dict[str, tuple[int, int]] = field(init=False, compare=False)
    n: int = field(init=False, compare=False)

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be positive")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        slots = {}
        off = 0
        for name, sizes in (("policy", self.policy_sizes), ("q1", self.q_sizes), ("q2", self.q_sizes)):
            k = n_params(sizes)
            slots[name] = (off, off + k)
            off += k
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "n", off)

    @property
    def policy_sizes(self):
        return (self.state_dim, *self.hidden_sizes, 2 * self.action_dim)

    @property
    def q_sizes(self):
        return (self.state_dim + self.action_dim, *self.hidden_sizes, 1)

    def slot(self, name) -> slice:
        a, b = self.slots[name]
        return slice(a, b)

    @property
    def policy_slice(self) -> slice:
        return self.slot("policy")

    @property
    def q_slice(self) -> slice:
        """Both critics; contiguous, and the shape of a target shadow vector."""
        return slice(self.slots["q1"][0], self.slots["q2"][1])

    @property
    def q_size(self) -> int:
        return self.slots["q2"][1] - self.slots["q1"][0]

    @property
    def layout_hash(self) -> str:
        desc = {"state_dim": self.state_dim, "action_dim": self.action_dim,
                "hidden": list(self.hidden_sizes), "act": "relu", "head": "tanh-gauss"}
        return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:16]

    def to_dict(self):
        return {"state_dim": self.state_dim, "action_dim": self.action_dim,
                "hidden_sizes": list(self.hidden_sizes)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["state_dim"]), int(d["action_dim"]), tuple(d["hidden_sizes"]))


@dataclass
class PolicyOutput:
    mean: np.ndarray
    log_std: np.ndarray
    # forward cache and pre-clamp log_std, kept for the backward pass
    cache: tuple | None = None
    raw_log_std: np.ndarray | None = None


def _check_theta(theta, layout):
    if theta.ndim != 1 or theta.shape[0] != layout.n:
        raise ValueError(f"theta must have length {layout.n}, got shape {theta.shape}")


def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} must have trailing dimension {dim}, got shape {x.shape}")
    return x, single


def policy_forward(theta, layout: NetworkLayout, state) -> PolicyOutput:
    _check_theta(theta, layout)
    s, single = _as_batch(state, layout.state_dim, "state")
    out, cache = mlp_forward(theta[layout.policy_slice], layout.policy_sizes, s)
    d = layout.action_dim
    mean, raw = out[:, :d], out[:, d:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    if single:
        return PolicyOutput(mean[0], log_std[0], cache, raw[0])
    return PolicyOutput(mean, log_std, cache, raw)


def _log_prob_from_noise(log_std, z, a):
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI - np.log(1.0 - a * a + TANH_EPS), axis=-1)


def sample_action(out: PolicyOutput, rng=None, deterministic=False, noise=None):
    """Draws ``action = tanh(mean + std * z)``; returns ``(action, log_prob)``.

    ``noise`` overrides the standard-normal draw (used for reparameterised
    gradients). In deterministic mode the action is ``tanh(mean)`` and the
    log-probability is evaluated at ``z = 0``.
    """
    if deterministic:
        z = np.zeros_like(out.mean)
    elif noise is not None:
        z = noise
    else:
        z = rng.standard_normal(out.mean.shape)
    a = np.tanh(out.mean + np.exp(out.log_std) * z)
    return a, _log_prob_from_noise(out.log_std, z, a)


def action_log_prob(out: PolicyOutput, action):
    """Log-density of a given squashed action under the policy."""
    a = np.clip(np.asarray(action, dtype=np.float64), -1 + 1e-15, 1 - 1e-15)
    z = (np.arctanh(a) - out.mean) / np.exp(out.log_std)
    return _log_prob_from_noise(out.log_std, z, a)


def squash_grads(out: PolicyOutput, z, a, d_logp, d_action):
    """Chain rule from (d loss/d log_prob, d loss/d action) to (d mean, d raw log_std).

    Both upstream terms are per-sample; ``d_logp`` has shape (B,), ``d_action``
    shape (B, d). The clamp on log_std has zero gradient outside its range.
    """
    one_m_a2 = 1.0 - a * a
    # d log_prob / d u through the tanh-Jacobian term
    dlogp_du = 2.0 * a * one_m_a2 / (one_m_a2 + TANH_EPS)
    du = d_logp[:, None] * dlogp_du + d_action * one_m_a2
    std = np.exp(out.log_std)
    d_mean = du
    d_ls = du * std * z - d_logp[:, None]
    inside = (out.raw_log_std >= LOG_STD_MIN) & (out.raw_log_std <= LOG_STD_MAX)
    return d_mean, d_ls * inside


def policy_backward(theta, layout, out: PolicyOutput, d_mean, d_log_std_raw):
    """Full-length gradient (zero outside the policy slot)."""
    g = np.zeros(layout.n)
    dout = np.concatenate([d_mean, d_log_std_raw], axis=1)
    gp, _ = mlp_backward(theta[layout.policy_slice], layout.policy_sizes, out.cache, dout)
    g[layout.policy_slice] = gp
    return g


@dataclass
class QOutput:
    q1: np.ndarray
    q2: np.ndarray
    cache1: tuple
    cache2: tuple


def q_forward_cached(q_params, layout: NetworkLayout, state, action) -> QOutput:
    """Twin critics from a Q-region vector (``theta[layout.q_slice]`` or a target shadow)."""
    s, _ = _as_batch(state, layout.state_dim, "state")
    a, _ = _as_batch(action, layout.action_dim, "action")
    if s.shape[0] != a.shape[0]:
        raise ValueError("state and action batch sizes differ")
    x = np.concatenate([s, a], axis=1)
    k = q_params.shape[0] // 2
    o1, c1 = mlp_forward(q_params[:k], layout.q_sizes, x)
    o2, c2 = mlp_forward(q_params[k:], layout.q_sizes, x)
    return QOutput(o1[:, 0], o2[:, 0], c1, c2)


def q_forward(theta, layout: NetworkLayout, state, action):
    _check_theta(theta, layout)
    single = np.ndim(state) == 1
    qo = q_forward_cached(theta[layout.q_slice], layout, state, action)
    if single:
        return float(qo.q1[0]), float(qo.q2[0])
    return qo.q1, qo.q2


def q_backward(q_params, layout, qo: QOutput, d_q1, d_q2, want_params=True, want_action=False):
    """Returns ``(grad over the Q region or None, d action or None)``."""
    k = q_params.shape[0] // 2
    g = None
    da = None
    g1, dx1 = mlp_backward(q_params[:k], layout.q_sizes, qo.cache1, d_q1[:, None], want_params, want_action)
    g2, dx2 = mlp_backward(q_params[k:], layout.q_sizes, qo.cache2, d_q2[:, None], want_params, want_action)
    if want_params:
        g = np.concatenate([g1, g2])
    if want_action:
        da = (dx1 + dx2)[:, layout.state_dim:]
    return g, da


def init_theta(layout: NetworkLayout, rng) -> np.ndarray:
    """Fan-in uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for every layer."""
    theta = np.empty(layout.n)
    off = 0
    for sizes in (layout.policy_sizes, layout.q_sizes, layout.q_sizes):
        for i in range(len(sizes) - 1):
            fin, fout = sizes[i], sizes[i + 1]
            bound = 1.0 / math.sqrt(fin)
            k = fin * fout + fout
            theta[off:off + k] = rng.uniform(-bound, bound, size=k)
            off += k
    return theta


def init_q_region(layout: NetworkLayout, rng) -> np.ndarray:
    q = np.empty(layout.q_size)
    off = 0
    for _ in range(2):
        sizes = layout.q_sizes
        for i in range(len(sizes) - 1):
            fin, fout = sizes[i], sizes[i + 1]
            bound = 1.0 / math.sqrt(fin)
            k = fin * fout + fout
            q[off:off + k] = rng.uniform(-bound, bound, size=k)
            off += k
    return q


def soft_update(target, online, tau):
    """Polyak averaging in place: ``target <- (1 - tau) * target + tau * online``."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if tau == 1.0:
        target[...] = online
    else:
        target *= 1.0 - tau
        target += tau * online
    return target
