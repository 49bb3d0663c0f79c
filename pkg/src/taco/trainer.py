"""Multi-task SAC over composed per-task parameters.

One gradient step, for every task with data in the buffer:

1. compose ``theta_t = Phi @ w_t`` and compute the SAC losses and gradients;
2. mask every task whose critic loss exceeds ``epsilon``;
3. update ``Phi`` with the summed gradient of the unmasked tasks;
4. update each unmasked ``w_t`` with its own gradient;
5. reset every masked ``w`` to a random convex combination of unmasked ones;
6. Polyak-average the per-task target critics.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from taco import neurals as nn
from taco.paramspace import (
    CompositionalMatrix,
    MaskoutPolicy,
    NoValidTasksError,
    ParameterSet,
    compose,
    grad_phi,
    grad_w,
    mask_losses,
    reset_w,
    sample_simplex,
)
from taco.runlog import RunLog
from taco.taskworld import ACTION_DIM, STATE_DIM, VecEnv

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """A loss became non-finite during training."""


@dataclass
class TrainConfig:
    batch_size: int = 1280
    n_parallel_envs: int = 10
    hidden_sizes: tuple = (64, 64)
    lr_policy: float = 3e-4
    lr_q: float = 3e-4
    lr_w: float = 3e-4
    lr_alpha: float = 3e-4
    discount: float = 0.99
    warmup_steps: int = 1500
    replay_capacity: int = 1_000_000
    epsilon: float = 3e3
    K: int = 5
    total_env_steps: int = 400_000
    eval_every: int = 10_000
    eval_episodes: int = 5
    seed: int = 0
    tau: float = 0.005
    init_temperature: float = 1.0
    updates_per_step: int = 1
    online_eps_scale: float = 0.5
    online_min_pts: int = 1

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seed":
                if v < 0:
                    raise ValueError("seed must be non-negative")
            elif f.name == "hidden_sizes":
                if not v or min(v) <= 0:
                    raise ValueError("hidden_sizes must be positive")
            elif f.name in ("total_env_steps", "warmup_steps"):
                if v < 0:
                    raise ValueError(f"{f.name} must be non-negative")
            elif not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")

    def per_task_batch(self, n_tasks):
        if self.batch_size % n_tasks:
            raise ValueError(f"batch_size {self.batch_size} is not divisible by {n_tasks} tasks")
        return self.batch_size // n_tasks

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


# optimiser ------------------------------------------------------------------

class Adam:
    """Adam on a fixed-shape array, updated in place."""

    def __init__(self, shape, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param, grad):
        self.t += 1
        self.m *= self.b1
        self.m += (1.0 - self.b1) * grad
        self.v *= self.b2
        self.v += (1.0 - self.b2) * (grad * grad)
        mhat = self.m / (1.0 - self.b1 ** self.t)
        vhat = self.v / (1.0 - self.b2 ** self.t)
        param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def reset(self):
        self.m[...] = 0.0
        self.v[...] = 0.0
        self.t = 0

    def state(self):
        return np.concatenate([self.m.ravel(), self.v.ravel(), [float(self.t)]])

    def load(self, flat):
        k = self.m.size
        self.m[...] = flat[:k].reshape(self.m.shape)
        self.v[...] = flat[k:2 * k].reshape(self.v.shape)
        self.t = int(flat[-1])


# replay -----------------------------------------------------------------------

class ReplayBuffer:
    """Ring buffer of transitions with a live index list per task.

    Overwriting a slot removes it from its old task's list (swap-remove), so
    per-task sampling only ever sees live entries of that task.
    """

    def __init__(self, capacity, n_tasks, state_dim=STATE_DIM, action_dim=ACTION_DIM):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, state_dim))
        self.a = np.zeros((self.capacity, action_dim))
        self.r = np.zeros(self.capacity)
        self.s2 = np.zeros((self.capacity, state_dim))
        self.done = np.zeros(self.capacity)
        self.success = np.zeros(self.capacity, dtype=bool)
        self.task = np.full(self.capacity, -1, dtype=np.int64)
        self._pos = np.zeros(self.capacity, dtype=np.int64)
        self._lists = [np.zeros(16, dtype=np.int64) for _ in range(n_tasks)]
        self._sizes = [0] * n_tasks
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def task_size(self, task):
        return self._sizes[task]

    def _remove(self, i):
        t = self.task[i]
        lst = self._lists[t]
        p = self._pos[i]
        last = lst[self._sizes[t] - 1]
        lst[p] = last
        self._pos[last] = p
        self._sizes[t] -= 1

    def _append(self, t, i):
        if self._sizes[t] == self._lists[t].shape[0]:
            grown = np.zeros(min(2 * self._lists[t].shape[0], self.capacity), dtype=np.int64)
            grown[:self._sizes[t]] = self._lists[t][:self._sizes[t]]
            self._lists[t] = grown
        self._lists[t][self._sizes[t]] = i
        self._pos[i] = self._sizes[t]
        self._sizes[t] += 1

    def add(self, s, a, r, s2, done, success, task):
        i = self.ptr
        if self.task[i] >= 0:
            self._remove(i)
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self.done[i] = float(done)
        self.success[i] = bool(success)
        self.task[i] = int(task)
        self._append(int(task), i)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_batch(self, s, a, r, s2, done, success, task):
        for k in range(len(r)):
            self.add(s[k], a[k], r[k], s2[k], done[k], success[k], task[k])

    def indices(self, task):
        return self._lists[task][:self._sizes[task]]

    def sample(self, task, batch_size, rng):
        n = self._sizes[task]
        if n == 0:
            return None
        idx = self._lists[task][rng.integers(0, n, size=batch_size)]
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx], self.task[idx])


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    task: np.ndarray | None = None

    def __len__(self):
        return self.r.shape[0]


# task distribution ------------------------------------------------------------

class TaskDistribution:
    def __init__(self, probs):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be a non-empty non-negative vector")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")
        self.probs = p
        self._cdf = np.cumsum(p)
        self._cdf[-1] = 1.0

    @classmethod
    def uniform(cls, T):
        return cls(np.full(T, 1.0 / T))

    @property
    def T(self):
        return self.probs.size

    def __repr__(self):
        return f"TaskDistribution({np.round(self.probs, 4).tolist()})"


def sample_task(P: TaskDistribution, rng):
    """Categorical draw of a task index."""
    return int(np.searchsorted(P._cdf, rng.random(), side="right"))


# SAC losses ---------------------------------------------------------------------

@dataclass
class TaskLosses:
    q: float
    pi: float
    alpha: float
    grad: np.ndarray  # over theta; critic loss on the Q slots, actor loss on the policy slot
    grad_log_alpha: float
    entropy: float


def td_target(theta, layout, batch, q_target, log_alpha, gamma, noise):
    """Soft Bellman target; a constant for the critic update."""
    out = nn.policy_forward(theta, layout, batch.s2)
    a2, logp2 = nn.sample_action(out, noise=noise)
    qt = nn.q_forward_cached(q_target, layout, batch.s2, a2)
    soft_v = np.minimum(qt.q1, qt.q2) - math.exp(log_alpha) * logp2
    return batch.r + gamma * (1.0 - batch.done) * soft_v


def critic_loss_and_grad(theta, layout, s, a, y):
    """``mean((q1 - y)^2) + mean((q2 - y)^2)`` and its gradient over ``theta``."""
    qp = theta[layout.q_slice]
    qo = nn.q_forward_cached(qp, layout, s, a)
    B = y.shape[0]
    e1, e2 = qo.q1 - y, qo.q2 - y
    loss = float(np.mean(e1 * e1) + np.mean(e2 * e2))
    gq, _ = nn.q_backward(qp, layout, qo, 2.0 * e1 / B, 2.0 * e2 / B)
    g = np.zeros(layout.n)
    g[layout.q_slice] = gq
    return loss, g


def actor_loss_and_grad(theta, layout, s, noise, alpha):
    """``mean(alpha * log_pi - min(q1, q2))`` with the reparameterised action.

    The gradient is returned over the policy slot only; critics are treated
    as fixed for this loss. Also returns the per-sample log-probabilities.
    """
    out = nn.policy_forward(theta, layout, s)
    a, logp = nn.sample_action(out, noise=noise)
    qp = theta[layout.q_slice]
    qo = nn.q_forward_cached(qp, layout, s, a)
    B = s.shape[0]
    first = qo.q1 <= qo.q2
    minq = np.where(first, qo.q1, qo.q2)
    loss = float(np.mean(alpha * logp - minq))
    dq1 = np.where(first, -1.0 / B, 0.0)
    dq2 = np.where(first, 0.0, -1.0 / B)
    _, da = nn.q_backward(qp, layout, qo, dq1, dq2, want_params=False, want_action=True)
    d_mean, d_ls = nn.squash_grads(out, noise, a, np.full(B, alpha / B), da)
    return loss, nn.policy_backward(theta, layout, out, d_mean, d_ls), logp


def alpha_loss_and_grad(log_alpha, logp, target_entropy):
    """``alpha * mean(-log_pi - target_entropy)`` with ``alpha = exp(log_alpha)``."""
    alpha = math.exp(log_alpha)
    m = float(np.mean(-logp - target_entropy))
    return alpha * m, alpha * m


def sac_losses(theta, layout, batch, q_target, log_alpha, gamma, rng, target_entropy, noises=None):
    """All three SAC losses for one task's batch, evaluated at ``theta``."""
    B = len(batch)
    if noises is None:
        z2 = rng.standard_normal((B, layout.action_dim))
        z = rng.standard_normal((B, layout.action_dim))
    else:
        z2, z = noises
    y = td_target(theta, layout, batch, q_target, log_alpha, gamma, z2)
    lq, gq = critic_loss_and_grad(theta, layout, batch.s, batch.a, y)
    lpi, gpi, logp = actor_loss_and_grad(theta, layout, batch.s, z, math.exp(log_alpha))
    la, gla = alpha_loss_and_grad(log_alpha, logp, target_entropy)
    return TaskLosses(lq, lpi, la, gq + gpi, gla, float(-np.mean(logp)))


# learners -----------------------------------------------------------------------

class _Learner:
    """Shared acting logic. Subclasses provide ``theta_for(task)``."""

    layout: nn.NetworkLayout

    def act(self, obs, tasks, rng, deterministic=False):
        actions = np.empty((obs.shape[0], self.layout.action_dim))
        noise = None if deterministic else rng.standard_normal(actions.shape)
        for t in np.unique(tasks):
            rows = np.flatnonzero(tasks == t)
            out = nn.policy_forward(self.theta_for(int(t)), self.layout, obs[rows])
            a, _ = nn.sample_action(out, deterministic=deterministic,
                                    noise=None if deterministic else noise[rows])
            actions[rows] = a
        return actions


class SACAgent(_Learner):
    """Plain single-task SAC on a flat parameter vector (the from-scratch baseline)."""

    def __init__(self, layout, config: TrainConfig, rng, theta=None):
        self.layout = layout
        self.config = config
        self.theta = nn.init_theta(layout, rng) if theta is None else np.array(theta, dtype=np.float64)
        self.target = self.theta[layout.q_slice].copy()
        self.log_alpha = math.log(config.init_temperature)
        self.opt_pi = Adam(self.theta[layout.policy_slice].shape, config.lr_policy)
        self.opt_q = Adam(self.theta[layout.q_slice].shape, config.lr_q)
        self.opt_alpha = Adam((), config.lr_alpha)
        self.target_entropy = -float(layout.action_dim)
        self.n_tasks = 1

    def theta_for(self, task):
        return self.theta

    def update(self, batches, rng):
        batch = batches[0]
        L = sac_losses(self.theta, self.layout, batch, self.target, self.log_alpha,
                       self.config.discount, rng, self.target_entropy)
        if not np.isfinite(L.q) or not np.isfinite(L.pi):
            raise DivergenceError(f"non-finite SAC loss (q={L.q}, pi={L.pi})")
        self.opt_pi.step(self.theta[self.layout.policy_slice], L.grad[self.layout.policy_slice])
        self.opt_q.step(self.theta[self.layout.q_slice], L.grad[self.layout.q_slice])
        la = np.array(self.log_alpha)
        self.opt_alpha.step(la, np.array(L.grad_log_alpha))
        self.log_alpha = float(la)
        nn.soft_update(self.target, self.theta[self.layout.q_slice], self.config.tau)
        return {0: L}, [], [0]


class CompositionalSAC(_Learner):
    """SAC where task ``t`` acts and learns with ``theta_t = Phi @ w_t``.

    Flags restrict what is trained: ``train_policy_rows`` / ``train_q_rows``
    select the row blocks of ``Phi``; ``train_w`` the compositional vectors.
    ``critic_override`` replaces the composed critics with free per-task
    vectors (used when ``Phi`` must stay frozen but a critic still has to learn).
    """

    def __init__(self, layout, n_tasks, config: TrainConfig, rng, phi=None, W=None,
                 train_w=True, train_policy_rows=True, train_q_rows=True, critic_override=None):
        self.layout = layout
        self.config = config
        self.n_tasks = n_tasks
        K = config.K
        if phi is None:
            phi = np.stack([nn.init_theta(layout, rng) for _ in range(K)], axis=1)
        self.phi = np.array(phi.data if isinstance(phi, ParameterSet) else phi, dtype=np.float64)
        if self.phi.shape != (layout.n, K):
            raise ValueError(f"parameter set must be {layout.n} x {K}, got {self.phi.shape}")
        if W is None:
            W = np.stack([sample_simplex(K, rng) for _ in range(n_tasks)], axis=1)
        self.W = np.array(W.data if isinstance(W, CompositionalMatrix) else W, dtype=np.float64)
        if self.W.shape != (K, n_tasks):
            raise ValueError(f"compositional matrix must be {K} x {n_tasks}")
        self.train_w = train_w
        self.train_policy_rows = train_policy_rows
        self.train_q_rows = train_q_rows
        self.critic_override = None if critic_override is None else np.array(critic_override, dtype=np.float64)
        self.mask = MaskoutPolicy(config.epsilon)
        self.log_alpha = np.full(n_tasks, math.log(config.init_temperature))
        self.targets = np.stack([self._q_params(t) for t in range(n_tasks)])
        ps, qs = layout.policy_slice, layout.q_slice
        self.opt_phi_pi = Adam(self.phi[ps].shape, config.lr_policy)
        self.opt_phi_q = Adam(self.phi[qs].shape, config.lr_q)
        self.opt_w = [Adam((K,), config.lr_w) for _ in range(n_tasks)]
        self.opt_alpha = [Adam((), config.lr_alpha) for _ in range(n_tasks)]
        self.opt_override = None
        if self.critic_override is not None:
            self.opt_override = [Adam((layout.q_size,), config.lr_q) for _ in range(n_tasks)]
        self.target_entropy = -float(layout.action_dim)
        self.n_resets = 0

    def theta_for(self, task):
        theta = compose(self.phi, self.W[:, task])
        if self.critic_override is not None:
            theta[self.layout.q_slice] = self.critic_override[task]
        return theta

    def _q_params(self, task):
        if self.critic_override is not None:
            return self.critic_override[task].copy()
        return compose(self.phi[self.layout.q_slice], self.W[:, task])

    def update(self, batches, rng, actor=True):
        """One gradient step over the given per-task batches (dict task -> Batch)."""
        tasks = sorted(batches)
        losses = {}
        for t in tasks:
            losses[t] = sac_losses(self.theta_for(t), self.layout, batches[t], self.targets[t],
                                   float(self.log_alpha[t]), self.config.discount, rng,
                                   self.target_entropy)
        _, invalid_pos, valid_pos = mask_losses([losses[t].q for t in tasks], self.mask)
        invalid = [tasks[i] for i in invalid_pos]
        valid = [tasks[i] for i in valid_pos]
        if invalid and not valid:
            raise NoValidTasksError(
                f"all {len(tasks)} task losses exceed epsilon={self.mask.epsilon}: "
                + ", ".join(f"task {t}: L_q={losses[t].q:.4g}" for t in tasks))
        for t in valid:
            if not np.isfinite(losses[t].pi):
                raise DivergenceError(f"non-finite actor loss for task {t}")

        ps, qs = self.layout.policy_slice, self.layout.q_slice
        grads = {}
        for t in valid:
            g = losses[t].grad
            if not actor:
                g = g.copy()
                g[ps] = 0.0
            if self.critic_override is not None:
                grads[t] = (g, g[qs].copy())
                g = g.copy()
                g[qs] = 0.0
            else:
                grads[t] = (g, None)
        # w gradients are taken at the pre-update Phi
        gw = {t: grad_w(grads[t][0], self.phi) for t in valid} if self.train_w else {}

        gphi = None
        for t in valid:
            term = grad_phi(grads[t][0], self.W[:, t])
            gphi = term if gphi is None else gphi + term
        if gphi is not None:
            if self.train_policy_rows and actor:
                self.opt_phi_pi.step(self.phi[ps], gphi[ps])
            if self.train_q_rows and self.critic_override is None:
                self.opt_phi_q.step(self.phi[qs], gphi[qs])
        for t in valid:
            if self.train_w:
                self.opt_w[t].step(self.W[:, t], gw[t])
            if self.critic_override is not None:
                self.opt_override[t].step(self.critic_override[t], grads[t][1])
            la = np.array(self.log_alpha[t])
            self.opt_alpha[t].step(la, np.array(losses[t].grad_log_alpha))
            self.log_alpha[t] = float(la)
        for t in invalid:
            log.info("loss maskout: task %d L_q=%.4g > %.4g, resetting w", t, losses[t].q, self.mask.epsilon)
            self.W[:, t] = reset_w(self.W, valid, rng)
            self.opt_w[t].reset()
            self.n_resets += 1
        for t in range(self.n_tasks):
            nn.soft_update(self.targets[t], self._q_params(t), self.config.tau)
        return losses, invalid, valid

    # state --------------------------------------------------------------

    def snapshot(self):
        return {"phi": self.phi.copy(), "W": self.W.copy(), "log_alpha": self.log_alpha.copy(),
                "targets": self.targets.copy(),
                "critic_override": None if self.critic_override is None else self.critic_override.copy()}

    def extra_arrays(self):
        extra = {"log_alpha": self.log_alpha, "targets": self.targets,
                 "opt_phi_pi": self.opt_phi_pi.state(), "opt_phi_q": self.opt_phi_q.state(),
                 "opt_w": np.stack([o.state() for o in self.opt_w]),
                 "opt_alpha": np.stack([o.state() for o in self.opt_alpha])}
        if self.critic_override is not None:
            extra["critic_override"] = self.critic_override
        return extra

    def load_extra(self, extra):
        self.log_alpha[...] = extra["log_alpha"]
        self.targets[...] = extra["targets"]
        self.opt_phi_pi.load(extra["opt_phi_pi"])
        self.opt_phi_q.load(extra["opt_phi_q"])
        for o, s in zip(self.opt_w, extra["opt_w"]):
            o.load(s)
        for o, s in zip(self.opt_alpha, extra["opt_alpha"]):
            o.load(s)
        if "critic_override" in extra and self.critic_override is not None:
            self.critic_override[...] = extra["critic_override"]


# rollout loop ---------------------------------------------------------------------

def seed_streams(seed):
    """Independent generators: init, env, action, train, eval."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]


def evaluate(learner, specs, n_episodes, rng, task_ids=None):
    """Deterministic evaluation; success rate per task index."""
    task_ids = list(range(len(specs))) if task_ids is None else list(task_ids)
    fixed = np.repeat(task_ids, n_episodes)
    env = VecEnv(specs, len(fixed), rng, fixed_tasks=fixed)
    finished = np.zeros(len(fixed), dtype=bool)
    succeeded = np.zeros(len(fixed), dtype=bool)
    max_t = max(specs[t].max_episode_steps for t in task_ids)
    for _ in range(max_t):
        obs = env.obs.copy()
        acts = learner.act(obs, env.task, rng, deterministic=True)
        _, _, _, _, _, _, succ, end = env.step(acts)
        succeeded |= succ & ~finished
        finished |= end
        if finished.all():
            break
    return {t: float(succeeded[fixed == t].mean()) for t in task_ids}


@dataclass
class LoopResult:
    learner: object
    log: RunLog
    best: dict | None = None
    best_success: float = -1.0
    env_steps: int = 0
    extras: dict = field(default_factory=dict)


def run_loop(learner, specs, config: TrainConfig, streams, *, task_sampler=None,
             behavior=None, update_fn=None, on_eval=None, task_names=None, log_=None,
             start_step=0, budget=None, eval_task_ids=None, buffer=None):
    """Alternates vectorised environment interaction with gradient steps.

    ``behavior(obs, tasks, rng)`` overrides the acting policy, including the
    warm-up (which is otherwise uniform random); if it has ``on_episode_end``
    that is called with the mask of environments that just finished.
    ``update_fn(learner, buffer, rng)`` overrides the gradient step.
    ``on_eval(step, success, result)`` runs after every evaluation; a true
    return value ends the loop early.
    """
    _, env_rng, act_rng, train_rng, eval_rng = streams
    T = len(specs)
    per_task = config.per_task_batch(T)
    if buffer is None:
        buffer = ReplayBuffer(config.replay_capacity, T)
    env = VecEnv(specs, config.n_parallel_envs, env_rng, task_sampler=task_sampler)
    runlog = log_ if log_ is not None else RunLog()
    names = task_names or [s.name for s in specs]
    res = LoopResult(learner, runlog)
    budget = config.total_env_steps if budget is None else budget
    step = start_step
    next_eval = start_step + config.eval_every
    t0 = time.perf_counter()
    last_losses = {}
    warm_end = start_step + config.warmup_steps

    def default_update(lrn, buf, rng):
        batches = {}
        for t in range(T):
            b = buf.sample(t, per_task, rng)
            if b is not None:
                batches[t] = b
        if not batches:
            return None
        return lrn.update(batches, rng)

    update = update_fn or default_update
    while step < start_step + budget:
        if behavior is not None:
            acts = behavior(env.obs, env.task, act_rng)
        elif step < warm_end:
            acts = act_rng.uniform(-1.0, 1.0, size=(env.n, ACTION_DIM))
        else:
            acts = learner.act(env.obs, env.task, act_rng)
        s, task, a, r, s2, term, succ, end = env.step(acts)
        buffer.add_batch(s, a, r, s2, term, succ, task)
        if behavior is not None and hasattr(behavior, "on_episode_end") and end.any():
            behavior.on_episode_end(end)
        step += env.n
        if step >= warm_end:
            for _ in range(config.updates_per_step):
                out = update(learner, buffer, train_rng)
                if out is not None:
                    last_losses = out[0]
        if step >= next_eval:
            success = evaluate(learner, specs, config.eval_episodes, eval_rng, eval_task_ids)
            loss_summary = {}
            for t, L in last_losses.items():
                loss_summary[names[t]] = {"q": L.q, "pi": L.pi, "alpha": L.alpha, "entropy": L.entropy}
            avg = float(np.mean(list(success.values())))
            runlog.append(step, {names[t]: v for t, v in success.items()}, loss_summary,
                          time.perf_counter() - t0,
                          resets=int(getattr(learner, "n_resets", 0)))
            if avg >= res.best_success and hasattr(learner, "snapshot"):
                res.best_success = avg
                res.best = learner.snapshot()
            stop = on_eval(step, success, res) if on_eval is not None else False
            while next_eval <= step:
                next_eval += config.eval_every
            if stop:
                break
    res.env_steps = step
    res.extras["buffer"] = buffer
    return res


def clone_config(config, **changes):
    c = copy.deepcopy(config)
    for k, v in changes.items():
        setattr(c, k, v)
    c.__post_init__()
    return c
