"""Reusing a pretrained parameter set on a new task.

Transfer runs in two phases. During warm-up the agent acts with random
members of the pretrained policy subspace and only the new critics and the
temperature learn. Afterwards ``Phi`` and ``w_new`` are fine-tuned with
ordinary SAC (or only ``w_new`` when ``freeze_phi`` is set). ``run_scratch``
is the matched single-task baseline.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from taco import neurals as nn
from taco.paramspace import CompositionalMatrix, ParameterSet, sample_simplex
from taco.runlog import RunLog
from taco.taskworld import ACTION_DIM, STATE_DIM
from taco.trainer import (
    CompositionalSAC,
    ReplayBuffer,
    SACAgent,
    TrainConfig,
    clone_config,
    run_loop,
    seed_streams,
)

log = logging.getLogger(__name__)


class LayoutMismatchError(ValueError):
    """The pretrained parameters were produced for a different network layout."""


@dataclass
class TransferConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    n_e: int = 20000
    n_max: int = 200000
    threshold: float = 0.9
    freeze_phi: bool = False

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)
        if not 0 <= self.n_e < self.n_max:
            raise ValueError(f"need 0 <= n_e < n_max, got n_e={self.n_e}, n_max={self.n_max}")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _as_array(x):
    return np.asarray(x.data if isinstance(x, (ParameterSet, CompositionalMatrix)) else x, dtype=np.float64)


def init_from_pretrained(phi_star, layout, rng, layout_hash=None) -> ParameterSet:
    """Copies the policy rows of ``phi_star``; the critic rows are freshly initialised."""
    phi = _as_array(phi_star)
    if layout_hash is not None and layout_hash != layout.layout_hash:
        raise LayoutMismatchError(f"checkpoint layout {layout_hash} != configured layout {layout.layout_hash}")
    if phi.ndim != 2 or phi.shape[0] != layout.n:
        raise LayoutMismatchError(f"parameter set has {phi.shape[0] if phi.ndim else 0} rows, "
                                  f"layout needs {layout.n}")
    out = phi.copy()
    for k in range(out.shape[1]):
        out[layout.q_slice, k] = nn.init_q_region(layout, rng)
    return ParameterSet(out)


def initial_w_new(W_star):
    """Centroid of the pretrained compositional vectors."""
    return _as_array(W_star).mean(axis=1)


class ExplorePolicy:
    """Acts with ``Phi @ (W* beta)``; each environment redraws beta when its episode ends."""

    def __init__(self, phi, W_star, layout, n_envs, rng):
        self.phi = _as_array(phi)
        self.W = _as_array(W_star)
        self.layout = layout
        self.rng = rng
        self.betas = np.stack([sample_simplex(self.W.shape[1], rng) for _ in range(n_envs)])
        self.history = [b.copy() for b in self.betas]

    def w_tilde(self, i):
        return self.W @ self.betas[i]

    def on_episode_end(self, mask):
        for i in np.flatnonzero(mask):
            self.betas[i] = sample_simplex(self.W.shape[1], self.rng)
            self.history.append(self.betas[i].copy())

    def __call__(self, obs, tasks, rng):
        actions = np.empty((obs.shape[0], self.layout.action_dim))
        noise = rng.standard_normal(actions.shape)
        for i in range(obs.shape[0]):
            theta = self.phi @ self.w_tilde(i)
            out = nn.policy_forward(theta, self.layout, obs[i:i + 1])
            actions[i], _ = nn.sample_action(out, noise=noise[i:i + 1])
        return actions


def explore_policy(phi, W_star, layout, rng, n_envs=1):
    return ExplorePolicy(phi, W_star, layout, n_envs, rng)


@dataclass
class TransferResult:
    phi: ParameterSet
    w_new: np.ndarray
    log: RunLog
    learner: CompositionalSAC
    phi_init: np.ndarray
    w_init: np.ndarray
    phi_after_warmup: np.ndarray | None = None
    w_after_warmup: np.ndarray | None = None


def _stopper(stop_at, on_eval, state):
    """Wraps ``on_eval`` so the loop ends once eval success reaches ``stop_at``."""

    def hook(step, success, res):
        if on_eval is not None:
            on_eval(step, success, res)
        if stop_at is not None and np.mean(list(success.values())) >= stop_at:
            state["stopped"] = True
        return state.get("stopped", False)

    return hook


def run_transfer(config: TransferConfig, phi_star, W_star, new_task, layout_hash=None,
                 on_eval=None, stop_at=None) -> TransferResult:
    """Transfers a pretrained ``(Phi*, W*)`` to the single task ``new_task``.

    ``stop_at`` ends the run at the first evaluation with at least that
    success (the required-steps metric is unaffected).
    """
    train = config.train
    layout = nn.NetworkLayout(STATE_DIM, ACTION_DIM, train.hidden_sizes)
    phi_star = _as_array(phi_star)
    W_star = _as_array(W_star)
    if phi_star.shape[1] != W_star.shape[0]:
        raise ValueError("Phi* and W* disagree on the parameter-set size")
    train = clone_config(train, K=phi_star.shape[1])
    streams = seed_streams(train.seed)
    init_rng = streams[0]
    w_new = initial_w_new(W_star)
    if config.freeze_phi:
        if layout_hash is not None and layout_hash != layout.layout_hash:
            raise LayoutMismatchError(f"checkpoint layout {layout_hash} != configured layout {layout.layout_hash}")
        if phi_star.shape[0] != layout.n:
            raise LayoutMismatchError(f"parameter set has {phi_star.shape[0]} rows, layout needs {layout.n}")
        phi0 = phi_star.copy()
        override = nn.init_q_region(layout, init_rng)[None, :]
    else:
        phi0 = init_from_pretrained(phi_star, layout, init_rng, layout_hash).data
        override = None
    learner = CompositionalSAC(layout, 1, train, init_rng, phi=phi0, W=w_new[:, None],
                               train_w=False, train_policy_rows=False,
                               train_q_rows=not config.freeze_phi, critic_override=override)
    phi_init, w_init = learner.phi.copy(), learner.W.copy()
    specs = [new_task]
    runlog = RunLog(meta={"transfer": config.to_dict(), "task": new_task.name,
                          "layout_hash": layout.layout_hash})
    buffer = ReplayBuffer(train.replay_capacity, 1)

    result = TransferResult(ParameterSet(learner.phi), learner.W[:, 0], runlog, learner, phi_init, w_init)
    state = {}
    hook = _stopper(stop_at, on_eval, state)
    if config.n_e > 0:
        explorer = ExplorePolicy(phi_star, W_star, layout, train.n_parallel_envs, init_rng)

        def critic_only(lrn, buf, rng):
            b = buf.sample(0, train.per_task_batch(1), rng)
            return None if b is None else lrn.update({0: b}, rng, actor=False)

        # warm-up: critics and temperature only, acting with the explore policy
        phase_a = clone_config(train, warmup_steps=min(train.warmup_steps, config.n_e))
        run_loop(learner, specs, phase_a, streams, behavior=explorer, update_fn=critic_only,
                 on_eval=hook, log_=runlog, budget=config.n_e, buffer=buffer)
        result.phi_after_warmup = learner.phi.copy()
        result.w_after_warmup = learner.W.copy()
        log.info("warm-up finished after %d env steps", config.n_e)

    learner.train_w = True
    learner.train_policy_rows = not config.freeze_phi
    if not state.get("stopped"):
        phase_b = clone_config(train, warmup_steps=0 if config.n_e > 0 else train.warmup_steps)
        run_loop(learner, specs, phase_b, streams, on_eval=hook, log_=runlog,
                 start_step=config.n_e, budget=config.n_max - config.n_e, buffer=buffer)
    result.phi = ParameterSet(learner.phi)
    result.w_new = learner.W[:, 0].copy()
    return result


def run_scratch(train: TrainConfig, new_task, n_max=None, on_eval=None, stop_at=None) -> RunLog:
    """Plain SAC on ``new_task`` with the same evaluation cadence as a transfer run."""
    layout = nn.NetworkLayout(STATE_DIM, ACTION_DIM, train.hidden_sizes)
    streams = seed_streams(train.seed)
    agent = SACAgent(layout, train, streams[0])
    runlog = RunLog(meta={"scratch": train.to_dict(), "task": new_task.name,
                          "layout_hash": layout.layout_hash})
    run_loop(agent, [new_task], train, streams, on_eval=_stopper(stop_at, on_eval, {}), log_=runlog,
             budget=train.total_env_steps if n_max is None else n_max)
    return runlog

