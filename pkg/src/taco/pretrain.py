"""Multi-task pretraining driver: sampling mode, evaluation, checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from taco import neurals as nn
from taco.paramspace import CompositionalMatrix, ParameterSet, load_checkpoint, save_checkpoint
from taco.runlog import RunLog
from taco.taskdist import (
    TaskGrouping,
    group_balanced_probs,
    online_adjust,
    preset_weighted_probs,
)
from taco.taskworld import ACTION_DIM, STATE_DIM
from taco.trainer import (
    CompositionalSAC,
    TaskDistribution,
    TrainConfig,
    evaluate,
    run_loop,
    sample_task,
    seed_streams,
)

log = logging.getLogger(__name__)

P_MODES = ("uniform", "balanced", "weighted", "online")


@dataclass
class PretrainResult:
    phi_star: ParameterSet
    W_star: CompositionalMatrix
    log: RunLog
    learner: CompositionalSAC
    layout: nn.NetworkLayout
    best_success: float
    best_state: dict


def initial_distribution(p_mode, T, groups=None, weights=None):
    if p_mode in ("uniform", "online"):
        return TaskDistribution.uniform(T)
    if p_mode == "balanced":
        if groups is None:
            raise ValueError("balanced sampling needs a task grouping")
        return group_balanced_probs(groups if isinstance(groups, TaskGrouping) else TaskGrouping(groups))
    if p_mode == "weighted":
        if weights is None:
            raise ValueError("weighted sampling needs per-task weights")
        return preset_weighted_probs(weights)
    raise ValueError(f"unknown sampling mode {p_mode!r}; choose from {P_MODES}")


def run_pretraining(config: TrainConfig, specs, p_mode="uniform", groups=None, weights=None,
                    run_dir=None, resume=False) -> PretrainResult:
    """Trains Phi and one w per task on ``specs``; returns the best-average-success parameters."""
    T = len(specs)
    layout = nn.NetworkLayout(STATE_DIM, ACTION_DIM, config.hidden_sizes)
    streams = seed_streams(config.seed)
    learner = CompositionalSAC(layout, T, config, streams[0])
    state = {"P": initial_distribution(p_mode, T, groups, weights)}
    runlog = RunLog(meta={"config": config.to_dict(), "p_mode": p_mode, "tasks": [s.name for s in specs],
                          "probs": state["P"].probs.tolist(), "layout_hash": layout.layout_hash})
    start = 0
    run_dir = Path(run_dir) if run_dir is not None else None
    if resume:
        if run_dir is None or not (run_dir / "last.npz").exists():
            raise FileNotFoundError("nothing to resume: no last.npz in the run directory")
        ck = load_checkpoint(run_dir / "last.npz")
        if ck.layout_hash != layout.layout_hash:
            raise ValueError("checkpoint layout does not match the configured network")
        learner.phi[...] = ck.phi.data
        learner.W[...] = ck.W.data
        learner.load_extra(ck.extra)
        start = int(ck.meta["env_step"])
        state["P"] = TaskDistribution(ck.meta["probs"])
        if (run_dir / "runlog.jsonl").exists():
            runlog = RunLog.read(run_dir / "runlog.jsonl")
        log.info("resuming at env step %d (replay buffer is refilled from scratch)", start)

    if config.total_env_steps <= start:
        snap = learner.snapshot()
        return PretrainResult(ParameterSet(learner.phi), CompositionalMatrix(learner.W), runlog, learner,
                              layout, -1.0, snap)

    def sampler(rng):
        return sample_task(state["P"], rng)

    def save(name, snap, env_step, meta_extra=None):
        if run_dir is None:
            return
        meta = {"env_step": env_step, "probs": state["P"].probs.tolist(),
                "tasks": [s.name for s in specs], "layout": layout.to_dict()}
        meta.update(meta_extra or {})
        extra = learner.extra_arrays() if name == "last" else {"log_alpha": snap["log_alpha"],
                                                                "targets": snap["targets"]}
        save_checkpoint(run_dir / f"{name}.npz", snap["phi"], CompositionalMatrix(snap["W"]),
                        layout.layout_hash, extra, meta)

    def on_eval(step, success, res):
        if p_mode == "online":
            G, P = online_adjust(learner.phi, learner.W, layout, min_pts=config.online_min_pts,
                                 eps_scale=config.online_eps_scale)
            state["P"] = P
            runlog.records[-1]["groups"] = G.groups
            runlog.records[-1]["probs"] = P.probs.tolist()
        if run_dir is not None:
            if res.best is not None and res.best_success == runlog.records[-1]["avg_success"]:
                save("best", res.best, step, {"avg_success": res.best_success})
            save("last", learner.snapshot(), step)
            runlog.write(run_dir / "runlog.jsonl")

    res = run_loop(learner, specs, config, streams, task_sampler=sampler, on_eval=on_eval,
                   log_=runlog, start_step=start, budget=config.total_env_steps - start)
    best = res.best if res.best is not None else learner.snapshot()
    if run_dir is not None:
        runlog.write(run_dir / "runlog.jsonl")
        with open(run_dir / "config.json", "w") as fh:
            json.dump({"train": config.to_dict(), "p_mode": p_mode, "tasks": [s.name for s in specs]},
                      fh, indent=2)
    return PretrainResult(ParameterSet(best["phi"]), CompositionalMatrix(best["W"]), runlog, learner,
                          layout, res.best_success, best)


class FrozenPolicy:
    """Acting-only view of composed parameters, for evaluation of a snapshot."""

    def __init__(self, layout, phi, W):
        self.layout = layout
        self.phi = np.asarray(phi)
        self.W = np.asarray(W)

    def theta_for(self, task):
        return self.phi @ self.W[:, task]

    act = CompositionalSAC.act


def evaluate_snapshot(layout, phi, W, specs, n_episodes, seed):
    """Fresh, unbiased re-evaluation of a (possibly selected) snapshot."""
    pol = FrozenPolicy(layout, phi, W)
    return evaluate(pol, specs, n_episodes, np.random.default_rng(seed))
