"""A 2-D point-manipulation task family with a shared state and action space.

State layout (8 dims, identical for every task)::

    [agent_x, agent_y, vel_x, vel_y, obj_x, obj_y, goal_x, goal_y]

The object slots are zero for objectless skills, so the same coordinates mean
different things in different tasks. Actions are velocity commands in
[-1, 1]^2. Every task terminates as soon as its success predicate holds.

Rewards (per step, bounded by ``R_MAX``):

* dense reach-type skills: ``-|agent - goal|``; reach-avoid adds ``-1`` while
  inside the obstacle disc.
* dense object skills: ``-0.5 |agent - obj| - |obj - goal|``.
* sparse ("hard") skills: 0 until success.
* every skill: ``+1`` on the step success is reached.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

log = logging.getLogger(__name__)

STATE_DIM = 8
ACTION_DIM = 2
DT = 0.05
V_MAX = 1.0
SUCCESS_RADIUS = 0.05
PUSH_RADIUS = 0.1
GRASP_RADIUS = 0.06
OBSTACLE_PENALTY = 1.0
SUCCESS_BONUS = 1.0
R_MAX = 0.5 * 2 * np.sqrt(2) + 2 * np.sqrt(2) + OBSTACLE_PENALTY + SUCCESS_BONUS

SKILLS = ("reach", "push", "reach-avoid", "gap-pass", "pull", "reach-far")
DIFFICULTIES = ("easy", "medium", "hard")
OBJECT_SKILLS = ("push", "pull")

_FULL_BOX = ((-1.0, -1.0), (1.0, 1.0))


def _box(b):
    lo, hi = np.asarray(b[0], dtype=np.float64), np.asarray(b[1], dtype=np.float64)
    if lo.shape != (2,) or hi.shape != (2,) or np.any(hi < lo):
        raise ValueError(f"bad box {b}")
    return (tuple(lo.tolist()), tuple(hi.tolist()))


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    name: str
    skill: str
    goal_region: tuple
    difficulty: str = "easy"
    max_episode_steps: int = 150
    start_region: tuple = ((-0.2, -0.2), (0.2, 0.2))
    object_region: tuple | None = None
    obstacle: tuple | None = None  # (center_x, center_y, radius)
    gap: tuple | None = None  # (y_lo, y_hi) opening in the wall at x = 0
    dense: bool = True

    def __post_init__(self):
        if self.skill not in SKILLS:
            raise ValueError(f"unknown skill {self.skill!r}")
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(f"unknown difficulty {self.difficulty!r}")
        if self.max_episode_steps <= 0:
            raise ValueError("max_episode_steps must be positive")
        if self.skill in OBJECT_SKILLS and self.object_region is None:
            raise ValueError(f"{self.skill} needs an object_region")

    @property
    def has_object(self):
        return self.skill in OBJECT_SKILLS

    def to_dict(self):
        return {"task_id": self.task_id, "name": self.name, "skill": self.skill,
                "goal_region": [list(self.goal_region[0]), list(self.goal_region[1])],
                "difficulty": self.difficulty, "max_episode_steps": self.max_episode_steps,
                "start_region": [list(self.start_region[0]), list(self.start_region[1])],
                "object_region": None if self.object_region is None else
                [list(self.object_region[0]), list(self.object_region[1])],
                "obstacle": None if self.obstacle is None else list(self.obstacle),
                "gap": None if self.gap is None else list(self.gap), "dense": self.dense}


def spec_from_dict(d, task_id=None):
    return TaskSpec(
        task_id=int(d["task_id"] if task_id is None else task_id),
        name=d["name"],
        skill=d["skill"],
        goal_region=_box(d["goal_region"]),
        difficulty=d.get("difficulty", "easy"),
        max_episode_steps=int(d.get("max_episode_steps", 150)),
        start_region=_box(d.get("start_region", ((-0.2, -0.2), (0.2, 0.2)))),
        object_region=None if d.get("object_region") is None else _box(d["object_region"]),
        obstacle=None if d.get("obstacle") is None else tuple(float(v) for v in d["obstacle"]),
        gap=None if d.get("gap") is None else tuple(float(v) for v in d["gap"]),
        dense=bool(d.get("dense", d.get("difficulty", "easy") != "hard")),
    )


# registry -----------------------------------------------------------------

def load_registry(path=None):
    if path is None:
        text = resources.files("taco").joinpath("suites.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


def task_spec(name, task_id=0, registry=None):
    reg = registry or load_registry()
    if name not in reg["tasks"]:
        raise KeyError(f"unknown task {name!r}")
    d = dict(reg["tasks"][name], name=name, task_id=task_id)
    return spec_from_dict(d)


def make_suite(name, seed=0, jitter=0.0, registry=None):
    """Task specs of a registered suite, with ids 0..T-1 in registry order.

    ``jitter`` > 0 shifts every goal box by a seeded offset of at most that
    size (kept inside the arena); with the default 0 the seed has no effect.
    """
    reg = registry or load_registry()
    if name not in reg["suites"]:
        raise KeyError(f"unknown suite {name!r}; known: {sorted(reg['suites'])}")
    rng = np.random.default_rng(seed)
    specs = []
    for i, tname in enumerate(reg["suites"][name]["tasks"]):
        spec = task_spec(tname, i, reg)
        if jitter > 0:
            shift = rng.uniform(-jitter, jitter, size=2)
            lo = np.clip(np.add(spec.goal_region[0], shift), -1, 1)
            hi = np.clip(np.add(spec.goal_region[1], shift), -1, 1)
            spec = replace(spec, goal_region=_box((lo, hi)))
        specs.append(spec)
    return specs


def suite_groups(name, registry=None):
    """Preset task grouping (lists of task ids) committed with the suite, if any."""
    reg = registry or load_registry()
    s = reg["suites"][name]
    order = s["tasks"]
    if "groups" not in s:
        return None
    return [[order.index(t) for t in g] for g in s["groups"]]


# dynamics -----------------------------------------------------------------

_SKILL_CODE = {s: i for i, s in enumerate(SKILLS)}


@dataclass
class _TaskArrays:
    """Per-environment task parameters, laid out for vectorised stepping."""

    n: int
    skill: np.ndarray = field(init=False)
    dense: np.ndarray = field(init=False)
    obs_c: np.ndarray = field(init=False)
    obs_r: np.ndarray = field(init=False)
    gap: np.ndarray = field(init=False)

    def __post_init__(self):
        self.skill = np.zeros(self.n, dtype=np.int64)
        self.dense = np.ones(self.n, dtype=bool)
        self.obs_c = np.zeros((self.n, 2))
        self.obs_r = np.zeros(self.n)
        self.gap = np.zeros((self.n, 2))

    def set(self, i, spec: TaskSpec):
        self.skill[i] = _SKILL_CODE[spec.skill]
        self.dense[i] = spec.dense
        if spec.obstacle is not None:
            self.obs_c[i] = spec.obstacle[:2]
            self.obs_r[i] = spec.obstacle[2]
        else:
            self.obs_r[i] = 0.0
        self.gap[i] = spec.gap if spec.gap is not None else (0.0, 0.0)


_WARNED = set()


def _clip_action(action):
    a = np.asarray(action, dtype=np.float64)
    if np.any(np.abs(a) > 1.0):
        if "clip" not in _WARNED:
            log.warning("actions outside [-1, 1] are clipped")
            _WARNED.add("clip")
        a = np.clip(a, -1.0, 1.0)
    return a


def step_batch(obs, action, ta: _TaskArrays):
    """Vectorised transition for every environment row; returns ``(next_obs, reward, success)``."""
    act = _clip_action(action)
    a = obs[:, 0:2]
    o = obs[:, 4:6]
    g = obs[:, 6:8]
    new_a = np.clip(a + DT * V_MAX * act, -1.0, 1.0)

    wall = ta.skill == _SKILL_CODE["gap-pass"]
    if wall.any():
        cross = wall & ((a[:, 0] < 0.0) != (new_a[:, 0] < 0.0))
        y_mid = 0.5 * (a[:, 1] + new_a[:, 1])
        blocked = cross & ((y_mid < ta.gap[:, 0]) | (y_mid > ta.gap[:, 1]))
        new_a[blocked, 0] = a[blocked, 0]

    new_o = o.copy()
    is_pull = ta.skill == _SKILL_CODE["pull"]
    if is_pull.any():
        carry = is_pull & (np.linalg.norm(a - o, axis=1) < GRASP_RADIUS)
        new_o[carry] = np.clip(o[carry] + (new_a[carry] - a[carry]), -1.0, 1.0)
    is_push = ta.skill == _SKILL_CODE["push"]
    if is_push.any():
        d = o - new_a
        dist = np.linalg.norm(d, axis=1)
        contact = is_push & (dist < PUSH_RADIUS)
        if contact.any():
            dirs = d[contact]
            dn = dist[contact]
            zero = dn < 1e-12
            if zero.any():
                dirs[zero] = act[contact][zero] + np.array([1e-9, 0.0])
                dn = np.linalg.norm(dirs, axis=1)
            new_o[contact] = np.clip(new_a[contact] + PUSH_RADIUS * dirs / dn[:, None], -1.0, 1.0)

    has_obj = is_pull | is_push
    d_ag = np.linalg.norm(new_a - g, axis=1)
    d_ao = np.linalg.norm(new_a - new_o, axis=1)
    d_og = np.linalg.norm(new_o - g, axis=1)
    success = np.where(has_obj, d_og < SUCCESS_RADIUS, d_ag < SUCCESS_RADIUS)
    dense_r = np.where(has_obj, -0.5 * d_ao - d_og, -d_ag)
    in_obs = np.linalg.norm(new_a - ta.obs_c, axis=1) < ta.obs_r
    dense_r = dense_r - OBSTACLE_PENALTY * in_obs
    reward = np.where(ta.dense, dense_r, 0.0) + SUCCESS_BONUS * success

    nxt = np.empty_like(obs)
    nxt[:, 0:2] = new_a
    nxt[:, 2:4] = (new_a - a) / DT
    nxt[:, 4:6] = new_o
    nxt[:, 6:8] = g
    return nxt, reward, success


def _sample_box(box, rng, size=None):
    lo, hi = np.asarray(box[0]), np.asarray(box[1])
    return rng.uniform(lo, hi, size=None if size is None else (size, 2))


def initial_obs(spec: TaskSpec, rng):
    obs = np.zeros(STATE_DIM)
    obs[0:2] = _sample_box(spec.start_region, rng)
    if spec.has_object:
        obs[4:6] = _sample_box(spec.object_region, rng)
    obs[6:8] = _sample_box(spec.goal_region, rng)
    return obs


# single-environment API -----------------------------------------------------

@dataclass
class EnvState:
    obs: np.ndarray
    t: int = 0
    success: bool = False

    @property
    def agent(self):
        return self.obs[0:2]

    @property
    def goal(self):
        return self.obs[6:8]


def reset(spec: TaskSpec, rng) -> EnvState:
    return EnvState(initial_obs(spec, rng))


def step(state: EnvState, action, spec: TaskSpec):
    """Returns ``(next_state, reward, done, success)``; ``done`` on success or time limit."""
    ta = _TaskArrays(1)
    ta.set(0, spec)
    nxt, r, succ = step_batch(state.obs[None, :], np.asarray(action, dtype=np.float64)[None, :], ta)
    success = bool(state.success or succ[0])
    t = state.t + 1
    done = success or t >= spec.max_episode_steps
    return EnvState(nxt[0], t, success), float(r[0]), done, success


class VecEnv:
    """N independent environments stepped in lockstep, each with its own task.

    ``task_sampler(rng) -> task index`` picks the task on every reset. Finished
    environments reset immediately; the returned transition still carries the
    terminal next-state.
    """

    def __init__(self, specs, n_envs, rng, task_sampler=None, fixed_tasks=None):
        self.specs = list(specs)
        self.n = n_envs
        self.rng = rng
        self.task_sampler = task_sampler
        self.fixed_tasks = fixed_tasks
        self.ta = _TaskArrays(n_envs)
        self.task = np.zeros(n_envs, dtype=np.int64)
        self.obs = np.zeros((n_envs, STATE_DIM))
        self.t = np.zeros(n_envs, dtype=np.int64)
        self.max_t = np.zeros(n_envs, dtype=np.int64)
        for i in range(n_envs):
            self._reset_one(i)

    def _reset_one(self, i):
        if self.fixed_tasks is not None:
            k = int(self.fixed_tasks[i])
        elif self.task_sampler is not None:
            k = int(self.task_sampler(self.rng))
        else:
            k = 0
        spec = self.specs[k]
        self.task[i] = k
        self.ta.set(i, spec)
        self.obs[i] = initial_obs(spec, self.rng)
        self.t[i] = 0
        self.max_t[i] = spec.max_episode_steps

    def step(self, action):
        """Returns ``(obs, task, action, reward, next_obs, terminal, success, episode_end)`` rows."""
        obs = self.obs
        task = self.task.copy()
        nxt, reward, success = step_batch(obs, action, self.ta)
        self.t += 1
        end = success | (self.t >= self.max_t)
        out = (obs.copy(), task, np.clip(action, -1.0, 1.0), reward, nxt, success.copy(), success.copy(), end)
        self.obs = nxt.copy()
        for i in np.flatnonzero(end):
            self._reset_one(i)
        return out
