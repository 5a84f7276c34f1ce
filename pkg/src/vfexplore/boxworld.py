"""Continuous 2-D box-world navigation task.

A point agent moves in ``[0, 1]^2`` by clipped displacement actions plus Gaussian
noise, and is paid for closing the distance to a circular goal region.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import shaping
from .oracle import InvalidInputError, UncertaintyField
from .shaping import ShapingConfig


class InvalidStateError(RuntimeError):
    """Raised when stepping an episode that has already finished."""


class TimeEmbedding(str, enum.Enum):
    NONE = "none"
    NORMALIZED_REMAINING = "normalized_remaining"


class RewardMode(str, enum.Enum):
    VF = "vf"
    BASELINE = "baseline"
    TASK_ONLY = "task_only"
    VF_PLUS_TASK = "vf_plus_task"
    BASELINE_PLUS_TASK = "baseline_plus_task"

    @property
    def uses_task(self) -> bool:
        return self in (RewardMode.TASK_ONLY, RewardMode.VF_PLUS_TASK, RewardMode.BASELINE_PLUS_TASK)


@dataclass(frozen=True)
class EnvConfig:
    goal_center: tuple[float, float] = (0.9, 0.9)
    goal_radius: float = 0.05
    noise_scale: float = 0.01  # standard deviation per component
    horizon: int = 60
    start_box: tuple[float, float] = (0.05, 0.2)
    step_penalty: float = 0.01
    distance_reward_scale: float = 10.0
    goal_bonus: float = 20.0
    action_limit: float = 0.1
    time_embedding: TimeEmbedding = TimeEmbedding.NONE

    def __post_init__(self) -> None:
        object.__setattr__(self, "time_embedding", TimeEmbedding(self.time_embedding))
        object.__setattr__(self, "goal_center", tuple(float(x) for x in self.goal_center))
        object.__setattr__(self, "start_box", tuple(float(x) for x in self.start_box))
        if self.goal_radius <= 0:
            raise InvalidInputError("goal_radius must be > 0")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        if self.action_limit <= 0:
            raise InvalidInputError("action_limit must be > 0")
        if self.noise_scale < 0:
            raise InvalidInputError("noise_scale must be >= 0")
        lo, hi = self.start_box
        if not 0.0 <= lo < hi <= 1.0:
            raise InvalidInputError(f"start_box {self.start_box} must lie inside [0, 1]")

    @property
    def obs_dim(self) -> int:
        return 2 if self.time_embedding is TimeEmbedding.NONE else 3

    @property
    def action_dim(self) -> int:
        return 2


@dataclass(frozen=True)
class EnvState:
    pos: np.ndarray
    t: int = 0
    done: bool = False

    def __post_init__(self) -> None:
        p = np.array(self.pos, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "pos", p)


@dataclass
class Transition:
    s: np.ndarray
    obs: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    obs_next: np.ndarray
    base_reward: float
    shaped_reward: float
    grad_term: float
    rot_term: float
    done: bool
    terminal: bool  # goal reached, or horizon reached with time in the observation
    u_s: float
    u_s_next: float
    t: int
    reached_goal: bool = False


def reset(cfg: EnvConfig, rng: np.random.Generator) -> EnvState:
    lo, hi = cfg.start_box
    return EnvState(rng.uniform(lo, hi, size=2), 0)


def goal_distance(cfg: EnvConfig, pos) -> float:
    return float(np.linalg.norm(np.asarray(pos) - np.asarray(cfg.goal_center)))


def step(cfg: EnvConfig, state: EnvState, action, rng: Optional[np.random.Generator]):
    """Advance one step; returns ``(next_state, base_reward, done)``.

    ``rng=None`` disables the transition noise.
    """
    if state.done or state.t >= cfg.horizon:
        raise InvalidStateError("episode already finished")
    a = np.clip(np.asarray(action, dtype=float), -cfg.action_limit, cfg.action_limit)
    noise = rng.normal(0.0, cfg.noise_scale, size=2) if (rng is not None and cfg.noise_scale > 0) else 0.0
    pos_next = np.clip(state.pos + a + noise, 0.0, 1.0)
    d0 = goal_distance(cfg, state.pos)
    d1 = goal_distance(cfg, pos_next)
    reward = cfg.distance_reward_scale * (d0 - d1) - cfg.step_penalty
    reached = d1 <= cfg.goal_radius
    if reached:
        reward += cfg.goal_bonus
    t = state.t + 1
    done = bool(reached or t >= cfg.horizon)
    return EnvState(pos_next, t, done), float(reward), done


def observe(cfg: EnvConfig, state: EnvState) -> np.ndarray:
    if cfg.time_embedding is TimeEmbedding.NONE:
        return state.pos.copy()
    return np.array([state.pos[0], state.pos[1], (cfg.horizon - state.t) / cfg.horizon])


def assemble_reward(mode: RewardMode, base: float, vf_total: float, baseline: float) -> float:
    mode = RewardMode(mode)
    if mode is RewardMode.VF:
        return vf_total
    if mode is RewardMode.BASELINE:
        return baseline
    if mode is RewardMode.TASK_ONLY:
        return base
    if mode is RewardMode.VF_PLUS_TASK:
        return base + vf_total
    return base + baseline


def env_transition(
    cfg: EnvConfig,
    field: UncertaintyField,
    shaping_cfg: ShapingConfig,
    state: EnvState,
    action,
    reward_mode: RewardMode,
    rng: Optional[np.random.Generator],
) -> tuple[EnvState, Transition]:
    """One step with every reward component recorded."""
    obs = observe(cfg, state)
    a = np.clip(np.asarray(action, dtype=float), -cfg.action_limit, cfg.action_limit)
    nxt, base, done = step(cfg, state, a, rng)
    total, g_term, r_term = shaping.shaping_reward(shaping_cfg, field, state.pos, nxt.pos)
    bl = shaping.baseline_reward(shaping_cfg, field, nxt.pos)
    reached = goal_distance(cfg, nxt.pos) <= cfg.goal_radius
    timed_out = done and not reached
    terminal = reached or (timed_out and cfg.time_embedding is not TimeEmbedding.NONE)
    tr = Transition(
        s=state.pos.copy(),
        obs=obs,
        a=a,
        s_next=nxt.pos.copy(),
        obs_next=observe(cfg, nxt),
        base_reward=base,
        shaped_reward=assemble_reward(reward_mode, base, total, bl),
        grad_term=g_term,
        rot_term=r_term,
        done=done,
        terminal=bool(terminal),
        u_s=float(field.value(state.pos)),
        u_s_next=float(field.value(nxt.pos)),
        t=state.t,
        reached_goal=bool(reached),
    )
    return nxt, tr


Policy = Callable[[np.ndarray], np.ndarray]


def run_episode(
    cfg: EnvConfig,
    field: UncertaintyField,
    shaping_cfg: ShapingConfig,
    policy: Policy,
    reward_mode: RewardMode,
    rng: np.random.Generator,
    noise: bool = True,
) -> list[Transition]:
    """Roll out ``policy`` (observation -> action) until the episode ends."""
    state = reset(cfg, rng)
    out: list[Transition] = []
    while not state.done:
        action = policy(observe(cfg, state))
        state, tr = env_transition(cfg, field, shaping_cfg, state, action, reward_mode, rng if noise else None)
        out.append(tr)
    return out


TRAJECTORY_COLUMNS = ("t", "x", "y", "ax", "ay", "x_next", "y_next", "base_r", "grad_term", "rot_term", "u_s", "done")


def trajectory_rows(transitions: list[Transition], episode: int = 0):
    for tr in transitions:
        yield (
            episode, tr.t, *map(float, tr.s), *map(float, tr.a), *map(float, tr.s_next),
            tr.base_reward, tr.grad_term, tr.rot_term, tr.u_s, int(tr.done),
        )
