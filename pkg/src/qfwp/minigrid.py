"""Deterministic MiniGrid-Empty-NxN clone with MiniGrid's 7x7x3 egocentric view.

Grid coordinates are ``(x, y)`` with x to the east and y to the south; the
outer ring is wall. The agent starts at (1, 1) facing east and the goal sits
at (n-2, n-2).

Observation cells carry (object, color, state) codes using MiniGrid's tables:
objects 0 unseen, 1 empty, 2 wall, 8 goal, 10 agent; wall is grey (5), goal
green (1); the agent cell's state is its direction. Cells outside the grid are
unseen. The flattened vector is indexed ``(view_x * 7 + view_y) * 3 + channel``
(MiniGrid's ``image.flatten()`` order), with the agent at view (3, 6), and
every code divided by 10.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigurationError, StateError

VIEW = 7
OBS_DIM = VIEW * VIEW * 3
NUM_ACTIONS = 6
ACTION_NAMES = ("left", "right", "forward", "pickup", "drop", "toggle")
EAST, SOUTH, WEST, NORTH = range(4)
DIR_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))

UNSEEN, EMPTY, WALL, GOAL, AGENT = 0, 1, 2, 8, 10
GREEN, GREY = 1, 5
CODE_SCALE = 10.0


@dataclass
class GridEnv:
    n: int
    agent_pos: tuple
    agent_dir: int
    goal_pos: tuple
    step_count: int = 0
    done: bool = False

    @property
    def max_steps(self) -> int:
        return 4 * self.n * self.n

    def cell(self, x: int, y: int) -> int:
        if not (0 <= x < self.n and 0 <= y < self.n):
            return UNSEEN
        if x in (0, self.n - 1) or y in (0, self.n - 1):
            return WALL
        if (x, y) == self.goal_pos:
            return GOAL
        return EMPTY


def env_reset(n: int, seed: int = 0) -> tuple:
    """New episode; the layout is fixed, so ``seed`` is accepted for interface parity only."""
    if n not in (5, 6):
        raise ConfigurationError(f"grid size must be 5 or 6, got {n!r}")
    env = GridEnv(n, (1, 1), EAST, (n - 2, n - 2))
    return env, render_observation(env)


def _encode(env: GridEnv, x: int, y: int) -> tuple:
    kind = env.cell(x, y)
    if kind == WALL:
        return WALL, GREY, 0
    if kind == GOAL:
        return GOAL, GREEN, 0
    return kind, 0, 0


def render_observation(env: GridEnv) -> np.ndarray:
    fx, fy = DIR_VEC[env.agent_dir]
    rx, ry = -fy, fx  # agent's right-hand side
    ax, ay = env.agent_pos
    image = np.zeros((VIEW, VIEW, 3))
    for vx in range(VIEW):
        for vy in range(VIEW):
            ahead, side = VIEW - 1 - vy, vx - VIEW // 2
            image[vx, vy] = _encode(env, ax + fx * ahead + rx * side, ay + fy * ahead + ry * side)
    image[VIEW // 2, VIEW - 1] = (AGENT, 0, env.agent_dir)
    return image.reshape(-1) / CODE_SCALE


def env_step(env: GridEnv, action: int) -> tuple:
    """Apply one action; returns ``(observation, reward, done)``."""
    if env.done:
        raise StateError("episode already finished; call env_reset")
    if not 0 <= action < NUM_ACTIONS:
        raise ArgumentError(f"action must be in 0..{NUM_ACTIONS - 1}, got {action}")
    env.step_count += 1
    reward = 0.0
    if action == 0:
        env.agent_dir = (env.agent_dir - 1) % 4
    elif action == 1:
        env.agent_dir = (env.agent_dir + 1) % 4
    elif action == 2:
        dx, dy = DIR_VEC[env.agent_dir]
        nx, ny = env.agent_pos[0] + dx, env.agent_pos[1] + dy
        kind = env.cell(nx, ny)
        if kind in (EMPTY, GOAL):
            env.agent_pos = (nx, ny)
        if kind == GOAL:
            env.done = True
            reward = 1 - 0.9 * (env.step_count / env.max_steps)
    if env.step_count >= env.max_steps:
        env.done = True
    return render_observation(env), reward, env.done


class TrajectoryDump:
    """JSON-lines writer of ``{step, action, reward, done}`` records."""

    def __init__(self, path):
        self._fh = open(path, "w")

    def write(self, step: int, action: int, reward: float, done: bool) -> None:
        self._fh.write(json.dumps({"step": step, "action": int(action), "reward": reward, "done": bool(done)}) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
