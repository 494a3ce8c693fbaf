"""Deterministic grid navigation environment producing coordinate traces.

Cells are integer coordinates (x, y) with y increasing upward. Moves into a
wall resolve to staying in place. Coordinates appear in traces as the raw
cell indices (no sub-cell interpolation), so formula predicates over x and y
operate in cell units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formulas import Formula, horizon
from .traces import Trace

ACTIONS = ("up", "down", "left", "right", "stay")
_DELTAS = {
    "up": (0, 1),
    "down": (0, -1),
    "left": (-1, 0),
    "right": (1, 0),
    "stay": (0, 0),
}


@dataclass(frozen=True)
class GridEnv:
    """Immutable description of a grid world.

    ground_truth is the hidden constraint used only by the oracle labeler;
    interactive runs never consult it.
    """

    width: int
    height: int
    start: tuple[int, int]
    episode_length: int
    ground_truth: Formula | None = None
    transition_noise: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        x0, y0 = self.start
        if not (0 <= x0 < self.width and 0 <= y0 < self.height):
            raise ValueError(f"start cell {self.start} outside the grid")
        if self.episode_length < 1:
            raise ValueError("episode length must be positive")
        if not 0.0 <= self.transition_noise <= 1.0:
            raise ValueError("transition noise must be a probability")
        if self.ground_truth is not None:
            if horizon(self.ground_truth) + 1 > self.episode_length:
                raise ValueError(
                    "ground-truth horizon exceeds what an episode can evaluate"
                )

    @property
    def n_cells(self) -> int:
        return self.width * self.height


def step(env: GridEnv, cell: tuple[int, int], action: str) -> tuple[int, int]:
    """Deterministic transition; out-of-bounds moves return the same cell."""
    dx, dy = _DELTAS[action]
    x, y = cell[0] + dx, cell[1] + dy
    if 0 <= x < env.width and 0 <= y < env.height:
        return (x, y)
    return cell


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def random_trace(env: GridEnv, length: int, seed, start: tuple[int, int] | None = None) -> Trace:
    """Uniform random walk of exactly `length` samples.

    The walk starts at a uniformly random cell unless `start` is given.
    Deterministic under a fixed seed.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = _as_rng(seed)
    if start is None:
        cell = (int(rng.integers(env.width)), int(rng.integers(env.height)))
    else:
        cell = start
    points = [cell]
    for _ in range(length - 1):
        action = ACTIONS[int(rng.integers(len(ACTIONS)))]
        if env.transition_noise > 0.0 and rng.random() < env.transition_noise:
            action = ACTIONS[int(rng.integers(len(ACTIONS)))]
        cell = step(env, cell, action)
        points.append(cell)
    return Trace.from_points(points)


def rollout_policy(
    env: GridEnv,
    policy,
    length: int,
    exploration: float,
    seed,
    start: tuple[int, int] | None = None,
) -> Trace:
    """Execute a policy for exactly `length` samples.

    policy is any callable (cell, t) -> action name. At each step the policy
    action is taken with probability 1 - exploration, otherwise a uniformly
    random action. With exploration == 0 no randomness is consumed, so the
    trace is fully determined by the policy and the start cell.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = _as_rng(seed)
    cell = env.start if start is None else start
    points = [cell]
    for t in range(length - 1):
        if exploration > 0.0 and rng.random() < exploration:
            action = ACTIONS[int(rng.integers(len(ACTIONS)))]
        else:
            action = policy(cell, t)
        if env.transition_noise > 0.0 and rng.random() < env.transition_noise:
            action = ACTIONS[int(rng.integers(len(ACTIONS)))]
        cell = step(env, cell, action)
        points.append(cell)
    return Trace.from_points(points)
