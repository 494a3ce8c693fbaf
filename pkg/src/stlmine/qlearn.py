"""Tabular Q-learning rewarded only by end-of-episode trace robustness.

The reward for an episode trace w against constraint phi is

    rho(phi, w, 0)        if rho < 0
    rho(phi, w, 0) + 100  otherwise

and it is granted on the terminal transition only; every intermediate step
pays 0. Because the objective is timed, the state is the grid cell augmented
with the time index, which restores the Markov property that the bare cell
lacks under deadline constraints.

Episodes run for the full env.episode_length regardless of goal attainment,
so every episode yields a trace long enough to evaluate the constraint.
Episodes start from uniformly random cells: the policy-gap diagnostic takes
an expectation over start states, which is only meaningful when training has
visited them.

Because the reward only exists once the episode trace is complete, each
episode's transitions are updated after the episode, in reverse time order.
Each individual update is the standard one-step rule; the reverse order
just lets the terminal credit reach early time layers within one episode
instead of one layer per episode. Within an episode every (cell, t) state
is visited at most once, so action selection is unaffected by the order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formulas import Formula, horizon, robustness_signal
from .gridworld import ACTIONS, GridEnv, rollout_policy
from .seeding import derive_rng
from .traces import Trace


class HorizonTooLongError(ValueError):
    """Constraint horizon exceeds what an episode trace can evaluate."""


@dataclass
class LearnHyperparams:
    """Schedules for one training run.

    The learning rate for a state-action pair visited n times before is
    alpha0 / (1 + n) ** omega. Any omega in (0.5, 1] makes the per-pair
    sums satisfy sum(alpha) = inf and sum(alpha^2) < inf.
    """

    episodes: int
    discount: float = 0.99
    epsilon_initial: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_episodes: int | None = None  # None: 60% of episodes
    alpha0: float = 1.0
    omega: float = 0.6

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if not 0.0 < self.alpha0 <= 1.0:
            raise ValueError("alpha0 must be in (0, 1]")
        if not 0.5 < self.omega <= 1.0:
            raise ValueError("omega must be in (0.5, 1]")
        for eps in (self.epsilon_initial, self.epsilon_final):
            if not 0.0 <= eps <= 1.0:
                raise ValueError("exploration rates must be probabilities")

    def epsilon_at(self, episode: int) -> float:
        decay = self.epsilon_decay_episodes
        if decay is None:
            decay = int(0.6 * self.episodes)
        if decay <= 0:
            return self.epsilon_final
        frac = min(1.0, episode / decay)
        return self.epsilon_initial + frac * (self.epsilon_final - self.epsilon_initial)

    def alpha(self, prior_visits: int) -> float:
        return self.alpha0 / (1.0 + prior_visits) ** self.omega


@dataclass
class QTable:
    """State-action values and visit counts over (cell, t) states."""

    values: np.ndarray  # (width, height, episode_length, n_actions)
    visits: np.ndarray  # same shape, int64

    @classmethod
    def zeros(cls, env: GridEnv) -> "QTable":
        shape = (env.width, env.height, env.episode_length, len(ACTIONS))
        return cls(np.zeros(shape), np.zeros(shape, dtype=np.int64))

    def to_dict(self) -> dict:
        w, h, length, _ = self.values.shape
        states = [[x, y, t] for x in range(w) for y in range(h) for t in range(length)]
        values = self.values.reshape(-1, len(ACTIONS)).tolist()
        return {"states": states, "actions": list(ACTIONS), "values": values}

    @classmethod
    def from_dict(cls, obj: dict, width: int, height: int, episode_length: int) -> "QTable":
        values = np.asarray(obj["values"], dtype=np.float64)
        values = values.reshape(width, height, episode_length, len(ACTIONS))
        return cls(values, np.zeros_like(values, dtype=np.int64))


@dataclass(frozen=True)
class Policy:
    """Greedy action per (cell, t); callable as policy(cell, t) -> action."""

    actions: np.ndarray  # (width, height, episode_length) int8

    def __call__(self, cell: tuple[int, int], t: int) -> str:
        return ACTIONS[self.actions[cell[0], cell[1], t]]


def episode_reward(phi: Formula, w: Trace) -> float:
    """Terminal reward: rho if rho < 0 else rho + 100."""
    rho = float(robustness_signal(phi, w.array[None, :, :])[0, 0])
    return rho if rho < 0.0 else rho + 100.0


def greedy_policy(q: QTable) -> Policy:
    # np.argmax takes the first maximum, which is exactly the fixed
    # tie-break order of ACTIONS.
    return Policy(np.argmax(q.values, axis=-1).astype(np.int8))


def train(env: GridEnv, phi: Formula, hp: LearnHyperparams, seed) -> QTable:
    """Run ε-greedy Q-learning for hp.episodes episodes.

    Raises HorizonTooLongError when the constraint cannot be evaluated on an
    episode trace; callers are expected to penalize such candidates instead
    of training on them.
    """
    length = env.episode_length
    if horizon(phi) + 1 > length:
        raise HorizonTooLongError(
            f"horizon {horizon(phi)} needs traces of length >= {horizon(phi) + 1}, "
            f"episodes have {length}"
        )
    q = QTable.zeros(env)
    if hp.episodes == 0:
        return q
    rng = derive_rng(seed) if isinstance(seed, int) else np.random.default_rng(seed)
    values = q.values
    visits = q.visits
    width, height = env.width, env.height
    gamma = hp.discount
    n_actions = len(ACTIONS)
    deltas = [(0, 1), (0, -1), (-1, 0), (1, 0), (0, 0)]
    sig = np.empty((1, length, 2))
    xs = np.empty(length, dtype=np.int64)
    ys = np.empty(length, dtype=np.int64)
    acts = np.empty(length - 1, dtype=np.int64)

    for episode in range(hp.episodes):
        eps = hp.epsilon_at(episode)
        x = int(rng.integers(width))
        y = int(rng.integers(height))
        xs[0] = x
        ys[0] = y
        for t in range(length - 1):
            if rng.random() < eps:
                a = int(rng.integers(n_actions))
            else:
                a = int(np.argmax(values[x, y, t]))
            acts[t] = a
            dx, dy = deltas[a]
            nx, ny = x + dx, y + dy
            if not (0 <= nx < width and 0 <= ny < height):
                nx, ny = x, y
            x, y = nx, ny
            xs[t + 1] = x
            ys[t + 1] = y
        sig[0, :, 0] = xs
        sig[0, :, 1] = ys
        rho = float(robustness_signal(phi, sig)[0, 0])
        reward = rho if rho < 0.0 else rho + 100.0
        # Reverse-order one-step updates: terminal credit first (no
        # bootstrap), then each earlier transition bootstraps the layer
        # updated just before it.
        for t in range(length - 2, -1, -1):
            cx, cy, a = xs[t], ys[t], acts[t]
            prior = visits[cx, cy, t, a]
            alpha = hp.alpha0 / (1.0 + prior) ** hp.omega
            if t == length - 2:
                target = reward
            else:
                target = gamma * values[xs[t + 1], ys[t + 1], t + 1].max()
            values[cx, cy, t, a] += alpha * (target - values[cx, cy, t, a])
            visits[cx, cy, t, a] = prior + 1
    return q


def policy_gap_samples(
    reference,
    learned,
    env: GridEnv,
    phi_true: Formula,
    n_samples: int,
    seed: int,
    exploration: float = 0.0,
) -> np.ndarray:
    """Per-sample reward differences behind policy_gap.

    Sample i draws a uniformly random start cell, then rolls out both
    policies from it with identically seeded generators, so sample i is a
    function of (seed, i) alone and identical policies difference to zero
    exactly.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    length = env.episode_length
    diffs = np.empty(n_samples)
    for i in range(n_samples):
        start_rng = derive_rng(seed, i, 0)
        start = (int(start_rng.integers(env.width)), int(start_rng.integers(env.height)))
        ref_trace = rollout_policy(env, reference, length, exploration, derive_rng(seed, i, 1), start=start)
        lrn_trace = rollout_policy(env, learned, length, exploration, derive_rng(seed, i, 1), start=start)
        diffs[i] = episode_reward(phi_true, ref_trace) - episode_reward(phi_true, lrn_trace)
    return diffs


def policy_gap(
    reference,
    learned,
    env: GridEnv,
    phi_true: Formula,
    n_samples: int,
    seed: int,
    exploration: float = 0.0,
) -> float:
    """Expected true-reward advantage of `reference` over `learned`.

    Monte-Carlo over paired rollouts from uniformly random start cells.
    """
    return float(
        policy_gap_samples(reference, learned, env, phi_true, n_samples, seed, exploration).mean()
    )
