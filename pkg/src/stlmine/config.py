"""Run configuration: dataclass blocks, JSON round-trip, per-size defaults.

The default environments hide a goal-reaching constraint in the far corner
with a deadline, and size the episode to exactly what evaluation needs:
episode_length = horizon(ground truth) + 1. Trailing post-deadline samples
are deliberately avoided: with the time-augmented Q-table they alias
"achieved earlier, still parked at the goal" with "arrived after the
deadline", which props up late-arrival policies with credit earned by
other episodes and destabilizes training.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .formulas import horizon, parse_formula
from .gridworld import GridEnv
from .mining import MinerConfig
from .qlearn import LearnHyperparams

EPISODE_SLACK = 0

DEFAULT_GROUND_TRUTH = {
    6: "F[0,10]((x >= 4.5) & (y >= 4.5))",
    8: "F[0,14]((x >= 6.5) & (y >= 6.5))",
    10: "F[0,18]((x >= 8.5) & (y >= 8.5))",
}


class ConfigError(ValueError):
    pass


@dataclass
class EnvBlock:
    width: int
    height: int
    start: tuple[int, int] = (0, 0)
    episode_length: int | None = None
    ground_truth_formula: str | None = None
    transition_noise: float = 0.0

    def build(self) -> GridEnv:
        ground_truth = None
        if self.ground_truth_formula:
            ground_truth = parse_formula(self.ground_truth_formula)
        length = self.episode_length
        if length is None:
            if ground_truth is None:
                raise ConfigError(
                    "episode_length is required when no ground-truth formula is set"
                )
            length = horizon(ground_truth) + 1 + EPISODE_SLACK
        return GridEnv(
            self.width,
            self.height,
            tuple(self.start),
            length,
            ground_truth,
            self.transition_noise,
        )


@dataclass
class MinerBlock:
    population_size: int = 128
    max_generations: int = 60
    max_depth: int = 4
    mutation_probability: float = 0.3
    crossover_probability: float = 0.9
    plateau_patience: int = 10
    # The outer loop keeps one population alive across iterations and
    # advances it iteration_index * this many generations per iteration:
    # constraint quality is meant to grow with the loop's accumulated
    # rollout feedback, not to peak on bootstrap data at iteration one.
    generations_per_iteration: int = 1
    # Fraction of the population replaced by fresh random trees at the
    # start of each outer iteration; keeps challenger supply alive once
    # selection has concentrated the population.
    immigrant_fraction: float = 0.25

    def build(self, env: GridEnv) -> MinerConfig:
        return MinerConfig(
            population_size=self.population_size,
            max_generations=self.max_generations,
            max_depth=self.max_depth,
            mutation_probability=self.mutation_probability,
            crossover_probability=self.crossover_probability,
            threshold_range_x=(0.0, float(env.width - 1)),
            threshold_range_y=(0.0, float(env.height - 1)),
            interval_max=env.episode_length - 1,
            plateau_patience=self.plateau_patience,
        )


@dataclass
class LearnerBlock:
    episodes: int = 30000
    reference_episodes: int = 40000
    discount: float = 0.99
    epsilon_initial: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_fraction: float = 0.6
    alpha0: float = 1.0
    omega: float = 0.6

    def build(self, episodes: int | None = None) -> LearnHyperparams:
        n = self.episodes if episodes is None else episodes
        return LearnHyperparams(
            episodes=n,
            discount=self.discount,
            epsilon_initial=self.epsilon_initial,
            epsilon_final=self.epsilon_final,
            epsilon_decay_episodes=int(self.epsilon_decay_fraction * n),
            alpha0=self.alpha0,
            omega=self.omega,
        )


@dataclass
class LoopBlock:
    bootstrap_traces: int = 1000
    rollouts_per_iteration: int = 250
    rollout_exploration: float = 0.05
    # Exploration keeps even an optimal policy's rollouts ~2% unsafe, and
    # tabular policies trained on an exactly-true constraint plateau near
    # 90% safe, so 0.90 is the highest threshold this machinery can
    # reliably cross.
    safe_fraction_threshold: float = 0.90
    max_outer_iterations: int = 15
    labeling_mode: str = "oracle"
    holdout_fraction: float = 0.2
    gap_samples: int = 400
    mcr_resplits: int = 5


@dataclass
class RunConfig:
    env: EnvBlock
    miner: MinerBlock = field(default_factory=MinerBlock)
    learner: LearnerBlock = field(default_factory=LearnerBlock)
    loop: LoopBlock = field(default_factory=LoopBlock)
    seed: int = 0
    out_dir: str | None = None

    def validate(self) -> None:
        loop = self.loop
        if not 0.0 < loop.safe_fraction_threshold <= 1.0:
            raise ConfigError("safe_fraction_threshold must be in (0, 1]")
        for name in ("bootstrap_traces", "rollouts_per_iteration", "max_outer_iterations"):
            if getattr(loop, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= loop.rollout_exploration <= 1.0:
            raise ConfigError("rollout_exploration must be a probability")
        if not 0.0 < loop.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in (0, 1)")
        if loop.labeling_mode not in ("oracle", "interactive"):
            raise ConfigError(f"unknown labeling mode {loop.labeling_mode!r}")
        if loop.gap_samples < 1 or loop.mcr_resplits < 1:
            raise ConfigError("sample counts must be >= 1")
        env = self.env.build()  # raises on inconsistent env settings
        if loop.labeling_mode == "oracle" and env.ground_truth is None:
            raise ConfigError("oracle mode needs a ground-truth formula")
        self.miner.build(env)
        self.learner.build()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        def block(klass, key):
            data = dict(obj.get(key) or {})
            return klass(**data)

        if "env" not in obj:
            raise ConfigError("config is missing the required 'env' block")
        env = EnvBlock(**obj["env"])
        return cls(
            env=env,
            miner=block(MinerBlock, "miner"),
            learner=block(LearnerBlock, "learner"),
            loop=block(LoopBlock, "loop"),
            seed=int(obj.get("seed", 0)),
            out_dir=obj.get("out_dir"),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(obj)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def default_config(size: int, seed: int = 0, mode: str = "oracle") -> RunConfig:
    """Reference configuration for the stock grid sizes (6, 8, 10)."""
    if size not in DEFAULT_GROUND_TRUTH:
        raise ConfigError(f"no default fixture for size {size}")
    episodes = {6: 50000, 8: 80000, 10: 120000}[size]
    reference = {6: 60000, 8: 100000, 10: 150000}[size]
    return RunConfig(
        env=EnvBlock(
            width=size,
            height=size,
            start=(0, 0),
            ground_truth_formula=DEFAULT_GROUND_TRUTH[size],
        ),
        learner=LearnerBlock(episodes=episodes, reference_episodes=reference),
        loop=LoopBlock(labeling_mode=mode),
        seed=seed,
    )
