"""Joint mining of STL safety constraints and grid-world Q-learning policies."""

from .formulas import (
    And,
    Eventually,
    Formula,
    FormulaSyntaxError,
    Globally,
    IntervalError,
    Not,
    Or,
    Predicate,
    TraceTooShortError,
    Until,
    depth,
    format_formula,
    horizon,
    parse_formula,
    robustness,
    robustness_signal,
    satisfies,
)
from .gridworld import ACTIONS, GridEnv, random_trace, rollout_policy, step
from .labeling import (
    Label,
    LabelSource,
    LabelValue,
    LabelingSession,
    merge_into_dataset,
    open_session,
    oracle_label,
    submit_labels,
)
from .mining import (
    Individual,
    LabeledDataset,
    MinerConfig,
    Population,
    crossover,
    evolve,
    fitness,
    init_population,
    mcr,
    mutate,
)
from .qlearn import (
    LearnHyperparams,
    Policy,
    QTable,
    episode_reward,
    greedy_policy,
    policy_gap,
    train,
)
from .traces import Trace
