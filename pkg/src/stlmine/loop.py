"""The joint loop: mine a constraint, train a policy, roll out, label, merge.

Each outer iteration re-mines the constraint from all labeled data gathered
so far, re-trains Q-learning from scratch against the mined constraint,
rolls the greedy policy out with a little exploration, has the labeler mark
the rollouts, and folds them back into the dataset. The loop stops once the
labeled-safe fraction of a rollout batch reaches the configured threshold,
or after max_outer_iterations.

Randomness: every stream is derived from the run seed plus a component id
(and iteration / item indices), so identical configs reproduce identical
reports byte for byte in oracle mode. Wall-clock durations are therefore
kept out of report.json and written to timings.json instead.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .formulas import Formula, format_formula, parse_formula
from .gridworld import GridEnv, random_trace, rollout_policy
from .labeling import (
    LabelValue,
    LabelingSession,
    merge_into_dataset,
    open_session,
)
from .mining import (
    EmptyDatasetError,
    GenerationStats,
    Individual,
    LabeledDataset,
    MinerConfig,
    Population,
    evolve_population,
    init_population,
    mcr,
    random_formula,
    write_stats_csv,
)
from .qlearn import LearnHyperparams, Policy, QTable, greedy_policy, policy_gap, train
from .seeding import derive_rng

# Seed-stream component ids (documented so sub-computations can be replayed).
STREAM_BOOTSTRAP = 1
STREAM_SPLIT = 2
STREAM_MINE = 3
STREAM_TRAIN = 4
STREAM_ROLLOUT = 5
STREAM_GAP = 6
STREAM_REFERENCE = 7
STREAM_RESPLIT = 8

MINE_ATTEMPTS = 3  # re-mining budget when every candidate overflowed


@dataclass
class IterationRecord:
    index: int
    formula: str
    fitness: float
    unsafe_fraction: float
    mcr: float | None
    policy_gap: float | None
    duration_s: float

    def to_public_dict(self) -> dict:
        # Durations vary run to run; they live in timings.json so that
        # report.json stays byte-identical across reruns of one seed.
        return {
            "index": self.index,
            "formula": self.formula,
            "fitness": self.fitness,
            "unsafe_fraction": self.unsafe_fraction,
            "mcr": self.mcr,
            "policy_gap": self.policy_gap,
        }


@dataclass
class RunReport:
    status: str
    records: list[IterationRecord]
    final_formula: str | None = None
    final_mcr_mean: float | None = None
    final_mcr_se: float | None = None
    mcr_resplit_values: list[float] = field(default_factory=list)

    @property
    def first_unsafe(self) -> float | None:
        return self.records[0].unsafe_fraction if self.records else None

    @property
    def last_unsafe(self) -> float | None:
        return self.records[-1].unsafe_fraction if self.records else None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": len(self.records),
            "records": [r.to_public_dict() for r in self.records],
            "final_formula": self.final_formula,
            "first_unsafe": self.first_unsafe,
            "last_unsafe": self.last_unsafe,
            "final_mcr_mean": self.final_mcr_mean,
            "final_mcr_se": self.final_mcr_se,
            "mcr_resplit_values": self.mcr_resplit_values,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RunReport":
        records = [
            IterationRecord(
                index=r["index"],
                formula=r["formula"],
                fitness=r["fitness"],
                unsafe_fraction=r["unsafe_fraction"],
                mcr=r["mcr"],
                policy_gap=r.get("policy_gap"),
                duration_s=0.0,
            )
            for r in obj.get("records", [])
        ]
        return cls(
            status=obj["status"],
            records=records,
            final_formula=obj.get("final_formula"),
            final_mcr_mean=obj.get("final_mcr_mean"),
            final_mcr_se=obj.get("final_mcr_se"),
            mcr_resplit_values=list(obj.get("mcr_resplit_values", [])),
        )

    def save(self, path) -> None:
        _atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "RunReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _atomic_write_json(path, obj) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# labelers

class OracleLabeler:
    """Automated stand-in for the expert: labels by hidden ground truth."""

    def __init__(self, phi_true: Formula):
        self.phi_true = phi_true

    def label_batch(self, traces, iteration: int) -> LabelingSession:
        return open_session(traces, "oracle", self.phi_true, iteration)


class CallbackLabeler:
    """Adapter for tests and embedding: labels come from a callable."""

    def __init__(self, fn):
        self.fn = fn

    def label_batch(self, traces, iteration: int) -> LabelingSession:
        session = open_session(traces, "interactive", iteration=iteration)
        from .labeling import submit_labels

        submit_labels(session, [(i, self.fn(tr)) for i, tr in enumerate(traces)])
        return session


# ---------------------------------------------------------------------------
# loop state and phases

@dataclass
class LoopState:
    env: GridEnv
    miner_cfg: MinerConfig
    hp: LearnHyperparams
    dataset: LabeledDataset
    seed: int
    generations_per_iteration: int = 2
    immigrant_fraction: float = 0.25
    iteration: int = 0
    population: Population | None = None
    reference_policy: Policy | None = None
    records: list[IterationRecord] = field(default_factory=list)
    last_qtable: QTable | None = None
    last_history: list[GenerationStats] = field(default_factory=list)
    last_policy: Policy | None = None


def stratified_split(
    positives, negatives, holdout_fraction: float, rng: np.random.Generator
) -> tuple[LabeledDataset, LabeledDataset]:
    """Shuffle each class and reserve a stratified evaluation split.

    The held-out total is round(fraction * N) exactly; the per-class counts
    follow the class proportions as closely as the totals allow.
    """
    positives = list(positives)
    negatives = list(negatives)
    rng.shuffle(positives)
    rng.shuffle(negatives)
    total = len(positives) + len(negatives)
    n_hold = int(round(holdout_fraction * total))
    hold_p = int(round(holdout_fraction * len(positives)))
    hold_p = max(n_hold - len(negatives), min(hold_p, min(n_hold, len(positives))))
    hold_n = n_hold - hold_p
    holdout = LabeledDataset(positives[:hold_p], negatives[:hold_n])
    training = LabeledDataset(positives[hold_p:], negatives[hold_n:])
    training.holdout = holdout
    return training, holdout


def bootstrap(cfg: RunConfig, env: GridEnv, labeler, observer=None) -> LabeledDataset:
    """Random-walk traces, labeled, with a stratified held-out split."""
    loop = cfg.loop
    _notify(observer, "phase", phase="bootstrap", iteration=0)
    traces = [
        random_trace(env, env.episode_length, derive_rng(cfg.seed, STREAM_BOOTSTRAP, i))
        for i in range(loop.bootstrap_traces)
    ]
    _notify(observer, "phase", phase="labeling", iteration=0)
    session = labeler.label_batch(traces, iteration=0)
    positives = [tr for i, tr in enumerate(traces) if session.labels[i].value is LabelValue.SAFE]
    negatives = [tr for i, tr in enumerate(traces) if session.labels[i].value is LabelValue.UNSAFE]
    training, _ = stratified_split(
        positives, negatives, loop.holdout_fraction, derive_rng(cfg.seed, STREAM_SPLIT)
    )
    return training


def mine_constraint(state: LoopState, cfg: RunConfig) -> tuple[Formula, float, list[GenerationStats]]:
    """Advance the persistent constraint population against the current data.

    One population lives across outer iterations (it is the outer
    optimization's state); each iteration re-scores it on the grown dataset
    and runs a few more generations. A population whose best candidate
    cannot be evaluated on the traces is re-seeded and re-mined.
    """
    for attempt in range(MINE_ATTEMPTS):
        rng = derive_rng(cfg.seed, STREAM_MINE, state.iteration, attempt)
        if state.population is None:
            state.population = init_population(state.miner_cfg, rng)
        elif state.immigrant_fraction > 0.0:
            # Refresh the tail with random immigrants; the population is
            # still sorted by the previous iteration's fitness, so this
            # replaces its weakest members.
            n_new = int(state.immigrant_fraction * state.miner_cfg.population_size)
            if n_new:
                kept = state.population.individuals[: len(state.population.individuals) - n_new]
                fresh = [
                    Individual(random_formula(rng, state.miner_cfg)) for _ in range(n_new)
                ]
                state.population.individuals = kept + fresh
        # The generation budget ramps with the iteration index: early
        # iterations barely refine (the dataset is thin anyway), later ones
        # dig in once rollout feedback has accumulated.
        budget = min(
            state.generations_per_iteration * state.iteration,
            state.miner_cfg.max_generations,
        )
        best, history = evolve_population(
            state.population,
            state.dataset,
            state.miner_cfg,
            rng,
            max_generations=budget,
            plateau_patience=budget,
        )
        best_fit = max(h.best_fitness for h in history)
        if math.isfinite(best_fit):
            return best, best_fit, history
        state.population = None  # force a fresh random restart
    raise RuntimeError(
        f"mining produced no evaluable constraint in {MINE_ATTEMPTS} attempts"
    )


def run_iteration(state: LoopState, cfg: RunConfig, labeler, observer=None) -> tuple[LoopState, IterationRecord]:
    """One outer iteration; returns the mutated state and its record."""
    if len(state.dataset) == 0:
        raise EmptyDatasetError("cannot iterate with an empty dataset")
    env = state.env
    loop = cfg.loop
    iteration = state.iteration + 1
    state.iteration = iteration
    started = time.perf_counter()

    _notify(observer, "phase", phase="mining", iteration=iteration)
    best, best_fit, history = mine_constraint(state, cfg)

    _notify(observer, "phase", phase="training", iteration=iteration)
    qtable = train(env, best, state.hp, derive_rng(cfg.seed, STREAM_TRAIN, iteration))
    policy = greedy_policy(qtable)

    _notify(observer, "phase", phase="rollout", iteration=iteration)
    # Rollouts launch from uniformly random cells, the same start
    # distribution training and the policy-gap diagnostic use, so the safe
    # fraction measures the policy across the whole state space.
    rollouts = []
    for k in range(loop.rollouts_per_iteration):
        rng = derive_rng(cfg.seed, STREAM_ROLLOUT, iteration, k)
        start = (int(rng.integers(env.width)), int(rng.integers(env.height)))
        rollouts.append(
            rollout_policy(
                env, policy, env.episode_length, loop.rollout_exploration, rng, start=start
            )
        )

    _notify(observer, "phase", phase="labeling", iteration=iteration)
    session = labeler.label_batch(rollouts, iteration=iteration)

    _notify(observer, "phase", phase="merging", iteration=iteration)
    state.dataset = merge_into_dataset(state.dataset, session)

    _notify(observer, "phase", phase="metrics", iteration=iteration)
    unsafe = sum(
        1 for lab in session.labels.values() if lab.value is LabelValue.UNSAFE
    ) / session.size
    holdout = state.dataset.holdout
    holdout_mcr = mcr(best, holdout) if holdout is not None and len(holdout) else None
    gap = None
    if state.reference_policy is not None and env.ground_truth is not None:
        gap = policy_gap(
            state.reference_policy,
            policy,
            env,
            env.ground_truth,
            loop.gap_samples,
            # policy_gap derives per-sample substreams itself
            _scalar_seed(cfg.seed, STREAM_GAP, iteration),
        )

    record = IterationRecord(
        index=iteration,
        formula=format_formula(best),
        fitness=best_fit,
        unsafe_fraction=unsafe,
        mcr=holdout_mcr,
        policy_gap=gap,
        duration_s=time.perf_counter() - started,
    )
    state.records.append(record)
    state.last_qtable = qtable
    state.last_history = history
    state.last_policy = policy
    return state, record


def _scalar_seed(*components: int) -> int:
    # policy_gap keys substreams off (seed, i); collapse our components
    # into one integer so the derivation stays documented and stable.
    return int(np.random.SeedSequence([int(c) for c in components]).generate_state(1)[0])


def _notify(observer, event: str, **payload) -> None:
    if observer is not None:
        observer(event, payload)


def run_joint_loop(cfg: RunConfig, labeler=None, observer=None) -> RunReport:
    """Bootstrap, iterate to the safe-fraction threshold, persist, report."""
    cfg.validate()
    env = cfg.env.build()
    out_dir = cfg.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        cfg.save(os.path.join(out_dir, "config.json"))

    if labeler is None:
        if cfg.loop.labeling_mode != "oracle":
            raise ValueError("interactive mode needs an explicit labeler (see serve)")
        labeler = OracleLabeler(env.ground_truth)

    reference = None
    if cfg.loop.labeling_mode == "oracle" and env.ground_truth is not None:
        _notify(observer, "phase", phase="reference-training", iteration=0)
        ref_q = train(
            env,
            env.ground_truth,
            cfg.learner.build(cfg.learner.reference_episodes),
            derive_rng(cfg.seed, STREAM_REFERENCE),
        )
        reference = greedy_policy(ref_q)

    dataset = bootstrap(cfg, env, labeler, observer)
    state = LoopState(
        env=env,
        miner_cfg=cfg.miner.build(env),
        hp=cfg.learner.build(),
        dataset=dataset,
        seed=cfg.seed,
        generations_per_iteration=cfg.miner.generations_per_iteration,
        immigrant_fraction=cfg.miner.immigrant_fraction,
        reference_policy=reference,
    )

    status = "iteration-capped"
    for _ in range(cfg.loop.max_outer_iterations):
        state, record = run_iteration(state, cfg, labeler, observer)
        if out_dir:
            _persist_iteration(out_dir, state, record)
        _notify(observer, "record", record=record)
        if 1.0 - record.unsafe_fraction >= cfg.loop.safe_fraction_threshold:
            status = "converged"
            break

    final_formula = state.records[-1].formula if state.records else None
    resplit_values: list[float] = []
    if final_formula is not None:
        phi = parse_formula(final_formula)
        pool_p = list(state.dataset.positives)
        pool_n = list(state.dataset.negatives)
        if state.dataset.holdout is not None:
            pool_p += state.dataset.holdout.positives
            pool_n += state.dataset.holdout.negatives
        for r in range(cfg.loop.mcr_resplits):
            _, holdout = stratified_split(
                pool_p,
                pool_n,
                cfg.loop.holdout_fraction,
                derive_rng(cfg.seed, STREAM_RESPLIT, r),
            )
            resplit_values.append(mcr(phi, holdout))

    mean, se = mcr_standard_error(resplit_values)
    report = RunReport(
        status=status,
        records=state.records,
        final_formula=final_formula,
        final_mcr_mean=mean,
        final_mcr_se=se,
        mcr_resplit_values=resplit_values,
    )
    _notify(observer, "phase", phase="done", iteration=state.iteration)
    _notify(observer, "report", report=report)

    if out_dir:
        report.save(os.path.join(out_dir, "report.json"))
        state.dataset.save(os.path.join(out_dir, "dataset.json"))
        _atomic_write_json(
            os.path.join(out_dir, "timings.json"),
            {"durations_s": [r.duration_s for r in state.records]},
        )
    return report


def _persist_iteration(out_dir: str, state: LoopState, record: IterationRecord) -> None:
    it_dir = os.path.join(out_dir, "iterations", f"iter_{record.index:03d}")
    os.makedirs(it_dir, exist_ok=True)
    with open(os.path.join(it_dir, "formula.txt"), "w") as fh:
        fh.write(record.formula + "\n")
    if state.last_qtable is not None:
        _atomic_write_json(os.path.join(it_dir, "qtable.json"), state.last_qtable.to_dict())
    write_stats_csv(os.path.join(out_dir, "stats.csv"), state.last_history, record.index)


def mcr_standard_error(values) -> tuple[float | None, float | None]:
    """Mean and standard error (sample std / sqrt(k)) of resplit MCRs."""
    values = list(values)
    if not values:
        return None, None
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, 0.0
    se = float(np.std(values, ddof=1) / math.sqrt(len(values)))
    return mean, se


def evaluate_report(path) -> str:
    """Human-readable metrics summary for a persisted report."""
    report = RunReport.load(path)
    if not report.records:
        raise ValueError(f"report {path} contains no iteration records")
    lines = [
        f"iterations: {len(report.records)} ({report.status})",
        f"unsafe traces: first {report.first_unsafe * 100:.1f}% last {report.last_unsafe * 100:.1f}%",
    ]
    if report.final_mcr_mean is not None:
        k = len(report.mcr_resplit_values)
        lines.append(
            f"final MCR: {report.final_mcr_mean:.4f} +/- {report.final_mcr_se:.4f} ({k} resplits)"
        )
    gaps = [r.policy_gap for r in report.records if r.policy_gap is not None]
    if gaps:
        lines.append("policy gap: " + " -> ".join(f"{g:.2f}" for g in gaps))
    if report.final_formula:
        lines.append(f"final constraint: {report.final_formula}")
    return "\n".join(lines)
