"""Evolutionary synthesis of STL constraints from labeled trace datasets.

A fixed-size population of random formula trees is scored against the
labeled data, ranked, culled to the top half and refilled by subtree
crossover plus mutation. The score of a candidate phi is

    N+  true positives:  traces in D_p with rho(phi) >= 0
  + N-  true negatives:  traces in D_n with rho(phi) < 0
  + |mean rho over D_p - mean rho over D_n|

with the margin term contributing 0 when either partition is empty. The
mixed units (counts plus a robustness difference) are deliberate; the
margin only discriminates between candidates whose counts already tie.

Candidates whose horizon exceeds what the traces can evaluate receive a
fitness of -inf rather than raising, so selection weeds them out naturally.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .formulas import (
    And,
    COMPARATORS,
    DIMS,
    Eventually,
    Formula,
    Globally,
    Not,
    Or,
    Predicate,
    Until,
    depth,
    format_formula,
    horizon,
    robustness_signal,
)
from .seeding import derive_rng
from .traces import Trace, stack_traces


class EmptyDatasetError(ValueError):
    """Operation needs at least one labeled trace."""


@dataclass
class LabeledDataset:
    """Positive/negative trace partitions, optionally with a held-out split."""

    positives: list[Trace] = field(default_factory=list)
    negatives: list[Trace] = field(default_factory=list)
    holdout: "LabeledDataset | None" = None

    def __len__(self) -> int:
        return len(self.positives) + len(self.negatives)

    def copy(self) -> "LabeledDataset":
        return LabeledDataset(list(self.positives), list(self.negatives), self.holdout)

    def trace_length(self) -> int:
        for tr in self.positives:
            return tr.length
        for tr in self.negatives:
            return tr.length
        raise EmptyDatasetError("dataset has no traces")

    def to_dict(self) -> dict:
        obj = {
            "positives": [tr.to_dict() for tr in self.positives],
            "negatives": [tr.to_dict() for tr in self.negatives],
        }
        if self.holdout is not None:
            obj["holdout"] = self.holdout.to_dict()
        return obj

    @classmethod
    def from_dict(cls, obj: dict) -> "LabeledDataset":
        ds = cls(
            [Trace.from_dict(t) for t in obj["positives"]],
            [Trace.from_dict(t) for t in obj["negatives"]],
        )
        if obj.get("holdout"):
            ds.holdout = cls.from_dict(obj["holdout"])
        return ds

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "LabeledDataset":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class MinerConfig:
    population_size: int = 128
    max_generations: int = 60
    max_depth: int = 4
    mutation_probability: float = 0.3
    crossover_probability: float = 0.9
    threshold_range_x: tuple[float, float] = (0.0, 5.0)
    threshold_range_y: tuple[float, float] = (0.0, 5.0)
    interval_max: int = 12  # inclusive bound for interval endpoints
    plateau_patience: int = 10

    def __post_init__(self):
        if self.population_size < 2 or self.population_size % 2 != 0:
            raise ValueError("population size must be even and >= 2")
        if self.max_depth < 1:
            raise ValueError("max depth must be >= 1")
        for p in (self.mutation_probability, self.crossover_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError("operator rates must be probabilities")
        if self.interval_max < 0:
            raise ValueError("interval bound must be >= 0")
        if self.max_generations < 1 or self.plateau_patience < 1:
            raise ValueError("generation counts must be >= 1")

    def threshold_range(self, dim: str) -> tuple[float, float]:
        return self.threshold_range_x if dim == "x" else self.threshold_range_y


@dataclass
class Individual:
    formula: Formula
    fitness: float | None = None


@dataclass
class Population:
    individuals: list[Individual]
    generation: int = 0


@dataclass
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_formula: str


# ---------------------------------------------------------------------------
# fitness and misclassification

def _rho_at_zero(phi: Formula, stacked: np.ndarray) -> np.ndarray:
    if stacked.shape[0] == 0:
        return np.empty(0)
    return robustness_signal(phi, stacked)[:, 0]


def _fitness_on_arrays(phi: Formula, pos: np.ndarray, neg: np.ndarray, length: int) -> float:
    if horizon(phi) + 1 > length:
        return -math.inf
    rho_p = _rho_at_zero(phi, pos)
    rho_n = _rho_at_zero(phi, neg)
    true_pos = int((rho_p >= 0.0).sum())
    true_neg = int((rho_n < 0.0).sum())
    if len(rho_p) and len(rho_n):
        margin = abs(float(rho_p.mean()) - float(rho_n.mean()))
    else:
        margin = 0.0
    return true_pos + true_neg + margin


def fitness(phi: Formula, data: LabeledDataset) -> float:
    """Classification fitness; -inf when the traces cannot evaluate phi."""
    if len(data) == 0:
        raise EmptyDatasetError("fitness needs a non-empty dataset")
    pos = stack_traces(data.positives)
    neg = stack_traces(data.negatives)
    return _fitness_on_arrays(phi, pos, neg, data.trace_length())


def mcr(phi: Formula, data: LabeledDataset) -> float:
    """Misclassification rate under the rho >= 0 decision rule."""
    if len(data) == 0:
        raise EmptyDatasetError("mcr needs a non-empty dataset")
    rho_p = _rho_at_zero(phi, stack_traces(data.positives))
    rho_n = _rho_at_zero(phi, stack_traces(data.negatives))
    false_neg = int((rho_p < 0.0).sum())
    false_pos = int((rho_n >= 0.0).sum())
    return (false_pos + false_neg) / len(data)


# ---------------------------------------------------------------------------
# random trees and genetic operators

_KINDS = ("pred", "not", "and", "or", "G", "F", "U")


def random_predicate(rng: np.random.Generator, cfg: MinerConfig) -> Predicate:
    dim = DIMS[int(rng.integers(len(DIMS)))]
    cmp = COMPARATORS[int(rng.integers(len(COMPARATORS)))]
    lo, hi = cfg.threshold_range(dim)
    return Predicate(dim, cmp, float(rng.uniform(lo, hi)))


def _random_interval(rng: np.random.Generator, cfg: MinerConfig) -> tuple[int, int]:
    i = int(rng.integers(cfg.interval_max + 1))
    j = int(rng.integers(cfg.interval_max + 1))
    return min(i, j), max(i, j)


def random_formula(rng: np.random.Generator, cfg: MinerConfig, max_depth: int | None = None) -> Formula:
    """Uniform node kinds with depth-limited recursion."""
    budget = cfg.max_depth if max_depth is None else max_depth
    if budget <= 1:
        return random_predicate(rng, cfg)
    kind = _KINDS[int(rng.integers(len(_KINDS)))]
    if kind == "pred":
        return random_predicate(rng, cfg)
    if kind == "not":
        return Not(random_formula(rng, cfg, budget - 1))
    if kind == "and":
        return And(random_formula(rng, cfg, budget - 1), random_formula(rng, cfg, budget - 1))
    if kind == "or":
        return Or(random_formula(rng, cfg, budget - 1), random_formula(rng, cfg, budget - 1))
    a, b = _random_interval(rng, cfg)
    if kind == "G":
        return Globally(a, b, random_formula(rng, cfg, budget - 1))
    if kind == "F":
        return Eventually(a, b, random_formula(rng, cfg, budget - 1))
    return Until(a, b, random_formula(rng, cfg, budget - 1), random_formula(rng, cfg, budget - 1))


def init_population(cfg: MinerConfig, seed) -> Population:
    rng = derive_rng(seed) if isinstance(seed, int) else seed
    return Population([Individual(random_formula(rng, cfg)) for _ in range(cfg.population_size)])


def iter_nodes(phi: Formula, path: tuple[int, ...] = ()):
    """Preorder (path, node) pairs; paths are tuples of child indices."""
    yield path, phi
    if isinstance(phi, (Not, Globally, Eventually)):
        yield from iter_nodes(phi.child, path + (0,))
    elif isinstance(phi, (And, Or, Until)):
        yield from iter_nodes(phi.left, path + (0,))
        yield from iter_nodes(phi.right, path + (1,))


def subtree_at(phi: Formula, path: tuple[int, ...]) -> Formula:
    node = phi
    for idx in path:
        if isinstance(node, (Not, Globally, Eventually)):
            node = node.child
        else:
            node = node.left if idx == 0 else node.right
    return node


def replace_at(phi: Formula, path: tuple[int, ...], new: Formula) -> Formula:
    if not path:
        return new
    idx, rest = path[0], path[1:]
    if isinstance(phi, (Not, Globally, Eventually)):
        return replace(phi, child=replace_at(phi.child, rest, new))
    if idx == 0:
        return replace(phi, left=replace_at(phi.left, rest, new))
    return replace(phi, right=replace_at(phi.right, rest, new))


def _clamp(value: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, value))


def _truncate_to_depth(phi: Formula, budget: int, rng: np.random.Generator, cfg: MinerConfig) -> Formula:
    """Replace any subtree that would breach the depth budget by a predicate."""
    if budget <= 1:
        return phi if isinstance(phi, Predicate) else random_predicate(rng, cfg)
    if isinstance(phi, Predicate):
        return phi
    if isinstance(phi, (Not, Globally, Eventually)):
        return replace(phi, child=_truncate_to_depth(phi.child, budget - 1, rng, cfg))
    return replace(
        phi,
        left=_truncate_to_depth(phi.left, budget - 1, rng, cfg),
        right=_truncate_to_depth(phi.right, budget - 1, rng, cfg),
    )


def _pick_path(rng: np.random.Generator, phi: Formula, want=None) -> tuple[int, ...] | None:
    paths = [p for p, node in iter_nodes(phi) if want is None or isinstance(node, want)]
    if not paths:
        return None
    return paths[int(rng.integers(len(paths)))]


def mutate(ind: Individual, cfg: MinerConfig, seed) -> Individual:
    """Apply one uniformly chosen applicable mutation.

    Kinds: threshold perturbation, interval jitter, comparator flip,
    same-arity node swap, subtree replacement. Jitter and swap only apply
    when the tree has a matching node; the choice is uniform over the
    applicable kinds.
    """
    rng = derive_rng(seed) if isinstance(seed, int) else seed
    phi = ind.formula
    kinds = ["threshold", "comparator", "subtree"]
    if any(isinstance(n, (Globally, Eventually, Until)) for _, n in iter_nodes(phi)):
        kinds.append("interval")
    if any(isinstance(n, (And, Or, Globally, Eventually)) for _, n in iter_nodes(phi)):
        kinds.append("swap")
    kind = kinds[int(rng.integers(len(kinds)))]

    if kind == "threshold":
        path = _pick_path(rng, phi, Predicate)
        pred = subtree_at(phi, path)
        lo, hi = cfg.threshold_range(pred.dim)
        noise = rng.normal(0.0, 0.1 * (hi - lo))
        new = replace(pred, threshold=_clamp(pred.threshold + noise, lo, hi))
        return Individual(replace_at(phi, path, new))

    if kind == "comparator":
        path = _pick_path(rng, phi, Predicate)
        pred = subtree_at(phi, path)
        others = [c for c in COMPARATORS if c != pred.cmp]
        new = replace(pred, cmp=others[int(rng.integers(len(others)))])
        return Individual(replace_at(phi, path, new))

    if kind == "interval":
        path = _pick_path(rng, phi, (Globally, Eventually, Until))
        node = subtree_at(phi, path)
        a = int(_clamp(node.a + (1 if rng.random() < 0.5 else -1), 0, cfg.interval_max))
        b = int(_clamp(node.b + (1 if rng.random() < 0.5 else -1), 0, cfg.interval_max))
        new = replace(node, a=min(a, b), b=max(a, b))
        return Individual(replace_at(phi, path, new))

    if kind == "swap":
        path = _pick_path(rng, phi, (And, Or, Globally, Eventually))
        node = subtree_at(phi, path)
        if isinstance(node, And):
            new: Formula = Or(node.left, node.right)
        elif isinstance(node, Or):
            new = And(node.left, node.right)
        elif isinstance(node, Globally):
            new = Eventually(node.a, node.b, node.child)
        else:
            new = Globally(node.a, node.b, node.child)
        return Individual(replace_at(phi, path, new))

    # subtree replacement
    path = _pick_path(rng, phi)
    budget = max(1, cfg.max_depth - len(path))
    return Individual(replace_at(phi, path, random_formula(rng, cfg, budget)))


def crossover(a: Individual, b: Individual, cfg: MinerConfig, seed) -> tuple[Individual, Individual]:
    """Exchange uniformly chosen subtrees; repair depth breaches."""
    rng = derive_rng(seed) if isinstance(seed, int) else seed
    path_a = _pick_path(rng, a.formula)
    path_b = _pick_path(rng, b.formula)
    sub_a = subtree_at(a.formula, path_a)
    sub_b = subtree_at(b.formula, path_b)
    child_a = replace_at(a.formula, path_a, sub_b)
    child_b = replace_at(b.formula, path_b, sub_a)
    if depth(child_a) > cfg.max_depth:
        child_a = _truncate_to_depth(child_a, cfg.max_depth, rng, cfg)
    if depth(child_b) > cfg.max_depth:
        child_b = _truncate_to_depth(child_b, cfg.max_depth, rng, cfg)
    return Individual(child_a), Individual(child_b)


# ---------------------------------------------------------------------------
# the generation loop

def evolve_population(
    pop: Population,
    data: LabeledDataset,
    cfg: MinerConfig,
    rng: np.random.Generator,
    max_generations: int | None = None,
    plateau_patience: int | None = None,
) -> tuple[Formula, list[GenerationStats]]:
    """Advance an existing population in place against (possibly new) data.

    Every individual is re-scored on entry, since cached fitness values may
    refer to an older dataset. Runs at most max_generations ranking/culling/
    refill cycles, stopping early when the best fitness has not improved for
    plateau_patience generations. Returns the best individual seen during
    this call and its per-generation stats; pop holds the final population.
    """
    if len(data) == 0:
        raise EmptyDatasetError("evolve needs a non-empty dataset")
    if max_generations is None:
        max_generations = cfg.max_generations
    if plateau_patience is None:
        plateau_patience = cfg.plateau_patience
    pos = stack_traces(data.positives)
    neg = stack_traces(data.negatives)
    length = data.trace_length()

    for ind in pop.individuals:
        ind.fitness = None
    history: list[GenerationStats] = []
    best_formula: Formula | None = None
    best_fitness = -math.inf
    stall = 0

    for generation in range(max_generations):
        for ind in pop.individuals:
            if ind.fitness is None:
                ind.fitness = _fitness_on_arrays(ind.formula, pos, neg, length)
        pop.individuals.sort(key=lambda ind: ind.fitness, reverse=True)
        top = pop.individuals[0]
        finite = [i.fitness for i in pop.individuals if math.isfinite(i.fitness)]
        mean_fit = float(np.mean(finite)) if finite else -math.inf
        history.append(
            GenerationStats(pop.generation, top.fitness, mean_fit, format_formula(top.formula))
        )
        if top.fitness > best_fitness:
            best_fitness = top.fitness
            best_formula = top.formula
            stall = 0
        else:
            stall += 1
        if stall >= plateau_patience or generation == max_generations - 1:
            break

        half = cfg.population_size // 2
        survivors = pop.individuals[:half]
        children: list[Individual] = []
        while len(children) < cfg.population_size - half:
            p1 = survivors[int(rng.integers(half))]
            p2 = survivors[int(rng.integers(half))]
            if rng.random() < cfg.crossover_probability:
                c1, c2 = crossover(p1, p2, cfg, rng)
            else:
                c1 = Individual(p1.formula, p1.fitness)
                c2 = Individual(p2.formula, p2.fitness)
            for c in (c1, c2):
                if rng.random() < cfg.mutation_probability:
                    c = mutate(c, cfg, rng)
                children.append(c)
        pop.individuals = survivors + children[: cfg.population_size - half]
        pop.generation += 1

    return best_formula, history


def evolve(
    data: LabeledDataset,
    cfg: MinerConfig,
    seed,
) -> tuple[Formula, list[GenerationStats]]:
    """Rank, cull the bottom half, refill by crossover + mutation.

    Starts from a fresh random population; returns the best formula ever
    seen and per-generation (best, mean) fitness stats. Stops early once the
    best fitness has not improved for plateau_patience generations.
    """
    rng = derive_rng(seed) if isinstance(seed, int) else seed
    pop = init_population(cfg, rng)
    return evolve_population(pop, data, cfg, rng)


def write_stats_csv(path, history: list[GenerationStats], iteration: int | None = None) -> None:
    """Per-generation stats as CSV; optionally prefixed with an iteration column."""
    header = ["generation", "best_fitness", "mean_fitness", "best_formula"]
    if iteration is not None:
        header = ["iteration"] + header
    new_file = not (os.path.exists(path) and os.path.getsize(path) > 0)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(header)
        for st in history:
            row = [st.generation, st.best_fitness, st.mean_fitness, st.best_formula]
            if iteration is not None:
                row = [iteration] + row
            writer.writerow(row)
