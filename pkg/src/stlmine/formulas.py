"""STL formula trees over 2-D traces: parsing, printing, horizon, robustness.

Discrete-time quantitative semantics with unit steps. A formula is a tree of
predicates over the two coordinate channels and the boolean / bounded
temporal connectives. Robustness is the usual signed min/max recursion; a
trace satisfies a formula iff its robustness at t=0 is >= 0 (zero counts as
satisfied everywhere in this codebase: classification, labeling and reward
all share that convention).

Strict and non-strict comparators evaluate to the same robustness value;
strictness only affects the printed form.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .traces import Trace

DIMS = ("x", "y")
COMPARATORS = ("<", "<=", ">", ">=")


class FormulaError(ValueError):
    """Base class for formula construction and parsing problems."""


class FormulaSyntaxError(FormulaError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class IntervalError(FormulaError):
    """Temporal interval with a > b or a negative endpoint."""


class TraceTooShortError(ValueError):
    """Trace shorter than horizon(formula) + 1 at the requested time index."""


def _check_interval(a: int, b: int) -> None:
    if not (isinstance(a, int) and isinstance(b, int)):
        raise IntervalError(f"interval endpoints must be integers, got [{a},{b}]")
    if a < 0 or b < 0 or a > b:
        raise IntervalError(f"invalid interval [{a},{b}]: need 0 <= a <= b")


@dataclass(frozen=True)
class Predicate:
    dim: str
    cmp: str
    threshold: float

    def __post_init__(self):
        if self.dim not in DIMS:
            raise FormulaError(f"unknown dimension {self.dim!r}")
        if self.cmp not in COMPARATORS:
            raise FormulaError(f"unknown comparator {self.cmp!r}")
        if not math.isfinite(self.threshold):
            raise FormulaError(f"non-finite threshold {self.threshold!r}")


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Globally:
    a: int
    b: int
    child: "Formula"

    def __post_init__(self):
        _check_interval(self.a, self.b)


@dataclass(frozen=True)
class Eventually:
    a: int
    b: int
    child: "Formula"

    def __post_init__(self):
        _check_interval(self.a, self.b)


@dataclass(frozen=True)
class Until:
    a: int
    b: int
    left: "Formula"
    right: "Formula"

    def __post_init__(self):
        _check_interval(self.a, self.b)


Formula = Union[Predicate, Not, And, Or, Globally, Eventually, Until]


def horizon(phi: Formula) -> int:
    """Number of future steps needed beyond t to evaluate phi at t."""
    if isinstance(phi, Predicate):
        return 0
    if isinstance(phi, Not):
        return horizon(phi.child)
    if isinstance(phi, (And, Or)):
        return max(horizon(phi.left), horizon(phi.right))
    if isinstance(phi, (Globally, Eventually)):
        return phi.b + horizon(phi.child)
    if isinstance(phi, Until):
        return phi.b + max(horizon(phi.left), horizon(phi.right))
    raise TypeError(f"not a formula: {phi!r}")


def depth(phi: Formula) -> int:
    """Longest root-to-leaf node count; a bare predicate has depth 1."""
    if isinstance(phi, Predicate):
        return 1
    if isinstance(phi, Not):
        return 1 + depth(phi.child)
    if isinstance(phi, (Globally, Eventually)):
        return 1 + depth(phi.child)
    if isinstance(phi, (And, Or, Until)):
        return 1 + max(depth(phi.left), depth(phi.right))
    raise TypeError(f"not a formula: {phi!r}")


# ---------------------------------------------------------------------------
# printing

def _format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def format_formula(phi: Formula) -> str:
    """Canonical fully parenthesized text; parses back to an equal tree."""
    if isinstance(phi, Predicate):
        return f"({phi.dim} {phi.cmp} {_format_number(phi.threshold)})"
    if isinstance(phi, Not):
        return "!" + format_formula(phi.child)
    if isinstance(phi, And):
        return f"({format_formula(phi.left)} & {format_formula(phi.right)})"
    if isinstance(phi, Or):
        return f"({format_formula(phi.left)} | {format_formula(phi.right)})"
    if isinstance(phi, Globally):
        return f"G[{phi.a},{phi.b}]{format_formula(phi.child)}"
    if isinstance(phi, Eventually):
        return f"F[{phi.a},{phi.b}]{format_formula(phi.child)}"
    if isinstance(phi, Until):
        return (
            f"({format_formula(phi.left)} U[{phi.a},{phi.b}] "
            f"{format_formula(phi.right)})"
        )
    raise TypeError(f"not a formula: {phi!r}")


# ---------------------------------------------------------------------------
# parsing

_NUMBER_RE = re.compile(r"-?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_INT_RE = re.compile(r"\d+")


class _Parser:
    """Recursive-descent parser for the ASCII grammar.

    phi  ::= pred | "!" phi | "(" phi "&" phi ")" | "(" phi "|" phi ")"
           | "G[" a "," b "]" phi | "F[" a "," b "]" phi
           | "(" phi "U[" a "," b "]" phi ")"
    pred ::= "(" dim cmp number ")"
    """

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str) -> FormulaSyntaxError:
        return FormulaSyntaxError(message, self.pos)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self, offset: int = 0) -> str:
        i = self.pos + offset
        return self.text[i] if i < len(self.text) else ""

    def expect(self, literal: str) -> None:
        self.skip_ws()
        if not self.text.startswith(literal, self.pos):
            raise self.error(f"expected {literal!r}")
        self.pos += len(literal)

    def parse_int(self) -> int:
        self.skip_ws()
        m = _INT_RE.match(self.text, self.pos)
        if not m:
            raise self.error("expected a non-negative integer")
        self.pos = m.end()
        return int(m.group())

    def parse_number(self) -> float:
        self.skip_ws()
        m = _NUMBER_RE.match(self.text, self.pos)
        if not m:
            raise self.error("expected a number")
        self.pos = m.end()
        return float(m.group())

    def parse_interval(self) -> tuple[int, int]:
        start = self.pos
        self.expect("[")
        a = self.parse_int()
        self.expect(",")
        b = self.parse_int()
        self.expect("]")
        if a > b:
            raise IntervalError(
                f"invalid interval [{a},{b}]: need a <= b (at position {start})"
            )
        return a, b

    def parse_formula(self) -> Formula:
        self.skip_ws()
        ch = self.peek()
        if ch == "!":
            self.pos += 1
            return Not(self.parse_formula())
        if ch in ("G", "F"):
            self.pos += 1
            a, b = self.parse_interval()
            child = self.parse_formula()
            return Globally(a, b, child) if ch == "G" else Eventually(a, b, child)
        if ch == "(":
            return self.parse_parenthesized()
        raise self.error("expected a formula")

    def parse_parenthesized(self) -> Formula:
        self.expect("(")
        self.skip_ws()
        # A dimension right after '(' can only start a predicate.
        if self.peek() in DIMS and not self.peek(1).isalnum():
            return self.finish_predicate()
        left = self.parse_formula()
        self.skip_ws()
        ch = self.peek()
        if ch == "&":
            self.pos += 1
            right = self.parse_formula()
            node: Formula = And(left, right)
        elif ch == "|":
            self.pos += 1
            right = self.parse_formula()
            node = Or(left, right)
        elif ch == "U":
            self.pos += 1
            a, b = self.parse_interval()
            right = self.parse_formula()
            node = Until(a, b, left, right)
        else:
            raise self.error("expected '&', '|' or 'U[a,b]'")
        self.expect(")")
        return node

    def finish_predicate(self) -> Predicate:
        dim = self.peek()
        self.pos += 1
        self.skip_ws()
        cmp = None
        for cand in ("<=", ">=", "<", ">"):
            if self.text.startswith(cand, self.pos):
                cmp = cand
                self.pos += len(cand)
                break
        if cmp is None:
            raise self.error("expected a comparator (<, <=, >, >=)")
        threshold = self.parse_number()
        self.expect(")")
        return Predicate(dim, cmp, threshold)


def parse_formula(text: str) -> Formula:
    """Parse formula text; whitespace-insensitive.

    Raises FormulaSyntaxError with the offending position, or IntervalError
    via FormulaSyntaxError when an interval has a > b.
    """
    parser = _Parser(text)
    phi = parser.parse_formula()
    parser.skip_ws()
    if parser.pos != len(text):
        raise parser.error("unexpected trailing input")
    return phi


# ---------------------------------------------------------------------------
# robustness

def robustness_signal(phi: Formula, signals: np.ndarray) -> np.ndarray:
    """Robustness of phi over a batch of traces at every valid start index.

    signals has shape (N, L, 2); the result has shape (N, L - horizon(phi))
    where column t holds the robustness of phi evaluated at time t.

    Raises TraceTooShortError when L < horizon(phi) + 1.
    """
    length = signals.shape[1]
    h = horizon(phi)
    if length < h + 1:
        raise TraceTooShortError(
            f"trace length {length} < horizon {h} + 1 for {format_formula(phi)}"
        )
    return _eval(phi, signals)


def _eval(phi: Formula, signals: np.ndarray) -> np.ndarray:
    if isinstance(phi, Predicate):
        sig = signals[:, :, DIMS.index(phi.dim)]
        if phi.cmp in (">", ">="):
            return sig - phi.threshold
        return phi.threshold - sig
    if isinstance(phi, Not):
        return -_eval(phi.child, signals)
    if isinstance(phi, (And, Or)):
        left = _eval(phi.left, signals)
        right = _eval(phi.right, signals)
        n = min(left.shape[1], right.shape[1])
        op = np.minimum if isinstance(phi, And) else np.maximum
        return op(left[:, :n], right[:, :n])
    if isinstance(phi, (Globally, Eventually)):
        child = _eval(phi.child, signals)
        windows = sliding_window_view(child[:, phi.a :], phi.b - phi.a + 1, axis=1)
        if isinstance(phi, Globally):
            return windows.min(axis=-1)
        return windows.max(axis=-1)
    if isinstance(phi, Until):
        return _eval_until(phi, signals)
    raise TypeError(f"not a formula: {phi!r}")


def _eval_until(phi: Until, signals: np.ndarray) -> np.ndarray:
    # out[t] = max_{d in [a,b]} min(right[t+d], min_{u in [t, t+d]} left[u])
    left = _eval(phi.left, signals)
    right = _eval(phi.right, signals)
    length = signals.shape[1]
    n_out = length - (phi.b + max(horizon(phi.left), horizon(phi.right)))
    running_min = left
    best = None
    for d in range(phi.b + 1):
        if d > 0:
            running_min = np.minimum(running_min[:, :-1], left[:, d:])
        if d >= phi.a:
            cand = np.minimum(right[:, d : d + n_out], running_min[:, :n_out])
            best = cand if best is None else np.maximum(best, cand)
    return best


def robustness(phi: Formula, w: Trace, t: int = 0) -> float:
    """Quantitative robustness of phi on trace w at time index t.

    Requires t + horizon(phi) <= w.length - 1.
    """
    h = horizon(phi)
    if t < 0 or t + h > w.length - 1:
        raise TraceTooShortError(
            f"cannot evaluate at t={t}: trace length {w.length}, horizon {h}"
        )
    return float(_eval(phi, w.array[None, :, :])[0, t])


def satisfies(phi: Formula, w: Trace) -> bool:
    """True iff robustness at t=0 is >= 0 (zero counts as satisfied)."""
    return robustness(phi, w, 0) >= 0.0
