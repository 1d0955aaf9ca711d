"""Exhaustive small-instance enumeration and oracle-based equivalence checks.

Everything here is deliberately independent of the compilers it verifies:
oracles are direct recursive definitions, enumeration is plain counting.
"""

from __future__ import annotations

import itertools
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

from . import automata, logic
from .terms import BOTTOM, RankedAlphabet, Tree, decode_string

VALUATION_BUDGET_ENV = "PEBBLETC_VAL_BUDGET"
DEFAULT_VALUATION_BUDGET = 10 ** 6


def valuation_budget() -> int:
    raw = os.environ.get(VALUATION_BUDGET_ENV)
    return int(raw) if raw else DEFAULT_VALUATION_BUDGET


# ---------------------------------------------------------------------------
# Tree enumeration

def _nested_trees(alphabet: RankedAlphabet, size: int, memo: dict) -> list:
    """All nested (symbol, [children]) structures with exactly `size` nodes."""
    got = memo.get(size)
    if got is not None:
        return got
    out = []
    for name, rank in alphabet.symbols:
        if rank == 0:
            if size == 1:
                out.append((name, []))
            continue
        # Distribute size-1 nodes over `rank` nonempty ordered children.
        for split in _compositions(size - 1, rank):
            for kids in itertools.product(
                    *(_nested_trees(alphabet, s, memo) for s in split)):
                out.append((name, list(kids)))
    memo[size] = out
    return out


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_trees(alphabet: RankedAlphabet, max_nodes: int) -> Iterator[Tree]:
    """Every tree over the alphabet with at most `max_nodes` nodes, each
    exactly once, in size order (deterministic)."""
    if max_nodes < 1:
        raise ValueError("max_nodes must be at least 1")
    memo: dict = {}
    for size in range(1, max_nodes + 1):
        for nested in _nested_trees(alphabet, size, memo):
            yield Tree(alphabet, nested)


def count_trees(alphabet: RankedAlphabet, max_nodes: int) -> int:
    return sum(1 for _ in enumerate_trees(alphabet, max_nodes))


def enumerate_words(symbols: Sequence[str], max_len: int) -> Iterator[str]:
    for length in range(max_len + 1):
        for tup in itertools.product(symbols, repeat=length):
            yield "".join(tup)


# ---------------------------------------------------------------------------
# Oracles: direct definitional deciders, independent of automata and logic

def _oracle_all_leaves_a(tree: Tree) -> bool:
    return all(tree.labels[u] == "a"
               for u in tree.nodes() if not tree.children[u])


def _oracle_even_branching(tree: Tree) -> bool:
    """Every path to an a-labelled leaf passes an even number of branching
    nodes (internal nodes both of whose subtrees contain an a-leaf)."""

    def has_a(u: int) -> bool:
        if not tree.children[u]:
            return tree.labels[u] == "a"
        return any(has_a(c) for c in tree.children[u])

    def ok(u: int, parity: int) -> bool:
        kids = tree.children[u]
        if not kids:
            return parity % 2 == 0 if tree.labels[u] == "a" else True
        branching = all(has_a(c) for c in kids)
        return all(ok(c, parity + (1 if branching else 0)) for c in kids)

    return ok(0, 0)


def _oracle_anbn(tree: Tree) -> bool:
    word = decode_string(tree)
    n2 = len(word)
    half = n2 // 2
    return n2 % 2 == 0 and word == "a" * half + "b" * half


_ORACLES: dict[str, Callable[[Tree], bool]] = {
    "allLeavesA": _oracle_all_leaves_a,
    "T_evenBranching": _oracle_even_branching,
    "anbn": _oracle_anbn,
}


def oracle(tag: str, structure: Tree) -> bool:
    """Decide membership for one of the reference languages."""
    try:
        decide = _ORACLES[tag]
    except KeyError:
        raise ValueError(f"unknown oracle {tag!r}; "
                         f"choose from {sorted(_ORACLES)}") from None
    if getattr(structure, "kind", None) != "tree":
        raise ValueError(f"oracle {tag!r} expects a tree")
    return decide(structure)


# ---------------------------------------------------------------------------
# Equivalence checking

@dataclass
class EquivalenceReport:
    instances: int = 0
    agreements: int = 0
    first_counterexample: Optional[tuple] = None  # (term, valuation, eval, run)
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.instances == self.agreements

    def __bool__(self) -> bool:
        return self.ok

    def record(self, term: str, valuation: dict, want: bool, got: bool):
        self.instances += 1
        if want == got:
            self.agreements += 1
        elif self.first_counterexample is None:
            self.first_counterexample = (term, dict(valuation), want, got)

    def describe(self) -> str:
        lines = [f"instances: {self.instances}",
                 f"agreements: {self.agreements}",
                 f"wall_time: {self.wall_time:.3f}s"]
        if self.first_counterexample:
            term, val, want, got = self.first_counterexample
            lines.append(f"counterexample: {term} {val} formula={want} automaton={got}")
        return "\n".join(lines)


def valuations(variables: Sequence[str], n: int) -> Iterator[dict[str, int]]:
    """All assignments of the variables to nodes 0..n-1, in a fixed order."""
    names = sorted(variables)
    for combo in itertools.product(range(n), repeat=len(names)):
        yield dict(zip(names, combo))


def pebble_layout(valuation: dict[str, int]) -> tuple[tuple[str, int], ...]:
    """Initial pebble stack encoding a valuation (sorted names, bottom first)."""
    return tuple(sorted(valuation.items()))


def equiv_formula_automaton(phi: logic.Formula, aut: automata.Automaton,
                            bound: int, alphabet: Optional[RankedAlphabet] = None,
                            trees: Optional[Iterable[Tree]] = None,
                            mode: Optional[str] = None,
                            budget: Optional[int] = None) -> EquivalenceReport:
    """Compare formula evaluation against automaton runs on every tree up to
    `bound` nodes and every valuation of the formula's free variables.

    Free variables are passed to the automaton as pre-placed pebbles named
    after the variables.
    """
    if alphabet is None:
        alphabet = aut.alphabet
    if trees is None:
        if alphabet is None:
            raise ValueError("need an alphabet (or explicit trees) to enumerate")
        trees = enumerate_trees(alphabet, bound)
    free = sorted(logic.free_vars(phi))
    limit = budget if budget is not None else valuation_budget()
    report = EquivalenceReport()
    started = time.monotonic()
    for tree in trees:
        n = tree.size
        if n ** len(free) > limit:
            raise ValueError(
                f"valuation budget exceeded: {n}^{len(free)} > {limit} "
                f"(override with {VALUATION_BUDGET_ENV})")
        ev = logic.Evaluator(tree)
        for val in valuations(free, n):
            want = ev.evaluate(phi, val)
            result = automata.run(aut, tree, mode=mode, pebbles=pebble_layout(val))
            report.record(tree.to_term(), val, want, result.accepted)
    report.wall_time = time.monotonic() - started
    return report


def equiv_formula_oracle(phi: logic.Formula, tag: str, bound: int,
                         alphabet: RankedAlphabet) -> EquivalenceReport:
    """Compare a closed formula against one of the reference oracles."""
    report = EquivalenceReport()
    started = time.monotonic()
    for tree in enumerate_trees(alphabet, bound):
        want = oracle(tag, tree)
        got = logic.evaluate(phi, tree)
        report.record(tree.to_term(), {}, want, got)
    report.wall_time = time.monotonic() - started
    return report


def equiv_automaton_oracle(aut: automata.Automaton, tag: str, bound: int,
                           alphabet: RankedAlphabet,
                           mode: Optional[str] = None) -> EquivalenceReport:
    report = EquivalenceReport()
    started = time.monotonic()
    for tree in enumerate_trees(alphabet, bound):
        want = oracle(tag, tree)
        got = automata.run(aut, tree, mode=mode).accepted
        report.record(tree.to_term(), {}, want, got)
    report.wall_time = time.monotonic() - started
    return report


# ---------------------------------------------------------------------------
# Random deterministic step matrices (for closure lemma testing)

def random_det_matrix(rng, states: int, k: int = 1):
    """A random deterministic step matrix over `states` states.

    Bodies are drawn from a functional-by-construction grammar (identity,
    parent, guarded i-th child), and rows are split by complementary label
    guards, so functionality and exclusiveness hold by construction.
    """
    from .automata2logic import StepMatrix  # local import to avoid a cycle

    xs = tuple(f"mx{i}" for i in range(1, k + 1))
    ys = tuple(f"my{i}" for i in range(1, k + 1))

    def base_step() -> logic.Formula:
        parts = []
        for x, y in zip(xs, ys):
            choice = rng.randrange(4)
            if choice == 0:
                parts.append(logic.Eq(x, y))
            elif choice == 1:
                parts.append(logic.or_(logic.Edg(1, y, x), logic.Edg(2, y, x)))
            else:
                parts.append(logic.Edg(rng.randrange(1, 3), x, y))
        return logic.and_(*parts)

    def guard() -> logic.Formula:
        sym = rng.choice(["a", "b", "c"])
        return logic.Lab(sym, xs[0])

    entries: dict[tuple[str, str], logic.Formula] = {}
    names = [f"s{i}" for i in range(1, states + 1)]
    for p in names:
        style = rng.randrange(3)
        if style == 0:
            continue  # no outgoing steps: p is final
        if style == 1:
            q = rng.choice(names)
            entries[(p, q)] = base_step()
        else:
            g = guard()
            q1, q2 = rng.choice(names), rng.choice(names)
            f1 = logic.and_(base_step(), g)
            f2 = logic.and_(base_step(), logic.Not(g))
            if q1 == q2:
                entries[(p, q1)] = logic.or_(f1, f2)
            else:
                entries[(p, q1)] = f1
                entries[(p, q2)] = f2
    return StepMatrix(tuple(names), xs, ys, entries)
