"""Multi-head walking automata with nested pebbles.

Two instruction dialects share one machine model: the tree dialect moves
along parent/child edges and tests child numbers, the graph dialect moves
along labelled edges in either direction and tests edge existence.
Pebbles have nested (LIFO) life times; only the most recently dropped one
can be retrieved, and retrieval works at a distance (no head needs to sit
on the pebble).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

from .errors import ParseError
from .terms import NodeId, RankedAlphabet, Tree

TREE = "tree"
GRAPH = "graph"

# Action kinds.  Tests can be negated; operations cannot.
_MOVES = ("up", "down", "inmove", "outmove")
_PEBBLE_OPS = ("drop", "retrieve", "jump")
_TESTS = ("lab", "peb", "chno", "inedge", "outedge")

_TREE_KINDS = {"up", "down", "drop", "retrieve", "jump", "lab", "peb", "chno"}
_GRAPH_KINDS = {"inmove", "outmove", "drop", "retrieve", "jump",
                "lab", "peb", "inedge", "outedge"}


@dataclass(frozen=True)
class Action:
    """One automaton action: a move, a pebble operation, or a (negatable) test."""

    kind: str
    head: Optional[int] = None
    child: Optional[int] = None
    symbol: Optional[str] = None
    pebble: Optional[str] = None
    negated: bool = False

    def __post_init__(self):
        if self.negated and self.kind not in _TESTS:
            raise ValueError(f"only tests can be negated, not {self.kind!r}")

    @property
    def is_test(self) -> bool:
        return self.kind in _TESTS

    def negate(self) -> "Action":
        if not self.is_test:
            raise ValueError(f"cannot negate {self.kind!r}")
        return Action(self.kind, self.head, self.child, self.symbol,
                      self.pebble, not self.negated)

    def __str__(self) -> str:
        neg = "!" if self.negated else ""
        k, h = self.kind, self.head
        if k == "up":
            return f"up_{h}"
        if k == "down":
            return f"down_{h}_{self.child}"
        if k == "chno":
            return f"{neg}chno_{h}_{self.child}"
        if k == "lab":
            return f"{neg}lab_{h}_{self.symbol}"
        if k in ("inmove", "outmove", "inedge", "outedge"):
            return f"{neg}{k}_{h}_{self.symbol}"
        if k == "drop":
            return f"drop_{h}({self.pebble})"
        if k == "jump":
            return f"jump_{h}({self.pebble})"
        if k == "peb":
            return f"{neg}peb_{h}({self.pebble})"
        if k == "retrieve":
            return f"retrieve({self.pebble})"
        raise AssertionError(k)


# Convenience constructors.
def up(i: int) -> Action: return Action("up", head=i)
def down(i: int, j: int) -> Action: return Action("down", head=i, child=j)
def drop(i: int, x: str) -> Action: return Action("drop", head=i, pebble=x)
def retrieve(x: str) -> Action: return Action("retrieve", pebble=x)
def jump(i: int, x: str) -> Action: return Action("jump", head=i, pebble=x)
def lab(i: int, s: str, neg=False) -> Action:
    return Action("lab", head=i, symbol=s, negated=neg)
def peb(i: int, x: str, neg=False) -> Action:
    return Action("peb", head=i, pebble=x, negated=neg)
def chno(i: int, j: int, neg=False) -> Action:
    return Action("chno", head=i, child=j, negated=neg)
def inmove(i: int, s: str) -> Action: return Action("inmove", head=i, symbol=s)
def outmove(i: int, s: str) -> Action: return Action("outmove", head=i, symbol=s)
def inedge(i: int, s: str, neg=False) -> Action:
    return Action("inedge", head=i, symbol=s, negated=neg)
def outedge(i: int, s: str, neg=False) -> Action:
    return Action("outedge", head=i, symbol=s, negated=neg)


def parse_action(text: str) -> Action:
    """Parse the textual action spelling used in automaton files."""
    s = text.strip()
    neg = s.startswith("!")
    if neg:
        s = s[1:].strip()
    m = re.fullmatch(r"up_(\d+)", s)
    if m:
        a = up(int(m.group(1)))
    elif (m := re.fullmatch(r"down_(\d+)_(\d+)", s)):
        a = down(int(m.group(1)), int(m.group(2)))
    elif (m := re.fullmatch(r"chno_(\d+)_(\d+)", s)):
        a = chno(int(m.group(1)), int(m.group(2)))
    elif (m := re.fullmatch(r"lab_(\d+)_([A-Za-z0-9_]+)", s)):
        a = lab(int(m.group(1)), m.group(2))
    elif (m := re.fullmatch(r"(inmove|outmove|inedge|outedge)_(\d+)_([A-Za-z0-9_]+)", s)):
        a = Action(m.group(1), head=int(m.group(2)), symbol=m.group(3))
    elif (m := re.fullmatch(r"drop_(\d+)\(([^()]+)\)", s)):
        a = drop(int(m.group(1)), m.group(2).strip())
    elif (m := re.fullmatch(r"jump_(\d+)\(([^()]+)\)", s)):
        a = jump(int(m.group(1)), m.group(2).strip())
    elif (m := re.fullmatch(r"peb_(\d+)\(([^()]+)\)", s)):
        a = peb(int(m.group(1)), m.group(2).strip())
    elif (m := re.fullmatch(r"retrieve\(([^()]+)\)", s)):
        a = retrieve(m.group(1).strip())
    else:
        raise ParseError(f"unrecognized action {text!r}")
    return a.negate() if neg else a


class Configuration(NamedTuple):
    """Complete instantaneous description of a run."""

    state: str
    heads: tuple[NodeId, ...]
    stack: tuple[tuple[str, NodeId], ...]  # bottom first

    def describe(self) -> str:
        heads = " ".join(str(u) for u in self.heads)
        stack = " ".join(f"{x}@{u}" for x, u in self.stack)
        return f"{self.state} | {heads} | {stack}"


class Verdict(Enum):
    ACCEPT = "Accept"
    REJECT_HALT = "RejectHalt"
    DIVERGE = "Diverge"
    START_DEPENDENT = "StartDependent"

    def __str__(self) -> str:
        return self.value


@dataclass
class RunResult:
    verdict: Verdict
    final: Optional[Configuration] = None
    steps: int = 0
    trace: Optional[list[str]] = None
    per_start: Optional[dict[NodeId, Verdict]] = None

    @property
    def accepted(self) -> bool:
        return self.verdict is Verdict.ACCEPT


@dataclass
class DeterminismReport:
    ok: bool
    violations: list[tuple] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


class Automaton:
    """States plus instruction triples (p, action, q) in one dialect."""

    def __init__(self, states: Iterable[str], initial: str,
                 accepting: Iterable[str],
                 instructions: Iterable[tuple[str, Action, str]],
                 heads: int = 1, pebbles: Iterable[str] = (),
                 dialect: str = TREE,
                 alphabet: Optional[RankedAlphabet] = None,
                 labels: Optional[Iterable[str]] = None):
        if dialect not in (TREE, GRAPH):
            raise ValueError(f"unknown dialect {dialect!r}")
        if heads < 1:
            raise ValueError("need at least one head")
        self.states = tuple(dict.fromkeys(states))
        self.initial = initial
        self.accepting = frozenset(accepting)
        self.instructions = tuple(instructions)
        self.heads = heads
        self.pebbles = tuple(dict.fromkeys(pebbles))
        self.dialect = dialect
        self.alphabet = alphabet
        # Edge/node label alphabet for the graph dialect (plain names).
        self.labels = tuple(dict.fromkeys(labels)) if labels is not None else None
        self._validate()
        self.by_state: dict[str, list[tuple[Action, str]]] = {q: [] for q in self.states}
        for p, a, q in self.instructions:
            self.by_state[p].append((a, q))

    def _validate(self):
        states = set(self.states)
        if self.initial not in states:
            raise ValueError(f"initial state {self.initial!r} not declared")
        for q in self.accepting:
            if q not in states:
                raise ValueError(f"accepting state {q!r} not declared")
        pebbles = set(self.pebbles)
        allowed = _TREE_KINDS if self.dialect == TREE else _GRAPH_KINDS
        for p, a, q in self.instructions:
            if p not in states or q not in states:
                raise ValueError(f"undeclared state in ({p}, {a}, {q})")
            if a.kind not in allowed:
                raise ValueError(f"action {a} not in {self.dialect} dialect")
            if a.head is not None and not 1 <= a.head <= self.heads:
                raise ValueError(f"head index out of range in {a}")
            if a.pebble is not None and a.pebble not in pebbles:
                raise ValueError(f"undeclared pebble in {a}")
            if self.alphabet is not None:
                if a.symbol is not None and self.dialect == TREE and a.symbol not in self.alphabet:
                    raise ValueError(f"unknown symbol in {a}")
                if a.kind in ("down", "chno") and not 1 <= a.child <= self.alphabet.max_rank:
                    raise ValueError(f"child number out of range in {a}")

    def with_accepting(self, accepting: Iterable[str]) -> "Automaton":
        return Automaton(self.states, self.initial, accepting, self.instructions,
                         self.heads, self.pebbles, self.dialect, self.alphabet,
                         self.labels)

    def __repr__(self) -> str:
        return (f"Automaton({len(self.states)} states, {self.heads} heads, "
                f"{len(self.pebbles)} pebbles, {len(self.instructions)} "
                f"instructions, {self.dialect})")


def check_deterministic(aut: Automaton) -> DeterminismReport:
    """True iff every pair of distinct same-state instructions is a
    complementary test pair."""
    violations = []
    for p in aut.states:
        outs = aut.by_state[p]
        for i in range(len(outs)):
            for j in range(i + 1, len(outs)):
                a1, q1 = outs[i]
                a2, q2 = outs[j]
                if (a1, q1) == (a2, q2):
                    continue  # duplicate triple, not "distinct instructions"
                if a1.is_test and a2 == a1.negate():
                    continue
                violations.append(((p, a1, q1), (p, a2, q2)))
    return DeterminismReport(not violations, violations)


def _test_holds(a: Action, structure, heads, stack) -> bool:
    u = heads[a.head - 1]
    if a.kind == "lab":
        r = structure.label(u) == a.symbol
    elif a.kind == "peb":
        r = (a.pebble, u) in stack
    elif a.kind == "chno":
        r = structure.child_number[u] == a.child
    elif a.kind == "inedge":
        r = structure.in_neighbor(u, a.symbol) is not None
    elif a.kind == "outedge":
        r = structure.out_neighbor(u, a.symbol) is not None
    else:
        raise AssertionError(a.kind)
    return r != a.negated


def apply_action(a: Action, structure, config: Configuration,
                 target: str) -> Optional[Configuration]:
    """The step-relation row for one instruction; None when inapplicable."""
    state, heads, stack = config
    if a.is_test:
        return Configuration(target, heads, stack) if _test_holds(a, structure, heads, stack) else None
    if a.kind == "drop":
        if any(x == a.pebble for x, _ in stack):
            return None
        return Configuration(target, heads, stack + ((a.pebble, heads[a.head - 1]),))
    if a.kind == "retrieve":
        if stack and stack[-1][0] == a.pebble:
            return Configuration(target, heads, stack[:-1])
        return None
    if a.kind == "jump":
        for x, w in stack:
            if x == a.pebble:
                i = a.head - 1
                return Configuration(target, heads[:i] + (w,) + heads[i + 1:], stack)
        return None
    i = a.head - 1
    u = heads[i]
    if a.kind == "up":
        v = structure.parent[u]
    elif a.kind == "down":
        v = structure.child(u, a.child)
    elif a.kind == "inmove":
        v = structure.in_neighbor(u, a.symbol)
    elif a.kind == "outmove":
        v = structure.out_neighbor(u, a.symbol)
    else:
        raise AssertionError(a.kind)
    if v is None:
        return None
    return Configuration(target, heads[:i] + (v,) + heads[i + 1:], stack)


def step(aut: Automaton, structure, config: Configuration) -> list[Configuration]:
    """All successor configurations; the empty list means halting."""
    out = []
    for a, q in aut.by_state[config.state]:
        nxt = apply_action(a, structure, config, q)
        if nxt is not None and nxt not in out:
            out.append(nxt)
    return out


def initial_configuration(aut: Automaton, structure, start: Optional[NodeId] = None,
                          pebbles: Sequence[tuple[str, NodeId]] = ()) -> Configuration:
    if start is None:
        start = 0 if aut.dialect == TREE else 0
    return Configuration(aut.initial, (start,) * aut.heads, tuple(pebbles))


def _is_accepting_halt(aut: Automaton, structure, config: Configuration,
                       initial_stack: tuple) -> bool:
    if config.state not in aut.accepting:
        return False
    if config.stack != initial_stack:
        return False
    if aut.dialect == TREE and any(u != 0 for u in config.heads):
        return False
    return True


def _run_deterministic(aut: Automaton, structure, config: Configuration,
                       trace: bool) -> RunResult:
    """Iterate the unique step; Brent cycle detection makes divergence exact
    without storing the whole configuration history."""
    initial_stack = config.stack
    lines = [config.describe()] if trace else None
    outs = aut.by_state
    steps = 0
    tortoise = config
    power = 1
    lam = 0
    while True:
        nxt = None
        for a, q in outs[config.state]:
            cand = apply_action(a, structure, config, q)
            if cand is not None:
                nxt = cand
                break
        if nxt is None:
            verdict = (Verdict.ACCEPT
                       if _is_accepting_halt(aut, structure, config, initial_stack)
                       else Verdict.REJECT_HALT)
            return RunResult(verdict, config, steps, lines)
        steps += 1
        lam += 1
        if nxt == tortoise:
            return RunResult(Verdict.DIVERGE, None, steps, lines)
        if lam == power:
            tortoise = nxt
            power *= 2
            lam = 0
        config = nxt
        if trace:
            lines.append(config.describe())


def _run_nondeterministic(aut: Automaton, structure, config: Configuration) -> RunResult:
    """Breadth-first reachability over the finite configuration space."""
    from collections import deque

    initial_stack = config.stack
    seen = {config}
    queue = deque([config])
    explored = 0
    while queue:
        c = queue.popleft()
        explored += 1
        succs = step(aut, structure, c)
        if not succs and _is_accepting_halt(aut, structure, c, initial_stack):
            return RunResult(Verdict.ACCEPT, c, explored)
        for s in succs:
            if s not in seen:
                seen.add(s)
                queue.append(s)
    return RunResult(Verdict.REJECT_HALT, None, explored)


def run(aut: Automaton, structure, mode: Optional[str] = None,
        start: Optional[NodeId] = None,
        pebbles: Sequence[tuple[str, NodeId]] = (),
        trace: bool = False) -> RunResult:
    """Run the automaton on a tree or graph.

    Deterministic mode iterates the unique step and reports Accept,
    RejectHalt or Diverge.  Nondeterministic mode searches the reachable
    configuration space and reports Accept iff some accepting halting
    configuration exists.  On graphs with no explicit start node, the run
    is repeated from every node and a disagreement between starts yields
    the StartDependent verdict.
    """
    det_report = check_deterministic(aut)
    if mode is None:
        mode = "deterministic" if det_report else "nondeterministic"
    if mode == "deterministic" and not det_report:
        raise ValueError("nondeterministic automaton passed in deterministic mode")
    if mode not in ("deterministic", "nondeterministic"):
        raise ValueError(f"unknown mode {mode!r}")

    def run_from(node: NodeId) -> RunResult:
        cfg = initial_configuration(aut, structure, node, pebbles)
        if mode == "deterministic":
            return _run_deterministic(aut, structure, cfg, trace)
        return _run_nondeterministic(aut, structure, cfg)

    if aut.dialect == TREE or start is not None:
        return run_from(start if start is not None else 0)

    # Graph dialect, no start given: verify start independence.
    per_start: dict[NodeId, Verdict] = {}
    total = 0
    last = None
    for node in structure.nodes():
        r = run_from(node)
        per_start[node] = r.verdict
        total += r.steps
        last = r
    verdicts = {v is Verdict.ACCEPT for v in per_start.values()}
    if len(verdicts) == 2:
        return RunResult(Verdict.START_DEPENDENT, None, total, None, per_start)
    verdict = Verdict.ACCEPT if verdicts == {True} else Verdict.REJECT_HALT
    return RunResult(verdict, last.final, total, None, per_start)


def complement(aut: Automaton) -> Automaton:
    """Swap accepting and non-accepting states.

    Complements the language only on structures where the automaton is
    deterministic and halts with all heads at the root and an empty stack;
    the harness verifies this empirically for compiled automata.
    """
    return aut.with_accepting(set(aut.states) - set(aut.accepting))


def parse_automaton(text: str) -> Automaton:
    """Parse the automaton file format.

    Header lines `heads:`, `pebbles:`, `initial:`, `accepting:`, optional
    `dialect:` and `alphabet:`, then one instruction `p , action , q` per
    line.  `#` starts a comment.
    """
    heads = 1
    pebbles: list[str] = []
    initial = None
    accepting: list[str] = []
    dialect = None
    alphabet = None
    instructions: list[tuple[str, Action, str]] = []
    states: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip().lower()
        if _ and key in ("heads", "pebbles", "initial", "accepting", "dialect", "alphabet"):
            rest = rest.strip()
            if key == "heads":
                heads = int(rest)
            elif key == "pebbles":
                pebbles = rest.split()
            elif key == "initial":
                initial = rest
            elif key == "accepting":
                accepting = rest.split()
            elif key == "dialect":
                dialect = rest
            elif key == "alphabet":
                alphabet = RankedAlphabet([(s.split(":")[0], int(s.split(":")[1]))
                                           for s in rest.split()])
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected `p , action , q`")
        p, action_text, q = parts
        try:
            action = parse_action(action_text)
        except ParseError as e:
            raise ParseError(f"line {lineno}: {e}") from None
        instructions.append((p, action, q))
        for s in (p, q):
            if s not in states:
                states.append(s)
    if initial is None:
        raise ParseError("missing `initial:` header")
    for s in [initial] + accepting:
        if s not in states:
            states.append(s)
    if dialect is None:
        kinds = {a.kind for _, a, _ in instructions}
        dialect = GRAPH if kinds & {"inmove", "outmove", "inedge", "outedge"} else TREE
    return Automaton(states, initial, accepting, instructions, heads,
                     pebbles, dialect, alphabet)


def format_automaton(aut: Automaton) -> str:
    lines = [f"heads: {aut.heads}"]
    if aut.pebbles:
        lines.append("pebbles: " + " ".join(aut.pebbles))
    lines.append(f"initial: {aut.initial}")
    lines.append("accepting: " + " ".join(q for q in aut.states if q in aut.accepting))
    lines.append(f"dialect: {aut.dialect}")
    if aut.alphabet is not None:
        lines.append("alphabet: " + " ".join(f"{n}:{r}" for n, r in aut.alphabet.symbols))
    for p, a, q in aut.instructions:
        lines.append(f"{p} , {a} , {q}")
    return "\n".join(lines) + "\n"
