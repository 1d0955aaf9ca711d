"""Compile formulas to walking automata with nested pebbles.

`compile_det` turns a formula whose closures are all deterministic into a
deterministic automaton that always halts with all heads back at the root
and the entry pebble layout restored, accepting iff the formula holds
under the valuation encoded by pre-placed pebbles (one per free variable,
named after it).  Quantifiers sweep a pebble through the tree in preorder;
a k-ary deterministic closure is decided by walking the tree of source
tuples backwards from the target tuple with 3k auxiliary pebbles, so the
automaton never retraces a cycle and always terminates.

`compile_nondet` handles positive closures by guess-and-verify with 2k
auxiliary pebbles per closure.

Bound variables use a depth-indexed pool of pebble names (P1, P2, ...) so
that parallel branches reuse slots and the declared pebble count equals
`pebble_budget`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import logic
from .automata import (Action, Automaton, chno, down, drop, jump, lab, peb,
                       retrieve, up)
from .errors import PebbletcError
from .logic import (TC, And, Bottom, Edg, EdgeLab, Eq, Exists, Forall,
                    Formula, Lab, Leq, Not, Or, Top)
from .terms import RankedAlphabet


class CompileError(PebbletcError):
    pass


def pebble_budget(phi: Formula, k: int) -> int:
    """Pebbles needed to decide the formula: one per free variable plus the
    deepest chain of nested quantifiers (1 each) and deterministic closures
    (3 x arity each)."""

    def depth(f: Formula) -> int:
        if isinstance(f, (Exists, Forall)):
            return 1 + depth(f.body)
        if isinstance(f, TC):
            cost = 3 * len(f.xs) if f.deterministic else 2 * len(f.xs)
            return cost + depth(f.body)
        kids = logic._children(f)
        return max((depth(c) for c in kids), default=0)

    return len(logic.free_vars(phi)) + depth(phi)


@dataclass(frozen=True)
class _Ctx:
    alphabet: RankedAlphabet
    heads: int
    mapping: dict  # variable name -> pebble name
    depth: int

    def bind(self, var: str, pebble: str, depth: int) -> "_Ctx":
        m = dict(self.mapping)
        m[var] = pebble
        return _Ctx(self.alphabet, self.heads, m, depth)

    def pool(self, offset: int) -> str:
        return f"P{self.depth + offset}"


class _Builder:
    def __init__(self, alphabet: RankedAlphabet, heads: int):
        self.alphabet = alphabet
        self.heads = heads
        self.counter = 0
        self.states: list[str] = []
        self.instructions: list[tuple[str, Action, str]] = []
        self._seen: set[tuple] = set()
        self._dead: Optional[str] = None

    def fresh(self, hint: str) -> str:
        self.counter += 1
        name = f"{hint}.{self.counter}"
        self.states.append(name)
        return name

    def add(self, p: str, action: Action, q: str):
        key = (p, action, q)
        if key not in self._seen:
            self._seen.add(key)
            self.instructions.append(key)

    def test(self, p: str, action: Action, q_true: str, q_false: str):
        self.add(p, action, q_true)
        self.add(p, action.negate(), q_false)

    def epsilon(self, p: str, q: str, head: int = 1):
        """An always-applicable deterministic move: a complementary test
        pair with a shared target."""
        probe = lab(head, self.alphabet.symbols[0][0])
        self.test(p, probe, q, q)

    def dead(self) -> str:
        if self._dead is None:
            self._dead = self.fresh("dead")
        return self._dead

    # -- reusable walking gadgets ------------------------------------------

    def goto_root(self, entry: str, target: str, head: int):
        """Climb until the child number is 0."""
        m = self.alphabet.max_rank
        if m == 0:
            self.epsilon(entry, target, head)
            return
        upper = self.fresh("gru")
        self.add(upper, up(head), entry)
        cur = entry
        for j in range(1, m + 1):
            nxt = target if j == m else self.fresh("gr")
            self.test(cur, chno(head, j), upper, nxt)
            cur = nxt

    def goto_root_then(self, target: str, head: int) -> str:
        entry = self.fresh("gr0")
        self.goto_root(entry, target, head)
        return entry

    def label_dispatch(self, entry: str, head: int, targets: dict) -> None:
        """Branch on the label under `head`; `targets` maps symbol -> state."""
        symbols = [n for n, _ in self.alphabet.symbols]
        distinct = set(targets[s] for s in symbols)
        if len(distinct) == 1:
            self.epsilon(entry, distinct.pop(), head)
            return
        cur = entry
        for i, s in enumerate(symbols):
            last = i == len(symbols) - 1
            nxt = self.dead() if last else self.fresh("ld")
            self.test(cur, lab(head, s), targets[s], nxt)
            if last:
                # The final negative branch is unreachable: some label holds.
                pass
            cur = nxt

    def rank_dispatch(self, entry: str, head: int, minimum: int,
                      at_least: str, below: str):
        """Branch on whether the node's rank is >= minimum."""
        targets = {n: at_least if r >= minimum else below
                   for n, r in self.alphabet.symbols}
        self.label_dispatch(entry, head, targets)

    def preorder_step(self, entry: str, succ: str, done: str, head: int):
        """Move `head` to its node's preorder successor; `done` (at the
        root) when the node was last in preorder."""
        m = self.alphabet.max_rank
        down_first = self.fresh("pod")
        self.add(down_first, down(head, 1), succ)
        climb = self.fresh("poc")
        self.rank_dispatch(entry, head, 1, down_first, climb)
        cur = climb
        for j in range(1, m + 1):
            take = self.fresh(f"poj{j}")
            nxt = done if j == m else self.fresh("pon")
            self.test(cur, chno(head, j), take, nxt)
            after_up = self.fresh("pou")
            self.add(take, up(head), after_up)
            if j < m:
                godown = self.fresh("pos")
                self.add(godown, down(head, j + 1), succ)
                self.rank_dispatch(after_up, head, j + 1, godown, climb)
            else:
                self.epsilon(after_up, climb, head)
            cur = nxt
        if m == 0:
            # Single-node trees: the root is always last.
            self.epsilon(climb, done, head)

    def scan(self, entry: str, probe: Action, hit: str, miss: str, head: int):
        """Preorder search from the root for a node satisfying `probe`;
        `hit` leaves the head on the node, `miss` back at the root."""
        advance = self.fresh("sca")
        self.test(entry, probe, hit, advance)
        self.preorder_step(advance, succ=entry, done=miss, head=head)

    def head_to_pebble(self, entry: str, pebble: str, then: str, head: int):
        """Walk `head` to the node carrying `pebble` (which must be placed)."""
        loop = self.fresh("htp")
        self.goto_root(entry, loop, head)
        self.scan(loop, peb(head, pebble), then, self.dead(), head)

    def chain(self, entry: str, steps, final: str) -> None:
        """Emit `steps` (callables (entry, target) -> None) in sequence."""
        cur = entry
        for i, step in enumerate(steps):
            nxt = final if i == len(steps) - 1 else self.fresh("ch")
            step(cur, nxt)
            cur = nxt
        if not steps:
            self.epsilon(entry, final)

    def build(self, initial: str, accepting: Sequence[str],
              pebbles: Sequence[str]) -> Automaton:
        return Automaton(self.states, initial, accepting, self.instructions,
                         heads=self.heads, pebbles=pebbles, dialect="tree",
                         alphabet=self.alphabet)


# ---------------------------------------------------------------------------
# Atom gadgets.  Contract: enter with all heads at the root; leave to `yes`
# or `no` with all heads at the root and the pebble stack untouched.

def _emit_lab(b: _Builder, ctx: _Ctx, f: Lab, entry: str, yes: str, no: str):
    if f.symbol not in ctx.alphabet:
        raise CompileError(f"unknown symbol {f.symbol!r}")
    px = ctx.mapping[f.var]
    hit = b.fresh("labh")
    b.scan(entry, peb(1, px), hit, no, head=1)
    b.test(hit, lab(1, f.symbol), b.goto_root_then(yes, 1),
           b.goto_root_then(no, 1))


def _emit_eq(b: _Builder, ctx: _Ctx, f: Eq, entry: str, yes: str, no: str):
    px, py = ctx.mapping[f.left], ctx.mapping[f.right]
    hit = b.fresh("eqh")
    b.scan(entry, peb(1, px), hit, no, head=1)
    b.test(hit, peb(1, py), b.goto_root_then(yes, 1),
           b.goto_root_then(no, 1))


def _emit_edg(b: _Builder, ctx: _Ctx, f: Edg, entry: str, yes: str, no: str):
    if not 1 <= f.child <= ctx.alphabet.max_rank:
        raise CompileError(f"child number {f.child} out of range")
    px, py = ctx.mapping[f.src], ctx.mapping[f.dst]
    hit = b.fresh("edh")
    b.scan(entry, peb(1, px), hit, no, head=1)
    go = b.fresh("edd")
    b.rank_dispatch(hit, 1, f.child, go, b.goto_root_then(no, 1))
    at_child = b.fresh("edc")
    b.add(go, down(1, f.child), at_child)
    b.test(at_child, peb(1, py), b.goto_root_then(yes, 1),
           b.goto_root_then(no, 1))


def _emit_leq(b: _Builder, ctx: _Ctx, f: Leq, entry: str, yes: str, no: str):
    panc, pdesc = ctx.mapping[f.left], ctx.mapping[f.right]
    check = b.fresh("lqc")
    b.scan(entry, peb(1, pdesc), check, no, head=1)
    # Climb from the descendant, testing for the ancestor pebble.
    not_here = b.fresh("lqn")
    b.test(check, peb(1, panc), b.goto_root_then(yes, 1), not_here)
    m = ctx.alphabet.max_rank
    upper = b.fresh("lqu")
    b.add(upper, up(1), check)
    cur = not_here
    for j in range(1, m + 1):
        nxt = no if j == m else b.fresh("lql")
        b.test(cur, chno(1, j), upper, nxt)
        cur = nxt
    if m == 0:
        b.epsilon(not_here, no, 1)


# ---------------------------------------------------------------------------
# Quantifier loop: sweep a pebble through all nodes in preorder.

def _emit_quantifier(b: _Builder, ctx: _Ctx, f, entry: str, yes: str, no: str,
                     emit_body, nondet: bool):
    universal = isinstance(f, Forall)
    if nondet and isinstance(f, Exists):
        _emit_exists_nondet(b, ctx, f, entry, yes, no, emit_body)
        return
    pebble = ctx.pool(1)
    inner = ctx.bind(f.var, pebble, ctx.depth + 1)
    body_entry = b.fresh("qb")
    b.add(entry, drop(1, pebble), body_entry)

    advance = b.fresh("qa")
    clean_exit = b.fresh("qx")
    early = no if universal else yes
    b.add(clean_exit, retrieve(pebble), early)
    if universal:
        emit_body(b, inner, f.body, body_entry, advance, clean_exit)
    else:
        emit_body(b, inner, f.body, body_entry, clean_exit, advance)

    # Move the pebble to the next node in preorder and re-run the body.
    found = b.fresh("qf")
    b.scan(advance, peb(1, pebble), found, b.dead(), head=1)
    lifted = b.fresh("ql")
    b.add(found, retrieve(pebble), lifted)
    placed = b.fresh("qp")
    done = yes if universal else no
    b.preorder_step(lifted, succ=placed, done=done, head=1)
    b.add(placed, drop(1, pebble), b.goto_root_then(body_entry, 1))


def _emit_exists_nondet(b: _Builder, ctx: _Ctx, f: Exists, entry: str,
                        yes: str, no: str, emit_body):
    pebble = ctx.pool(1)
    inner = ctx.bind(f.var, pebble, ctx.depth + 1)
    _emit_wander(b, ctx, entry, head=1, allow_up=False)
    chosen = b.fresh("nqc")
    _wander_stop(b, ctx, entry, chosen, head=1)
    body_entry = b.fresh("nqb")
    b.add(chosen, drop(1, pebble), b.goto_root_then(body_entry, 1))
    done = b.fresh("nqd")
    emit_body(b, inner, f.body, body_entry, done, b.dead())
    b.add(done, retrieve(pebble), yes)


def _emit_wander(b: _Builder, ctx: _Ctx, state: str, head: int, allow_up: bool):
    """Nondeterministic self-loops letting `head` reach any node."""
    for j in range(1, ctx.alphabet.max_rank + 1):
        b.add(state, down(head, j), state)
    if allow_up:
        b.add(state, up(head), state)


def _wander_stop(b: _Builder, ctx: _Ctx, state: str, target: str, head: int):
    """Nondeterministic exit from a wander state, applicable at any node."""
    for name, _ in ctx.alphabet.symbols:
        b.add(state, lab(head, name), target)


# ---------------------------------------------------------------------------
# The deterministic closure module (3k pebbles, backward walk)

class _TcDet:
    """Emits the walk over the tree of source tuples rooted at the target
    tuple.  Heads 1..k track the current vertex between operations."""

    def __init__(self, b: _Builder, ctx: _Ctx, f: TC, emit_body):
        self.b = b
        self.ctx = ctx
        self.f = f
        self.k = len(f.xs)
        d = ctx.depth
        self.px = [f"P{d + i}" for i in range(1, self.k + 1)]
        self.py = [f"P{d + self.k + i}" for i in range(1, self.k + 1)]
        self.pz = [f"P{d + 2 * self.k + i}" for i in range(1, self.k + 1)]
        self.pu = [ctx.mapping[v] for v in f.us]
        self.pv = [ctx.mapping[v] for v in f.vs]
        inner_depth = d + 3 * self.k
        self.ctx_x = ctx.bind("", "", inner_depth)
        m = dict(ctx.mapping)
        m.update(zip(f.xs, self.px))
        m.update(zip(f.ys, self.py))
        self.ctx_x = _Ctx(ctx.alphabet, ctx.heads, m, inner_depth)
        mz = dict(ctx.mapping)
        mz.update(zip(f.xs, self.pz))
        mz.update(zip(f.ys, self.py))
        self.ctx_z = _Ctx(ctx.alphabet, ctx.heads, mz, inner_depth)
        self.emit_body = emit_body
        # Body instances are emitted once and entered through these states.
        self._body_x: Optional[tuple[str, str, str]] = None  # entry, yes, no
        self._body_z: Optional[tuple[str, str, str]] = None

    # The body automaton has no persistent exits; we need to re-enter it
    # with different continuations from several places, so each instance is
    # emitted once with a pair of dispatcher exits that jump through a
    # per-call-site return pebble...  Simpler and still linear: emit one
    # instance per call site.  Call sites are few (two per enumeration).

    def body_x(self, entry: str, yes: str, no: str):
        gathered = self._gather_heads(entry)
        self.emit_body(self.b, self.ctx_x, self.f.body, gathered, yes, no)

    def body_z(self, entry: str, yes: str, no: str):
        gathered = self._gather_heads(entry)
        self.emit_body(self.b, self.ctx_z, self.f.body, gathered, yes, no)

    def _gather_heads(self, entry: str) -> str:
        """Send every head back to the root before running the body."""
        b = self.b
        cur = entry
        for i in range(1, self.k + 1):
            nxt = b.fresh("tg")
            b.goto_root(cur, nxt, head=i)
            cur = nxt
        return cur

    def heads_to_pebbles(self, entry: str, pebs: Sequence[str], then: str):
        b = self.b
        cur = entry
        for i in range(1, self.k + 1):
            nxt = then if i == self.k else b.fresh("thp")
            b.head_to_pebble(cur, pebs[i - 1], nxt, head=i)
            cur = nxt

    def drop_at_heads(self, entry: str, pebs: Sequence[str], then: str):
        b = self.b
        cur = entry
        for i in range(1, self.k + 1):
            nxt = then if i == self.k else b.fresh("tdr")
            b.add(cur, drop(i, pebs[i - 1]), nxt)
            cur = nxt

    def retrieve_all(self, entry: str, pebs: Sequence[str], then: str):
        """Pop a block of pebbles (top of stack), last dropped first."""
        b = self.b
        cur = entry
        rev = list(pebs)[::-1]
        for i, x in enumerate(rev):
            nxt = then if i == len(rev) - 1 else b.fresh("trt")
            b.add(cur, retrieve(x), nxt)
            cur = nxt

    def heads_match(self, entry: str, pebs: Sequence[str], yes: str, no: str):
        """Do the heads stand on the nodes carrying `pebs`?"""
        b = self.b
        cur = entry
        for i in range(1, self.k + 1):
            nxt = yes if i == self.k else b.fresh("tm")
            b.test(cur, peb(i, pebs[i - 1]), nxt, no)
            cur = nxt

    def enum_init(self, entry: str, pebs: Sequence[str], then: str):
        """Place the candidate pebbles on the lexicographically first tuple
        (all components at the root)."""
        b = self.b
        at_root = b.fresh("tei")
        b.goto_root(entry, at_root, head=1)
        cur = at_root
        for i, x in enumerate(pebs):
            nxt = then if i == len(pebs) - 1 else b.fresh("teid")
            b.add(cur, drop(1, x), nxt)
            cur = nxt

    def enum_init_at(self, entry: str, pebs: Sequence[str],
                     marks: Sequence[str], then: str):
        """Place `pebs` on the tuple currently marked by `marks`."""
        b = self.b
        cur = entry
        for i, (x, mark) in enumerate(zip(pebs, marks)):
            found = b.fresh("teaf")
            b.head_to_pebble(cur, mark, found, head=1)
            nxt = then if i == len(pebs) - 1 else b.fresh("tea")
            b.add(found, drop(1, x), nxt)
            cur = nxt

    def enum_next(self, entry: str, pebs: Sequence[str], ok: str, exhausted: str):
        """Advance the tuple marked by `pebs` to its lexicographic successor
        (adding one to a k-ary number of preorder positions); `exhausted`
        with all of `pebs` retrieved when it was the last tuple."""
        b = self.b
        cascade_entry = exhausted  # advancing "component 0" fails
        for i in range(1, len(pebs) + 1):
            x = pebs[i - 1]
            # Success continuation: re-drop components i+1..k at the root.
            if i == len(pebs):
                after = ok
            else:
                after = b.fresh("tnr")
                redrop = b.fresh("tnd")
                b.goto_root(after, redrop, head=1)
                cur = redrop
                for j in range(i + 1, len(pebs) + 1):
                    nxt = ok if j == len(pebs) else b.fresh("tnd2")
                    b.add(cur, drop(1, pebs[j - 1]), nxt)
                    cur = nxt
            e = b.fresh(f"tn{i}")
            found = b.fresh("tnf")
            b.head_to_pebble(e, x, found, head=1)
            lifted = b.fresh("tnl")
            b.add(found, retrieve(x), lifted)
            placed = b.fresh("tnp")
            b.preorder_step(lifted, succ=placed, done=cascade_entry, head=1)
            b.add(placed, drop(1, x), after)
            cascade_entry = e
        # The overall entry advances the last component first.
        b.epsilon(entry, cascade_entry, 1)

    def tuple_is_target(self, entry: str, pebs: Sequence[str], eq: str, neq: str):
        """Compare the tuple marked by `pebs` with the closure target tuple
        (marked by the applied pebbles)."""
        b = self.b
        cur = entry
        for i in range(1, self.k + 1):
            found = b.fresh("ttf")
            b.head_to_pebble(cur, pebs[i - 1], found, head=1)
            nxt = eq if i == self.k else b.fresh("tt")
            b.test(found, peb(1, self.pv[i - 1]), nxt, neq)
            cur = nxt

    def first_child(self, entry: str, found: str, none: str):
        """From the current vertex (under the heads), descend to its first
        child in the tuple tree, or report that it has none."""
        b = self.b
        after_drop = b.fresh("fc")
        self.drop_at_heads(entry, self.py, after_drop)
        loop = b.fresh("fcl")
        self.enum_init(after_drop, self.px, loop)
        advance = b.fresh("fca")
        check = b.fresh("fcc")
        self.tuple_is_target(loop, self.px, advance, check)
        got = b.fresh("fcg")
        self.body_x(check, got, advance)
        nxt = b.fresh("fcn")
        exhausted = b.fresh("fce")
        self.enum_next(advance, self.px, nxt, exhausted)
        b.epsilon(nxt, loop, 1)
        # Found: heads to the child, lift candidates, retrieve the vertex marks.
        moved = b.fresh("fcm")
        self.heads_to_pebbles(got, self.px, moved)
        lifted = b.fresh("fcr")
        self.retrieve_all(moved, self.px, lifted)
        self.retrieve_all(lifted, self.py, found)
        # No child: heads back to the current vertex, unmark it.
        back = b.fresh("fcb")
        self.heads_to_pebbles(exhausted, self.py, back)
        self.retrieve_all(back, self.py, none)

    def sibling_or_up(self, entry: str, sibling: str, parent: str):
        """Move to the right sibling of the current vertex, or to its parent
        when there is none.  The current vertex must not be the target."""
        b = self.b
        start = b.fresh("so")
        self.drop_at_heads(entry, self.px, start)
        # Find the parent: the unique tuple the body maps the vertex to.
        ploop = b.fresh("sop")
        self.enum_init(start, self.py, ploop)
        phit = b.fresh("soh")
        pmiss = b.fresh("som")
        self.body_x(ploop, phit, pmiss)
        pnxt = b.fresh("son")
        self.enum_next(pmiss, self.py, pnxt, b.dead())
        b.epsilon(pnxt, ploop, 1)
        # Scan for the next tuple after the vertex that also maps to it.
        zinit = b.fresh("soz")
        self.enum_init_at(phit, self.pz, self.px, zinit)
        zadv = b.fresh("soza")
        b.epsilon(zinit, zadv, 1)
        zloop = b.fresh("sozl")
        znxt = b.fresh("sozn")
        zexh = b.fresh("soze")
        self.enum_next(zadv, self.pz, znxt, zexh)
        b.epsilon(znxt, zloop, 1)
        zcheck = b.fresh("sozc")
        self.tuple_is_target(zloop, self.pz, zadv, zcheck)
        zgot = b.fresh("sozg")
        self.body_z(zcheck, zgot, zadv)
        # Sibling found: move there, pop everything.
        moved = b.fresh("sozm")
        self.heads_to_pebbles(zgot, self.pz, moved)
        a = b.fresh("sor1")
        self.retrieve_all(moved, self.pz, a)
        c = b.fresh("sor2")
        self.retrieve_all(a, self.py, c)
        self.retrieve_all(c, self.px, sibling)
        # None: go up to the parent.
        upb = b.fresh("soub")
        self.heads_to_pebbles(zexh, self.py, upb)
        d = b.fresh("sou1")
        self.retrieve_all(upb, self.py, d)
        self.retrieve_all(d, self.px, parent)

    def emit(self, entry: str, yes: str, no: str):
        b = self.b
        clean_yes = b.fresh("tcy")
        clean_no = b.fresh("tcn")
        cur = clean_yes
        for i in range(1, self.k + 1):
            nxt = yes if i == self.k else b.fresh("tcy2")
            b.goto_root(cur, nxt, head=i)
            cur = nxt
        cur = clean_no
        for i in range(1, self.k + 1):
            nxt = no if i == self.k else b.fresh("tcn2")
            b.goto_root(cur, nxt, head=i)
            cur = nxt

        # Start at the target tuple; the zero-jump case is checked first.
        at_target = b.fresh("tct")
        self.heads_to_pebbles(entry, self.pv, at_target)
        descend = b.fresh("tcd")
        self.heads_match(at_target, self.pu, clean_yes, descend)
        check = b.fresh("tcc")
        climb = b.fresh("tcl")
        self.first_child(descend, check, climb)
        self.heads_match(check, self.pu, clean_yes, descend)
        # Climbing: done when back at the target vertex.
        more = b.fresh("tcm")
        self.heads_match(climb, self.pv, clean_no, more)
        self.sibling_or_up(more, check, climb)


# ---------------------------------------------------------------------------
# Nondeterministic closure: guess-and-verify with 2k pebbles.

def _emit_tc_nondet(b: _Builder, ctx: _Ctx, f: TC, entry: str, yes: str,
                    no: str, emit_body):
    k = len(f.xs)
    d = ctx.depth
    px = [f"P{d + i}" for i in range(1, k + 1)]
    py = [f"P{d + k + i}" for i in range(1, k + 1)]
    m = dict(ctx.mapping)
    m.update(zip(f.xs, px))
    m.update(zip(f.ys, py))
    inner = _Ctx(ctx.alphabet, ctx.heads, m, d + 2 * k)
    pu = [ctx.mapping[v] for v in f.us]
    pv = [ctx.mapping[v] for v in f.vs]

    # Move heads onto the source tuple.
    loop = b.fresh("ntl")
    cur = entry
    for i in range(1, k + 1):
        nxt = loop if i == k else b.fresh("nth")
        b.head_to_pebble(cur, pu[i - 1], nxt, head=i)
        cur = nxt

    # Fork: either verify we reached the target, or take one more jump.
    verify = b.fresh("ntv")
    jump_ = b.fresh("ntj")
    probe = lab(1, ctx.alphabet.symbols[0][0])
    for target in (verify, jump_):
        b.add(loop, probe, target)
        b.add(loop, probe.negate(), target)

    okcur = verify
    for i in range(1, k + 1):
        nxt = b.fresh("ntv2") if i < k else None
        cleanup = b.fresh("ntvy") if i == k else nxt
        b.test(okcur, peb(i, pv[i - 1]), cleanup, b.dead())
        okcur = cleanup
    gather = okcur
    cur = gather
    for i in range(1, k + 1):
        nxt = yes if i == k else b.fresh("ntg")
        b.goto_root(cur, nxt, head=i)
        cur = nxt

    # Jump: mark the current tuple, wander every head somewhere, mark the
    # guess, check one body step, then continue from the guess.
    cur = jump_
    for i in range(1, k + 1):
        nxt = b.fresh("ntd")
        b.add(cur, drop(i, px[i - 1]), nxt)
        cur = nxt
    for i in range(1, k + 1):
        _emit_wander(b, ctx, cur, head=i, allow_up=True)
        stopped = b.fresh("ntw")
        _wander_stop(b, ctx, cur, stopped, head=i)
        dropped = b.fresh("ntd2")
        b.add(stopped, drop(i, py[i - 1]), dropped)
        cur = dropped
    for i in range(1, k + 1):
        nxt = b.fresh("ntg2")
        b.goto_root(cur, nxt, head=i)
        cur = nxt
    checked = b.fresh("ntc")
    emit_body(b, inner, f.body, cur, checked, b.dead())
    cur = checked
    for i in range(1, k + 1):
        nxt = b.fresh("ntm")
        b.head_to_pebble(cur, py[i - 1], nxt, head=i)
        cur = nxt
    for x in py[::-1] + px[::-1]:
        nxt = b.fresh("ntr")
        b.add(cur, retrieve(x), nxt)
        cur = nxt
    b.epsilon(cur, loop, 1)


# ---------------------------------------------------------------------------
# Main dispatch

def _emit_det(b: _Builder, ctx: _Ctx, f: Formula, entry: str, yes: str, no: str):
    if isinstance(f, Top):
        b.epsilon(entry, yes)
    elif isinstance(f, Bottom):
        b.epsilon(entry, no)
    elif isinstance(f, Lab):
        _emit_lab(b, ctx, f, entry, yes, no)
    elif isinstance(f, Eq):
        _emit_eq(b, ctx, f, entry, yes, no)
    elif isinstance(f, Edg):
        _emit_edg(b, ctx, f, entry, yes, no)
    elif isinstance(f, Leq):
        _emit_leq(b, ctx, f, entry, yes, no)
    elif isinstance(f, EdgeLab):
        raise CompileError("graph atoms cannot be compiled for trees")
    elif isinstance(f, Not):
        _emit_det(b, ctx, f.body, entry, no, yes)
    elif isinstance(f, And):
        cur = entry
        for i, a in enumerate(f.args):
            nxt = yes if i == len(f.args) - 1 else b.fresh("and")
            _emit_det(b, ctx, a, cur, nxt, no)
            cur = nxt
    elif isinstance(f, Or):
        cur = entry
        for i, a in enumerate(f.args):
            nxt = no if i == len(f.args) - 1 else b.fresh("or")
            _emit_det(b, ctx, a, cur, yes, nxt)
            cur = nxt
    elif isinstance(f, (Exists, Forall)):
        _emit_quantifier(b, ctx, f, entry, yes, no, _emit_det, nondet=False)
    elif isinstance(f, TC):
        if not f.deterministic:
            raise CompileError("nondeterministic closure in deterministic "
                               "compilation; use compile_nondet")
        if len(f.xs) > ctx.heads:
            raise CompileError(
                f"closure arity {len(f.xs)} exceeds head count {ctx.heads}")
        _TcDet(b, ctx, f, _emit_det).emit(entry, yes, no)
    else:
        raise AssertionError(f)


def _emit_nondet(b: _Builder, ctx: _Ctx, f: Formula, entry: str, yes: str, no: str):
    if isinstance(f, Not):
        if isinstance(f.body, (Lab, Eq, Edg, Leq, Top, Bottom)):
            _emit_det(b, ctx, f.body, entry, no, yes)
            return
        raise CompileError("non-atomic negation survived normal form")
    if isinstance(f, (Top, Bottom, Lab, Eq, Edg, Leq)):
        _emit_det(b, ctx, f, entry, yes, no)
    elif isinstance(f, And):
        cur = entry
        for i, a in enumerate(f.args):
            nxt = yes if i == len(f.args) - 1 else b.fresh("and")
            _emit_nondet(b, ctx, a, cur, nxt, no)
            cur = nxt
    elif isinstance(f, Or):
        branches = [b.fresh("orb") for _ in f.args]
        probe = lab(1, ctx.alphabet.symbols[0][0])
        for br in branches:
            b.add(entry, probe, br)
            b.add(entry, probe.negate(), br)
        for a, br in zip(f.args, branches):
            _emit_nondet(b, ctx, a, br, yes, b.dead())
    elif isinstance(f, Forall):
        _emit_quantifier(b, ctx, f, entry, yes, no, _emit_nondet, nondet=True)
    elif isinstance(f, Exists):
        _emit_quantifier(b, ctx, f, entry, yes, no, _emit_nondet, nondet=True)
    elif isinstance(f, TC):
        if len(f.xs) > ctx.heads:
            raise CompileError(
                f"closure arity {len(f.xs)} exceeds head count {ctx.heads}")
        _emit_tc_nondet(b, ctx, f, entry, yes, no, _emit_nondet)
    else:
        raise AssertionError(f)


def _collect_pebbles(b: _Builder, free: Sequence[str]) -> list[str]:
    used = []
    for _, a, _ in b.instructions:
        if a.pebble is not None and a.pebble not in used:
            used.append(a.pebble)
    pool = sorted((x for x in used if x.startswith("P") and x[1:].isdigit()),
                  key=lambda x: int(x[1:]))
    rest = [x for x in free if x in used]
    return rest + pool


def compile_det(phi: Formula, k: int, alphabet: RankedAlphabet) -> Automaton:
    """Compile a formula with deterministic closures into a deterministic,
    always-halting k-head automaton with nested pebbles.

    Free variables correspond to pre-placed pebbles of the same name; the
    automaton tests them but never retrieves them, halts with all heads at
    the root and the entry pebble layout restored, and accepts iff the
    formula holds.
    """
    if k < 1:
        raise CompileError("need at least one head")
    b = _Builder(alphabet, k)
    free = sorted(logic.free_vars(phi))
    ctx = _Ctx(alphabet, k, {v: v for v in free}, depth=0)
    entry = b.fresh("in")
    acc = b.fresh("acc")
    rej = b.fresh("rej")
    _emit_det(b, ctx, phi, entry, acc, rej)
    return b.build(entry, [acc], _collect_pebbles(b, free))


def compile_nondet(phi: Formula, k: int, alphabet: RankedAlphabet) -> Automaton:
    """Compile a positive-closure formula into a nondeterministic k-head
    automaton with nested pebbles accepting exactly the satisfying trees."""
    if k < 1:
        raise CompileError("need at least one head")
    if not logic.check_positive(phi):
        raise CompileError("formula has a closure under an odd number of "
                           "negations")
    phi = logic.nnf(phi)
    b = _Builder(alphabet, k)
    free = sorted(logic.free_vars(phi))
    ctx = _Ctx(alphabet, k, {v: v for v in free}, depth=0)
    entry = b.fresh("in")
    acc = b.fresh("acc")
    rej = b.fresh("rej")
    _emit_nondet(b, ctx, phi, entry, acc, rej)
    return b.build(entry, [acc], _collect_pebbles(b, free))
