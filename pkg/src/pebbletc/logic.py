"""First-order logic with k-ary (deterministic) transitive closure.

Formulas are immutable ASTs evaluated over trees or graphs by brute force.
The evaluator memoizes every subformula on the valuation of its free
variables, and caches one reachability table per transitive-closure node,
which keeps exhaustive small-instance checking fast even for the large
machine-generated formulas produced by the automaton-to-logic compiler.
"""

from __future__ import annotations

import itertools
import re
import sys
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .errors import ParseError, PebbletcError

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Lab:
    symbol: str
    var: str


@dataclass(frozen=True)
class Edg:
    """Tree edge: `var` has j-th child `dst`."""
    child: int
    src: str
    dst: str


@dataclass(frozen=True)
class EdgeLab:
    """Graph edge with label `label` from `src` to `dst`."""
    label: str
    src: str
    dst: str


@dataclass(frozen=True)
class Leq:
    """`left` is an ancestor of `right` (reflexively); trees only."""
    left: str
    right: str


@dataclass(frozen=True)
class Eq:
    left: str
    right: str


@dataclass(frozen=True)
class Top:
    pass


@dataclass(frozen=True)
class Bottom:
    pass


@dataclass(frozen=True)
class Not:
    body: "Formula"


@dataclass(frozen=True)
class And:
    args: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    args: tuple["Formula", ...]


@dataclass(frozen=True)
class Exists:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class Forall:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class TC:
    """k-ary transitive closure `(tc(xs,ys) body)(us, vs)`.

    xs, ys are the 2k distinct bound tuple variables, us/vs the applied
    argument tuples (variables, free in the enclosing context).  The
    closure is reflexive: zero jumps relate every tuple to itself.  With
    the deterministic flag set, the body must be functional in xs -> ys.
    """

    xs: tuple[str, ...]
    ys: tuple[str, ...]
    body: "Formula"
    us: tuple[str, ...]
    vs: tuple[str, ...]
    deterministic: bool = False

    def __post_init__(self):
        k = len(self.xs)
        if not (k == len(self.ys) == len(self.us) == len(self.vs)) or k == 0:
            raise ValueError("closure tuple arity mismatch")
        if len(set(self.xs) | set(self.ys)) != 2 * k:
            raise ValueError("bound tuple variables must be distinct")


Formula = Union[Lab, Edg, EdgeLab, Leq, Eq, Top, Bottom, Not, And, Or,
                Exists, Forall, TC]

TRUE = Top()
FALSE = Bottom()


def and_(*args: Formula) -> Formula:
    flat: list[Formula] = []
    for a in args:
        flat.extend(a.args if isinstance(a, And) else (a,))
    if not flat:
        return TRUE
    return flat[0] if len(flat) == 1 else And(tuple(flat))


def or_(*args: Formula) -> Formula:
    flat: list[Formula] = []
    for a in args:
        flat.extend(a.args if isinstance(a, Or) else (a,))
    if not flat:
        return FALSE
    return flat[0] if len(flat) == 1 else Or(tuple(flat))


def implies(a: Formula, b: Formula) -> Formula:
    return or_(Not(a), b)


def _children(phi: Formula) -> tuple[Formula, ...]:
    if isinstance(phi, Not):
        return (phi.body,)
    if isinstance(phi, (And, Or)):
        return phi.args
    if isinstance(phi, (Exists, Forall)):
        return (phi.body,)
    if isinstance(phi, TC):
        return (phi.body,)
    return ()


def _node_vars(phi: Formula) -> tuple[str, ...]:
    """Variables occurring directly in an atom."""
    if isinstance(phi, Lab):
        return (phi.var,)
    if isinstance(phi, (Edg, EdgeLab)):
        return (phi.src, phi.dst)
    if isinstance(phi, (Leq, Eq)):
        return (phi.left, phi.right)
    return ()


def free_vars(phi: Formula, _cache: Optional[dict] = None) -> frozenset[str]:
    cache = _cache if _cache is not None else {}

    def go(f: Formula) -> frozenset[str]:
        key = id(f)
        got = cache.get(key)
        if got is not None:
            return got
        if isinstance(f, (Exists, Forall)):
            r = go(f.body) - {f.var}
        elif isinstance(f, TC):
            r = (go(f.body) - set(f.xs) - set(f.ys)) | set(f.us) | set(f.vs)
        else:
            r = frozenset(_node_vars(f))
            for c in _children(f):
                r |= go(c)
        cache[key] = r
        return r

    _bump_recursion(f_depth(phi))
    return go(phi)


def f_depth(phi: Formula) -> int:
    """AST depth, computed iteratively (safe for very deep formulas)."""
    depth: dict[int, int] = {}
    stack = [(phi, False)]
    while stack:
        node, done = stack.pop()
        if done:
            kids = _children(node)
            depth[id(node)] = 1 + max((depth[id(c)] for c in kids), default=0)
        elif id(node) not in depth:
            stack.append((node, True))
            for c in _children(node):
                stack.append((c, False))
    return depth[id(phi)]


def f_size(phi: Formula) -> int:
    """Number of distinct AST nodes (shared subterms counted once)."""
    seen: set[int] = set()
    stack = [phi]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.extend(_children(node))
    return len(seen)


def tc_depth(phi: Formula) -> int:
    """Maximum nesting depth of transitive-closure operators."""
    memo: dict[int, int] = {}
    stack = [(phi, False)]
    while stack:
        node, done = stack.pop()
        if done:
            kids = _children(node)
            d = max((memo[id(c)] for c in kids), default=0)
            memo[id(node)] = d + 1 if isinstance(node, TC) else d
        elif id(node) not in memo:
            stack.append((node, True))
            for c in _children(node):
                stack.append((c, False))
    return memo[id(phi)]


def _bump_recursion(depth: int):
    need = depth * 4 + 1000
    if sys.getrecursionlimit() < need:
        sys.setrecursionlimit(need)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"\s*(->|[()\[\]:,.=!&|]|[A-Za-z][A-Za-z0-9_]*|\S)")
_VAR_RE = re.compile(r"[a-z][a-z0-9]*")


class _Parser:
    def __init__(self, text: str, kind: str, local: bool):
        self.text = text
        self.kind = kind
        self.local = local
        self.tokens: list[tuple[str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m:
                break
            tok = m.group(1)
            self.tokens.append((tok, m.start(1)))
            pos = m.end()
        self.i = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def pos(self) -> int:
        return self.tokens[self.i][1] if self.i < len(self.tokens) else len(self.text)

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of formula", len(self.text))
        self.i += 1
        return tok

    def expect(self, tok: str):
        if self.peek() != tok:
            raise ParseError(f"expected {tok!r}, got {self.peek()!r}", self.pos())
        self.i += 1

    def var(self) -> str:
        p = self.pos()
        tok = self.next()
        if not _VAR_RE.fullmatch(tok):
            raise ParseError(f"expected a variable, got {tok!r}", p)
        return tok

    # Grammar, lowest precedence first: ->, |, &, !, atoms.
    def formula(self) -> Formula:
        left = self.or_expr()
        if self.peek() == "->":
            self.next()
            return implies(left, self.formula())
        return left

    def or_expr(self) -> Formula:
        args = [self.and_expr()]
        while self.peek() == "|":
            self.next()
            args.append(self.and_expr())
        return or_(*args)

    def and_expr(self) -> Formula:
        args = [self.unary()]
        while self.peek() == "&":
            self.next()
            args.append(self.unary())
        return and_(*args)

    def unary(self) -> Formula:
        tok = self.peek()
        if tok == "!":
            self.next()
            return Not(self.unary())
        if tok is not None and len(tok) >= 2 and tok[0] in "EA" and _VAR_RE.fullmatch(tok[1:]):
            self.next()
            self.expect(".")
            body = self.formula()
            return Exists(tok[1:], body) if tok[0] == "E" else Forall(tok[1:], body)
        return self.primary()

    def primary(self) -> Formula:
        p = self.pos()
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of formula", p)
        if tok == "(":
            self.next()
            f = self.formula()
            self.expect(")")
            return f
        if tok == "[":
            return self.tc_expr()
        if tok == "true":
            self.next()
            return TRUE
        if tok == "false":
            self.next()
            return FALSE
        if tok == "leq":
            if self.kind == "graph":
                raise ParseError("leq is not available on graphs", p)
            if self.local:
                raise ParseError("leq is not available in local mode", p)
            self.next()
            self.expect("(")
            x = self.var()
            self.expect(",")
            y = self.var()
            self.expect(")")
            return Leq(x, y)
        if tok.startswith("lab_"):
            self.next()
            self.expect("(")
            x = self.var()
            self.expect(")")
            return Lab(tok[4:], x)
        if tok.startswith("edge_"):
            if self.kind != "graph":
                raise ParseError("edge_ atoms are for graphs; use edgI on trees", p)
            self.next()
            return self._binary_atom(lambda x, y: EdgeLab(tok[5:], x, y))
        m = re.fullmatch(r"edg(\d+)", tok)
        if m:
            if self.kind == "graph":
                raise ParseError("edgI atoms are for trees; use edge_s on graphs", p)
            self.next()
            return self._binary_atom(lambda x, y: Edg(int(m.group(1)), x, y))
        # Equality: var = var
        x = self.var()
        self.expect("=")
        y = self.var()
        return Eq(x, y)

    def _binary_atom(self, make) -> Formula:
        self.expect("(")
        x = self.var()
        self.expect(",")
        y = self.var()
        self.expect(")")
        return make(x, y)

    def tc_expr(self) -> Formula:
        self.expect("[")
        p = self.pos()
        op = self.next()
        if op not in ("tc", "dtc"):
            raise ParseError(f"expected tc or dtc, got {op!r}", p)
        xs = self.var_tuple()
        ys = self.var_tuple()
        self.expect(":")
        body = self.formula()
        self.expect("]")
        self.expect("(")
        us = []
        while self.peek() != ",":
            us.append(self.var())
        self.expect(",")
        vs = []
        while self.peek() != ")":
            vs.append(self.var())
        self.expect(")")
        if not (len(xs) == len(ys) == len(us) == len(vs)):
            raise ParseError("closure tuple arity mismatch", p)
        try:
            return TC(tuple(xs), tuple(ys), body, tuple(us), tuple(vs),
                      deterministic=(op == "dtc"))
        except ValueError as e:
            raise ParseError(str(e), p) from None

    def var_tuple(self) -> list[str]:
        self.expect("(")
        out = [self.var()]
        while self.peek() != ")":
            out.append(self.var())
        self.expect(")")
        return out


def parse_formula(text: str, kind: str = "tree", local: bool = False) -> Formula:
    """Parse the concrete formula syntax; `kind` selects tree or graph atoms,
    `local=True` disables the `leq` ancestor atom."""
    if kind not in ("tree", "graph"):
        raise ValueError(f"unknown structure kind {kind!r}")
    parser = _Parser(text, kind, local)
    f = parser.formula()
    if parser.peek() is not None:
        raise ParseError(f"trailing input {parser.peek()!r}", parser.pos())
    return f


# ---------------------------------------------------------------------------
# Printing

def format_formula(phi: Formula) -> str:
    _bump_recursion(f_depth(phi))

    def prec(f: Formula) -> int:
        if isinstance(f, Or):
            return 1
        if isinstance(f, And):
            return 2
        return 3

    def wrap(f: Formula, minimum: int) -> str:
        s = go(f)
        return f"({s})" if prec(f) < minimum else s

    def go(f: Formula) -> str:
        if isinstance(f, Top):
            return "true"
        if isinstance(f, Bottom):
            return "false"
        if isinstance(f, Lab):
            return f"lab_{f.symbol}({f.var})"
        if isinstance(f, Edg):
            return f"edg{f.child}({f.src},{f.dst})"
        if isinstance(f, EdgeLab):
            return f"edge_{f.label}({f.src},{f.dst})"
        if isinstance(f, Leq):
            return f"leq({f.left},{f.right})"
        if isinstance(f, Eq):
            return f"{f.left}={f.right}"
        if isinstance(f, Not):
            inner = go(f.body)
            if isinstance(f.body, (And, Or, Exists, Forall)):
                inner = f"({inner})"
            return f"!{inner}"
        if isinstance(f, And):
            return " & ".join(wrap(a, 3) for a in f.args)
        if isinstance(f, Or):
            return " | ".join(wrap(a, 2) for a in f.args)
        if isinstance(f, (Exists, Forall)):
            q = "E" if isinstance(f, Exists) else "A"
            return f"{q}{f.var}. ({go(f.body)})"
        if isinstance(f, TC):
            op = "dtc" if f.deterministic else "tc"
            return (f"[{op} ({' '.join(f.xs)})({' '.join(f.ys)}): {go(f.body)}]"
                    f"({' '.join(f.us)}, {' '.join(f.vs)})")
        raise AssertionError(f)

    return go(phi)


# ---------------------------------------------------------------------------
# Evaluation

class FunctionalityError(PebbletcError):
    """A deterministic closure was applied to a non-functional body."""

    def __init__(self, source: tuple, image1: tuple, image2: tuple):
        self.source, self.image1, self.image2 = source, image1, image2
        super().__init__(
            f"body is not functional: tuple {source} steps to both "
            f"{image1} and {image2}")


class Evaluator:
    """Brute-force model checker for one structure.

    Results are memoized per (subformula, valuation of its free variables);
    transitive closures additionally cache a full reachability table per
    valuation of the body's outer free variables.  `functionality` picks
    how deterministic closures are validated: "global" checks every source
    tuple, "path" only the tuples actually reached, "off" skips the check.
    """

    def __init__(self, structure, functionality: str = "global"):
        if functionality not in ("global", "path", "off"):
            raise ValueError(f"unknown functionality mode {functionality!r}")
        self.structure = structure
        self.functionality = functionality
        self.n = structure.size
        self._free: dict[int, frozenset[str]] = {}
        self._memo: dict[tuple, bool] = {}
        self._tc_tables: dict[tuple, dict] = {}
        self._is_tree = structure.kind == "tree"
        # Roots are kept alive so the id-keyed caches stay valid.
        self._roots: list[Formula] = []

    def evaluate(self, phi: Formula, valuation: Optional[dict[str, int]] = None) -> bool:
        self._roots.append(phi)
        val = dict(valuation or {})
        fv = free_vars(phi, self._free)
        missing = fv - set(val)
        if missing:
            raise ValueError(f"valuation misses free variables {sorted(missing)}")
        _bump_recursion(f_depth(phi))
        return self._eval(phi, val)

    def _key(self, phi: Formula, val: dict[str, int]) -> tuple:
        fv = self._free.get(id(phi))
        if fv is None:
            fv = free_vars(phi, self._free)
        return (id(phi),) + tuple(sorted((v, val[v]) for v in fv))

    def _eval(self, phi: Formula, val: dict[str, int]) -> bool:
        key = self._key(phi, val)
        got = self._memo.get(key)
        if got is not None:
            return got
        r = self._eval_raw(phi, val)
        self._memo[key] = r
        return r

    def _eval_raw(self, phi: Formula, val: dict[str, int]) -> bool:
        s = self.structure
        if isinstance(phi, Top):
            return True
        if isinstance(phi, Bottom):
            return False
        if isinstance(phi, Lab):
            return s.label(val[phi.var]) == phi.symbol
        if isinstance(phi, Edg):
            if not self._is_tree:
                raise ValueError("tree edge atom evaluated on a graph")
            return s.child(val[phi.src], phi.child) == val[phi.dst]
        if isinstance(phi, EdgeLab):
            if self._is_tree:
                raise ValueError("graph edge atom evaluated on a tree")
            return s.out_neighbor(val[phi.src], phi.label) == val[phi.dst]
        if isinstance(phi, Leq):
            return s.is_ancestor(val[phi.left], val[phi.right])
        if isinstance(phi, Eq):
            return val[phi.left] == val[phi.right]
        if isinstance(phi, Not):
            return not self._eval(phi.body, val)
        if isinstance(phi, And):
            return all(self._eval(a, val) for a in phi.args)
        if isinstance(phi, Or):
            return any(self._eval(a, val) for a in phi.args)
        if isinstance(phi, (Exists, Forall)):
            inner = dict(val)
            want = isinstance(phi, Exists)
            for u in range(self.n):
                inner[phi.var] = u
                if self._eval(phi.body, inner) == want:
                    return want
            return not want
        if isinstance(phi, TC):
            table = self._tc_table(phi, val)
            u = tuple(val[v] for v in phi.us)
            v = tuple(val[v] for v in phi.vs)
            return v in table[u]
        raise AssertionError(phi)

    def _tc_table(self, phi: TC, val: dict[str, int]) -> dict:
        """Reachability table of the body's step relation, cached per outer
        valuation."""
        outer_vars = sorted((free_vars(phi.body, self._free)
                             - set(phi.xs)) - set(phi.ys))
        key = (id(phi),) + tuple((v, val[v]) for v in outer_vars)
        table = self._tc_tables.get(key)
        if table is not None:
            return table
        k = len(phi.xs)
        tuples = list(itertools.product(range(self.n), repeat=k))
        inner = {v: val[v] for v in outer_vars}
        succs: dict[tuple, list[tuple]] = {}
        for src in tuples:
            for x, u in zip(phi.xs, src):
                inner[x] = u
            images = []
            for dst in tuples:
                for y, w in zip(phi.ys, dst):
                    inner[y] = w
                if self._eval(phi.body, inner):
                    images.append(dst)
                    if (phi.deterministic and self.functionality == "global"
                            and len(images) > 1):
                        raise FunctionalityError(src, images[0], images[1])
            succs[src] = images
        # Reflexive-transitive reachability from every source tuple.
        table = {}
        for src in tuples:
            reach = {src}
            frontier = [src]
            while frontier:
                cur = frontier.pop()
                for nxt in succs[cur]:
                    if (phi.deterministic and self.functionality == "path"
                            and len(succs[cur]) > 1):
                        raise FunctionalityError(cur, succs[cur][0], succs[cur][1])
                    if nxt not in reach:
                        reach.add(nxt)
                        frontier.append(nxt)
            table[src] = reach
        self._tc_tables[key] = table
        return table


def evaluate(phi: Formula, structure, valuation: Optional[dict[str, int]] = None,
             functionality: str = "global") -> bool:
    """Evaluate a formula on a tree or graph under a valuation."""
    return Evaluator(structure, functionality).evaluate(phi, valuation)


@dataclass
class FunctionalReport:
    ok: bool
    witness: Optional[tuple] = None  # (source, image1, image2)

    def __bool__(self) -> bool:
        return self.ok


def check_functional(body: Formula, structure, xs: Sequence[str], ys: Sequence[str],
                     outer: Optional[dict[str, int]] = None) -> FunctionalReport:
    """Check that `body` maps every xs-tuple to at most one ys-tuple."""
    ev = Evaluator(structure, functionality="off")
    n = structure.size
    k = len(xs)
    val = dict(outer or {})
    for src in itertools.product(range(n), repeat=k):
        for x, u in zip(xs, src):
            val[x] = u
        first = None
        for dst in itertools.product(range(n), repeat=k):
            for y, w in zip(ys, dst):
                val[y] = w
            if ev._eval(body, val):
                if first is None:
                    first = dst
                else:
                    return FunctionalReport(False, (src, first, dst))
    return FunctionalReport(True)


def check_positive(phi: Formula) -> bool:
    """True iff every closure operator sits under an even number of negations."""
    ok = True

    def go(f: Formula, negs: int):
        nonlocal ok
        if not ok:
            return
        if isinstance(f, TC) and negs % 2 == 1:
            ok = False
            return
        if isinstance(f, Not):
            go(f.body, negs + 1)
        else:
            for c in _children(f):
                go(c, negs)

    _bump_recursion(f_depth(phi))
    go(phi, 0)
    return ok


def nnf(phi: Formula) -> Formula:
    """Push negations down to atoms (closures must occur positively)."""

    def pos(f: Formula) -> Formula:
        if isinstance(f, Not):
            return neg(f.body)
        if isinstance(f, And):
            return and_(*(pos(a) for a in f.args))
        if isinstance(f, Or):
            return or_(*(pos(a) for a in f.args))
        if isinstance(f, Exists):
            return Exists(f.var, pos(f.body))
        if isinstance(f, Forall):
            return Forall(f.var, pos(f.body))
        if isinstance(f, TC):
            return TC(f.xs, f.ys, pos(f.body), f.us, f.vs, f.deterministic)
        return f

    def neg(f: Formula) -> Formula:
        if isinstance(f, Not):
            return pos(f.body)
        if isinstance(f, Top):
            return FALSE
        if isinstance(f, Bottom):
            return TRUE
        if isinstance(f, And):
            return or_(*(neg(a) for a in f.args))
        if isinstance(f, Or):
            return and_(*(neg(a) for a in f.args))
        if isinstance(f, Exists):
            return Forall(f.var, neg(f.body))
        if isinstance(f, Forall):
            return Exists(f.var, neg(f.body))
        if isinstance(f, TC):
            raise ValueError("cannot push negation through a closure; "
                             "formula is not positive")
        return Not(f)

    _bump_recursion(f_depth(phi))
    return pos(phi)


# ---------------------------------------------------------------------------
# Renaming and substitution of free variables

def _fresh_namer(*formulas: Formula):
    used: set[str] = set()

    def collect(f: Formula):
        used.update(_node_vars(f))
        if isinstance(f, (Exists, Forall)):
            used.add(f.var)
        if isinstance(f, TC):
            used.update(f.xs)
            used.update(f.ys)
            used.update(f.us)
            used.update(f.vs)
        for c in _children(f):
            collect(c)

    for f in formulas:
        _bump_recursion(f_depth(f))
        collect(f)
    counter = itertools.count()

    def fresh(base: str = "r") -> str:
        while True:
            name = f"{base}{next(counter)}"
            if name not in used:
                used.add(name)
                return name

    return fresh


def rename_free(phi: Formula, mapping: dict[str, str],
                fresh=None) -> Formula:
    """Capture-avoiding renaming of free variable occurrences.

    Binders shadow as usual; binders whose variable collides with a target
    name are alpha-renamed on the fly.
    """
    if fresh is None:
        fresh = _fresh_namer(phi)

    def go(f: Formula, m: dict[str, str]) -> Formula:
        if not m:
            return f
        if isinstance(f, Lab):
            return Lab(f.symbol, m.get(f.var, f.var))
        if isinstance(f, Edg):
            return Edg(f.child, m.get(f.src, f.src), m.get(f.dst, f.dst))
        if isinstance(f, EdgeLab):
            return EdgeLab(f.label, m.get(f.src, f.src), m.get(f.dst, f.dst))
        if isinstance(f, Leq):
            return Leq(m.get(f.left, f.left), m.get(f.right, f.right))
        if isinstance(f, Eq):
            return Eq(m.get(f.left, f.left), m.get(f.right, f.right))
        if isinstance(f, (Top, Bottom)):
            return f
        if isinstance(f, Not):
            return Not(go(f.body, m))
        if isinstance(f, And):
            return and_(*(go(a, m) for a in f.args))
        if isinstance(f, Or):
            return or_(*(go(a, m) for a in f.args))
        if isinstance(f, (Exists, Forall)):
            cls = type(f)
            m2 = {k: v for k, v in m.items() if k != f.var}
            var = f.var
            body = f.body
            if var in m2.values():
                new = fresh(var)
                body = go(body, {var: new})
                var = new
            return cls(var, go(body, m2))
        if isinstance(f, TC):
            us = tuple(m.get(u, u) for u in f.us)
            vs = tuple(m.get(v, v) for v in f.vs)
            bound = set(f.xs) | set(f.ys)
            m2 = {k: v for k, v in m.items() if k not in bound}
            xs, ys, body = f.xs, f.ys, f.body
            clashes = bound & set(m2.values())
            if clashes:
                ren = {b: fresh(b) for b in clashes}
                body = go(body, ren)
                xs = tuple(ren.get(x, x) for x in xs)
                ys = tuple(ren.get(y, y) for y in ys)
            return TC(xs, ys, go(body, m2), us, vs, f.deterministic)
        raise AssertionError(f)

    _bump_recursion(f_depth(phi))
    return go(phi, dict(mapping))


def functionalized(psi: Formula, xs: Sequence[str], ys: Sequence[str]) -> Formula:
    """Build `psi & forall zs (psi[ys:=zs] -> ys = zs)`.

    This is the decidable syntactic form of a functional step predicate;
    its closure equals the deterministic closure of `psi` whenever `psi`
    is functional, and drops the offending steps otherwise.
    """
    fresh = _fresh_namer(psi)
    zs = [fresh("z") for _ in ys]
    renamed = rename_free(psi, dict(zip(ys, zs)), fresh)
    eqs = and_(*(Eq(y, z) for y, z in zip(ys, zs)))
    guard = renamed
    body = implies(guard, eqs)
    for z in reversed(zs):
        body = Forall(z, body)
    return and_(psi, body)


# ---------------------------------------------------------------------------
# Simplification (extensionally the identity; tested)

def simplify(phi: Formula) -> Formula:
    _bump_recursion(f_depth(phi))
    # Memo values keep the key object alive so ids cannot be recycled.
    memo: dict[int, tuple[Formula, Formula]] = {}

    def go(f: Formula) -> Formula:
        got = memo.get(id(f))
        if got is not None:
            return got[1]
        r = rules(f)
        memo[id(f)] = (f, r)
        return r

    def rules(f: Formula) -> Formula:
        if isinstance(f, Not):
            b = go(f.body)
            if isinstance(b, Top):
                return FALSE
            if isinstance(b, Bottom):
                return TRUE
            if isinstance(b, Not):
                return b.body
            return Not(b)
        if isinstance(f, And):
            args = []
            for a in f.args:
                a = go(a)
                if isinstance(a, Bottom):
                    return FALSE
                if isinstance(a, Top):
                    continue
                args.extend(a.args if isinstance(a, And) else (a,))
            return and_(*args)
        if isinstance(f, Or):
            args = []
            for a in f.args:
                a = go(a)
                if isinstance(a, Top):
                    return TRUE
                if isinstance(a, Bottom):
                    continue
                args.extend(a.args if isinstance(a, Or) else (a,))
            return or_(*args)
        if isinstance(f, (Exists, Forall)):
            body = go(f.body)
            if isinstance(body, (Top, Bottom)):
                return body  # structures are nonempty
            if f.var not in free_vars(body):
                return body
            if isinstance(f, Exists):
                inlined = _inline_equality(f.var, body)
                if inlined is not None:
                    return go(inlined)
            return type(f)(f.var, body)
        if isinstance(f, TC):
            body = go(f.body)
            if isinstance(body, Bottom):
                # Only the zero-jump (reflexive) case survives.
                return go(and_(*(Eq(u, v) for u, v in zip(f.us, f.vs))))
            if isinstance(body, Top):
                return TRUE
            return TC(f.xs, f.ys, body, f.us, f.vs, f.deterministic)
        if isinstance(f, Eq) and f.left == f.right:
            return TRUE
        return f

    return go(phi)


def _inline_equality(var: str, body: Formula) -> Optional[Formula]:
    """Rewrite `exists var (var=t & rest)` to `rest[var:=t]` when t is a
    different variable.  Applied only when the equality is a top-level
    conjunct; keeps machine-generated formulas readable."""
    conjuncts = body.args if isinstance(body, And) else (body,)
    target = None
    index = -1
    for i, c in enumerate(conjuncts):
        if isinstance(c, Eq):
            if c.left == var and c.right != var:
                target, index = c.right, i
                break
            if c.right == var and c.left != var:
                target, index = c.left, i
                break
    if target is None:
        return None
    rest = [c for i, c in enumerate(conjuncts) if i != index]
    if not rest:
        return TRUE
    return rename_free(and_(*rest), {var: target})
