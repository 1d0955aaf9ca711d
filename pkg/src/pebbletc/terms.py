"""Ranked alphabets, trees, node addressing, and string encoding.

Node ids are preorder indices (0 is the root), so the lexicographic order
on k-tuples of nodes used elsewhere is the plain tuple order on integers.
Trees are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

import re
from typing import Iterable, Iterator, Optional, Sequence

from .errors import ParseError

NodeId = int

#: Reserved end-of-string symbol used by `encode_string`.
BOTTOM = "bot"

_NAME_RE = re.compile(r"[A-Za-z0-9_]+")


class RankedAlphabet:
    """A finite set of symbols, each with a fixed nonnegative arity."""

    def __init__(self, symbols: Iterable[tuple[str, int]]):
        syms = tuple(symbols)
        if not syms:
            raise ValueError("alphabet must be nonempty")
        ranks: dict[str, int] = {}
        for name, rank in syms:
            if not _NAME_RE.fullmatch(name):
                raise ValueError(f"bad symbol name {name!r}")
            if name in ranks:
                raise ValueError(f"duplicate symbol {name!r}")
            if rank < 0:
                raise ValueError(f"negative rank for {name!r}")
            ranks[name] = rank
        self.symbols = syms
        self._ranks = ranks
        self.max_rank = max(ranks.values())

    def rank(self, name: str) -> int:
        try:
            return self._ranks[name]
        except KeyError:
            raise KeyError(f"symbol {name!r} not in alphabet") from None

    def __contains__(self, name: str) -> bool:
        return name in self._ranks

    def __iter__(self) -> Iterator[str]:
        return iter(self._ranks)

    def __len__(self) -> int:
        return len(self._ranks)

    def __eq__(self, other) -> bool:
        return isinstance(other, RankedAlphabet) and self._ranks == other._ranks

    def __hash__(self) -> int:
        return hash(frozenset(self._ranks.items()))

    def __repr__(self) -> str:
        inner = ",".join(f"{n}:{r}" for n, r in self.symbols)
        return f"RankedAlphabet({inner})"

    @classmethod
    def from_text(cls, text: str) -> "RankedAlphabet":
        """Parse an alphabet file: one `name:rank` per line, `#` comments."""
        symbols = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ParseError(f"line {lineno}: expected `name:rank`, got {line!r}")
            name, _, rank = line.partition(":")
            name, rank = name.strip(), rank.strip()
            if not rank.isdigit():
                raise ParseError(f"line {lineno}: bad rank {rank!r}")
            symbols.append((name, int(rank)))
        return cls(symbols)

    def to_text(self) -> str:
        return "".join(f"{n}:{r}\n" for n, r in self.symbols)


class Tree:
    """An ordered ranked tree; every node's child count equals its label's rank.

    Nodes are addressed by preorder index. `child_number(u)` is 0 for the
    root and j for the j-th child (1-based) of its parent.
    """

    kind = "tree"
    __slots__ = ("alphabet", "labels", "children", "parent", "child_number",
                 "subtree_size", "_hash")

    def __init__(self, alphabet: RankedAlphabet, nested):
        """Build from a nested `(symbol, [child, ...])` structure."""
        labels: list[str] = []
        children: list[tuple[int, ...]] = []
        parent: list[Optional[int]] = []
        chno: list[int] = []

        def build(node, par: Optional[int], number: int) -> int:
            symbol, kids = node
            if symbol not in alphabet:
                raise ValueError(f"unknown symbol {symbol!r}")
            if len(kids) != alphabet.rank(symbol):
                raise ValueError(
                    f"symbol {symbol!r} has rank {alphabet.rank(symbol)}, "
                    f"got {len(kids)} children")
            uid = len(labels)
            labels.append(symbol)
            children.append(())
            parent.append(par)
            chno.append(number)
            children[uid] = tuple(build(kid, uid, j + 1)
                                  for j, kid in enumerate(kids))
            return uid

        build(nested, None, 0)
        self.alphabet = alphabet
        self.labels = tuple(labels)
        self.children = tuple(children)
        self.parent = tuple(parent)
        self.child_number = tuple(chno)
        sizes = [1] * len(labels)
        for u in range(len(labels) - 1, -1, -1):
            for c in self.children[u]:
                sizes[u] += sizes[c]
        self.subtree_size = tuple(sizes)
        self._hash = hash((self.labels, self.children))

    @property
    def size(self) -> int:
        return len(self.labels)

    def nodes(self) -> range:
        return range(self.size)

    def label(self, u: NodeId) -> str:
        return self.labels[u]

    def child(self, u: NodeId, j: int) -> Optional[NodeId]:
        """The j-th child of u (1-based), or None."""
        kids = self.children[u]
        return kids[j - 1] if 1 <= j <= len(kids) else None

    def is_ancestor(self, u: NodeId, v: NodeId) -> bool:
        """True iff u is an ancestor of v (reflexively)."""
        return u <= v < u + self.subtree_size[u]

    def to_term(self) -> str:
        def fmt(u: int) -> str:
            kids = self.children[u]
            if not kids:
                return self.labels[u]
            return f"{self.labels[u]}({','.join(fmt(c) for c in kids)})"
        return fmt(0)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Tree) and self.labels == other.labels
                and self.children == other.children)

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"Tree({self.to_term()})"


def parse_term(text: str, alphabet: RankedAlphabet) -> Tree:
    """Parse `sym` or `sym(t1,...,tn)` into a Tree, validating arities."""
    pos = 0
    n = len(text)

    def skip_ws():
        nonlocal pos
        while pos < n and text[pos].isspace():
            pos += 1

    def parse_node():
        nonlocal pos
        skip_ws()
        m = _NAME_RE.match(text, pos)
        if not m:
            raise ParseError("expected a symbol name", pos)
        name = m.group(0)
        name_pos = pos
        pos = m.end()
        if name not in alphabet:
            raise ParseError(f"unknown symbol {name!r}", name_pos)
        kids = []
        skip_ws()
        if pos < n and text[pos] == "(":
            pos += 1
            kids.append(parse_node())
            skip_ws()
            while pos < n and text[pos] == ",":
                pos += 1
                kids.append(parse_node())
                skip_ws()
            if pos >= n or text[pos] != ")":
                raise ParseError("expected `,` or `)`", pos)
            pos += 1
        if len(kids) != alphabet.rank(name):
            raise ParseError(
                f"symbol {name!r} has rank {alphabet.rank(name)}, "
                f"got {len(kids)} arguments", name_pos)
        return (name, kids)

    node = parse_node()
    skip_ws()
    if pos != n:
        raise ParseError("trailing input after term", pos)
    return Tree(alphabet, node)


def preorder(tree: Tree) -> tuple[NodeId, ...]:
    """Node ids in preorder: root first, siblings in child-number order.

    Node ids coincide with preorder positions, so this is 0..size-1; kept
    as an explicit operation because other modules rely on the order.
    """
    return tuple(range(tree.size))


def encode_string(word: Sequence[str], base: Iterable[str]) -> Tree:
    """Encode a word as a monadic tree a1(a2(...(bot))).

    Every base symbol gets rank 1 and a fresh nullary end symbol `bot`
    closes the spine; the empty word encodes as the single node `bot`.
    """
    base_symbols = list(dict.fromkeys(base))
    if BOTTOM in base_symbols:
        raise ValueError(f"base alphabet may not contain {BOTTOM!r}")
    alphabet = RankedAlphabet([(s, 1) for s in base_symbols] + [(BOTTOM, 0)])
    nested = (BOTTOM, [])
    for symbol in reversed(list(word)):
        if symbol not in base_symbols:
            raise ValueError(f"symbol {symbol!r} not in base alphabet")
        nested = (symbol, [nested])
    return Tree(alphabet, nested)


def decode_string(tree: Tree) -> str:
    """Inverse of `encode_string` for monadic trees."""
    out = []
    u = 0
    while tree.labels[u] != BOTTOM:
        if len(tree.children[u]) != 1:
            raise ValueError("not a monadic tree")
        out.append(tree.labels[u])
        u = tree.children[u][0]
    return "".join(out)
