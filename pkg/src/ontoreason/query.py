"""Multi-hop logical queries: AST, s-expression syntax, symbolic answers, sampling.

Concrete syntax::

    (e NAME)            anchor entity
    (p REL Q)           relation projection
    (and Q Q ...)       intersection, at least two operands
    (or Q Q ...)        union, at least two operands
    (not Q)             complement over the entity universe

Names that contain whitespace, parentheses or quotes are written as
double-quoted JSON strings.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from ontoreason.errors import ParseError, SamplerExhaustedError
from ontoreason.kb import KnowledgeBase, Vocab


@dataclass(frozen=True)
class Anchor:
    entity: int


@dataclass(frozen=True)
class Proj:
    rel: int
    child: Node


@dataclass(frozen=True)
class And:
    children: tuple[Node, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("And needs at least two operands")


@dataclass(frozen=True)
class Or:
    children: tuple[Node, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("Or needs at least two operands")


@dataclass(frozen=True)
class Not:
    child: Node


Node = Union[Anchor, Proj, And, Or, Not]

QUERY_TYPES = ("1p", "2p", "3p", "2i", "3i", "pi", "ip", "2u", "up")

# Shape signatures of the nine query types, plus the shapes obtained by
# appending one projection (used by the one-more-hop comparison).
_SHAPE_NAMES = {
    "p(e)": "1p",
    "p(p(e))": "2p",
    "p(p(p(e)))": "3p",
    "i(p(e),p(e))": "2i",
    "i(p(e),p(e),p(e))": "3i",
    "i(p(e),p(p(e)))": "pi",
    "p(i(p(e),p(e)))": "ip",
    "u(p(e),p(e))": "2u",
    "p(u(p(e),p(e)))": "up",
    "p(p(p(p(e))))": "4p",
    "p(p(i(p(e),p(e))))": "ipp",
    "p(i(p(e),p(e),p(e)))": "3ip",
    "p(i(p(e),p(p(e))))": "pip",
    "p(p(u(p(e),p(e))))": "upp",
}


def signature(node: Node, ordered: bool = False) -> str:
    """Structural signature; operand order is ignored unless ``ordered``."""
    if isinstance(node, Anchor):
        return "e"
    if isinstance(node, Proj):
        return f"p({signature(node.child, ordered)})"
    if isinstance(node, Not):
        return f"n({signature(node.child, ordered)})"
    parts = [signature(c, ordered) for c in node.children]
    if not ordered:
        parts.sort()
    tag = "i" if isinstance(node, And) else "u"
    return f"{tag}({','.join(parts)})"


def classify(node: Node) -> str:
    sig = signature(node)
    return _SHAPE_NAMES.get(sig, sig)


def iter_nodes(node: Node) -> Iterable[Node]:
    yield node
    if isinstance(node, (Proj, Not)):
        yield from iter_nodes(node.child)
    elif isinstance(node, (And, Or)):
        for c in node.children:
            yield from iter_nodes(c)


def has_negation(node: Node) -> bool:
    return any(isinstance(n, Not) for n in iter_nodes(node))


# ---------------------------------------------------------------------------
# parsing and rendering

_TOKEN = re.compile(r'\s*(?:(\()|(\))|("(?:[^"\\]|\\.)*")|([^\s()"]+))')


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while True:
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip():
                raise ParseError(f"unexpected character {text[pos:].lstrip()[0]!r}",
                                 position=len(text) - len(text[pos:].lstrip()))
            return tokens
        start = m.start(m.lastindex)
        if m.group(1):
            tokens.append(("(", "(", start))
        elif m.group(2):
            tokens.append((")", ")", start))
        elif m.group(3):
            try:
                tokens.append(("atom", json.loads(m.group(3)), start))
            except json.JSONDecodeError:
                raise ParseError("malformed quoted name", position=start) from None
        else:
            tokens.append(("atom", m.group(4), start))
        pos = m.end()


class _Parser:
    def __init__(self, text: str, vocab: Vocab):
        self.tokens = _tokenize(text)
        self.i = 0
        self.vocab = vocab
        self.end = len(text)

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("eof", None, self.end)

    def take(self, kind: str):
        tok = self.peek()
        if tok[0] != kind:
            what = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise ParseError(f"expected {kind!r}, found {what}", position=tok[2])
        self.i += 1
        return tok

    def node(self) -> Node:
        _, _, open_pos = self.take("(")
        _, head, head_pos = self.take("atom")
        if head == "e":
            _, name, pos = self.take("atom")
            if name not in self.vocab.entity_ids:
                raise ParseError(f"unknown entity {name!r}", position=pos)
            out: Node = Anchor(self.vocab.entity_ids[name])
        elif head == "p":
            _, name, pos = self.take("atom")
            if name not in self.vocab.relation_ids:
                raise ParseError(f"unknown relation {name!r}", position=pos)
            out = Proj(self.vocab.relation_ids[name], self.node())
        elif head == "not":
            out = Not(self.node())
        elif head in ("and", "or"):
            children = []
            while self.peek()[0] == "(":
                children.append(self.node())
            if len(children) < 2:
                raise ParseError(f"'{head}' needs at least two operands, got {len(children)}",
                                 position=open_pos)
            out = And(tuple(children)) if head == "and" else Or(tuple(children))
        else:
            raise ParseError(f"unknown operator {head!r}", position=head_pos)
        self.take(")")
        return out


def parse_query(text: str, vocab: Vocab) -> Node:
    """Parse an s-expression query, resolving names through ``vocab``."""
    parser = _Parser(text, vocab)
    node = parser.node()
    tok = parser.peek()
    if tok[0] != "eof":
        raise ParseError(f"trailing input {tok[1]!r}", position=tok[2])
    if isinstance(node, Anchor):
        raise ParseError("a bare anchor is not a query", position=0)
    return node


_PLAIN = re.compile(r'^[^\s()"]+$')


def _name(s: str) -> str:
    return s if _PLAIN.match(s) else json.dumps(s, ensure_ascii=False)


def render_query(node: Node, vocab: Vocab) -> str:
    if isinstance(node, Anchor):
        return f"(e {_name(vocab.entities[node.entity])})"
    if isinstance(node, Proj):
        return f"(p {_name(vocab.relations[node.rel])} {render_query(node.child, vocab)})"
    if isinstance(node, Not):
        return f"(not {render_query(node.child, vocab)})"
    op = "and" if isinstance(node, And) else "or"
    return f"({op} {' '.join(render_query(c, vocab) for c in node.children)})"


# ---------------------------------------------------------------------------
# symbolic answers


def answer_entities(kb: KnowledgeBase, node: Node) -> frozenset[int]:
    """Crisp answer set of ``node`` over the role assertions of ``kb``."""
    if isinstance(node, Anchor):
        return frozenset((node.entity,))
    if isinstance(node, Proj):
        index = kb.tail_index
        out: set[int] = set()
        for h in answer_entities(kb, node.child):
            out |= index.get((h, node.rel), frozenset())
        return frozenset(out)
    if isinstance(node, Not):
        return frozenset(range(kb.n_entities)) - answer_entities(kb, node.child)
    sets = [answer_entities(kb, c) for c in node.children]
    if isinstance(node, And):
        return frozenset.intersection(*sets)
    return frozenset.union(*sets)


def answer_concepts(kb: KnowledgeBase, entity_answers: Iterable[int]) -> frozenset[int]:
    """Concepts with at least one instance among ``entity_answers``.

    Instantiation is read through the subsumption closure, so an answer
    that is an instance of ``c`` also supports every super-concept of ``c``.
    """
    index = kb.concepts_of
    out: set[int] = set()
    for e in entity_answers:
        out |= index.get(e, frozenset())
    return frozenset(out)


@dataclass(frozen=True)
class QueryInstance:
    ast: Node
    qtype: str
    entity_answers: frozenset[int]
    concept_answers: frozenset[int]

    @cached_property
    def shape(self) -> str:
        """Ordered shape signature; queries sharing it can be batched together."""
        return signature(self.ast, ordered=True)

    @cached_property
    def sorted_entities(self) -> tuple[int, ...]:
        return tuple(sorted(self.entity_answers))

    @cached_property
    def sorted_concepts(self) -> tuple[int, ...]:
        return tuple(sorted(self.concept_answers))

    def to_json(self, vocab: Vocab) -> dict:
        return {
            "qtype": self.qtype,
            "query": render_query(self.ast, vocab),
            "entity_answers": sorted(vocab.entities[e] for e in self.entity_answers),
            "concept_answers": sorted(vocab.concepts[c] for c in self.concept_answers),
        }

    @classmethod
    def from_json(cls, data: dict, vocab: Vocab) -> QueryInstance:
        ast = parse_query(data["query"], vocab)
        return cls(
            ast,
            data.get("qtype") or classify(ast),
            frozenset(vocab.entity_ids[e] for e in data["entity_answers"]),
            frozenset(vocab.concept_ids[c] for c in data.get("concept_answers", ())),
        )


def make_instance(kb: KnowledgeBase, ast: Node) -> QueryInstance:
    ents = answer_entities(kb, ast)
    return QueryInstance(ast, classify(ast), ents, answer_concepts(kb, ents))


def save_instances(instances: Iterable[QueryInstance], path: str | Path, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(vocab), ensure_ascii=False, sort_keys=True) + "\n")


def load_instances(path: str | Path, vocab: Vocab) -> list[QueryInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(QueryInstance.from_json(json.loads(line), vocab))
            except (KeyError, json.JSONDecodeError) as exc:
                raise ParseError(f"{path}: bad query instance ({exc})", line=lineno) from None
    return out


# ---------------------------------------------------------------------------
# sampling

# Templates: "e" anchor, ("p", child), ("i"|"u", child, child[, child]).
_TEMPLATES = {
    "1p": ("p", "e"),
    "2p": ("p", ("p", "e")),
    "3p": ("p", ("p", ("p", "e"))),
    "2i": ("i", ("p", "e"), ("p", "e")),
    "3i": ("i", ("p", "e"), ("p", "e"), ("p", "e")),
    "pi": ("i", ("p", ("p", "e")), ("p", "e")),
    "ip": ("p", ("i", ("p", "e"), ("p", "e"))),
    "2u": ("u", ("p", "e"), ("p", "e")),
    "up": ("p", ("u", ("p", "e"), ("p", "e"))),
}


class _DeadEnd(Exception):
    pass


def _ground(template, target: int, kb: KnowledgeBase, rng: np.random.Generator,
            forced: list) -> Node:
    """Instantiate ``template`` backwards so that ``target`` is an answer.

    ``forced`` optionally holds one ``(head, rel)`` edge into ``target`` that
    the first projection on the leftmost path must use.
    """
    if template == "e":
        return Anchor(target)
    kind = template[0]
    if kind == "p":
        if forced:
            h, r = forced.pop()
        else:
            edges = kb.incoming.get(target)
            if not edges:
                raise _DeadEnd
            h, r = edges[int(rng.integers(len(edges)))]
        return Proj(r, _ground(template[1], h, kb, rng, forced))
    children = [_ground(template[1], target, kb, rng, forced)]
    children += [_ground(t, target, kb, rng, []) for t in template[2:]]
    if len(set(children)) < len(children):
        raise _DeadEnd
    return And(tuple(children)) if kind == "i" else Or(tuple(children))


def enumerate_1p(kb: KnowledgeBase) -> list[QueryInstance]:
    """One 1p instance per role assertion, answered against ``kb``."""
    cache: dict[tuple[int, int], QueryInstance] = {}
    out = []
    for h, r, _ in kb.triples.tolist():
        if (h, r) not in cache:
            cache[h, r] = make_instance(kb, Proj(r, Anchor(h)))
        out.append(cache[h, r])
    return out


def sample_queries(kb: KnowledgeBase, qtype: str, n: int, seed: int = 0, max_answers: int = 100,
                   train_kb: KnowledgeBase | None = None, enumerate_all: bool = False,
                   exclude: Iterable[Node] = ()) -> list[QueryInstance]:
    """Draw ``n`` distinct queries of ``qtype`` by backward random walks.

    Each walk starts from a random answer entity and picks incoming edges
    until every anchor is grounded. A query is kept when its answer count
    is within ``[1, max_answers]``. When ``train_kb`` is given the queries
    are evaluation queries: the first edge of the walk is a held-out triple
    and at least one answer must be unreachable from ``train_kb`` alone.
    Queries in ``exclude`` are skipped.
    """
    if qtype not in _TEMPLATES:
        raise ValueError(f"unknown query type {qtype!r}; expected one of {QUERY_TYPES}")
    if enumerate_all:
        if qtype != "1p":
            raise ValueError("enumeration is only defined for 1p queries")
        return enumerate_1p(kb)
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    template = _TEMPLATES[qtype]
    seen = set(exclude)
    out: list[QueryInstance] = []
    if train_kb is not None:
        held_out = sorted(kb.abox_ee - train_kb.abox_ee)
        if not held_out:
            raise SamplerExhaustedError(qtype, n, 0)
    else:
        tails = sorted(kb.incoming)
        if not tails:
            raise SamplerExhaustedError(qtype, n, 0)
    for _ in range(10 * n):
        if len(out) == n:
            break
        if train_kb is not None:
            h, r, t = held_out[int(rng.integers(len(held_out)))]
            target, forced = t, [(h, r)]
        else:
            target, forced = tails[int(rng.integers(len(tails)))], []
        try:
            ast = _ground(template, target, kb, rng, forced)
        except _DeadEnd:
            continue
        if ast in seen:
            continue
        answers = answer_entities(kb, ast)
        if not 1 <= len(answers) <= max_answers:
            continue
        if train_kb is not None and not (answers - answer_entities(train_kb, ast)):
            continue
        seen.add(ast)
        out.append(QueryInstance(ast, qtype, answers, answer_concepts(kb, answers)))
    if len(out) < n:
        raise SamplerExhaustedError(qtype, n, len(out))
    return out
