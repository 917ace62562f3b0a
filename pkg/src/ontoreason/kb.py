"""Ontological knowledge base: TBox subsumptions plus the two ABox parts.

A knowledge base holds three axiom sets over dense integer ids:

* ``tbox``: ``(sub, super)`` concept pairs, read as ``sub ⊑ super``;
* ``abox_ee``: ``(head, relation, tail)`` role assertions between entities;
* ``abox_ec``: ``(entity, concept)`` instantiation links.

Names are kept in a :class:`Vocab`. Vocabularies built from files are
sorted by name so that saving and reloading a knowledge base is stable.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from ontoreason.errors import DataError, EmptyKBError, NamespaceCollisionError, ParseError, SplitError

log = logging.getLogger(__name__)

INSTANCE_OF = "isInstanceOf"

TBOX_FILE = "tbox.tsv"
ABOX_EE_FILE = "abox_ee.tsv"
ABOX_EC_FILE = "abox_ec.tsv"
VOCAB_FILE = "vocab.json"


@dataclass(frozen=True)
class Vocab:
    entities: tuple[str, ...]
    concepts: tuple[str, ...]
    relations: tuple[str, ...]
    entity_ids: dict[str, int] = field(init=False, repr=False, compare=False)
    concept_ids: dict[str, int] = field(init=False, repr=False, compare=False)
    relation_ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "concepts", tuple(self.concepts))
        object.__setattr__(self, "relations", tuple(self.relations))
        for attr, names in (("entity_ids", self.entities), ("concept_ids", self.concepts),
                            ("relation_ids", self.relations)):
            ids = {name: i for i, name in enumerate(names)}
            if len(ids) != len(names):
                raise DataError(f"duplicate names in {attr[:-4]} vocabulary")
            object.__setattr__(self, attr, ids)
        _check_disjoint(set(self.entities), set(self.concepts), set(self.relations))

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.entities), len(self.concepts), len(self.relations)

    def to_json(self) -> dict:
        return {"entities": list(self.entities), "concepts": list(self.concepts),
                "relations": list(self.relations)}

    @classmethod
    def from_json(cls, data: dict) -> Vocab:
        return cls(tuple(data["entities"]), tuple(data["concepts"]), tuple(data["relations"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, indent=1) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocab:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_disjoint(entities: set, concepts: set, relations: set) -> None:
    for a_name, a, b_name, b in (("entity", entities, "concept", concepts),
                                 ("relation", relations, "entity", entities),
                                 ("relation", relations, "concept", concepts)):
        clash = a & b
        if clash:
            name = sorted(clash)[0]
            raise NamespaceCollisionError(
                f"name {name!r} is used both as {a_name} and as {b_name}"
                + (f" ({len(clash)} collisions)" if len(clash) > 1 else "")
            )


@dataclass(frozen=True)
class KnowledgeBase:
    vocab: Vocab
    tbox: frozenset[tuple[int, int]]
    abox_ee: frozenset[tuple[int, int, int]]
    abox_ec: frozenset[tuple[int, int]]

    def __post_init__(self):
        object.__setattr__(self, "tbox", frozenset(self.tbox))
        object.__setattr__(self, "abox_ee", frozenset(self.abox_ee))
        object.__setattr__(self, "abox_ec", frozenset(self.abox_ec))
        n_e, n_c, n_r = self.vocab.sizes
        for sub, sup in self.tbox:
            if not (0 <= sub < n_c and 0 <= sup < n_c):
                raise DataError(f"subsumption ({sub}, {sup}) out of concept range")
            if sub == sup:
                raise DataError(f"self-subsumption stored for concept {sub}")
        for h, r, t in self.abox_ee:
            if not (0 <= h < n_e and 0 <= t < n_e and 0 <= r < n_r):
                raise DataError(f"triple ({h}, {r}, {t}) out of range")
        for e, c in self.abox_ec:
            if not (0 <= e < n_e and 0 <= c < n_c):
                raise DataError(f"instantiation ({e}, {c}) out of range")

    @property
    def n_entities(self) -> int:
        return len(self.vocab.entities)

    @property
    def n_concepts(self) -> int:
        return len(self.vocab.concepts)

    @property
    def n_relations(self) -> int:
        return len(self.vocab.relations)

    @cached_property
    def triples(self) -> np.ndarray:
        """Role assertions as a sorted ``(N, 3)`` int array."""
        return np.array(sorted(self.abox_ee), dtype=np.int64).reshape(-1, 3)

    @cached_property
    def subsumptions(self) -> np.ndarray:
        return np.array(sorted(self.tbox), dtype=np.int64).reshape(-1, 2)

    @cached_property
    def instances(self) -> np.ndarray:
        return np.array(sorted(self.abox_ec), dtype=np.int64).reshape(-1, 2)

    @cached_property
    def tail_index(self) -> dict[tuple[int, int], frozenset[int]]:
        """``(head, relation) -> tails``."""
        index: dict[tuple[int, int], set[int]] = defaultdict(set)
        for h, r, t in self.abox_ee:
            index[h, r].add(t)
        return {k: frozenset(v) for k, v in index.items()}

    @cached_property
    def incoming(self) -> dict[int, tuple[tuple[int, int], ...]]:
        """``tail -> sorted (head, relation) pairs``, used by the sampler."""
        index: dict[int, list[tuple[int, int]]] = defaultdict(list)
        for h, r, t in sorted(self.abox_ee):
            index[t].append((h, r))
        return {k: tuple(v) for k, v in index.items()}

    @cached_property
    def closure(self) -> frozenset[tuple[int, int]]:
        return transductive_closure(self.tbox)

    @cached_property
    def augmented_instances(self) -> frozenset[tuple[int, int]]:
        """``abox_ec`` extended along the subsumption closure."""
        supers: dict[int, set[int]] = defaultdict(set)
        for sub, sup in self.closure:
            supers[sub].add(sup)
        out = set(self.abox_ec)
        for e, c in self.abox_ec:
            out.update((e, s) for s in supers.get(c, ()))
        return frozenset(out)

    @cached_property
    def concepts_of(self) -> dict[int, frozenset[int]]:
        index: dict[int, set[int]] = defaultdict(set)
        for e, c in self.augmented_instances:
            index[e].add(c)
        return {k: frozenset(v) for k, v in index.items()}

    def with_triples(self, triples: Iterable[tuple[int, int, int]]) -> KnowledgeBase:
        return KnowledgeBase(self.vocab, self.tbox, frozenset(triples), self.abox_ec)

    def summary(self) -> str:
        n_e, n_c, n_r = self.vocab.sizes
        return (f"|E|={n_e} |C|={n_c} |R|={n_r} tbox={len(self.tbox)} "
                f"abox_ee={len(self.abox_ee)} abox_ec={len(self.abox_ec)}")


@dataclass(frozen=True)
class KbSplit:
    train: KnowledgeBase
    valid_triples: frozenset[tuple[int, int, int]]
    test_triples: frozenset[tuple[int, int, int]]

    @property
    def vocab(self) -> Vocab:
        return self.train.vocab

    def train_valid(self) -> KnowledgeBase:
        return self.train.with_triples(self.train.abox_ee | self.valid_triples)

    def full(self) -> KnowledgeBase:
        return self.train.with_triples(self.train.abox_ee | self.valid_triples | self.test_triples)


# ---------------------------------------------------------------------------
# file IO


def _read_rows(path: str | Path, n_fields: int):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != n_fields or any(not p for p in parts):
                raise ParseError(
                    f"{path}: expected {n_fields} tab-separated fields, got {len(parts)}", line=lineno
                )
            yield lineno, tuple(parts)


def load_kb(tbox_path: str | Path, abox_ee_path: str | Path, abox_ec_path: str | Path,
            vocab: Vocab | None = None) -> KnowledgeBase:
    """Read the three TSV files into a knowledge base.

    Without ``vocab`` the vocabularies are built from every name encountered
    and sorted. With ``vocab`` the given id assignment is used and unknown
    names are rejected.
    """
    tbox_rows = list(_read_rows(tbox_path, 2))
    ee_rows = list(_read_rows(abox_ee_path, 3))
    ec_rows = list(_read_rows(abox_ec_path, 2))

    if vocab is None:
        entities = {h for _, (h, _, _) in ee_rows} | {t for _, (_, _, t) in ee_rows}
        entities |= {e for _, (e, _) in ec_rows}
        concepts = {c for _, row in tbox_rows for c in row} | {c for _, (_, c) in ec_rows}
        relations = {r for _, (_, r, _) in ee_rows}
        vocab = Vocab(tuple(sorted(entities)), tuple(sorted(concepts)), tuple(sorted(relations)))

    def lookup(table: dict[str, int], name: str, kind: str, lineno: int, path) -> int:
        try:
            return table[name]
        except KeyError:
            raise ParseError(f"{path}: unknown {kind} {name!r}", line=lineno) from None

    tbox = set()
    for lineno, (sub, sup) in tbox_rows:
        pair = (lookup(vocab.concept_ids, sub, "concept", lineno, tbox_path),
                lookup(vocab.concept_ids, sup, "concept", lineno, tbox_path))
        if pair[0] == pair[1]:
            log.warning("%s:%d: dropping self-subsumption %s", tbox_path, lineno, sub)
            continue
        tbox.add(pair)
    abox_ee = {
        (lookup(vocab.entity_ids, h, "entity", n, abox_ee_path),
         lookup(vocab.relation_ids, r, "relation", n, abox_ee_path),
         lookup(vocab.entity_ids, t, "entity", n, abox_ee_path))
        for n, (h, r, t) in ee_rows
    }
    abox_ec = {
        (lookup(vocab.entity_ids, e, "entity", n, abox_ec_path),
         lookup(vocab.concept_ids, c, "concept", n, abox_ec_path))
        for n, (e, c) in ec_rows
    }
    kb = KnowledgeBase(vocab, frozenset(tbox), frozenset(abox_ee), frozenset(abox_ec))
    log.info("loaded knowledge base: %s", kb.summary())
    return kb


def _write_lines(path: Path, rows: Iterable[tuple[str, ...]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write("\t".join(row) + "\n")


def _triple_rows(vocab: Vocab, triples) -> Iterable[tuple[str, str, str]]:
    return ((vocab.entities[h], vocab.relations[r], vocab.entities[t]) for h, r, t in sorted(triples))


def save_kb(kb: KnowledgeBase, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    v = kb.vocab
    _write_lines(directory / TBOX_FILE, ((v.concepts[a], v.concepts[b]) for a, b in sorted(kb.tbox)))
    _write_lines(directory / ABOX_EE_FILE, _triple_rows(v, kb.abox_ee))
    _write_lines(directory / ABOX_EC_FILE, ((v.entities[e], v.concepts[c]) for e, c in sorted(kb.abox_ec)))
    v.save(directory / VOCAB_FILE)


def load_kb_dir(directory: str | Path) -> KnowledgeBase:
    directory = Path(directory)
    vocab = Vocab.load(directory / VOCAB_FILE) if (directory / VOCAB_FILE).exists() else None
    return load_kb(directory / TBOX_FILE, directory / ABOX_EE_FILE, directory / ABOX_EC_FILE, vocab)


def _load_triples(path: Path, vocab: Vocab) -> frozenset[tuple[int, int, int]]:
    out = set()
    for n, (h, r, t) in _read_rows(path, 3):
        try:
            out.add((vocab.entity_ids[h], vocab.relation_ids[r], vocab.entity_ids[t]))
        except KeyError as exc:
            raise ParseError(f"{path}: unknown name {exc.args[0]!r}", line=n) from None
    return frozenset(out)


def save_split(split: KbSplit, directory: str | Path) -> None:
    """Write a split as ``train/`` plus ``valid.tsv`` and ``test.tsv``."""
    directory = Path(directory)
    save_kb(split.train, directory / "train")
    _write_lines(directory / "valid.tsv", _triple_rows(split.vocab, split.valid_triples))
    _write_lines(directory / "test.tsv", _triple_rows(split.vocab, split.test_triples))


def load_split(directory: str | Path) -> KbSplit:
    directory = Path(directory)
    train = load_kb_dir(directory / "train")
    return KbSplit(train, _load_triples(directory / "valid.tsv", train.vocab),
                   _load_triples(directory / "test.tsv", train.vocab))


# ---------------------------------------------------------------------------
# transformations


def _rebuild(kb: KnowledgeBase, keep_entities: set[int]) -> KnowledgeBase:
    v = kb.vocab
    ee = [(h, r, t) for h, r, t in kb.abox_ee if h in keep_entities and t in keep_entities]
    ec = [(e, c) for e, c in kb.abox_ec if e in keep_entities]
    used_c = {c for _, c in ec} | {c for pair in kb.tbox for c in pair}
    used_r = {r for _, r, _ in ee}
    e_map = {old: new for new, old in enumerate(sorted(keep_entities))}
    c_map = {old: new for new, old in enumerate(sorted(used_c))}
    r_map = {old: new for new, old in enumerate(sorted(used_r))}
    vocab = Vocab(tuple(v.entities[i] for i in sorted(keep_entities)),
                  tuple(v.concepts[i] for i in sorted(used_c)),
                  tuple(v.relations[i] for i in sorted(used_r)))
    return KnowledgeBase(
        vocab,
        frozenset((c_map[a], c_map[b]) for a, b in kb.tbox),
        frozenset((e_map[h], r_map[r], e_map[t]) for h, r, t in ee),
        frozenset((e_map[e], c_map[c]) for e, c in ec),
    )


def entity_degrees(kb: KnowledgeBase) -> np.ndarray:
    deg = np.zeros(kb.n_entities, dtype=np.int64)
    if kb.abox_ee:
        np.add.at(deg, kb.triples[:, 0], 1)
        np.add.at(deg, kb.triples[:, 2], 1)
    if kb.abox_ec:
        np.add.at(deg, kb.instances[:, 0], 1)
    return deg


def filter_low_degree(kb: KnowledgeBase, threshold: int = 5) -> KnowledgeBase:
    """Drop entities with fewer than ``threshold`` ABox edges, to a fixpoint.

    Degree counts both role assertions (as head or tail) and instantiation
    links. Removing an entity removes its axioms, which can push neighbours
    under the threshold; the loop repeats until nothing changes.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    if threshold == 0:
        return kb
    alive = set(range(kb.n_entities))
    ee = set(kb.abox_ee)
    ec = set(kb.abox_ec)
    while True:
        deg: dict[int, int] = defaultdict(int)
        for h, _, t in ee:
            deg[h] += 1
            deg[t] += 1
        for e, _ in ec:
            deg[e] += 1
        drop = {e for e in alive if deg[e] < threshold}
        if not drop:
            break
        alive -= drop
        ee = {x for x in ee if x[0] in alive and x[2] in alive}
        ec = {x for x in ec if x[0] in alive}
    if not alive:
        raise EmptyKBError(f"degree filter with threshold {threshold} removed every entity")
    out = _rebuild(kb, alive)
    log.info("degree filter (threshold %d): %s", threshold, out.summary())
    return out


def split_abox(kb: KnowledgeBase, train_fraction: float = 0.95, seed: int = 0) -> KbSplit:
    """Randomly hold out role assertions; the held-out part is halved into valid/test."""
    if not 0.0 < train_fraction < 1.0:
        raise SplitError("train_fraction must lie strictly between 0 and 1")
    triples = sorted(kb.abox_ee)
    n = len(triples)
    n_train = int(math.floor(train_fraction * n + 0.5))
    if n_train == 0 or n_train == n:
        raise SplitError(f"fraction {train_fraction} of {n} triples leaves an empty partition")
    order = np.random.default_rng(seed).permutation(n)
    rest = [triples[i] for i in order[n_train:]]
    n_valid = len(rest) // 2
    train = kb.with_triples(triples[i] for i in order[:n_train])
    return KbSplit(train, frozenset(rest[:n_valid]), frozenset(rest[n_valid:]))


def transductive_closure(tbox: Iterable[tuple[int, int]]) -> frozenset[tuple[int, int]]:
    """Transitive, reflexive-free closure of the subsumption relation.

    Members of a subsumption cycle end up mutually subsuming; a warning is
    emitted when a cycle is found.
    """
    succ: dict[int, set[int]] = defaultdict(set)
    for a, b in tbox:
        succ[a].add(b)
    out = set()
    cyclic = False
    for start in sorted(succ):
        seen: set[int] = set()
        stack = list(succ[start])
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(succ.get(node, ()))
        if start in seen:
            cyclic = True
            seen.discard(start)
        out.update((start, s) for s in seen)
    if cyclic:
        warnings.warn("subsumption cycle detected; cycle members treated as equivalent", stacklevel=2)
    return frozenset(out)


def degrade_concepts(kb: KnowledgeBase, relation_name: str = INSTANCE_OF) -> KnowledgeBase:
    """Turn concepts into entities linked by a fresh instance-of relation.

    Concept ``c`` becomes entity ``|E| + c``. Instantiation links are first
    extended along the subsumption closure. The returned knowledge base has
    an empty TBox and an empty ``abox_ec``.
    """
    v = kb.vocab
    name = relation_name
    taken = set(v.entities) | set(v.concepts) | set(v.relations)
    while name in taken:
        name += "_"
    n_e = kb.n_entities
    r_ec = kb.n_relations
    vocab = Vocab(v.entities + v.concepts, (), v.relations + (name,))
    triples = set(kb.abox_ee)
    triples.update((e, r_ec, n_e + c) for e, c in kb.augmented_instances)
    return KnowledgeBase(vocab, frozenset(), frozenset(triples), frozenset())


def instance_relation(vocab: Vocab, relation_name: str = INSTANCE_OF) -> int:
    """Id of the instance-of relation added by :func:`degrade_concepts`."""
    candidates = [r for r in vocab.relations if r.rstrip("_") == relation_name]
    if not candidates:
        raise DataError(f"relation {relation_name!r} not in vocabulary; is this a degraded KB?")
    return vocab.relation_ids[max(candidates, key=len)]
