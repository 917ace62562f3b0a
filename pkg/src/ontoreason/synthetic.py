"""Small structured ontology for smoke tests and the end-to-end benchmark.

Entities sit on a 10 x 20 grid: row ``i`` is the concept the entity is a
direct instance of, column ``j`` its position. Each relation shifts both
coordinates by a fixed offset, so a held-out edge can be inferred from the
rest of the graph. Concepts form a three-level hierarchy::

    c0 c1   c2 c3   c4 c5        (leaves)
      c6      c7      c8         (middle)
              c9                 (top)
"""

from __future__ import annotations

import numpy as np

from ontoreason.kb import KnowledgeBase, Vocab

N_CONCEPTS = 10
PER_CONCEPT = 20
# (concept shift, position shift) per relation
RELATION_SHIFTS = ((0, 1), (1, 0), (1, 2), (2, 1), (0, 3))
HIERARCHY = ((0, 6), (1, 6), (2, 7), (3, 7), (4, 8), (5, 8), (6, 9), (7, 9), (8, 9))


def entity_name(i: int, j: int) -> str:
    return f"e{i}_{j:02d}"


def make_synthetic_kb(extra_edge_prob: float = 0.0, seed: int = 0) -> KnowledgeBase:
    """Build the grid ontology; optionally add random extra edges within target rows."""
    rng = np.random.default_rng(seed)
    entities = tuple(entity_name(i, j) for i in range(N_CONCEPTS) for j in range(PER_CONCEPT))
    concepts = tuple(f"C{c}" for c in range(N_CONCEPTS))
    relations = tuple(f"r{k}" for k in range(len(RELATION_SHIFTS)))
    vocab = Vocab(entities, concepts, relations)

    def eid(i, j):
        return i * PER_CONCEPT + j

    triples = set()
    for r, (di, dj) in enumerate(RELATION_SHIFTS):
        for i in range(N_CONCEPTS - di):
            for j in range(PER_CONCEPT - dj):
                triples.add((eid(i, j), r, eid(i + di, j + dj)))
                if extra_edge_prob and rng.random() < extra_edge_prob:
                    triples.add((eid(i, j), r, eid(i + di, int(rng.integers(PER_CONCEPT)))))
    abox_ec = {(eid(i, j), i) for i in range(N_CONCEPTS) for j in range(PER_CONCEPT)}
    return KnowledgeBase(vocab, frozenset(HIERARCHY), frozenset(triples), frozenset(abox_ec))


def random_kb(n_entities: int, n_triples: int, n_relations: int = 4, n_concepts: int = 0,
              seed: int = 0) -> KnowledgeBase:
    """Uniformly random knowledge base, used for sampler and oracle checks."""
    rng = np.random.default_rng(seed)
    triples: set[tuple[int, int, int]] = set()
    while len(triples) < n_triples:
        h, t = rng.integers(n_entities, size=2)
        triples.add((int(h), int(rng.integers(n_relations)), int(t)))
    abox_ec = set()
    tbox = set()
    if n_concepts:
        for e in range(n_entities):
            abox_ec.add((e, int(rng.integers(n_concepts))))
        for c in range(1, n_concepts):
            tbox.add((c, int(rng.integers(c))))
    vocab = Vocab(tuple(f"n{i}" for i in range(n_entities)), tuple(f"K{i}" for i in range(n_concepts)),
                  tuple(f"rel{i}" for i in range(n_relations)))
    return KnowledgeBase(vocab, frozenset(tbox), frozenset(triples), frozenset(abox_ec))
