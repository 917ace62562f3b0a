import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ontoreason.kb import KnowledgeBase, Vocab

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=60,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def build_kb(triples, instances=(), tbox=()):
    """Knowledge base from name-level axioms; vocabularies are sorted by name."""
    ents = sorted({h for h, _, _ in triples} | {t for _, _, t in triples} | {e for e, _ in instances})
    cons = sorted({c for _, c in instances} | {c for pair in tbox for c in pair})
    rels = sorted({r for _, r, _ in triples})
    v = Vocab(tuple(ents), tuple(cons), tuple(rels))
    return KnowledgeBase(
        v,
        frozenset((v.concept_ids[a], v.concept_ids[b]) for a, b in tbox),
        frozenset((v.entity_ids[h], v.relation_ids[r], v.entity_ids[t]) for h, r, t in triples),
        frozenset((v.entity_ids[e], v.concept_ids[c]) for e, c in instances),
    )


# six entities, eight triples, three relations; concept K2 subsumes K0 and K1
HAND_TRIPLES = [
    ("a", "r", "b"), ("a", "r", "c"), ("b", "s", "d"), ("c", "s", "d"),
    ("c", "t", "e"), ("d", "t", "f"), ("e", "r", "f"), ("f", "s", "a"),
]
HAND_INSTANCES = [("b", "K0"), ("d", "K1"), ("f", "K1"), ("a", "K0")]
HAND_TBOX = [("K0", "K2"), ("K1", "K2")]


@pytest.fixture
def hand_kb():
    return build_kb(HAND_TRIPLES, HAND_INSTANCES, HAND_TBOX)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
