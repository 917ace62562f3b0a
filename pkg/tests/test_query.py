import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import build_kb
from ontoreason.errors import ParseError, SamplerExhaustedError
from ontoreason.kb import Vocab, split_abox
from ontoreason.query import (
    QUERY_TYPES,
    And,
    Anchor,
    Not,
    Or,
    Proj,
    QueryInstance,
    answer_concepts,
    answer_entities,
    classify,
    enumerate_1p,
    load_instances,
    parse_query,
    render_query,
    sample_queries,
    save_instances,
)
from ontoreason.synthetic import random_kb


def holds(kb, node, x):
    """Does entity ``x`` satisfy ``node``? Existential search over every binding."""
    if isinstance(node, Anchor):
        return x == node.entity
    if isinstance(node, Proj):
        return any((y, node.rel, x) in kb.abox_ee and holds(kb, node.child, y) for y in range(kb.n_entities))
    if isinstance(node, Not):
        return not holds(kb, node.child, x)
    results = [holds(kb, c, x) for c in node.children]
    return all(results) if isinstance(node, And) else any(results)


def brute_force_answers(kb, node):
    return {x for x in range(kb.n_entities) if holds(kb, node, x)}


def matrix_answers(kb, node):
    """Answers via boolean adjacency matrices and indicator vectors."""
    n = kb.n_entities
    adj = np.zeros((kb.n_relations, n, n), dtype=bool)
    for h, r, t in kb.abox_ee:
        adj[r, h, t] = True

    def ev(nd):
        if isinstance(nd, Anchor):
            v = np.zeros(n, dtype=bool)
            v[nd.entity] = True
            return v
        if isinstance(nd, Proj):
            return (ev(nd.child).astype(int) @ adj[nd.rel].astype(int)) > 0
        if isinstance(nd, Not):
            return ~ev(nd.child)
        vs = [ev(c) for c in nd.children]
        return np.logical_and.reduce(vs) if isinstance(nd, And) else np.logical_or.reduce(vs)

    return set(np.flatnonzero(ev(node)).tolist())


def shape(qtype, a, r):
    """Concrete query of type ``qtype`` over anchors ``a`` and relations ``r`` (cycled)."""
    def p(i, child):
        return Proj(r[i % len(r)], child)

    def e(i):
        return Anchor(a[i % len(a)])

    return {
        "1p": lambda: p(0, e(0)),
        "2p": lambda: p(1, p(0, e(0))),
        "3p": lambda: p(2, p(1, p(0, e(0)))),
        "2i": lambda: And((p(0, e(0)), p(1, e(1)))),
        "3i": lambda: And((p(0, e(0)), p(1, e(1)), p(2, e(2)))),
        "pi": lambda: And((p(1, p(0, e(0))), p(2, e(1)))),
        "ip": lambda: p(2, And((p(0, e(0)), p(1, e(1))))),
        "2u": lambda: Or((p(0, e(0)), p(1, e(1)))),
        "up": lambda: p(2, Or((p(0, e(0)), p(1, e(1))))),
    }[qtype]()


VOCAB = Vocab(("h", "h1", "h2", "x y", "a"), ("C",), ("r1", "r2", "r3"))


def asts(max_leaves=4):
    anchor = st.integers(0, 4).map(Anchor)

    def extend(children):
        return st.one_of(
            st.builds(Proj, st.integers(0, 2), children),
            st.builds(Not, children),
            st.lists(children, min_size=2, max_size=3).map(lambda c: And(tuple(c))),
            st.lists(children, min_size=2, max_size=3).map(lambda c: Or(tuple(c))),
        )

    return st.recursive(anchor, extend, max_leaves=max_leaves).filter(lambda n: not isinstance(n, Anchor))


class TestParser:
    def test_2p(self):
        ast = parse_query("(p r2 (p r1 (e h)))", VOCAB)
        assert ast == Proj(1, Proj(0, Anchor(0)))
        assert classify(ast) == "2p"

    def test_pi(self):
        ast = parse_query("(and (p r2 (p r1 (e h1))) (p r3 (e h2)))", VOCAB)
        assert ast == And((Proj(1, Proj(0, Anchor(1))), Proj(2, Anchor(2))))
        assert classify(ast) == "pi"

    def test_quoted_names(self):
        ast = parse_query('(p r1 (e "x y"))', VOCAB)
        assert ast == Proj(0, Anchor(3))
        assert render_query(ast, VOCAB) == '(p r1 (e "x y"))'

    def test_render_nested(self):
        assert render_query(Proj(2, Proj(1, Proj(0, Anchor(0)))), VOCAB) == "(p r3 (p r2 (p r1 (e h))))"

    @pytest.mark.parametrize("text, pos", [
        ("(e h)", 0),
        ("(p r1 (e nobody))", 9),
        ("(p r9 (e h))", 3),
        ("(and (p r1 (e h)))", 0),
        ("(p r1 (e h)", 11),
        ("(p r1 (e h)))", 12),
        ("(xor (p r1 (e h)) (p r1 (e h)))", 1),
        ('(p r1 (e "unterminated))', 9),
    ])
    def test_errors_carry_position(self, text, pos):
        with pytest.raises(ParseError) as info:
            parse_query(text, VOCAB)
        assert info.value.position == pos

    @pytest.mark.parametrize("qtype", QUERY_TYPES)
    def test_nine_shapes_round_trip(self, qtype):
        ast = shape(qtype, [0, 1, 2], [0, 1, 2])
        assert classify(ast) == qtype
        assert parse_query(render_query(ast, VOCAB), VOCAB) == ast

    @given(asts())
    def test_round_trip(self, ast):
        text = render_query(ast, VOCAB)
        assert parse_query(text, VOCAB) == ast
        assert render_query(parse_query(text, VOCAB), VOCAB) == text

    def test_operand_order_ignored_by_classify(self):
        a = And((Proj(0, Anchor(0)), Proj(0, Proj(1, Anchor(1)))))
        assert classify(a) == "pi"


class TestAnswers:
    def test_direct_traversal(self):
        kb = build_kb([("a", "r", "b"), ("a", "r", "c")])
        assert answer_entities(kb, Proj(0, Anchor(0))) == {1, 2}

    def test_intersection(self, hand_kb):
        v = hand_kb.vocab
        b1 = Proj(v.relation_ids["s"], Anchor(v.entity_ids["b"]))
        b2 = Proj(v.relation_ids["s"], Anchor(v.entity_ids["c"]))
        assert answer_entities(hand_kb, And((b1, b2))) == answer_entities(hand_kb, b1) & answer_entities(hand_kb, b2)

    @pytest.mark.parametrize("qtype", QUERY_TYPES)
    def test_hand_kb_matches_brute_force(self, hand_kb, qtype):
        rng = np.random.default_rng(QUERY_TYPES.index(qtype))
        for _ in range(30):
            ast = shape(qtype, rng.integers(6, size=3).tolist(), rng.integers(3, size=3).tolist())
            if len(set(getattr(ast, "children", ()))) < len(getattr(ast, "children", ())):
                continue
            assert answer_entities(hand_kb, ast) == brute_force_answers(hand_kb, ast)

    @given(asts(max_leaves=3))
    def test_arbitrary_queries_match_brute_force(self, ast):
        kb = build_kb([("h", "r1", "h1"), ("h1", "r2", "h2"), ("h2", "r3", "x y"), ("x y", "r1", "a"),
                       ("a", "r1", "h"), ("h", "r3", "h2")])
        remap = {VOCAB.entity_ids[n]: kb.vocab.entity_ids[n] for n in VOCAB.entities}

        def fix(nd):
            if isinstance(nd, Anchor):
                return Anchor(remap[nd.entity])
            if isinstance(nd, Proj):
                return Proj(nd.rel, fix(nd.child))
            if isinstance(nd, Not):
                return Not(fix(nd.child))
            return type(nd)(tuple(fix(c) for c in nd.children))

        ast = fix(ast)
        assert answer_entities(kb, ast) == brute_force_answers(kb, ast)

    @given(asts(max_leaves=3), asts(max_leaves=3))
    def test_crisp_de_morgan(self, a, b):
        kb = random_kb(5, 12, n_relations=3, seed=3)
        lhs = answer_entities(kb, Not(And((a, b))))
        rhs = answer_entities(kb, Or((Not(a), Not(b))))
        assert lhs == rhs
        assert answer_entities(kb, Not(Or((a, b)))) == answer_entities(kb, And((Not(a), Not(b))))


class TestConceptAnswers:
    def test_closure_membership(self):
        kb = build_kb([("e", "r", "f")], [("e", "c")], tbox=[("c", "c2")])
        assert answer_concepts(kb, {kb.vocab.entity_ids["e"]}) == {0, 1}

    def test_instance_of_answer_included(self, hand_kb):
        v = hand_kb.vocab
        ans = answer_concepts(hand_kb, {v.entity_ids["b"], v.entity_ids["e"]})
        assert v.concept_ids["K0"] in ans and v.concept_ids["K2"] in ans
        assert v.concept_ids["K1"] not in ans

    def test_empty(self, hand_kb):
        assert answer_concepts(hand_kb, set()) == frozenset()

    @given(st.sets(st.integers(0, 5)), st.sets(st.integers(0, 5)))
    def test_monotone(self, a, b):
        from conftest import HAND_INSTANCES, HAND_TBOX, HAND_TRIPLES

        kb = build_kb(HAND_TRIPLES, HAND_INSTANCES, HAND_TBOX)
        assert answer_concepts(kb, a) <= answer_concepts(kb, a | b)


class TestSampler:
    kb = random_kb(100, 500, n_relations=4, n_concepts=6, seed=0)

    @pytest.mark.parametrize("qtype", QUERY_TYPES)
    def test_instances_are_consistent(self, qtype):
        out = sample_queries(self.kb, qtype, 40, seed=1)
        assert len(out) == 40
        assert len({q.ast for q in out}) == 40
        for q in out:
            assert q.qtype == qtype == classify(q.ast)
            assert q.entity_answers == answer_entities(self.kb, q.ast) == matrix_answers(self.kb, q.ast)
            assert 1 <= len(q.entity_answers) <= 100
            assert q.concept_answers == answer_concepts(self.kb, q.entity_answers)

    def test_deterministic(self):
        assert sample_queries(self.kb, "pi", 20, seed=5) == sample_queries(self.kb, "pi", 20, seed=5)
        assert sample_queries(self.kb, "pi", 20, seed=5) != sample_queries(self.kb, "pi", 20, seed=6)

    def test_max_answers(self):
        for q in sample_queries(self.kb, "2u", 30, seed=2, max_answers=3):
            assert len(q.entity_answers) <= 3

    def test_enumerate_1p(self):
        s = split_abox(random_kb(40, 100, seed=3))
        out = enumerate_1p(s.train)
        assert len(out) == 95
        for q in out:
            assert q.qtype == "1p"
            assert q.entity_answers == answer_entities(s.train, q.ast)

    def test_evaluation_mode(self):
        s = split_abox(self.kb, 0.9, seed=0)
        full, base = s.full(), s.train_valid()
        for qtype in ("1p", "2p", "ip", "up"):
            for q in sample_queries(full, qtype, 10, seed=3, train_kb=base):
                assert q.entity_answers == answer_entities(full, q.ast)
                assert q.entity_answers - answer_entities(base, q.ast)

    def test_exhaustion_reports_achieved(self):
        kb = build_kb([("a", "r", "b"), ("b", "r", "c")])
        with pytest.raises(SamplerExhaustedError) as info:
            sample_queries(kb, "1p", 5)
        assert info.value.requested == 5 and info.value.achieved == 2
        assert "achieved 2" in str(info.value)

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            sample_queries(self.kb, "5p", 1)


class TestInstanceFiles:
    def test_jsonl_round_trip(self, tmp_path, hand_kb):
        out = sample_queries(hand_kb, "2p", 3, seed=0)
        path = tmp_path / "q.jsonl"
        save_instances(out, path, hand_kb.vocab)
        assert load_instances(path, hand_kb.vocab) == out
        rec = json.loads(path.read_text().splitlines()[0])
        assert set(rec) == {"qtype", "query", "entity_answers", "concept_answers"}

    def test_bad_line(self, tmp_path, hand_kb):
        path = tmp_path / "q.jsonl"
        path.write_text('{"qtype": "1p"}\n')
        with pytest.raises(ParseError) as info:
            load_instances(path, hand_kb.vocab)
        assert info.value.line == 1

    def test_cached_views(self):
        q = QueryInstance(Proj(0, Anchor(1)), "1p", frozenset({3, 1}), frozenset({2, 0}))
        assert q.sorted_entities == (1, 3) and q.sorted_concepts == (0, 2)
        assert q.shape == "p(e)"
