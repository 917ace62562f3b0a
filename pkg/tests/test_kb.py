import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import build_kb
from ontoreason.errors import DataError, EmptyKBError, NamespaceCollisionError, ParseError, SplitError
from ontoreason.kb import (
    KnowledgeBase,
    Vocab,
    degrade_concepts,
    entity_degrees,
    filter_low_degree,
    instance_relation,
    load_kb,
    load_kb_dir,
    load_split,
    save_kb,
    save_split,
    split_abox,
    transductive_closure,
)
from ontoreason.synthetic import random_kb


def write_kb_files(tmp_path, tbox="", ee="", ec=""):
    paths = []
    for name, text in (("tbox.tsv", tbox), ("abox_ee.tsv", ee), ("abox_ec.tsv", ec)):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths


def closure_oracle(pairs, n):
    """Warshall's algorithm on a boolean matrix, diagonal dropped."""
    reach = np.zeros((n, n), dtype=bool)
    for a, b in pairs:
        reach[a, b] = True
    for k in range(n):
        reach |= reach[:, [k]] & reach[[k], :]
    return {(a, b) for a, b in zip(*np.nonzero(reach)) if a != b}


def small_kbs():
    return st.builds(
        lambda n_e, n_t, n_c, seed: random_kb(n_e, min(n_t, n_e * n_e), n_relations=3, n_concepts=n_c, seed=seed),
        st.integers(3, 15), st.integers(1, 40), st.integers(0, 5), st.integers(0, 1000),
    )


class TestLoading:
    def test_minimal_input(self, tmp_path):
        kb = load_kb(*write_kb_files(tmp_path, ee="a\tr\tb\n"))
        assert kb.vocab.sizes == (2, 0, 1)
        assert kb.abox_ee == {(0, 0, 1)}

    def test_duplicates_and_comments(self, tmp_path):
        ee = "# header\na\tr\tb\na\tr\tb\n\n"
        kb = load_kb(*write_kb_files(tmp_path, tbox="C\tD\n", ee=ee, ec="a\tC\n"))
        assert len(kb.abox_ee) == 1
        assert kb.tbox == {(0, 1)}
        assert kb.abox_ec == {(0, 0)}

    def test_malformed_line_reports_line_number(self, tmp_path):
        with pytest.raises(ParseError) as info:
            load_kb(*write_kb_files(tmp_path, ee="a\tr\tb\na\tr\n"))
        assert info.value.line == 2
        assert "line 2" in str(info.value)

    def test_relation_used_as_entity(self, tmp_path):
        with pytest.raises(NamespaceCollisionError):
            load_kb(*write_kb_files(tmp_path, ee="a\tr\tb\nr\tr\ta\n"))

    def test_entity_used_as_concept(self, tmp_path):
        with pytest.raises(NamespaceCollisionError):
            load_kb(*write_kb_files(tmp_path, ee="a\tr\tb\n", ec="a\tb\n"))

    def test_self_subsumption_dropped(self, tmp_path):
        kb = load_kb(*write_kb_files(tmp_path, tbox="C\tC\nC\tD\n", ee="a\tr\tb\n"))
        assert kb.tbox == {(0, 1)}

    def test_self_subsumption_rejected_in_memory(self):
        v = Vocab(("a",), ("C",), ())
        with pytest.raises(DataError):
            KnowledgeBase(v, frozenset({(0, 0)}), frozenset(), frozenset())

    def test_out_of_range_ids_rejected(self):
        v = Vocab(("a", "b"), (), ("r",))
        with pytest.raises(DataError):
            KnowledgeBase(v, frozenset(), frozenset({(0, 0, 2)}), frozenset())

    def test_round_trip_is_byte_stable(self, tmp_path, hand_kb):
        save_kb(hand_kb, tmp_path / "a")
        again = load_kb_dir(tmp_path / "a")
        assert again == hand_kb
        save_kb(again, tmp_path / "b")
        for name in ("tbox.tsv", "abox_ee.tsv", "abox_ec.tsv", "vocab.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unicode_names(self, tmp_path):
        kb = load_kb(*write_kb_files(tmp_path, ee="Gödel\tknows\tŁukasiewicz\n"))
        save_kb(kb, tmp_path / "out")
        assert load_kb_dir(tmp_path / "out").vocab.entities == ("Gödel", "Łukasiewicz")


class TestDegreeFilter:
    def test_threshold_zero_is_identity(self, hand_kb):
        assert filter_low_degree(hand_kb, 0) is hand_kb

    def test_chain_collapses(self):
        kb = build_kb([("a", "r", "b"), ("b", "r", "c")])
        assert list(entity_degrees(kb)) == [1, 2, 1]
        with pytest.raises(EmptyKBError):
            filter_low_degree(kb, 2)

    def test_star_collapses(self):
        kb = build_kb([("hub", "r", f"leaf{i}") for i in range(6)])
        with pytest.raises(EmptyKBError):
            filter_low_degree(kb, 5)

    def test_cascade_keeps_dense_core(self):
        core = [(a, "r", b) for a, b in itertools.permutations("abcd", 2)]
        kb = build_kb(core + [("a", "r", "x"), ("x", "r", "y")])
        out = filter_low_degree(kb, 3)
        assert out.vocab.entities == ("a", "b", "c", "d")
        assert len(out.abox_ee) == 12

    def test_instantiation_links_count(self):
        kb = build_kb([("a", "r", "b")], instances=[("a", "C"), ("b", "D")])
        assert list(entity_degrees(kb)) == [2, 2]
        assert filter_low_degree(kb, 2) == kb

    @given(kb=small_kbs(), threshold=st.integers(1, 4))
    def test_idempotent_and_meets_threshold(self, kb, threshold):
        try:
            once = filter_low_degree(kb, threshold)
        except EmptyKBError:
            return
        assert filter_low_degree(once, threshold) == once
        assert entity_degrees(once).min() >= threshold


class TestSplit:
    def test_95_5(self):
        kb = random_kb(40, 100, seed=1)
        s = split_abox(kb, 0.95, seed=0)
        assert (len(s.train.abox_ee), len(s.valid_triples), len(s.test_triples)) == (95, 2, 3)

    def test_two_triples_half(self):
        kb = build_kb([("a", "r", "b"), ("b", "r", "c")])
        s = split_abox(kb, 0.5, seed=0)
        assert len(s.train.abox_ee) == 1
        assert len(s.valid_triples) + len(s.test_triples) == 1

    def test_empty_partition(self):
        kb = build_kb([("a", "r", "b"), ("b", "r", "c")])
        with pytest.raises(SplitError):
            split_abox(kb, 0.9)
        with pytest.raises(SplitError):
            split_abox(kb, 1.0)

    @given(kb=small_kbs(), seed=st.integers(0, 100))
    def test_partition_invariants(self, kb, seed):
        try:
            s = split_abox(kb, 0.8, seed=seed)
        except SplitError:
            return
        parts = [s.train.abox_ee, s.valid_triples, s.test_triples]
        assert frozenset().union(*parts) == kb.abox_ee
        assert sum(map(len, parts)) == len(kb.abox_ee)
        assert s.train.tbox == kb.tbox and s.train.abox_ec == kb.abox_ec
        assert split_abox(kb, 0.8, seed=seed) == s

    def test_save_load(self, tmp_path):
        s = split_abox(random_kb(30, 60, n_concepts=3, seed=2), seed=4)
        save_split(s, tmp_path / "split")
        assert load_split(tmp_path / "split") == s


class TestClosure:
    def test_examples(self):
        assert transductive_closure({(0, 1), (1, 2)}) == {(0, 1), (1, 2), (0, 2)}
        assert transductive_closure(set()) == frozenset()
        chain = {(i, i + 1) for i in range(3)}
        assert len(transductive_closure(chain)) == 6

    def test_cycle_warns_and_is_mutual(self):
        with pytest.warns(UserWarning):
            out = transductive_closure({(0, 1), (1, 0), (1, 2)})
        assert {(0, 1), (1, 0), (0, 2), (1, 2)} <= out
        assert all(a != b for a, b in out)

    @given(st.sets(st.tuples(st.integers(0, 7), st.integers(0, 7)).filter(lambda p: p[0] != p[1]), max_size=20))
    def test_matches_warshall_and_is_closed(self, pairs):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = transductive_closure(pairs)
            assert out == closure_oracle(pairs, 8)
            assert transductive_closure(out) == out


class TestDegrade:
    def fixture(self):
        triples = [(f"e{i}", "r", f"e{(i + 1) % 10}") for i in range(10)]
        instances = [("e0", "A"), ("e1", "B"), ("e2", "C"), ("e3", "A")]
        return build_kb(triples, instances, tbox=[("A", "B"), ("B", "C")])

    def test_cardinalities(self):
        kb = self.fixture()
        out = degrade_concepts(kb)
        assert out.n_entities == 13 and out.n_concepts == 0
        assert out.n_relations == kb.n_relations + 1
        r_ec = instance_relation(out.vocab)
        typed = {(out.vocab.entities[h], out.vocab.entities[t]) for h, r, t in out.abox_ee if r == r_ec}
        expected = {("e0", "A"), ("e0", "B"), ("e0", "C"), ("e1", "B"), ("e1", "C"), ("e2", "C"),
                    ("e3", "A"), ("e3", "B"), ("e3", "C")}
        assert typed == expected
        assert len(out.abox_ee) == len(kb.abox_ee) + len(kb.augmented_instances)

    def test_concept_ids_appended(self):
        kb = self.fixture()
        out = degrade_concepts(kb)
        for c, name in enumerate(kb.vocab.concepts):
            assert out.vocab.entity_ids[name] == kb.n_entities + c

    def test_no_instances(self):
        kb = build_kb([("a", "r", "b")])
        out = degrade_concepts(kb)
        assert out.abox_ee == kb.abox_ee
        assert out.vocab.relations == ("r", "isInstanceOf")

    def test_name_clash_gets_suffix(self):
        kb = build_kb([("a", "isInstanceOf", "b")], [("a", "C")])
        out = degrade_concepts(kb)
        assert out.vocab.relations[-1] == "isInstanceOf_"
        assert instance_relation(out.vocab) == 1

    def test_missing_relation(self, hand_kb):
        with pytest.raises(DataError):
            instance_relation(hand_kb.vocab)
