"""Filtered ranking metrics and answer retrieval.

Ties are resolved by the average rank: a target tied with ``k - 1`` other
candidates, below ``g`` strictly better ones, gets rank ``g + (k + 1) / 2``.
A constant scorer therefore lands in the middle of the list rather than at
the top.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ontoreason.errors import DataError
from ontoreason.kb import KnowledgeBase, Vocab
from ontoreason.model import (
    ParameterStore,
    concept_scores,
    entity_scores,
    query_embeddings,
    query_fuzzy_sets,
)
from ontoreason.query import Node, Proj, QueryInstance, answer_concepts, answer_entities, has_negation, signature

log = logging.getLogger(__name__)

LEVELS = ("TBox", "ABox")
DEFAULT_KS = (1, 3, 10)


def rank_filtered(scores: Sequence[float], target: int, known_positives: Iterable[int] = ()) -> float:
    """Average-tie rank of ``target`` after removing the other known positives."""
    scores = np.asarray(scores, dtype=float)
    if not 0 <= target < scores.shape[0]:
        raise DataError(f"target {target} is not among the {scores.shape[0]} candidates")
    return float(filtered_ranks(scores, [target], known_positives)[0])


def filtered_ranks(scores: np.ndarray, targets: Sequence[int], filter_ids: Iterable[int]) -> np.ndarray:
    """Ranks of several targets sharing one filter set.

    Every id in ``filter_ids`` and every target is removed from the
    candidate pool; each target is then ranked against the remaining pool.
    """
    targets = np.asarray(list(targets), dtype=np.int64)
    keep = np.ones(scores.shape[0], dtype=bool)
    removed = np.fromiter(filter_ids, dtype=np.int64)
    keep[removed] = False
    keep[targets] = False
    pool = np.sort(scores[keep])
    s = scores[targets]
    lo = np.searchsorted(pool, s, side="left")
    hi = np.searchsorted(pool, s, side="right")
    greater = pool.shape[0] - hi
    equal = hi - lo + 1
    return greater + (equal + 1) / 2.0


def _query_metrics(ranks: np.ndarray, ks: Sequence[int]) -> dict:
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for k in ks:
        out[f"hits@{k}"] = float(np.mean(ranks <= k))
    return out


@dataclass
class RankingReport:
    """Per level and query type: MRR, Hits@k and query count, plus an ``avg`` row."""

    ks: tuple[int, ...] = DEFAULT_KS
    rows: dict[str, dict[str, dict]] = field(default_factory=dict)

    def add(self, level: str, qtype: str, per_query: list[dict]) -> None:
        if not per_query:
            return
        keys = per_query[0].keys()
        row = {k: float(np.mean([q[k] for q in per_query])) for k in keys}
        row["n"] = len(per_query)
        self.rows.setdefault(level, {})[qtype] = row

    def finalize(self) -> RankingReport:
        for level, table in self.rows.items():
            table.pop("avg", None)
            if table:
                metrics = [k for k in next(iter(table.values())) if k != "n"]
                avg = {k: float(np.mean([r[k] for r in table.values()])) for k in metrics}
                avg["n"] = int(sum(r["n"] for r in table.values()))
                table["avg"] = avg
        return self

    def get(self, level: str, qtype: str, metric: str = "mrr") -> float | None:
        row = self.rows.get(level, {}).get(qtype)
        return None if row is None else row[metric]

    def to_json(self) -> dict:
        return {"ks": list(self.ks), "rows": self.rows}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, data: dict) -> RankingReport:
        return cls(tuple(data["ks"]), data["rows"])

    def to_text(self) -> str:
        lines = []
        metrics = ["mrr"] + [f"hits@{k}" for k in self.ks]
        for level in LEVELS:
            table = self.rows.get(level)
            if not table:
                continue
            qtypes = [q for q in table if q != "avg"] + ["avg"]
            lines.append(f"{level + ' answers':<14}" + "".join(f"{q:>8}" for q in qtypes))
            for metric in metrics:
                cells = "".join(f"{100 * table[q][metric]:8.1f}" for q in qtypes)
                lines.append(f"  {metric.upper() if metric == 'mrr' else metric.capitalize():<12}{cells}")
            lines.append(f"  {'#queries':<12}" + "".join(f"{table[q]['n']:8d}" for q in qtypes))
        return "\n".join(lines) + "\n"


def average_reports(reports: Sequence[RankingReport]) -> RankingReport:
    """Metric-wise mean of reports over the same queries, e.g. independent runs."""
    if not reports:
        raise ValueError("no reports to average")
    first = reports[0]
    rows: dict[str, dict[str, dict]] = {}
    for level, table in first.rows.items():
        for qtype, row in table.items():
            cells = [r.rows[level][qtype] for r in reports]
            avg = {k: float(np.mean([c[k] for c in cells])) for k in row if k != "n"}
            avg["n"] = row["n"]
            rows.setdefault(level, {})[qtype] = avg
    return RankingReport(first.ks, rows)


def _shape_groups(instances: Sequence[QueryInstance]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, inst in enumerate(instances):
        groups.setdefault(signature(inst.ast, ordered=True), []).append(i)
    return groups


def evaluate(params: ParameterStore, instances: Sequence[QueryInstance], kb_all: KnowledgeBase | None = None,
             ks: Sequence[int] = DEFAULT_KS, levels: Sequence[str] = LEVELS) -> RankingReport:
    """Filtered MRR and Hits@k for entity-level and concept-level answers.

    Every gold answer of a query is ranked against all candidates minus the
    other gold answers. The filter set is the instance's answer set, joined
    with the answers over ``kb_all`` when given. Per-query metrics are
    averaged over the query's answers, then over queries of one type.
    """
    per: dict[tuple[str, str], list[dict]] = {}
    skipped = 0
    for idx in _shape_groups(instances).values():
        group = [instances[i] for i in idx]
        asts = [q.ast for q in group]
        for q in group:
            if not q.entity_answers:
                raise DataError(f"instance of type {q.qtype} has no entity answers")
        full_answers = {}
        if kb_all is not None:
            full_answers = {id(q): answer_entities(kb_all, q.ast) for q in group}
        if "ABox" in levels:
            if has_negation(asts[0]):
                log.warning("skipping entity-level scores for negated shape %s", group[0].qtype)
            else:
                scores = entity_scores(params, query_embeddings(params, asts))
                for q, s in zip(group, scores):
                    filt = q.entity_answers
                    if kb_all is not None:
                        filt = filt | full_answers[id(q)]
                    ranks = filtered_ranks(s, sorted(q.entity_answers), filt)
                    per.setdefault(("ABox", q.qtype), []).append(_query_metrics(ranks, ks))
        if "TBox" in levels and params.n_concepts:
            scores = concept_scores(params, query_fuzzy_sets(params, asts))
            for q, s in zip(group, scores):
                if not q.concept_answers:
                    skipped += 1
                    continue
                filt = q.concept_answers
                if kb_all is not None:
                    filt = filt | answer_concepts(kb_all, full_answers[id(q)])
                ranks = filtered_ranks(s, sorted(q.concept_answers), filt)
                per.setdefault(("TBox", q.qtype), []).append(_query_metrics(ranks, ks))
    if skipped:
        log.info("%d instances without concept answers skipped at the TBox level", skipped)
    report = RankingReport(tuple(ks))
    for level in LEVELS:
        for (lv, qtype), rows in per.items():
            if lv == level:
                report.add(level, qtype, rows)
    return report.finalize()


def validation_metrics(params: ParameterStore, instances: Sequence[QueryInstance]) -> dict:
    """Early-stopping metric: mean of the concept- and entity-level average MRR."""
    report = evaluate(params, instances, ks=(1,))
    con = report.get("TBox", "avg")
    ent = report.get("ABox", "avg")
    present = [v for v in (con, ent) if v is not None]
    return {"con_mrr": con, "ent_mrr": ent, "metric": float(np.mean(present)) if present else 0.0}


# ---------------------------------------------------------------------------
# one-more-hop comparison


def extend_with_instance_of(ast: Node, r_ec: int) -> Node:
    """Query whose answers are the degraded concepts of ``ast``'s answers."""
    return Proj(r_ec, ast)


def one_more_hop_eval(params: ParameterStore, instances: Sequence[QueryInstance], n_entities: int,
                      n_concepts: int, r_ec: int, ks: Sequence[int] = DEFAULT_KS) -> RankingReport:
    """Rank answers with an entity-only model trained on the degraded KB.

    Entity answers are ranked among the original entities ``0..|E|-1``.
    Concept answers are ranked among the degraded concepts ``|E|..|E|+|C|-1``
    using the query extended by one instance-of hop.
    """
    if params.n_concepts != 0 or params.n_entities != n_entities + n_concepts:
        raise DataError("one-more-hop evaluation needs a checkpoint trained on the degraded KB "
                        f"({n_entities + n_concepts} entities, no concepts); got "
                        f"{params.n_entities} entities and {params.n_concepts} concepts")
    if not 0 <= r_ec < params.n_relations:
        raise DataError("instance-of relation missing from the checkpoint")
    ent_cands = np.arange(n_entities)
    con_cands = np.arange(n_entities, n_entities + n_concepts)
    per: dict[tuple[str, str], list[dict]] = {}
    for idx in _shape_groups(instances).values():
        group = [instances[i] for i in idx]
        asts = [q.ast for q in group]
        ent = entity_scores(params, query_embeddings(params, asts), ent_cands)
        con = entity_scores(params, query_embeddings(params, [extend_with_instance_of(a, r_ec) for a in asts]),
                            con_cands)
        for q, se, sc in zip(group, ent, con):
            ranks = filtered_ranks(se, sorted(q.entity_answers), q.entity_answers)
            per.setdefault(("ABox", q.qtype), []).append(_query_metrics(ranks, ks))
            if q.concept_answers:
                ranks = filtered_ranks(sc, sorted(q.concept_answers), q.concept_answers)
                per.setdefault(("TBox", q.qtype), []).append(_query_metrics(ranks, ks))
    report = RankingReport(tuple(ks))
    for level in LEVELS:
        for (lv, qtype), rows in per.items():
            if lv == level:
                report.add(level, qtype, rows)
    return report.finalize()


# ---------------------------------------------------------------------------
# inference


@dataclass(frozen=True)
class Answer:
    level: str
    id: int
    name: str
    score: float


def answer(params: ParameterStore, ast: Node, k: int = 10, vocab: Vocab | None = None) -> list[Answer]:
    """Top-``k`` entity answers followed by top-``k`` concept answers.

    Each list is sorted by descending score; ties keep the lower id first.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    out: list[Answer] = []
    if not has_negation(ast):
        s = entity_scores(params, query_embeddings(params, [ast]))[0]
        for i in np.argsort(-s, kind="stable")[:k]:
            name = vocab.entities[i] if vocab else str(i)
            out.append(Answer("ABox", int(i), name, float(s[i])))
    if params.n_concepts:
        s = concept_scores(params, query_fuzzy_sets(params, [ast]))[0]
        for i in np.argsort(-s, kind="stable")[:k]:
            name = vocab.concepts[i] if vocab else str(i)
            out.append(Answer("TBox", int(i), name, float(s[i])))
    return out
