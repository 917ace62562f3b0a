"""Four-task training: concept retrieval, entity retrieval, subsumption, instantiation.

Every step draws one mini-batch per active task, scores each positive
against ``m`` corrupted copies, and minimises

    L = -1/(4m) * sum_task mean_batch sum_i log sigmoid(S+ - S-_i)

with Adam. Gradients are computed by the hand-written backward passes in
:mod:`ontoreason.model`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_expit

from ontoreason.errors import CorruptionError, TrainingDivergedError
from ontoreason.fuzzy import TNormKind
from ontoreason.kb import KnowledgeBase
from ontoreason.model import (
    EMBEDDINGS,
    ConceptHead,
    EntityHead,
    GradAccumulator,
    GradientBundle,
    InstantiationHead,
    ParameterStore,
    SubsumptionHead,
    compile_embedding,
    compile_fuzzy,
    init_params,
)
from ontoreason.query import Node, QueryInstance, signature

log = logging.getLogger(__name__)

TASKS = ("con", "ent", "sub", "ins")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    d: int = 256
    batch_size: int = 512
    m: int = 4
    max_steps: int = 10_000
    valid_interval: int = 50
    patience: int = 3
    seed: int = 0
    tnorm: str = "product"
    gamma: float = 12.0
    eps: float = 1e-12
    p_norm: float = 1.0
    use_sub: bool = True
    use_ins: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 1 or self.d < 1 or self.valid_interval < 1:
            raise ValueError("batch_size, d and valid_interval must be positive")
        self.tnorm = TNormKind.parse(self.tnorm).value

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# negatives


def uniform_excluding(rng: np.random.Generator, pool: int, exclude: np.ndarray, m: int) -> np.ndarray:
    """``(B, m)`` ids drawn uniformly from ``range(pool)`` minus ``exclude[b]``."""
    if pool < 2:
        raise CorruptionError(f"candidate pool of size {pool} cannot be corrupted")
    exclude = np.asarray(exclude, dtype=np.int64).reshape(-1, 1)
    draw = rng.integers(0, pool - 1, size=(exclude.shape[0], m))
    return draw + (draw >= exclude)


def corrupt(task: str, positives: np.ndarray, m: int, rng: np.random.Generator,
            n_entities: int, n_concepts: int) -> np.ndarray:
    """Vectorised corruption of a batch of positives.

    ``con``/``ent`` positives are ids, shape ``(B,)``, and the result is
    ``(B, m)``. ``sub``/``ins`` positives are pairs, shape ``(B, 2)``, and
    the result is ``(B, m, 2)``.
    """
    if task == "con":
        return uniform_excluding(rng, n_concepts, positives, m)
    if task == "ent":
        return uniform_excluding(rng, n_entities, positives, m)
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    out = np.repeat(positives[:, None, :], m, axis=1)
    if task == "sub":
        side = (rng.random(size=(positives.shape[0], m)) < 0.5).astype(np.int64)
        orig = np.take_along_axis(out, side[..., None], axis=2)[..., 0]
        flat = uniform_excluding(rng, n_concepts, orig.ravel(), 1).reshape(orig.shape)
        np.put_along_axis(out, side[..., None], flat[..., None], axis=2)
        return out
    if task == "ins":
        k = math.ceil(m / 2)
        out[:, :k, 0] = uniform_excluding(rng, n_concepts, positives[:, 0], k)
        if m - k:
            out[:, k:, 1] = uniform_excluding(rng, n_entities, positives[:, 1], m - k)
        return out
    raise ValueError(f"unknown task {task!r}")


def sample_negatives(task: str, positive, m: int, rng: np.random.Generator,
                     n_entities: int, n_concepts: int) -> list:
    """Corrupted copies of a single positive.

    ``con``: concept id; ``ent``: entity id; ``sub``: ``(sub, super)``;
    ``ins``: ``(concept, entity)``. Concept-side corruptions of ``ins`` come
    first, then entity-side ones.
    """
    if task in ("con", "ent"):
        return corrupt(task, np.array([positive]), m, rng, n_entities, n_concepts)[0].tolist()
    out = corrupt(task, np.array([positive]), m, rng, n_entities, n_concepts)[0]
    return [tuple(x) for x in out.tolist()]


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    """Per-task positives (column 0) and negatives (columns 1..m).

    ``con``/``ent`` are lists of ``(asts, ids)`` groups where all queries in
    a group share one ordered shape and ``ids`` has shape ``(B_g, 1 + m)``.
    ``sub`` is a pair ``(c1, c2)`` and ``ins`` a pair ``(c, e)`` of
    ``(B, 1 + m)`` arrays.
    """

    con: list[tuple[list[Node], np.ndarray]] = field(default_factory=list)
    ent: list[tuple[list[Node], np.ndarray]] = field(default_factory=list)
    sub: tuple[np.ndarray, np.ndarray] | None = None
    ins: tuple[np.ndarray, np.ndarray] | None = None


def group_by_shape(asts: Sequence[Node], ids: np.ndarray) -> list[tuple[list[Node], np.ndarray]]:
    groups: dict[str, list[int]] = {}
    for i, ast in enumerate(asts):
        groups.setdefault(signature(ast, ordered=True), []).append(i)
    return [([asts[i] for i in idx], ids[idx]) for idx in groups.values()]


def query_task_batch(task: str, instances: Sequence[QueryInstance], m: int, rng: np.random.Generator,
                     n_entities: int, n_concepts: int):
    attr = "sorted_concepts" if task == "con" else "sorted_entities"
    pos = np.array([_pick(rng, getattr(inst, attr)) for inst in instances], dtype=np.int64)
    neg = corrupt(task, pos, m, rng, n_entities, n_concepts)
    ids = np.concatenate([pos[:, None], neg], axis=1)
    groups: dict[str, list[int]] = {}
    for i, inst in enumerate(instances):
        groups.setdefault(inst.shape, []).append(i)
    return [([instances[i].ast for i in idx], ids[idx]) for idx in groups.values()]


def pair_task_batch(task: str, pairs: np.ndarray, m: int, rng: np.random.Generator,
                    n_entities: int, n_concepts: int):
    neg = corrupt(task, pairs, m, rng, n_entities, n_concepts)
    full = np.concatenate([pairs[:, None, :], neg], axis=1)
    return full[..., 0], full[..., 1]


def _pick(rng: np.random.Generator, ordered: Sequence[int]) -> int:
    return ordered[int(rng.integers(len(ordered)))]


class Stream:
    """Endless reshuffled pass over ``items``; batches never exceed the stream."""

    def __init__(self, items: Sequence, batch_size: int, rng: np.random.Generator):
        if len(items) == 0:
            raise ValueError("empty stream")
        self.items = items
        self.batch_size = min(batch_size, len(items))
        self.rng = rng
        self.order = np.empty(0, dtype=np.int64)
        self.pos = 0

    def next(self) -> list:
        idx = []
        while len(idx) < self.batch_size:
            if self.pos == len(self.order):
                self.order = self.rng.permutation(len(self.items))
                self.pos = 0
            take = min(self.batch_size - len(idx), len(self.order) - self.pos)
            idx.extend(self.order[self.pos:self.pos + take].tolist())
            self.pos += take
        return [self.items[i] for i in idx]


# ---------------------------------------------------------------------------
# loss and gradients


def _pair_loss(scores: np.ndarray, norm: float):
    """Loss contribution and d/dscores for a ``(B, 1 + m)`` score block."""
    diff = scores[:, :1] - scores[:, 1:]
    loss = -log_expit(diff).sum() * norm
    ddiff = -expit(-diff) * norm
    dscores = np.concatenate([ddiff.sum(axis=1, keepdims=True), -ddiff], axis=1)
    return loss, dscores


def _check_finite(name: str, scores: np.ndarray) -> None:
    if not np.all(np.isfinite(scores)):
        raise TrainingDivergedError(f"non-finite {name} scores")


def _run(params: ParameterStore, batch: Batch, m: int, want_grads: bool):
    acc = GradAccumulator(params) if want_grads else None
    per_task = {t: 0.0 for t in TASKS}
    base = 1.0 / (4.0 * m)

    n_con = sum(ids.shape[0] for _, ids in batch.con)
    for asts, ids in batch.con:
        plan = compile_fuzzy(asts)
        q_fs = plan.forward(params)
        head = ConceptHead()
        s = head.forward(params, q_fs, ids)
        _check_finite("concept", s)
        loss, ds = _pair_loss(s, base / n_con)
        per_task["con"] += loss
        if acc is not None:
            dq_fs = head.backward(params, ds, acc)
            plan.backward(params, dq_fs, acc)

    n_ent = sum(ids.shape[0] for _, ids in batch.ent)
    for asts, ids in batch.ent:
        plan = compile_embedding(asts)
        q = plan.forward(params)
        head = EntityHead()
        s = head.forward(params, q, ids)
        _check_finite("entity", s)
        loss, ds = _pair_loss(s, base / n_ent)
        per_task["ent"] += loss
        if acc is not None:
            plan.backward(params, head.backward(params, ds, acc), acc)

    if batch.sub is not None:
        c1, c2 = batch.sub
        head = SubsumptionHead()
        s = head.forward(params, c1, c2)
        _check_finite("subsumption", s)
        loss, ds = _pair_loss(s, base / c1.shape[0])
        per_task["sub"] = loss
        if acc is not None:
            head.backward(params, ds, acc)

    if batch.ins is not None:
        c, e = batch.ins
        head = InstantiationHead()
        s = head.forward(params, c, e)
        _check_finite("instantiation", s)
        loss, ds = _pair_loss(s, base / c.shape[0])
        per_task["ins"] = loss
        if acc is not None:
            head.backward(params, ds, acc)

    total = float(sum(per_task.values()))
    if not math.isfinite(total):
        raise TrainingDivergedError("non-finite loss")
    return total, {k: float(v) for k, v in per_task.items()}, acc


def loss(params: ParameterStore, batch: Batch, m: int) -> float:
    return _run(params, batch, m, want_grads=False)[0]


def loss_and_gradients(params: ParameterStore, batch: Batch, m: int):
    total, per_task, acc = _run(params, batch, m, want_grads=True)
    bundle = acc.bundle()
    if not bundle.all_finite():
        raise TrainingDivergedError("non-finite gradient")
    return total, per_task, bundle


def gradients(params: ParameterStore, batch: Batch, m: int) -> GradientBundle:
    return loss_and_gradients(params, batch, m)[2]


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ParameterStore, **kw) -> AdamState:
        return cls({k: np.zeros_like(t) for k, t in params.tensors.items()},
                   {k: np.zeros_like(t) for k, t in params.tensors.items()}, **kw)


def adam_step(params: ParameterStore, state: AdamState, grads: GradientBundle, lr: float) -> None:
    """In-place Adam update with bias correction.

    Embedding rows absent from the sparse gradients keep both their value
    and their moment estimates; bias correction uses the global step.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step

    def update(name, g, rows=None):
        sel = slice(None) if rows is None else rows
        m = state.beta1 * state.m[name][sel] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name][sel] + (1.0 - state.beta2) * (g * g)
        state.m[name][sel] = m
        state.v[name][sel] = v
        params.tensors[name][sel] -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)

    for name, g in grads.dense.items():
        update(name, g)
    for name, (rows, g) in grads.sparse.items():
        if rows.size:
            update(name, g, rows)


# ---------------------------------------------------------------------------
# training loop


class EarlyStopper:
    """Stop after ``patience`` consecutive evaluations without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_step: int | None = None
        self.bad = 0

    def update(self, metric: float, step: int) -> bool:
        """Record ``metric``; returns True when it is a new best."""
        if metric > self.best:
            self.best = metric
            self.best_step = step
            self.bad = 0
            return True
        self.bad += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.patience


@dataclass
class TrainData:
    """Positive instances per task."""

    con: list[QueryInstance]
    ent: list[QueryInstance]
    sub: np.ndarray
    ins: np.ndarray
    n_entities: int
    n_concepts: int
    n_relations: int

    @classmethod
    def from_kb(cls, kb: KnowledgeBase, instances: Sequence[QueryInstance]) -> TrainData:
        return cls(
            con=[q for q in instances if q.concept_answers],
            ent=[q for q in instances if q.entity_answers],
            sub=kb.subsumptions,
            ins=kb.instances[:, ::-1].copy(),
            n_entities=kb.n_entities,
            n_concepts=kb.n_concepts,
            n_relations=kb.n_relations,
        )


@dataclass
class TrainResult:
    params: ParameterStore
    log: list[dict]
    best_step: int | None
    best_metric: float | None
    steps_run: int
    stopped_early: bool


def active_tasks(config: TrainConfig, data: TrainData) -> list[str]:
    """Tasks trained under ``config``; concept tasks are off for a concept-free KB."""
    if data.n_concepts == 0:
        return ["ent"]
    tasks = ["con", "ent"]
    if config.use_sub:
        tasks.append("sub")
    if config.use_ins:
        tasks.append("ins")
    return tasks


def train(data: TrainData, config: TrainConfig, valid: Sequence[QueryInstance] = (),
          metric_fn: Callable[[ParameterStore, Sequence[QueryInstance]], dict] | None = None,
          on_log: Callable[[dict], None] | None = None,
          params: ParameterStore | None = None) -> TrainResult:
    """Run the training loop and return the best parameters seen.

    With validation queries, every ``valid_interval`` steps the mean of the
    concept-level and entity-level MRR is computed; training stops after
    ``patience`` evaluations without improvement. Without validation
    queries the final parameters are returned.
    """
    from ontoreason.evaluation import validation_metrics

    metric_fn = metric_fn or validation_metrics
    seeds = np.random.SeedSequence(config.seed).spawn(6)
    if params is None:
        params = init_params(data.n_entities, data.n_concepts, data.n_relations, config.d,
                             seed=int(seeds[0].generate_state(1)[0]), gamma=config.gamma,
                             tnorm=config.tnorm, eps=config.eps, p_norm=config.p_norm)
    tasks = active_tasks(config, data)
    items = {"con": data.con, "ent": data.ent, "sub": data.sub, "ins": data.ins}
    for t in tasks:
        if len(items[t]) == 0:
            raise ValueError(f"training stream for task {t!r} is empty")
    streams = {t: Stream(items[t], config.batch_size, np.random.default_rng(seeds[i + 1]))
               for i, t in enumerate(TASKS) if t in tasks}
    neg_rng = np.random.default_rng(seeds[5])
    state = AdamState.zeros(params)
    stopper = EarlyStopper(config.patience)
    best = params.copy()
    records: list[dict] = []

    def emit(rec):
        records.append(rec)
        if on_log is not None:
            on_log(rec)

    log.info("training tasks %s for at most %d steps", tasks, config.max_steps)
    step = 0
    stopped = False
    for step in range(config.max_steps):
        batch = Batch()
        for t in tasks:
            chunk = streams[t].next()
            if t in ("con", "ent"):
                groups = query_task_batch(t, chunk, config.m, neg_rng, data.n_entities, data.n_concepts)
                setattr(batch, t, groups)
            else:
                setattr(batch, t, pair_task_batch(t, np.asarray(chunk), config.m, neg_rng,
                                                  data.n_entities, data.n_concepts))
        total, per_task, grads = loss_and_gradients(params, batch, config.m)
        emit({"step": step, "loss": total, "per_task": per_task, "lr": config.lr})
        adam_step(params, state, grads, config.lr)
        if not params.all_finite():
            raise TrainingDivergedError(f"parameters became non-finite at step {step}")
        if valid and (step + 1) % config.valid_interval == 0:
            metrics = metric_fn(params, valid)
            improved = stopper.update(metrics["metric"], step + 1)
            if improved:
                best = params.copy()
            emit({"step": step + 1, "con_mrr": metrics.get("con_mrr"), "ent_mrr": metrics.get("ent_mrr"),
                  "metric": metrics["metric"], "best": improved})
            if stopper.should_stop:
                stopped = True
                break
    steps_run = step + 1 if config.max_steps else 0
    if stopper.best_step is None:
        best = params
    return TrainResult(best, records, stopper.best_step, None if stopper.best_step is None else stopper.best,
                       steps_run, stopped)
