"""Learned representations and scoring functions.

Two query paths share the entity and relation embeddings:

* the fuzzy path turns every anchor-rooted projection chain into a fuzzy
  set ``sigmoid((e + r1 + ... + rk) @ E_e.T)`` and combines chains with
  t-norms, t-conorms and complement; concepts are fuzzy sets
  ``sigmoid(c @ E_e.T)`` and are compared to queries by negative
  Jensen-Shannon divergence of their p-normalised memberships;
* the embedding path maps a query to a single vector (projection adds the
  relation vector, intersection mixes operands through an attention MLP,
  union takes the element-wise max) and scores entities by
  ``gamma - ||q - e||_1``.

Subsumption is scored by a two-layer MLP over concatenated concept
embeddings and instantiation by ``sigmoid(c . e)``.

Batched computations are expressed as small "plans" compiled from a list
of structurally identical queries; each plan node runs a forward pass,
keeps what it needs, and accumulates gradients on the way back.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from ontoreason.errors import DataError, UnsupportedQueryError
from ontoreason.fuzzy import (
    EPS_LOG,
    TNormKind,
    js_terms,
    tconorm_grad,
    tconorm_raw,
    tnorm_grad,
    tnorm_raw,
)
from ontoreason.query import And, Anchor, Node, Not, Or, Proj, signature

CHECKPOINT_VERSION = 1

EMBEDDINGS = ("E_e", "E_c", "E_r")
TENSOR_ORDER = (
    "E_e", "E_c", "E_r",
    "theta.W1", "theta.b1", "theta.W2", "theta.b2",
    "omega.W1", "omega.b1", "omega.W2", "omega.b2",
)


@dataclass
class ParameterStore:
    tensors: dict[str, np.ndarray]
    d: int
    gamma: float = 12.0
    tnorm: TNormKind = TNormKind.PRODUCT
    eps: float = 1e-12
    p_norm: float = 1.0

    def __post_init__(self):
        self.tnorm = TNormKind.parse(self.tnorm)
        missing = set(TENSOR_ORDER) - set(self.tensors)
        if missing:
            raise DataError(f"parameter store missing tensors {sorted(missing)}")
        d = self.d
        expected = {
            "theta.W1": (2 * d, d), "theta.b1": (d,), "theta.W2": (d, 1), "theta.b2": (1,),
            "omega.W1": (2 * d, d), "omega.b1": (d,), "omega.W2": (d, 2 * d), "omega.b2": (2 * d,),
        }
        for name in EMBEDDINGS:
            t = self.tensors[name]
            if t.ndim != 2 or t.shape[1] != d:
                raise DataError(f"{name} has shape {t.shape}, expected (n, {d})")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise DataError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")

    @property
    def E_e(self) -> np.ndarray:
        return self.tensors["E_e"]

    @property
    def E_c(self) -> np.ndarray:
        return self.tensors["E_c"]

    @property
    def E_r(self) -> np.ndarray:
        return self.tensors["E_r"]

    @property
    def n_entities(self) -> int:
        return self.E_e.shape[0]

    @property
    def n_concepts(self) -> int:
        return self.E_c.shape[0]

    @property
    def n_relations(self) -> int:
        return self.E_r.shape[0]

    def copy(self) -> ParameterStore:
        return replace(self, tensors={k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> ParameterStore:
        return replace(self, tensors={k: v.astype(dtype) for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def xavier_bound(shape: tuple[int, int]) -> float:
    return float(np.sqrt(6.0 / (shape[0] + shape[1])))


def init_params(n_entities: int, n_concepts: int, n_relations: int, d: int, seed: int = 0,
                gamma: float = 12.0, tnorm: TNormKind | str = TNormKind.PRODUCT,
                eps: float = 1e-12, p_norm: float = 1.0) -> ParameterStore:
    """Xavier-uniform weight matrices and zero biases, in a fixed draw order."""
    if d < 1:
        raise ValueError("embedding dimension must be positive")
    rng = np.random.default_rng(seed)
    shapes = {
        "E_e": (n_entities, d), "E_c": (n_concepts, d), "E_r": (n_relations, d),
        "theta.W1": (2 * d, d), "theta.b1": (d,), "theta.W2": (d, 1), "theta.b2": (1,),
        "omega.W1": (2 * d, d), "omega.b1": (d,), "omega.W2": (d, 2 * d), "omega.b2": (2 * d,),
    }
    tensors = {}
    for name in TENSOR_ORDER:
        shape = shapes[name]
        if len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            b = xavier_bound(shape)
            tensors[name] = rng.uniform(-b, b, size=shape)
    return ParameterStore(tensors, d, gamma, TNormKind.parse(tnorm), eps, p_norm)


# ---------------------------------------------------------------------------
# checkpoints: <u64 header length><JSON header><float32 tensors, little endian>


def checkpoint_bytes(params: ParameterStore) -> bytes:
    header = {
        "version": CHECKPOINT_VERSION,
        "d": params.d,
        "n_entities": params.n_entities,
        "n_concepts": params.n_concepts,
        "n_relations": params.n_relations,
        "tnorm_kind": params.tnorm.value,
        "gamma": params.gamma,
        "eps": params.eps,
        "p_norm": params.p_norm,
        "tensors": [{"name": n, "shape": list(params.tensors[n].shape)} for n in TENSOR_ORDER],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)
    for name in TENSOR_ORDER:
        buf.write(np.ascontiguousarray(params.tensors[name], dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(params: ParameterStore, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def params_from_bytes(data: bytes) -> ParameterStore:
    (n,) = struct.unpack_from("<Q", data, 0)
    header = json.loads(data[8:8 + n].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {header.get('version')}")
    offset = 8 + n
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
        offset += 4 * count
    if offset != len(data):
        raise DataError("checkpoint has trailing or missing bytes")
    return ParameterStore(tensors, header["d"], header["gamma"], TNormKind(header["tnorm_kind"]),
                          header["eps"], header["p_norm"])


def load_checkpoint(path: str | Path) -> ParameterStore:
    return params_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# gradient accumulation


@dataclass
class GradientBundle:
    """Dense gradients for the MLPs and row-sparse ones for the embeddings."""

    dense: dict[str, np.ndarray]
    sparse: dict[str, tuple[np.ndarray, np.ndarray]]

    def to_dense(self, params: ParameterStore) -> dict[str, np.ndarray]:
        out = {k: v.copy() for k, v in self.dense.items()}
        for name, (rows, values) in self.sparse.items():
            g = np.zeros_like(params.tensors[name])
            g[rows] = values
            out[name] = g
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.dense.values()) and \
            all(np.all(np.isfinite(v)) for _, v in self.sparse.values())


def segment_sum(idx: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique ids of ``idx`` and the summed rows of ``values`` for each, in a fixed order."""
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    return sidx[starts], np.add.reduceat(values[order], starts, axis=0)


class GradAccumulator:
    def __init__(self, params: ParameterStore):
        self.g = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.touched = {k: np.zeros(params.tensors[k].shape[0], dtype=bool) for k in EMBEDDINGS}

    def add_rows(self, name: str, idx: np.ndarray, values: np.ndarray) -> None:
        idx = np.asarray(idx).ravel()
        if idx.size == 0:
            return
        uniq, sums = segment_sum(idx, values.reshape(idx.size, -1))
        self.g[name][uniq] += sums
        self.touched[name][uniq] = True

    def add_dense(self, name: str, value: np.ndarray) -> None:
        self.g[name] += value
        if name in self.touched:
            self.touched[name][:] = True

    def bundle(self) -> GradientBundle:
        dense = {k: v for k, v in self.g.items() if k not in EMBEDDINGS}
        sparse = {}
        for name in EMBEDDINGS:
            rows = np.flatnonzero(self.touched[name])
            sparse[name] = (rows, self.g[name][rows])
        return GradientBundle(dense, sparse)


# ---------------------------------------------------------------------------
# fuzzy path


def distribute_projections(node: Node) -> Node:
    """Push projections through connectives so every leaf is an anchor chain.

    ``Proj(r, And(A, B))`` becomes ``And(Proj(r, A), Proj(r, B))`` and the
    same for ``Or``. A projection over a complement cannot be expressed as
    chains and is rejected.
    """
    if isinstance(node, Anchor):
        return node
    if isinstance(node, Proj):
        child = distribute_projections(node.child)
        if isinstance(child, (And, Or)):
            return type(child)(tuple(distribute_projections(Proj(node.rel, c)) for c in child.children))
        if isinstance(child, Not):
            raise UnsupportedQueryError("projection over a negated sub-query has no fuzzy-set form")
        return Proj(node.rel, child)
    if isinstance(node, Not):
        return Not(distribute_projections(node.child))
    return type(node)(tuple(distribute_projections(c) for c in node.children))


def _chain(node: Node) -> tuple[int, list[int]] | None:
    rels = []
    while isinstance(node, Proj):
        rels.append(node.rel)
        node = node.child
    if not isinstance(node, Anchor):
        return None
    return node.entity, rels[::-1]


def sigmoid(x):
    return expit(x)


class _FuzzyLeaf:
    def __init__(self, anchors: np.ndarray, rels: np.ndarray):
        self.anchors = anchors
        self.rels = rels

    def forward(self, p: ParameterStore) -> np.ndarray:
        n = self.anchors.shape[0]
        if self.rels.shape[1] == 0:
            self.fs = np.zeros((n, p.n_entities))
            self.fs[np.arange(n), self.anchors] = 1.0
            return self.fs
        self.gen = p.E_e[self.anchors] + p.E_r[self.rels].sum(axis=1)
        self.fs = sigmoid(self.gen @ p.E_e.T)
        return self.fs

    def backward(self, p: ParameterStore, dfs: np.ndarray, acc: GradAccumulator) -> None:
        if self.rels.shape[1] == 0:
            return
        dlogit = dfs * self.fs * (1.0 - self.fs)
        dgen = dlogit @ p.E_e
        acc.add_dense("E_e", dlogit.T @ self.gen)
        acc.add_rows("E_e", self.anchors, dgen)
        for j in range(self.rels.shape[1]):
            acc.add_rows("E_r", self.rels[:, j], dgen)


class _FuzzyOp:
    def __init__(self, op: str, children: list):
        self.op = op
        self.children = children

    def forward(self, p: ParameterStore) -> np.ndarray:
        outs = [c.forward(p) for c in self.children]
        if self.op == "not":
            return 1.0 - outs[0]
        fn = tnorm_raw if self.op == "and" else tconorm_raw
        self.steps = []
        acc = outs[0]
        for nxt in outs[1:]:
            self.steps.append((acc, nxt))
            acc = fn(p.tnorm, acc, nxt)
        return acc

    def backward(self, p: ParameterStore, dout: np.ndarray, acc: GradAccumulator) -> None:
        if self.op == "not":
            self.children[0].backward(p, -dout, acc)
            return
        grad_fn = tnorm_grad if self.op == "and" else tconorm_grad
        dchildren = [None] * len(self.children)
        g = dout
        for k in range(len(self.steps) - 1, -1, -1):
            left, right = self.steps[k]
            gl, gr = grad_fn(p.tnorm, left, right)
            dchildren[k + 1] = g * gr
            g = g * gl
        dchildren[0] = g
        for child, dc in zip(self.children, dchildren):
            child.backward(p, dc, acc)


def _compile_fuzzy(nodes: Sequence[Node]):
    head = nodes[0]
    chain = _chain(head)
    if chain is not None:
        anchors, rels = [], []
        for n in nodes:
            a, r = _chain(n)
            anchors.append(a)
            rels.append(r)
        return _FuzzyLeaf(np.array(anchors, dtype=np.int64),
                          np.array(rels, dtype=np.int64).reshape(len(nodes), len(chain[1])))
    if isinstance(head, Not):
        return _FuzzyOp("not", [_compile_fuzzy([n.child for n in nodes])])
    if isinstance(head, (And, Or)):
        op = "and" if isinstance(head, And) else "or"
        k = len(head.children)
        return _FuzzyOp(op, [_compile_fuzzy([n.children[i] for n in nodes]) for i in range(k)])
    raise UnsupportedQueryError(f"cannot build a fuzzy set for node {head!r}")


def compile_fuzzy(asts: Sequence[Node]):
    """Plan for a batch of queries that share one ordered shape."""
    dist = [distribute_projections(a) for a in asts]
    sig = signature(dist[0], ordered=True)
    if any(signature(a, ordered=True) != sig for a in dist[1:]):
        raise ValueError("all queries in a fuzzy plan must share the same shape")
    return _compile_fuzzy(dist)


def normalize_forward(x: np.ndarray, p_norm: float, eps: float):
    if p_norm == 1.0:
        n = x.sum(axis=-1, keepdims=True)
    else:
        n = np.sum(x ** p_norm, axis=-1, keepdims=True) ** (1.0 / p_norm)
    den = np.maximum(n, eps)
    return x / den, (n, den)


def normalize_backward(x: np.ndarray, dy: np.ndarray, cache, p_norm: float, eps: float):
    n, den = cache
    dx = dy / den
    live = n > eps
    if np.any(live):
        inner = np.sum(dy * x, axis=-1, keepdims=True) / den ** 2
        if p_norm == 1.0:
            dn = np.ones_like(x)
        else:
            dn = (x / np.where(live, n, 1.0)) ** (p_norm - 1.0)
        dx = dx - np.where(live, inner, 0.0) * dn
    return dx


# ---------------------------------------------------------------------------
# embedding path


class _EmbAnchor:
    def __init__(self, ids: np.ndarray):
        self.ids = ids

    def forward(self, p: ParameterStore) -> np.ndarray:
        return p.E_e[self.ids]

    def backward(self, p, dq, acc: GradAccumulator) -> None:
        acc.add_rows("E_e", self.ids, dq)


class _EmbProj:
    def __init__(self, rels: np.ndarray, child):
        self.rels = rels
        self.child = child

    def forward(self, p: ParameterStore) -> np.ndarray:
        return self.child.forward(p) + p.E_r[self.rels]

    def backward(self, p, dq, acc: GradAccumulator) -> None:
        acc.add_rows("E_r", self.rels, dq)
        self.child.backward(p, dq, acc)


def attention_forward(p: ParameterStore, q1: np.ndarray, q2: np.ndarray):
    W1, b1, W2, b2 = (p.tensors[f"omega.{k}"] for k in ("W1", "b1", "W2", "b2"))
    x = np.concatenate([q1, q2], axis=-1)
    pre = x @ W1 + b1
    h = np.maximum(pre, 0.0)
    a = h @ W2 + b2
    d = p.d
    out = a[..., :d] * q1 + a[..., d:] * q2
    return out, (x, pre, h, a)


def attention_backward(p: ParameterStore, q1, q2, cache, dout, acc: GradAccumulator):
    x, pre, h, a = cache
    d = p.d
    W1, W2 = p.tensors["omega.W1"], p.tensors["omega.W2"]
    da = np.concatenate([dout * q1, dout * q2], axis=-1)
    dq1 = dout * a[..., :d]
    dq2 = dout * a[..., d:]
    acc.add_dense("omega.W2", h.T @ da)
    acc.add_dense("omega.b2", da.sum(axis=0))
    dpre = (da @ W2.T) * (pre > 0.0)
    acc.add_dense("omega.W1", x.T @ dpre)
    acc.add_dense("omega.b1", dpre.sum(axis=0))
    dx = dpre @ W1.T
    return dq1 + dx[..., :d], dq2 + dx[..., d:]


class _EmbOp:
    def __init__(self, op: str, children: list):
        self.op = op
        self.children = children

    def forward(self, p: ParameterStore) -> np.ndarray:
        outs = [c.forward(p) for c in self.children]
        self.steps = []
        acc = outs[0]
        for nxt in outs[1:]:
            if self.op == "and":
                res, cache = attention_forward(p, acc, nxt)
            else:
                res, cache = np.maximum(acc, nxt), None
            self.steps.append((acc, nxt, cache))
            acc = res
        return acc

    def backward(self, p, dout, acc: GradAccumulator) -> None:
        dchildren = [None] * len(self.children)
        g = dout
        for k in range(len(self.steps) - 1, -1, -1):
            left, right, cache = self.steps[k]
            if self.op == "and":
                gl, gr = attention_backward(p, left, right, cache, g, acc)
            else:
                first = left >= right
                gl, gr = g * first, g * ~first
            dchildren[k + 1] = gr
            g = gl
        dchildren[0] = g
        for child, dc in zip(self.children, dchildren):
            child.backward(p, dc, acc)


def _compile_emb(nodes: Sequence[Node]):
    head = nodes[0]
    if isinstance(head, Anchor):
        return _EmbAnchor(np.array([n.entity for n in nodes], dtype=np.int64))
    if isinstance(head, Proj):
        return _EmbProj(np.array([n.rel for n in nodes], dtype=np.int64),
                        _compile_emb([n.child for n in nodes]))
    if isinstance(head, Not):
        raise UnsupportedQueryError("negation is not supported by the entity-embedding path")
    op = "and" if isinstance(head, And) else "or"
    return _EmbOp(op, [_compile_emb([n.children[i] for n in nodes]) for i in range(len(head.children))])


def compile_embedding(asts: Sequence[Node]):
    sig = signature(asts[0], ordered=True)
    if any(signature(a, ordered=True) != sig for a in asts[1:]):
        raise ValueError("all queries in an embedding plan must share the same shape")
    return _compile_emb(asts)


# ---------------------------------------------------------------------------
# batched scoring heads. ``ids`` arrays have shape (B, K).


class ConceptHead:
    """``-JS(P_c, Q)`` between concept fuzzy sets and query fuzzy sets.

    Logs of the normalised concept and query sets are taken once; only the
    mixture ``M = (P + Q) / 2`` is materialised per (query, candidate) pair.
    """

    def forward(self, p: ParameterStore, q_fs: np.ndarray, cids: np.ndarray) -> np.ndarray:
        self.uniq, inv = np.unique(cids, return_inverse=True)
        self.inv = inv.reshape(cids.shape)
        self.c_fs = sigmoid(p.E_c[self.uniq] @ p.E_e.T)
        self.P_u, self.p_cache = normalize_forward(self.c_fs, p.p_norm, p.eps)
        self.q_fs = q_fs
        self.Q, self.q_cache = normalize_forward(q_fs, p.p_norm, p.eps)
        self.logP_u = np.log(np.maximum(self.P_u, EPS_LOG))
        self.logQ = np.log(np.maximum(self.Q, EPS_LOG))
        P = self.P_u[self.inv]
        Q = self.Q[:, None, :]
        self.M = 0.5 * (P + Q)
        self.logM = np.log(np.maximum(self.M, EPS_LOG))
        hp = np.sum(self.P_u * self.logP_u, axis=-1)[self.inv]
        hq = np.sum(self.Q * self.logQ, axis=-1)[:, None]
        return -(0.5 * hp + 0.5 * hq - np.sum(self.M * self.logM, axis=-1))

    def backward(self, p: ParameterStore, dscore: np.ndarray, acc: GradAccumulator) -> np.ndarray:
        # d/dx of x*log(max(x, eps)) is log(max(x, eps)) + [x > eps]
        w = -0.5 * dscore[..., None]
        gm = (self.logM + (self.M > EPS_LOG)) * w
        dQ = (self.logQ + (self.Q > EPS_LOG)) * w.sum(axis=1) - gm.sum(axis=1)
        gp = (self.logP_u + (self.P_u > EPS_LOG))
        flat = self.inv.ravel()
        uniq_pos, gm_sum = segment_sum(flat, gm.reshape(-1, gm.shape[-1]))
        w_sum = np.bincount(flat, weights=w.ravel(), minlength=self.uniq.size)
        dP_u = gp * w_sum[:, None]
        dP_u[uniq_pos] -= gm_sum
        dc_fs = normalize_backward(self.c_fs, dP_u, self.p_cache, p.p_norm, p.eps)
        dlogit = dc_fs * self.c_fs * (1.0 - self.c_fs)
        acc.add_rows("E_c", self.uniq, dlogit @ p.E_e)
        acc.add_dense("E_e", dlogit.T @ p.E_c[self.uniq])
        return normalize_backward(self.q_fs, dQ, self.q_cache, p.p_norm, p.eps)


class EntityHead:
    """``gamma - ||q - e||_1``."""

    def forward(self, p: ParameterStore, q: np.ndarray, eids: np.ndarray) -> np.ndarray:
        self.eids = eids
        self.diff = q[:, None, :] - p.E_e[eids]
        return p.gamma - np.abs(self.diff).sum(axis=-1)

    def backward(self, p: ParameterStore, dscore: np.ndarray, acc: GradAccumulator) -> np.ndarray:
        g = -np.sign(self.diff) * dscore[..., None]
        acc.add_rows("E_e", self.eids, -g)
        return g.sum(axis=1)


class SubsumptionHead:
    """Two-layer ReLU network over ``c1 ⊕ c2``."""

    def forward(self, p: ParameterStore, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
        self.c1, self.c2 = c1, c2
        t = p.tensors
        self.x = np.concatenate([p.E_c[c1], p.E_c[c2]], axis=-1)
        self.pre = self.x @ t["theta.W1"] + t["theta.b1"]
        self.h = np.maximum(self.pre, 0.0)
        return (self.h @ t["theta.W2"])[..., 0] + t["theta.b2"][0]

    def backward(self, p: ParameterStore, dscore: np.ndarray, acc: GradAccumulator) -> None:
        t = p.tensors
        d = p.d
        ds = dscore[..., None]
        h2 = self.h.reshape(-1, d)
        acc.add_dense("theta.W2", h2.T @ ds.reshape(-1, 1))
        acc.add_dense("theta.b2", np.array([dscore.sum()]))
        dpre = (ds * t["theta.W2"][:, 0]) * (self.pre > 0.0)
        dpre2 = dpre.reshape(-1, d)
        acc.add_dense("theta.W1", self.x.reshape(-1, 2 * d).T @ dpre2)
        acc.add_dense("theta.b1", dpre2.sum(axis=0))
        dx = dpre @ t["theta.W1"].T
        acc.add_rows("E_c", self.c1, dx[..., :d])
        acc.add_rows("E_c", self.c2, dx[..., d:])


class InstantiationHead:
    """``sigmoid(c . e)``."""

    def forward(self, p: ParameterStore, cids: np.ndarray, eids: np.ndarray) -> np.ndarray:
        self.cids, self.eids = cids, eids
        self.c = p.E_c[cids]
        self.e = p.E_e[eids]
        self.s = sigmoid(np.sum(self.c * self.e, axis=-1))
        return self.s

    def backward(self, p: ParameterStore, dscore: np.ndarray, acc: GradAccumulator) -> None:
        dz = (dscore * self.s * (1.0 - self.s))[..., None]
        acc.add_rows("E_c", self.cids, dz * self.e)
        acc.add_rows("E_e", self.eids, dz * self.c)


# ---------------------------------------------------------------------------
# single-query API


def concept_fuzzy_set(params: ParameterStore, c: int) -> np.ndarray:
    # same reduction as score_instantiation so the two agree bit for bit
    return sigmoid(np.sum(params.E_e * params.E_c[c], axis=-1))


def all_concept_fuzzy_sets(params: ParameterStore) -> np.ndarray:
    return sigmoid(params.E_c @ params.E_e.T)


def atomic_query_fuzzy_set(params: ParameterStore, anchor: int, rels: Sequence[int]) -> np.ndarray:
    if len(rels) == 0:
        raise ValueError("an atomic query needs at least one relation")
    gen = params.E_e[anchor] + params.E_r[list(rels)].sum(axis=0)
    return sigmoid(params.E_e @ gen)


def query_fuzzy_sets(params: ParameterStore, asts: Sequence[Node]) -> np.ndarray:
    """Fuzzy sets of a batch of equally shaped queries, shape ``(B, |E|)``."""
    return compile_fuzzy(asts).forward(params)


def query_fuzzy_set(params: ParameterStore, ast: Node) -> np.ndarray:
    return query_fuzzy_sets(params, [ast])[0]


def score_concept(params: ParameterStore, q_fs: np.ndarray, c_fs: np.ndarray) -> float:
    q_fs = np.asarray(q_fs, float)
    c_fs = np.asarray(c_fs, float)
    if q_fs.shape != c_fs.shape:
        raise ValueError("fuzzy sets must have equal length")
    P, _ = normalize_forward(c_fs, params.p_norm, params.eps)
    Q, _ = normalize_forward(q_fs, params.p_norm, params.eps)
    return float(-js_terms(P, Q, EPS_LOG))


def concept_scores(params: ParameterStore, q_fs: np.ndarray, c_fs_all: np.ndarray | None = None,
                   chunk: int = 1 << 22) -> np.ndarray:
    """``S_Con`` of every concept for a batch of query fuzzy sets, ``(B, |C|)``."""
    if c_fs_all is None:
        c_fs_all = all_concept_fuzzy_sets(params)
    P, _ = normalize_forward(c_fs_all, params.p_norm, params.eps)
    Q, _ = normalize_forward(q_fs, params.p_norm, params.eps)
    n_e = P.shape[1]
    step = max(1, chunk // max(1, P.shape[0] * n_e))
    out = np.empty((Q.shape[0], P.shape[0]))
    for s in range(0, Q.shape[0], step):
        out[s:s + step] = -js_terms(P[None, :, :], Q[s:s + step, None, :], EPS_LOG)
    return out


def query_embeddings(params: ParameterStore, asts: Sequence[Node]) -> np.ndarray:
    return compile_embedding(asts).forward(params)


def query_embedding(params: ParameterStore, ast: Node) -> np.ndarray:
    return query_embeddings(params, [ast])[0]


def score_entity(params: ParameterStore, q_emb: np.ndarray, e: int) -> float:
    return float(params.gamma - np.abs(np.asarray(q_emb) - params.E_e[e]).sum())


def entity_scores(params: ParameterStore, q_emb: np.ndarray, candidates: np.ndarray | None = None,
                  chunk: int = 1 << 22) -> np.ndarray:
    """``S_Ent`` of every (or each candidate) entity for a batch of query embeddings."""
    E = params.E_e if candidates is None else params.E_e[candidates]
    step = max(1, chunk // max(1, E.shape[0] * params.d))
    out = np.empty((q_emb.shape[0], E.shape[0]))
    for s in range(0, q_emb.shape[0], step):
        out[s:s + step] = params.gamma - np.abs(q_emb[s:s + step, None, :] - E[None]).sum(axis=-1)
    return out


def score_subsumption(params: ParameterStore, c1: int, c2: int) -> float:
    head = SubsumptionHead()
    return float(head.forward(params, np.array([[c1]]), np.array([[c2]]))[0, 0])


def score_instantiation(params: ParameterStore, c: int, e: int) -> float:
    return float(sigmoid(np.sum(params.E_c[c] * params.E_e[e], axis=-1)))
