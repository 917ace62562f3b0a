"""Central finite-difference verification of the hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ontoreason.fuzzy import TNormKind
from ontoreason.model import ParameterStore, init_params
from ontoreason.query import QUERY_TYPES, And, Anchor, Node, Or, Proj
from ontoreason.training import Batch, corrupt, loss, loss_and_gradients

# tensors each head can reach
HEAD_TENSORS = {
    "con": ("E_e", "E_c", "E_r"),
    "ent": ("E_e", "E_r", "omega.W1", "omega.b1", "omega.W2", "omega.b2"),
    "sub": ("E_c", "theta.W1", "theta.b1", "theta.W2", "theta.b2"),
    "ins": ("E_e", "E_c"),
}

REL_FLOOR = 1e-5


def random_query(qtype: str, rng: np.random.Generator, n_entities: int, n_relations: int) -> Node:
    def a():
        return Anchor(int(rng.integers(n_entities)))

    def p(child):
        return Proj(int(rng.integers(n_relations)), child)

    shapes = {
        "1p": lambda: p(a()),
        "2p": lambda: p(p(a())),
        "3p": lambda: p(p(p(a()))),
        "2i": lambda: And((p(a()), p(a()))),
        "3i": lambda: And((p(a()), p(a()), p(a()))),
        "pi": lambda: And((p(p(a())), p(a()))),
        "ip": lambda: p(And((p(a()), p(a())))),
        "2u": lambda: Or((p(a()), p(a()))),
        "up": lambda: p(Or((p(a()), p(a())))),
    }
    return shapes[qtype]()


def random_params(n_entities=50, n_concepts=10, n_relations=5, d=8, seed=0, tnorm="product",
                  scale=1.0) -> ParameterStore:
    """Parameters with non-zero biases so every MLP term is exercised."""
    p = init_params(n_entities, n_concepts, n_relations, d, seed=seed, tnorm=tnorm)
    rng = np.random.default_rng(seed + 1)
    for name, t in p.tensors.items():
        if name.endswith(("b1", "b2")):
            t[...] = rng.normal(scale=0.3, size=t.shape)
        else:
            t *= scale
    return p


def make_batch(head: str, qtype: str | None, rng: np.random.Generator, p: ParameterStore,
               m: int = 4, size: int = 3) -> Batch:
    batch = Batch()
    n_e, n_c, n_r = p.n_entities, p.n_concepts, p.n_relations
    if head in ("con", "ent"):
        asts = [random_query(qtype, rng, n_e, n_r) for _ in range(size)]
        pool = n_c if head == "con" else n_e
        pos = rng.integers(pool, size=size)
        ids = np.concatenate([pos[:, None], corrupt(head, pos, m, rng, n_e, n_c)], axis=1)
        setattr(batch, head, [(asts, ids)])
    else:
        if head == "sub":
            pairs = np.stack([rng.integers(n_c, size=size), rng.integers(n_c, size=size)], axis=1)
        else:
            pairs = np.stack([rng.integers(n_c, size=size), rng.integers(n_e, size=size)], axis=1)
        neg = corrupt(head, pairs, m, rng, n_e, n_c)
        full = np.concatenate([pairs[:, None, :], neg], axis=1)
        setattr(batch, head, (full[..., 0], full[..., 1]))
    return batch


@dataclass
class CheckResult:
    head: str
    qtype: str | None
    tnorm: str
    max_rel_error: float
    n_coords: int
    zero_elsewhere: bool


def check_gradients(p: ParameterStore, batch: Batch, m: int, tensors, h_scale: float = 1e-6,
                    floor: float = REL_FLOOR) -> tuple[float, int, bool]:
    """Max per-coordinate relative error of analytic vs central-difference gradients.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Also reports whether tensors outside ``tensors`` get exactly zero gradient.
    """
    _, _, bundle = loss_and_gradients(p, batch, m)
    analytic = bundle.to_dense(p)
    worst = 0.0
    count = 0
    for name in tensors:
        t = p.tensors[name]
        flat = t.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            x = flat[i]
            h = h_scale * max(1.0, abs(x))
            flat[i] = x + h
            up = loss(p, batch, m)
            flat[i] = x - h
            down = loss(p, batch, m)
            flat[i] = x
            num = (up - down) / (2 * h)
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), floor)
            worst = max(worst, err)
            count += 1
    zero_elsewhere = all(not np.any(analytic[n]) for n in p.tensors if n not in tensors)
    return worst, count, zero_elsewhere


def run_suite(seed: int = 0, d: int = 8, n_entities: int = 50, n_concepts: int = 10, n_relations: int = 5,
              m: int = 4, tnorms=tuple(TNormKind)) -> list[CheckResult]:
    """Every head, every query shape for the query heads, every t-norm for the fuzzy path."""
    results = []
    rng = np.random.default_rng(seed)
    cases = [("con", q, k) for k in tnorms for q in QUERY_TYPES]
    cases += [("ent", q, TNormKind.PRODUCT) for q in QUERY_TYPES]
    cases += [("sub", None, TNormKind.PRODUCT), ("ins", None, TNormKind.PRODUCT)]
    for i, (head, qtype, kind) in enumerate(cases):
        p = random_params(n_entities, n_concepts, n_relations, d, seed=seed + i, tnorm=kind,
                          scale=4.0 if head == "con" else 1.0)
        batch = make_batch(head, qtype, rng, p, m)
        worst, n, zero = check_gradients(p, batch, m, HEAD_TENSORS[head])
        results.append(CheckResult(head, qtype, TNormKind.parse(kind).value, worst, n, zero))
    return results
