"""T-norms, t-conorms, complement, and the Jensen-Shannon divergence.

All operations are element-wise over numpy arrays of membership degrees.
The ``*_grad`` helpers return partial derivatives used by the hand-written
backward pass; for ``min``/``max`` an exact tie routes the gradient to the
first argument.
"""

from __future__ import annotations

import enum

import numpy as np

from ontoreason.errors import FuzzyDomainError

EPS_LOG = 1e-12


class TNormKind(str, enum.Enum):
    GODEL = "godel"
    PRODUCT = "product"
    LUKASIEWICZ = "lukasiewicz"

    @classmethod
    def parse(cls, value: str | TNormKind) -> TNormKind:
        if isinstance(value, cls):
            return value
        aliases = {"min": "godel", "goedel": "godel", "gödel": "godel", "prod": "product",
                   "luk": "lukasiewicz", "łukasiewicz": "lukasiewicz"}
        key = str(value).lower()
        return cls(aliases.get(key, key))


def _check_degrees(*arrays) -> None:
    for a in arrays:
        a = np.asarray(a)
        if not np.all(np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
            raise FuzzyDomainError("membership degrees must be finite and lie in [0, 1]")


def tnorm_raw(kind: TNormKind, x, y):
    if kind is TNormKind.GODEL:
        return np.minimum(x, y)
    if kind is TNormKind.PRODUCT:
        return x * y
    return np.maximum(0.0, x + y - 1.0)


def tconorm_raw(kind: TNormKind, x, y):
    if kind is TNormKind.GODEL:
        return np.maximum(x, y)
    return 1.0 - tnorm_raw(kind, 1.0 - x, 1.0 - y)


def tnorm_grad(kind: TNormKind, x, y):
    """Partial derivatives ``(d/dx, d/dy)`` of the t-norm."""
    if kind is TNormKind.GODEL:
        first = (x <= y).astype(float)
        return first, 1.0 - first
    if kind is TNormKind.PRODUCT:
        return y, x
    active = (x + y - 1.0 > 0.0).astype(float)
    return active, active


def tconorm_grad(kind: TNormKind, x, y):
    if kind is TNormKind.GODEL:
        first = (x >= y).astype(float)
        return first, 1.0 - first
    return tnorm_grad(kind, 1.0 - x, 1.0 - y)


def tnorm(kind: TNormKind | str, x, y):
    """Fuzzy conjunction: Gödel ``min``, product ``x*y``, Łukasiewicz ``max(0, x+y-1)``."""
    _check_degrees(x, y)
    return tnorm_raw(TNormKind.parse(kind), np.asarray(x, float), np.asarray(y, float))


def tconorm(kind: TNormKind | str, x, y):
    """Dual of :func:`tnorm`: ``1 - T(1-x, 1-y)``."""
    _check_degrees(x, y)
    return tconorm_raw(TNormKind.parse(kind), np.asarray(x, float), np.asarray(y, float))


def fuzzy_not(x):
    _check_degrees(x)
    return 1.0 - np.asarray(x, float)


def _pair(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise FuzzyDomainError(f"fuzzy set length mismatch: {a.shape} vs {b.shape}")
    return a, b


def fs_and(kind: TNormKind | str, a, b):
    a, b = _pair(a, b)
    return tnorm(kind, a, b)


def fs_or(kind: TNormKind | str, a, b):
    a, b = _pair(a, b)
    return tconorm(kind, a, b)


def fs_not(a):
    return fuzzy_not(a)


# ---------------------------------------------------------------------------
# divergence


def _clamped_log(x, eps: float):
    return np.log(np.maximum(x, eps))


def js_terms(p, q, eps_log: float = EPS_LOG):
    """Unvalidated Jensen-Shannon divergence over the last axis (natural log)."""
    m = 0.5 * (p + q)
    log_m = _clamped_log(m, eps_log)
    return 0.5 * np.sum(p * (_clamped_log(p, eps_log) - log_m), axis=-1) + \
        0.5 * np.sum(q * (_clamped_log(q, eps_log) - log_m), axis=-1)


def js_grad(p, q, eps_log: float = EPS_LOG):
    """Gradients of :func:`js_terms` with respect to ``p`` and ``q``.

    Writing ``L(x) = log(max(x, eps))`` the divergence equals
    ``½ΣpL(p) + ½ΣqL(q) - ΣmL(m)``; below the clamp ``L`` is constant.
    """
    m = 0.5 * (p + q)

    def dxlx(x):
        return _clamped_log(x, eps_log) + (x > eps_log)

    gm = dxlx(m)
    return 0.5 * (dxlx(p) - gm), 0.5 * (dxlx(q) - gm)


def js_divergence(p, q, eps_log: float = EPS_LOG):
    """Jensen-Shannon divergence of two probability vectors, in nats.

    Inputs are compared along the last axis; each must be non-negative and
    sum to one within ``1e-6``. The result lies in ``[0, ln 2]``.
    """
    p, q = _pair(p, q)
    if np.any(p < 0) or np.any(q < 0):
        raise FuzzyDomainError("probability vectors must be non-negative")
    if not (np.allclose(p.sum(-1), 1.0, rtol=0, atol=1e-6) and np.allclose(q.sum(-1), 1.0, rtol=0, atol=1e-6)):
        raise FuzzyDomainError("probability vectors must sum to one")
    return js_terms(p, q, eps_log)
