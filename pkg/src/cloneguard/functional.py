"""Differentiable loss and similarity functions shared across the lab."""

from __future__ import annotations

from typing import Union

import numpy as np

from .autodiff import Tensor, clip_min, exp, log, tsum
from .params import ParamVector

#: probabilities are clamped here before any log, so hard one-hot answers
#: and saturated softmaxes never produce -inf
PROB_FLOOR = 1e-12

#: below this L2 norm a vector is considered degenerate for cosine purposes
NORM_EPSILON = 1e-12

SIMPLEX_TOL = 1e-6


def _check_simplex(t: Tensor, name: str) -> None:
    if t.data.ndim != 2:
        raise ValueError(f"{name} must be B x K, got shape {t.data.shape}")
    if np.any(t.data < -SIMPLEX_TOL):
        raise ValueError(f"{name} has negative entries")
    row_sums = t.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > SIMPLEX_TOL):
        worst = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ValueError(
            f"{name} row {worst} sums to {row_sums[worst]:.9f}, off the simplex")


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax, stabilized by a detached per-row max shift."""
    shift = Tensor(np.max(logits.data, axis=1, keepdims=True))
    z = logits - shift
    lse = log(tsum(exp(z), axis=1, keepdims=True))
    return z - lse


def softmax(logits: Tensor) -> Tensor:
    shift = Tensor(np.max(logits.data, axis=1, keepdims=True))
    e = exp(logits - shift)
    return e / tsum(e, axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean soft cross-entropy -(1/B) sum_b sum_i t_bi log softmax(logits)_bi.

    Gradient w.r.t. logits is (softmax(logits) - targets) / B.
    """
    if logits.data.shape != targets.data.shape:
        raise ValueError(
            f"logits shape {logits.data.shape} != targets shape {targets.data.shape}")
    _check_simplex(targets, "targets")
    batch = logits.data.shape[0]
    return -tsum(targets * log_softmax(logits)) / float(batch)


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Mean row-wise KL(p || q); both arguments floored at PROB_FLOOR.

    The p-side floor only enters through p*log(p), so exact zeros contribute 0.
    """
    if p.data.shape != q.data.shape:
        raise ValueError(f"p shape {p.data.shape} != q shape {q.data.shape}")
    _check_simplex(p, "p")
    _check_simplex(q, "q")
    batch = p.data.shape[0]
    log_ratio = log(clip_min(p, PROB_FLOOR)) - log(clip_min(q, PROB_FLOOR))
    return tsum(p * log_ratio) / float(batch)


VectorLike = Union[ParamVector, Tensor, list]


def _as_tensor_list(v: VectorLike) -> list[Tensor]:
    if isinstance(v, ParamVector):
        return v.tensors()
    if isinstance(v, Tensor):
        return [v]
    return list(v)


def dot(u: VectorLike, v: VectorLike) -> Tensor:
    us, vs = _as_tensor_list(u), _as_tensor_list(v)
    if len(us) != len(vs):
        raise ValueError("mismatched segment counts")
    acc = tsum(us[0] * vs[0])
    for a, b in zip(us[1:], vs[1:]):
        acc = acc + tsum(a * b)
    return acc


def norm(u: VectorLike, guard: float = 0.0) -> Tensor:
    """L2 norm; a small ``guard`` added under the sqrt keeps it differentiable
    at zero (used where the vector can legitimately vanish)."""
    sq = dot(u, u)
    if guard:
        sq = sq + Tensor(guard)
    return sq.sqrt()


def cosine_similarity(u: VectorLike, v: VectorLike) -> Tensor:
    """<u,v> / (||u|| ||v||), differentiable w.r.t. both arguments."""
    nu = float(np.sqrt(sum(np.sum(t.data ** 2) for t in _as_tensor_list(u))))
    nv = float(np.sqrt(sum(np.sum(t.data ** 2) for t in _as_tensor_list(v))))
    if nu < NORM_EPSILON:
        raise ValueError("cosine_similarity: first argument has near-zero norm")
    if nv < NORM_EPSILON:
        raise ValueError("cosine_similarity: second argument has near-zero norm")
    return dot(u, v) / (norm(u) * norm(v))
