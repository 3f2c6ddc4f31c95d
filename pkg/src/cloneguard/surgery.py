"""PCGrad-style gradient surgery: project conflicting task gradients onto
each other's orthogonal complement before the optimizer step."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .params import ParamVector

logger = logging.getLogger(__name__)


@dataclass
class ProjectionEvent:
    """One triggered projection: cosines of the pair before and after."""
    target: str
    against: str
    cos_before: float
    cos_after: float


@dataclass
class GradientSet:
    """Ordered (loss name, flat gradient) pairs of equal length."""
    entries: list[tuple[str, np.ndarray]]

    def __post_init__(self):
        flats = []
        for name, g in self.entries:
            g = np.asarray(g, dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise ValueError(f"gradient {name!r} contains non-finite values")
            flats.append((name, g))
        sizes = {g.size for _, g in flats}
        if len(sizes) > 1:
            raise ValueError(f"gradient lengths differ: {sorted(sizes)}")
        self.entries = flats

    @classmethod
    def from_param_vectors(cls, named: list[tuple[str, ParamVector]]) -> "GradientSet":
        return cls([(name, pv.flatten()) for name, pv in named])


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def pcgrad(grads: GradientSet, rng_seed: int,
           events: Optional[list[ProjectionEvent]] = None) -> np.ndarray:
    """Combine task gradients with pairwise conflict projection.

    For each gradient g_i (order shuffled by ``rng_seed``), iterate over the
    other ORIGINAL gradients g_j in shuffled order; whenever <g_i, g_j> < 0,
    subtract the projection of g_i onto g_j. The result is the sum of all
    projected gradients, accumulated in the original entry order.

    A zero-norm g_j that a projection would divide by is skipped with a
    logged warning.
    """
    entries = grads.entries
    if not entries:
        raise ValueError("pcgrad needs at least one gradient")
    n = len(entries)
    if n == 1:
        return entries[0][1].copy()
    rng = np.random.default_rng(rng_seed)
    projected: list[Optional[np.ndarray]] = [None] * n
    for i in rng.permutation(n):
        name_i, gi = entries[i][0], entries[i][1].copy()
        for j in rng.permutation(n):
            if j == i:
                continue
            name_j, gj = entries[j]
            dot = float(gi @ gj)
            if dot >= 0:
                continue
            norm_sq = float(gj @ gj)
            if norm_sq == 0.0:
                logger.warning("pcgrad: skipping projection of %r against "
                               "zero-norm gradient %r", name_i, name_j)
                continue
            if events is not None:
                before = _cos(gi, gj)
            gi = gi - (dot / norm_sq) * gj
            if events is not None:
                events.append(ProjectionEvent(name_i, name_j, before, _cos(gi, gj)))
        projected[i] = gi
    total = projected[0]
    for g in projected[1:]:
        total = total + g
    return total
