"""Deterministic synthetic ID / OOD / surrogate datasets plus flat-file IO.

Gaussian blob clusters stand in for image datasets: the defense only needs a
controllable distribution gap between benign queries and stealing queries,
which the shift vector and the surrogate mixture fraction provide explicitly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

#: lattice step between adjacent class centers; at the default spread 0.3 this
#: puts neighboring clusters ~6.7 sigma apart, so the task is cleanly learnable
CENTER_SPACING = 2.0


class SeparationError(ValueError):
    """OOD shift too small relative to the cluster spread."""


@dataclass(frozen=True)
class LabeledDataset:
    x: np.ndarray                 # N x D float64
    labels: np.ndarray            # N int64 in [0, n_classes)
    tag: str                      # "ID" | "OOD" | "surrogate"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.x.ndim != 2 or self.x.shape[0] == 0:
            raise ValueError(f"x must be non-empty N x D, got shape {self.x.shape}")
        if self.labels.shape != (self.x.shape[0],):
            raise ValueError("labels must be one per row")
        if self.tag not in ("ID", "OOD", "surrogate"):
            raise ValueError(f"unknown tag {self.tag!r}")
        k = self.n_classes
        if self.labels.min() < 0 or self.labels.max() >= k:
            raise ValueError(f"labels out of range [0, {k})")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.provenance.get("n_classes", self.labels.max() + 1))

    def one_hot(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.labels]


def class_centers(n_classes: int, dim: int, spacing: float = CENTER_SPACING) -> np.ndarray:
    """Class centers on a fixed square lattice in the first two coordinates."""
    if dim < 2:
        raise ValueError("need dim >= 2 for the center lattice")
    side = int(np.ceil(np.sqrt(n_classes)))
    centers = np.zeros((n_classes, dim))
    for k in range(n_classes):
        centers[k, 0] = (k % side) * spacing
        centers[k, 1] = (k // side) * spacing
    return centers


def make_id_blobs(seed: int, n_classes: int, per_class: int, dim: int,
                  spread: float, spacing: float = CENTER_SPACING) -> LabeledDataset:
    """K Gaussian clusters with lattice centers, exactly balanced classes."""
    if n_classes < 2 or dim < 2 or per_class < 1:
        raise ValueError(
            f"invalid sizes: n_classes={n_classes}, per_class={per_class}, dim={dim}")
    rng = np.random.default_rng(seed)
    centers = class_centers(n_classes, dim, spacing)
    labels = np.repeat(np.arange(n_classes), per_class)
    x = centers[labels] + rng.normal(0.0, spread, size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return LabeledDataset(
        x[order], labels[order], "ID",
        provenance={"generator": "id_blobs", "seed": int(seed),
                    "n_classes": int(n_classes), "per_class": int(per_class),
                    "spread": float(spread), "spacing": float(spacing)})


def make_ood_shifted(seed: int, base: LabeledDataset, shift,
                     relabel_classes: bool = True) -> LabeledDataset:
    """Translate a base blob dataset by ``shift`` (and optionally permute its
    labels) to form an OOD set with disjoint support up to Gaussian tails.

    The shift norm must exceed twice the base spread, otherwise the OOD
    assumption the defense relies on would not hold.
    """
    shift = np.asarray(shift, dtype=np.float64)
    if shift.shape != (base.dim,):
        raise ValueError(f"shift must have dim {base.dim}, got {shift.shape}")
    sigma = float(base.provenance.get("spread", 0.0))
    if np.linalg.norm(shift) <= 2.0 * sigma:
        raise SeparationError(
            f"shift norm {np.linalg.norm(shift):.4f} must exceed 2*spread "
            f"= {2.0 * sigma:.4f} for a usable OOD set")
    rng = np.random.default_rng(seed)
    labels = base.labels
    if relabel_classes:
        perm = rng.permutation(base.n_classes)
        labels = perm[labels]
    return LabeledDataset(
        base.x + shift, labels, "OOD",
        provenance={"generator": "ood_shifted", "seed": int(seed),
                    "n_classes": base.n_classes,
                    "base_seed": base.provenance.get("seed"),
                    "spread": sigma, "shift": shift.tolist(),
                    "relabeled": bool(relabel_classes)})


def make_surrogate(seed: int, id_like_fraction: float,
                   id_pool: LabeledDataset, ood_pool: LabeledDataset,
                   n: int) -> LabeledDataset:
    """Attacker's query pool: a row-wise mixture with fraction ``rho`` drawn
    (with replacement) from an ID-family pool and the rest from an OOD-family
    pool. ``rho`` is the experiment's distribution-gap knob."""
    rho = float(id_like_fraction)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"id_like_fraction must be in [0, 1], got {rho}")
    if id_pool.dim != ood_pool.dim:
        raise ValueError("pools have mismatched dims")
    rng = np.random.default_rng(seed)
    from_id = rng.random(n) < rho
    x = np.empty((n, id_pool.dim))
    labels = np.empty(n, dtype=np.int64)
    idx_id = rng.integers(0, id_pool.n, size=n)
    idx_ood = rng.integers(0, ood_pool.n, size=n)
    x[from_id] = id_pool.x[idx_id[from_id]]
    labels[from_id] = id_pool.labels[idx_id[from_id]]
    x[~from_id] = ood_pool.x[idx_ood[~from_id]]
    labels[~from_id] = ood_pool.labels[idx_ood[~from_id]]
    return LabeledDataset(
        x, labels, "surrogate",
        provenance={"generator": "surrogate_mixture", "seed": int(seed),
                    "n_classes": max(id_pool.n_classes, ood_pool.n_classes),
                    "id_like_fraction": rho,
                    "id_like_count": int(from_id.sum()),
                    "id_seed": id_pool.provenance.get("seed"),
                    "ood_seed": ood_pool.provenance.get("seed")})


def center_separation(id_ds: LabeledDataset, ood_ds: LabeledDataset) -> float:
    """Mean distance between matched ID and OOD per-class sample means."""
    dists = []
    for k in range(id_ds.n_classes):
        a = id_ds.x[id_ds.labels == k].mean(axis=0)
        dists.append(min(np.linalg.norm(a - ood_ds.x[ood_ds.labels == j].mean(axis=0))
                         for j in range(ood_ds.n_classes)
                         if np.any(ood_ds.labels == j)))
    return float(np.mean(dists))


# -- flat-file IO -----------------------------------------------------------


def export_flatfile(ds: LabeledDataset, path) -> None:
    """CSV rows of float features followed by an integer label column."""
    with open(path, "w") as f:
        for row, label in zip(ds.x, ds.labels):
            f.write(",".join(repr(float(v)) for v in row) + f",{label}\n")


def load_flatfile(path, n_classes: int, tag: str = "ID") -> LabeledDataset:
    """Load a CSV flat file (float features + trailing integer label).

    Schema violations are reported with the offending row number. Provenance
    records the SHA-256 digest of the file bytes.
    """
    with open(path, "rb") as f:
        blob = f.read()
    digest = hashlib.sha256(blob).hexdigest()
    xs, labels = [], []
    width = None
    for r, line in enumerate(blob.decode().splitlines()):
        if not line.strip():
            continue
        parts = line.split(",")
        if width is None:
            width = len(parts)
            if width < 2:
                raise ValueError(f"{path}: row {r}: need >= 1 feature plus a label")
        elif len(parts) != width:
            raise ValueError(
                f"{path}: row {r}: expected {width} columns, found {len(parts)}")
        try:
            xs.append([float(v) for v in parts[:-1]])
            label = int(parts[-1])
        except ValueError as e:
            raise ValueError(f"{path}: row {r}: unparsable value: {e}") from e
        if not 0 <= label < n_classes:
            raise ValueError(
                f"{path}: row {r}: label {label} out of range [0, {n_classes})")
        labels.append(label)
    if not xs:
        raise ValueError(f"{path}: no data rows")
    return LabeledDataset(
        np.array(xs), np.array(labels), tag,
        provenance={"generator": "flatfile", "path": str(path),
                    "sha256": digest, "n_classes": int(n_classes)})
