"""Named, ordered parameter collections viewed as one flat vector."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, grad_tensors


class ParamVector:
    """Ordered list of (name, Tensor) segments with contiguous flat offsets.

    Holds either leaf parameters (for models) or gradient tensors produced by
    a backward pass; the tensors are shared, not copied.
    """

    def __init__(self, segments):
        self._segments = [(str(name), t) for name, t in segments]
        offsets = []
        off = 0
        for name, t in self._segments:
            offsets.append((name, t.data.shape, off))
            off += t.data.size
        self.segments = offsets
        self.size = off

    def __len__(self):
        return self.size

    def __iter__(self):
        return iter(self._segments)

    def names(self):
        return [name for name, _ in self._segments]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self._segments]

    def tensor(self, name: str) -> Tensor:
        for n, t in self._segments:
            if n == name:
                return t
        raise KeyError(name)

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for _, t in self._segments])

    def assign_flat(self, flat: np.ndarray) -> None:
        """Write a flat vector back into the segment tensors, in place."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {flat.shape}")
        for (_, shape, off), (_, t) in zip(self.segments, self._segments):
            n = t.data.size
            t.data = flat[off:off + n].reshape(shape).copy()

    def unflatten(self, flat: np.ndarray) -> "ParamVector":
        """New ParamVector with this one's names/shapes and the given values."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {flat.shape}")
        out = []
        for name, shape, off in self.segments:
            n = int(np.prod(shape)) if shape else 1
            out.append((name, Tensor(flat[off:off + n].reshape(shape).copy())))
        return ParamVector(out)

    def copy(self) -> "ParamVector":
        return ParamVector([(n, Tensor(t.data.copy())) for n, t in self._segments])


def grad(output: Tensor, wrt: ParamVector,
         create_higher_order: bool = False) -> ParamVector:
    """Gradient of a scalar w.r.t. a ParamVector, segment names preserved."""
    gs = grad_tensors(output, wrt.tensors(), create_higher_order=create_higher_order)
    return ParamVector(list(zip(wrt.names(), gs)))
