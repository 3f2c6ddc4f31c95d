"""Compact MLP classifiers (victim and clone roles) and a binary checkpoint format.

Checkpoint layout: magic ``INI1``, a 4-byte little-endian header length, a JSON
header (architecture, seed, metadata, architecture digest), the parameters as
little-endian float32 in segment order, and a CRC32 of the payload.

Parameters live on the float32 grid (initialization and every optimizer step
round to float32) while all math runs in float64, so save/load round trips are
bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from typing import Optional, Sequence, Union

import numpy as np

from .autodiff import Tensor, relu, tanh
from .functional import log_softmax, softmax
from .params import ParamVector

MAGIC = b"INI1"

ACTIVATIONS = {"relu": relu, "tanh": tanh}


class CheckpointError(IOError):
    """Corrupted, truncated, or architecture-mismatched checkpoint file."""


def f32_grid(values: np.ndarray) -> np.ndarray:
    """Round to the nearest float32-representable value, kept as float64."""
    return values.astype(np.float32).astype(np.float64)


class Classifier:
    """Feed-forward softmax classifier with deterministic seeded init.

    ``layer_dims`` lists (input, hidden..., n_classes). Same seed and dims
    give bit-identical initial parameters.
    """

    def __init__(self, layer_dims: Sequence[int], activation: str = "relu",
                 seed: int = 0, params: Optional[ParamVector] = None):
        self.layer_dims = [int(d) for d in layer_dims]
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise ValueError(f"bad layer_dims {layer_dims}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.seed = int(seed)
        self.params = params if params is not None else self._init_params()
        self.attack_info: dict = {}

    def _init_params(self) -> ParamVector:
        # uniform fan-in scaling, both weights and biases
        rng = np.random.default_rng(self.seed)
        segments = []
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_dims, self.layer_dims[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            w = f32_grid(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            b = f32_grid(rng.uniform(-bound, bound, size=(fan_out,)))
            segments.append((f"w{i}", Tensor(w, requires_grad=True)))
            segments.append((f"b{i}", Tensor(b, requires_grad=True)))
        return ParamVector(segments)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_params(self) -> int:
        return self.params.size

    def arch_descriptor(self) -> str:
        return f"{self.activation}:" + "-".join(map(str, self.layer_dims))

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected inputs of shape (B, {self.input_dim}), got {x.shape}")

    def logits(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        """Tracked forward pass; differentiable w.r.t. params and x."""
        h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        self._check_input(h.data)
        act = ACTIVATIONS[self.activation]
        n_layers = len(self.layer_dims) - 1
        for i in range(n_layers):
            h = h @ self.params.tensor(f"w{i}") + self.params.tensor(f"b{i}")
            if i < n_layers - 1:
                h = act(h)
        return h

    def _logits_np(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        self._check_input(h)
        n_layers = len(self.layer_dims) - 1
        for i in range(n_layers):
            h = h @ self.params.tensor(f"w{i}").data + self.params.tensor(f"b{i}").data
            if i < n_layers - 1:
                h = np.tanh(h) if self.activation == "tanh" else np.maximum(h, 0.0)
        return h

    def predict_proba(self, x: Union[Tensor, np.ndarray], track: bool = False) -> Tensor:
        """B x K softmax rows; with ``track`` the result stays differentiable."""
        if track:
            return softmax(self.logits(x))
        z = self._logits_np(x.data if isinstance(x, Tensor) else x)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return Tensor(e / e.sum(axis=1, keepdims=True))

    def log_proba(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        return log_softmax(self.logits(x))

    def hard_label(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        """One-hot of the argmax per row; ties break to the lowest class index."""
        probs = self.predict_proba(x).data
        out = np.zeros_like(probs)
        out[np.arange(probs.shape[0]), probs.argmax(axis=1)] = 1.0
        return Tensor(out)

    def clone_architecture(self, seed: int) -> "Classifier":
        return Classifier(self.layer_dims, self.activation, seed=seed)


def _arch_digest(layer_dims, activation) -> str:
    text = f"{activation}:" + "-".join(map(str, layer_dims))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(model: Classifier, path, metadata: Optional[dict] = None) -> None:
    header = {
        "layer_dims": model.layer_dims,
        "activation": model.activation,
        "seed": model.seed,
        "arch_digest": _arch_digest(model.layer_dims, model.activation),
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = model.params.flatten().astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_checkpoint(path) -> tuple[Classifier, dict]:
    """Load a checkpoint; returns (model, metadata). Rejects corrupt files."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {blob[:4]!r}")
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated before header length")
    (header_len,) = struct.unpack("<I", blob[4:8])
    header_end = 8 + header_len
    if len(blob) < header_end:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e
    layer_dims = header["layer_dims"]
    activation = header["activation"]
    if header.get("arch_digest") != _arch_digest(layer_dims, activation):
        raise CheckpointError(
            f"{path}: architecture digest mismatch (header edited or wrong file)")
    n_params = sum(a * b + b for a, b in zip(layer_dims, layer_dims[1:]))
    payload_end = header_end + 4 * n_params
    if len(blob) < payload_end + 4:
        raise CheckpointError(
            f"{path}: truncated payload ({len(blob) - header_end} bytes, "
            f"need {4 * n_params + 4})")
    payload = blob[header_end:payload_end]
    (crc,) = struct.unpack("<I", blob[payload_end:payload_end + 4])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: payload checksum failure")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    model = Classifier(layer_dims, activation, seed=header["seed"])
    model.params.assign_flat(flat)
    for _, t in model.params:
        t.requires_grad = True
    return model, header.get("metadata", {})
