"""Victim training: benign cross-entropy plus the isolation/induction
objectives, combined through gradient surgery, optimized with momentum SGD.

Every run is a pure function of its config and seeds; checkpoint bytes are
reproducible bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .data import LabeledDataset
from .functional import softmax_cross_entropy
from .losses import LossCoefficients, total_loss
from .nets import Classifier, f32_grid
from .params import grad
from .surgery import GradientSet, ProjectionEvent, pcgrad

MODES = ("vanilla", "ini", "ini+cotrain")


class TrainingDivergence(RuntimeError):
    """A loss went non-finite mid-run."""


class ThresholdViolation(RuntimeError):
    """Benign accuracy fell below the configured floor during co-training."""

    def __init__(self, report: dict):
        super().__init__(f"benign accuracy {report['benign_accuracy']:.4f} "
                         f"below threshold {report['threshold']:.4f} "
                         f"at epoch {report['epoch']}")
        self.report = report


@dataclass
class TrainConfig:
    mode: str = "ini"
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.5
    weight_decay: float = 1e-3
    anneal_period: int = 20
    anneal_factor: float = 0.1
    gamma1: float = 0.0
    gamma2: float = 0.0
    beta: float = 0.0
    threshold: float = 0.5          # minimum acceptable benign accuracy; the
                                    # defense losses are gated off while the
                                    # running benign estimate sits below it
    warmup_epochs: int = 0          # benign-only epochs before the defense
                                    # losses switch on (stabilizes small nets)
    defense_grad_cap: float = 0.0   # if > 0, each defense gradient is clipped
                                    # to this multiple of the benign gradient
                                    # norm before surgery
    seed: int = 0
    hidden_dims: tuple = (64, 64)
    activation: str = "relu"
    clone_seed_offset: int = 7919   # surrogate clone init seed = seed + offset
    kl_direction: str = "clone_to_victim"
    reseed_clone_each_epoch: bool = False
    cotrain_clone_steps: int = 0    # clone updates per victim step (cotrain mode)
    cotrain_clone_lr: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")

    def coefficients(self) -> LossCoefficients:
        return LossCoefficients(self.gamma1, self.gamma2, self.beta)


@dataclass
class TrainTrace:
    """Append-only per-step and per-epoch records of a training run."""
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def export_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for rec in self.steps:
                f.write(json.dumps({"kind": "step", **rec}, sort_keys=True) + "\n")
            for rec in self.epochs:
                f.write(json.dumps({"kind": "epoch", **rec}, sort_keys=True) + "\n")


def anneal_lr(initial: float, epoch: int, period: int, factor: float = 0.1) -> float:
    """initial * factor^floor(epoch / period)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return initial * factor ** (epoch // period)


def accuracy(model: Classifier, ds: LabeledDataset) -> float:
    pred = model.predict_proba(ds.x).data.argmax(axis=1)
    return float(np.mean(pred == ds.labels))


def _check_finite(value: float, name: str, step: int) -> float:
    if not np.isfinite(value):
        raise TrainingDivergence(f"loss {name!r} is non-finite at iteration {step}")
    return value


def _pairwise_cosines(entries) -> dict[str, float]:
    out = {}
    for a in range(len(entries)):
        for b in range(a + 1, len(entries)):
            na, ga = entries[a]
            nb, gb = entries[b]
            den = np.linalg.norm(ga) * np.linalg.norm(gb)
            out[f"{na}/{nb}"] = float(ga @ gb / den) if den > 0 else 0.0
    return out


class SgdMomentum:
    """Momentum SGD with decoupled-from-nothing classic weight decay; the
    updated parameters are rounded to the float32 grid for portable
    checkpoints."""

    def __init__(self, model: Classifier, momentum: float, weight_decay: float):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = np.zeros(model.params.size)

    def step(self, grad_flat: np.ndarray, lr: float) -> None:
        flat = self.model.params.flatten()
        g = grad_flat + self.weight_decay * flat
        self.velocity = self.momentum * self.velocity + g
        self.model.params.assign_flat(f32_grid(flat - lr * self.velocity))


def fit_soft_targets(model: Classifier, x: np.ndarray, targets: np.ndarray,
                     epochs: int, batch_size: int, lr: float, seed: int,
                     momentum: float = 0.5, weight_decay: float = 0.0) -> Classifier:
    """Train a classifier against soft target rows with momentum SGD."""
    opt = SgdMomentum(model, momentum, weight_decay)
    n = x.shape[0]
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            loss = softmax_cross_entropy(model.logits(x[idx]), Tensor(targets[idx]))
            opt.step(grad(loss, model.params).flatten(), lr)
    return model


def train_victim(cfg: TrainConfig, id_train: LabeledDataset,
                 id_test: LabeledDataset, ood: Optional[LabeledDataset] = None,
                 ) -> tuple[Classifier, TrainTrace]:
    """Run the full defense training loop; returns the model and its trace.

    Per iteration (ini modes): benign CE and the isolation cosine on an ID
    batch, the information gain and its clone-gradient norm on an OOD batch,
    gradient surgery over the four coefficient-scaled victim gradients, then
    one SGD step. Vanilla mode uses the benign gradient alone.
    """
    if cfg.mode != "vanilla" and ood is None:
        raise ValueError(f"mode {cfg.mode!r} requires an OOD dataset")
    dims = [id_train.dim, *cfg.hidden_dims, id_train.n_classes]
    victim = Classifier(dims, cfg.activation, seed=cfg.seed)
    clone = Classifier(dims, cfg.activation, seed=cfg.seed + cfg.clone_seed_offset)
    clone_opt = SgdMomentum(clone, cfg.momentum, 0.0)
    opt = SgdMomentum(victim, cfg.momentum, cfg.weight_decay)
    coeffs = cfg.coefficients()
    trace = TrainTrace()
    y_train = id_train.one_hot()
    step = 0
    # running benign-accuracy estimate enforcing the accuracy-floor constraint
    benign_ema = 0.0
    ema_decay = 0.9
    for epoch in range(cfg.epochs):
        lr = anneal_lr(cfg.lr, epoch, cfg.anneal_period, cfg.anneal_factor)
        if cfg.reseed_clone_each_epoch and cfg.mode != "vanilla":
            clone = Classifier(dims, cfg.activation,
                               seed=cfg.seed + cfg.clone_seed_offset + epoch + 1)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(id_train.n)
        ood_order = rng.permutation(ood.n) if ood is not None else None
        ood_pos = 0
        for lo in range(0, id_train.n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            x_id, y_id = id_train.x[idx], y_train[idx]
            record = {"step": step, "epoch": epoch, "lr": lr}
            batch_acc = float(np.mean(
                victim.predict_proba(x_id).data.argmax(axis=1) == y_id.argmax(axis=1)))
            benign_ema = ema_decay * benign_ema + (1.0 - ema_decay) * batch_acc
            gated = benign_ema < cfg.threshold
            record["benign_ema"] = benign_ema
            if cfg.mode == "vanilla" or epoch < cfg.warmup_epochs or gated:
                loss = softmax_cross_entropy(victim.logits(x_id), Tensor(y_id))
                _check_finite(float(loss.data), "ben", step)
                record["losses"] = {"ben": float(loss.data)}
                opt.step(grad(loss, victim.params).flatten(), lr)
            else:
                take = min(cfg.batch_size, ood.n)
                if ood_pos + take > ood.n:
                    ood_pos = 0
                x_ood = ood.x[ood_order[ood_pos:ood_pos + take]]
                ood_pos += take
                bundle = total_loss(victim, clone, x_id, y_id, x_ood, coeffs,
                                    direction=cfg.kl_direction)
                for name in ("ben", "iso", "ig", "ind"):
                    _check_finite(getattr(bundle, f"l_{name}"), name, step)
                record["losses"] = {"ben": bundle.l_ben, "iso": bundle.l_iso,
                                    "ig": bundle.l_ig, "ind": bundle.l_ind,
                                    "total": bundle.total}
                g_ben = bundle.grads["ben"].flatten()
                scaled = [
                    ("iso", coeffs.gamma1 * bundle.grads["iso"].flatten()),
                    ("ig", coeffs.gamma2 * bundle.grads["ig"].flatten()),
                    ("ig_grad_norm",
                     coeffs.gamma2 * coeffs.beta * bundle.grads["ig_grad_norm"].flatten()),
                ]
                if cfg.defense_grad_cap > 0:
                    cap = cfg.defense_grad_cap * float(np.linalg.norm(g_ben))
                    scaled = [(name, g if (n := float(np.linalg.norm(g))) <= cap
                               else g * (cap / n)) for name, g in scaled]
                entries = GradientSet([("ben", g_ben), *scaled])
                record["pre_surgery_cosines"] = _pairwise_cosines(entries.entries)
                events: list[ProjectionEvent] = []
                combined = pcgrad(entries, rng_seed=cfg.seed * 1000003 + step,
                                  events=events)
                record["projections"] = [asdict(e) for e in events]
                opt.step(combined, lr)
                if cfg.mode == "ini+cotrain" and cfg.cotrain_clone_steps > 0:
                    targets = victim.predict_proba(x_ood).data
                    before = float(softmax_cross_entropy(
                        clone.logits(x_ood), Tensor(targets)).data)
                    for _ in range(cfg.cotrain_clone_steps):
                        c_loss = softmax_cross_entropy(
                            clone.logits(x_ood), Tensor(targets))
                        clone_opt.step(grad(c_loss, clone.params).flatten(),
                                       cfg.cotrain_clone_lr)
                    after = float(softmax_cross_entropy(
                        clone.logits(x_ood), Tensor(targets)).data)
                    record["clone_loss_before"] = before
                    record["clone_loss_after"] = after
            trace.steps.append(record)
            step += 1
        benign = accuracy(victim, id_test)
        trace.epochs.append({"epoch": epoch, "benign_accuracy": benign, "lr": lr})
        if cfg.mode == "ini+cotrain" and benign < cfg.threshold:
            raise ThresholdViolation({"epoch": epoch, "benign_accuracy": benign,
                                      "threshold": cfg.threshold,
                                      "trace_steps": len(trace.steps)})
    final_benign = accuracy(victim, id_test)
    victim.attack_info = {}
    trace.epochs.append({"epoch": cfg.epochs, "benign_accuracy": final_benign,
                         "threshold": cfg.threshold,
                         "threshold_met": bool(final_benign >= cfg.threshold),
                         "final": True})
    return victim, trace


def adversarial_cotrain(cfg: TrainConfig, id_train: LabeledDataset,
                        id_test: LabeledDataset, ood: LabeledDataset,
                        ) -> tuple[Classifier, TrainTrace]:
    """Alternating mode: the surrogate clone chases the victim's outputs while
    the victim runs its defense updates. With zero clone steps this collapses
    to the default (untrained-clone) procedure."""
    if cfg.mode != "ini+cotrain":
        raise ValueError("adversarial_cotrain requires mode 'ini+cotrain'")
    return train_victim(cfg, id_train, id_test, ood)
