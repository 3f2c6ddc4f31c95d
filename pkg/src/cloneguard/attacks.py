"""Black-box functionality-stealing simulators driving a query-budgeted oracle.

Attack code sees only the oracle's ``query`` surface: no victim parameters,
no victim gradients. Anything exposing ``query(x) -> probs`` (including a
lookup table) can stand in for the real victim.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tensor, grad_tensors
from .data import LabeledDataset
from .functional import softmax_cross_entropy
from .nets import Classifier
from .training import fit_soft_targets

logger = logging.getLogger(__name__)


class BudgetExceededError(RuntimeError):
    """A query would push the spent counter past the budget."""


class QueryOracle:
    """Black-box wrapper around a victim: soft or hard label answers under a
    strict query budget, with an auditable transcript."""

    def __init__(self, victim: Classifier, mode: str = "soft",
                 budget: int = 0, keep_transcript: bool = True):
        if mode not in ("soft", "hard"):
            raise ValueError(f"label mode must be 'soft' or 'hard', got {mode!r}")
        if budget < 0:
            raise ValueError("budget must be non-negative")
        self._victim = victim
        self.mode = mode
        self.budget = int(budget)
        self.spent = 0
        self.n_classes = victim.n_classes
        self.input_dim = victim.input_dim
        self._transcript: Optional[list] = [] if keep_transcript else None

    def query(self, x: np.ndarray) -> np.ndarray:
        """Answer a batch; increments spent by the batch size."""
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[0]
        if self.spent + batch > self.budget:
            raise BudgetExceededError(
                f"query of {batch} samples would exceed budget "
                f"({self.spent}/{self.budget} spent)")
        if self.mode == "soft":
            answer = self._victim.predict_proba(x).data
        else:
            answer = self._victim.hard_label(x).data
        self.spent += batch
        if self._transcript is not None:
            self._transcript.append((x.copy(), answer.copy()))
        return answer

    def remaining(self) -> int:
        return self.budget - self.spent

    def export_transcript(self, path) -> None:
        """Line-delimited JSON: one record per answered batch."""
        if self._transcript is None:
            raise ValueError("oracle was created without a transcript")
        with open(path, "w") as f:
            for i, (x, y) in enumerate(self._transcript):
                f.write(json.dumps({"batch": i, "n": x.shape[0],
                                    "x": x.tolist(), "answer": y.tolist()},
                                   sort_keys=True) + "\n")
            f.write(json.dumps({"spent": self.spent, "budget": self.budget,
                                "mode": self.mode}, sort_keys=True) + "\n")


@dataclass
class AttackConfig:
    method: str = "knockoff"        # knockoff | jbda
    budget: int = 2000
    label_mode: str = "soft"
    epochs: int = 30                # clone training epochs (total, knockoff)
    lr: float = 0.1
    batch_size: int = 64
    momentum: float = 0.5
    clone_hidden_dims: tuple = (64, 64)
    activation: str = "relu"
    # JBDA specifics
    seeds_count: int = 150
    rounds: int = 6
    noise_rate: float = 0.1
    epochs_per_round: int = 10
    query_chunk: int = 256          # oracle batch size when labeling

    def __post_init__(self):
        if self.method not in ("knockoff", "jbda"):
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.label_mode not in ("soft", "hard"):
            raise ValueError(f"unknown label mode {self.label_mode!r}")
        if min(self.budget, self.epochs, self.batch_size, self.seeds_count,
               self.epochs_per_round) < 0 or self.noise_rate < 0:
            raise ValueError("counts and noise_rate must be non-negative")


def _fresh_clone(oracle, cfg: AttackConfig, rng_seed: int) -> Classifier:
    dims = [oracle.input_dim, *cfg.clone_hidden_dims, oracle.n_classes]
    return Classifier(dims, cfg.activation, seed=rng_seed)


def _label_pool(oracle, x: np.ndarray, chunk: int) -> np.ndarray:
    answers = [oracle.query(x[lo:lo + chunk]) for lo in range(0, x.shape[0], chunk)]
    return np.concatenate(answers, axis=0)


def knockoff_attack(oracle, surrogate_data: LabeledDataset,
                    cfg: AttackConfig, rng_seed: int) -> Classifier:
    """Label ``budget`` draws from the surrogate pool through the oracle, then
    distill a fresh clone against the answers with soft cross-entropy."""
    if surrogate_data.n == 0:
        raise ValueError("empty surrogate set")
    clone = _fresh_clone(oracle, cfg, rng_seed)
    if cfg.budget == 0:
        logger.warning("knockoff_attack: zero budget, returning untrained clone")
        clone.attack_info = {"spent": 0, "method": "knockoff"}
        return clone
    rng = np.random.default_rng(rng_seed)
    replace = surrogate_data.n < cfg.budget
    idx = rng.choice(surrogate_data.n, size=cfg.budget, replace=replace)
    x = surrogate_data.x[idx]
    targets = _label_pool(oracle, x, cfg.query_chunk)
    fit_soft_targets(clone, x, targets, epochs=cfg.epochs,
                     batch_size=cfg.batch_size, lr=cfg.lr, seed=rng_seed,
                     momentum=cfg.momentum)
    clone.attack_info = {"spent": oracle.spent, "method": "knockoff"}
    return clone


def _augment_pool(clone: Classifier, x: np.ndarray, targets: np.ndarray,
                  noise_rate: float) -> np.ndarray:
    """x' = x + lambda * sign(d/dx CE(clone(x), oracle label))."""
    xt = Tensor(x, requires_grad=True)
    loss = softmax_cross_entropy(clone.logits(xt), Tensor(targets))
    (gx,) = grad_tensors(loss, [xt])
    return x + noise_rate * np.sign(gx.data)


def jbda_attack(oracle, seed_samples: LabeledDataset,
                cfg: AttackConfig, rng_seed: int) -> Classifier:
    """Jacobian-based dataset augmentation: start from in-distribution seeds,
    alternate clone training with sign-of-input-gradient synthesis; the pool
    doubles each round. Stops cleanly (truncation flagged) if the budget runs
    out mid-round."""
    clone = _fresh_clone(oracle, cfg, rng_seed)
    pool_x = seed_samples.x[:cfg.seeds_count].copy()
    pool_sizes = [pool_x.shape[0]]
    truncated = False
    try:
        pool_y = _label_pool(oracle, pool_x, cfg.query_chunk)
    except BudgetExceededError:
        clone.attack_info = {"spent": oracle.spent, "method": "jbda",
                             "truncated": True, "pool_sizes": pool_sizes}
        return clone
    for rnd in range(cfg.rounds):
        fit_soft_targets(clone, pool_x, pool_y, epochs=cfg.epochs_per_round,
                         batch_size=cfg.batch_size, lr=cfg.lr,
                         seed=rng_seed + 1 + rnd, momentum=cfg.momentum)
        new_x = _augment_pool(clone, pool_x, pool_y, cfg.noise_rate)
        try:
            new_y = _label_pool(oracle, new_x, cfg.query_chunk)
        except BudgetExceededError:
            truncated = True
            break
        pool_x = np.concatenate([pool_x, new_x], axis=0)
        pool_y = np.concatenate([pool_y, new_y], axis=0)
        pool_sizes.append(pool_x.shape[0])
    else:
        # final training pass on the completed pool
        fit_soft_targets(clone, pool_x, pool_y, epochs=cfg.epochs_per_round,
                         batch_size=cfg.batch_size, lr=cfg.lr,
                         seed=rng_seed + 1 + cfg.rounds, momentum=cfg.momentum)
    clone.attack_info = {"spent": oracle.spent, "method": "jbda",
                         "truncated": truncated, "pool_sizes": pool_sizes}
    return clone


def run_attack(oracle, cfg: AttackConfig, rng_seed: int,
               surrogate_data: Optional[LabeledDataset] = None,
               seed_samples: Optional[LabeledDataset] = None) -> Classifier:
    if cfg.method == "knockoff":
        if surrogate_data is None:
            raise ValueError("knockoff attack requires surrogate_data")
        return knockoff_attack(oracle, surrogate_data, cfg, rng_seed)
    if seed_samples is None:
        raise ValueError("jbda attack requires seed_samples")
    return jbda_attack(oracle, seed_samples, cfg, rng_seed)
