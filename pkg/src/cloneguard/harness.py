"""Experiment orchestration: metrics, the analytic inference-cost model,
latency micro-benchmarks, and the train -> attack -> evaluate pipeline.

Reports are self-describing (every number carries the config digest that
produced it) and deterministic: wall-clock timings go to a separate file so
re-running with the same seeds reproduces ``report.json`` byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path
from typing import Optional

import numpy as np

from .attacks import AttackConfig, QueryOracle, run_attack
from .data import LabeledDataset, make_id_blobs, make_ood_shifted, make_surrogate
from .nets import Classifier, load_checkpoint, save_checkpoint
from .training import TrainConfig, accuracy, train_victim

DEFENSES = ("vanilla", "ini", "mad", "am", "edm")


class StageError(RuntimeError):
    """Pipeline failure, named after the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentReport:
    benign_accuracy: float
    clone_accuracy: float
    relative_performance: float
    relative_display: str
    attack_digest: str = ""
    victim_digest: str = ""
    seeds: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class CostModel:
    """Measured unit times and shape parameters of the analytic cost rows."""
    m_f: float      # one forward pass
    m_b: float      # one backward pass
    s: float        # one heuristic-search step (free parameter)
    m_h: float      # one hash-network forward pass
    c: int          # class count
    b: int          # batch size
    n: int          # ensemble size

    def __post_init__(self):
        if min(self.m_f, self.m_b, self.s, self.m_h) <= 0:
            raise ValueError("unit times must be positive")
        if min(self.c, self.b, self.n) < 1:
            raise ValueError("counts must be >= 1")


def format_ratio(clone_accuracy: float, benign_accuracy: float) -> str:
    """Two-decimal half-up display of clone/benign, e.g. '0.84x'."""
    ratio = Decimal(repr(clone_accuracy)) / Decimal(repr(benign_accuracy))
    return f"{ratio.quantize(Decimal('0.01'), rounding=ROUND_HALF_UP)}x"


def evaluate(clone: Classifier, victim: Classifier,
             test: LabeledDataset) -> ExperimentReport:
    """Clone and benign accuracy by argmax on an ID test set, plus the
    relative-performance ratio."""
    if test.tag != "ID":
        raise ValueError(f"test set must be tagged ID, got {test.tag!r}")
    if test.n == 0:
        raise ValueError("empty test set")
    benign = accuracy(victim, test)
    clone_acc = accuracy(clone, test)
    if benign <= 0:
        raise ValueError("benign accuracy is zero; relative performance undefined")
    return ExperimentReport(
        benign_accuracy=benign, clone_accuracy=clone_acc,
        relative_performance=clone_acc / benign,
        relative_display=format_ratio(clone_acc, benign))


def predict_cost(defense: str, model: CostModel, query: str = "batch") -> float:
    """Closed-form per-query inference cost of each defense family."""
    if query not in ("batch", "single"):
        raise ValueError(f"query must be 'batch' or 'single', got {query!r}")
    if defense in ("vanilla", "ini"):
        return model.m_f
    if defense == "mad":
        if query == "single":
            return model.m_f + model.c * model.m_b + model.s
        return model.m_f + model.b * (model.c * model.m_b + model.s)
    if defense == "am":
        return 2.0 * model.m_f
    if defense == "edm":
        if query == "single":
            return model.m_f + model.m_h
        return model.n * model.m_f + model.m_h
    raise ValueError(f"unknown defense {defense!r}; expected one of {DEFENSES}")


def bench_inference(models: dict[str, Classifier], batch_sizes: list[int],
                    repetitions: int, seed: int = 0) -> dict:
    """Median wall-clock forward time per batch, interleaving models within
    each repetition so clock drift hits them equally."""
    if repetitions < 100:
        raise ValueError("need >= 100 repetitions for stable medians")
    rng = np.random.default_rng(seed)
    table: dict = {name: {} for name in models}
    for batch in batch_sizes:
        xs = {name: rng.normal(size=(batch, m.input_dim)) for name, m in models.items()}
        for name, m in models.items():     # warmup
            m.predict_proba(xs[name])
        samples = {name: [] for name in models}
        for _ in range(repetitions):
            for name, m in models.items():
                t0 = time.perf_counter()
                m.predict_proba(xs[name])
                samples[name].append(time.perf_counter() - t0)
        for name in models:
            table[name][batch] = float(np.median(samples[name]))
    return table


def latency_parity(table: dict, a: str, b: str) -> float:
    """Max over batch sizes of median-latency ratio a/b."""
    return max(table[a][bs] / table[b][bs] for bs in table[a])


# -- pipeline ---------------------------------------------------------------


def reference_config(seed: int = 0, mode: str = "ini",
                     attack: str = "knockoff", label_mode: str = "soft",
                     budget: int = 2000) -> dict:
    """The desk-scale reference task: 4-class blobs in 16 dims."""
    return {
        "seed": seed,
        "data": {
            "n_classes": 4, "dim": 16, "per_class_train": 1000,
            "per_class_test": 250, "spread": 0.45, "spacing": 2.0,
            "ood_shift": [4.0, 4.0], "surrogate_rho": 0.25,
            "surrogate_n": 6000,
        },
        "victim": {
            "mode": mode, "epochs": 40, "batch_size": 128, "lr": 0.1,
            "momentum": 0.5, "weight_decay": 1e-3, "anneal_period": 20,
            "gamma1": 2.0, "gamma2": 2.0, "beta": 1.0, "threshold": 0.955,
            "warmup_epochs": 5, "defense_grad_cap": 3.0,
            "hidden_dims": [64, 64], "activation": "relu",
        },
        "attack": {
            "method": attack, "budget": budget, "label_mode": label_mode,
            "epochs": 30, "lr": 0.1, "batch_size": 64,
            "seeds_count": 150, "rounds": 6, "noise_rate": 0.1,
            "epochs_per_round": 10,
        },
    }


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def build_datasets(cfg: dict, seed: int) -> dict[str, LabeledDataset]:
    d = cfg["data"]
    shift = np.zeros(d["dim"])
    shift[:len(d["ood_shift"])] = d["ood_shift"]
    kw = dict(n_classes=d["n_classes"], dim=d["dim"], spread=d["spread"],
              spacing=d.get("spacing", 2.0))
    id_train = make_id_blobs(seed * 100 + 1, per_class=d["per_class_train"], **kw)
    id_test = make_id_blobs(seed * 100 + 2, per_class=d["per_class_test"], **kw)
    # defender's OOD set: own seed, distinct from the attacker's pools
    ood_base = make_id_blobs(seed * 100 + 3, per_class=d["per_class_train"], **kw)
    ood_train = make_ood_shifted(seed * 100 + 3, ood_base, shift)
    # attacker's surrogate: ID-like pool from a different seed, OOD-like pool
    # from a different seed in the same shifted family
    atk_id = make_id_blobs(seed * 100 + 4, per_class=d["per_class_train"], **kw)
    atk_ood_base = make_id_blobs(seed * 100 + 5, per_class=d["per_class_train"], **kw)
    atk_ood = make_ood_shifted(seed * 100 + 5, atk_ood_base, shift)
    surrogate = make_surrogate(seed * 100 + 6, d["surrogate_rho"],
                               atk_id, atk_ood, n=d["surrogate_n"])
    return {"id_train": id_train, "id_test": id_test, "ood_train": ood_train,
            "surrogate": surrogate}


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    v = cfg["victim"]
    return TrainConfig(
        mode=v["mode"], epochs=v["epochs"], batch_size=v["batch_size"],
        lr=v["lr"], momentum=v["momentum"], weight_decay=v["weight_decay"],
        anneal_period=v["anneal_period"], gamma1=v["gamma1"],
        gamma2=v["gamma2"], beta=v["beta"], threshold=v["threshold"],
        warmup_epochs=v.get("warmup_epochs", 0),
        defense_grad_cap=v.get("defense_grad_cap", 0.0),
        seed=seed, hidden_dims=tuple(v["hidden_dims"]),
        activation=v["activation"])


def _attack_config(cfg: dict) -> AttackConfig:
    a = cfg["attack"]
    v = cfg["victim"]
    return AttackConfig(
        method=a["method"], budget=a["budget"], label_mode=a["label_mode"],
        epochs=a["epochs"], lr=a["lr"], batch_size=a["batch_size"],
        seeds_count=a["seeds_count"], rounds=a["rounds"],
        noise_rate=a["noise_rate"], epochs_per_round=a["epochs_per_round"],
        clone_hidden_dims=tuple(v["hidden_dims"]), activation=v["activation"])


def run_experiment(config: dict, out_dir) -> ExperimentReport:
    """Full pipeline: data -> train -> attack -> evaluate -> report files.

    Stage failures raise StageError naming the stage; artifacts produced
    before the failure are left in place for diagnosis.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(config["seed"])
    timings: dict[str, float] = {}
    (out / "config.json").write_text(
        json.dumps(config, sort_keys=True, indent=2) + "\n")

    def timed(stage):
        class _T:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()

            def __exit__(self_inner, exc_type, exc, tb):
                timings[stage] = time.perf_counter() - self_inner.t0
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(stage, exc) from exc
        return _T()

    with timed("data"):
        datasets = build_datasets(config, seed)
    with timed("train"):
        victim, trace = train_victim(_train_config(config, seed),
                                     datasets["id_train"], datasets["id_test"],
                                     datasets["ood_train"])
        trace.export_jsonl(out / "trace.jsonl")
        save_checkpoint(victim, out / "victim.ckpt",
                        metadata={"config_digest": _digest(config)})
    with timed("attack"):
        atk_cfg = _attack_config(config)
        oracle = QueryOracle(victim, mode=atk_cfg.label_mode, budget=atk_cfg.budget)
        clone = run_attack(oracle, atk_cfg, rng_seed=seed * 100 + 7,
                           surrogate_data=datasets["surrogate"],
                           seed_samples=datasets["id_train"])
        oracle.export_transcript(out / "transcript.jsonl")
        save_checkpoint(clone, out / "clone.ckpt",
                        metadata={"config_digest": _digest(config)})
    with timed("evaluate"):
        report = evaluate(clone, victim, datasets["id_test"])
        report.attack_digest = _digest({"attack": config["attack"],
                                        "data": config["data"], "seed": seed})
        report.victim_digest = _digest({"victim": config["victim"],
                                        "data": config["data"], "seed": seed})
        report.seeds = {"run": seed}
        report.extra = {"attack_info": clone.attack_info,
                        "mode": config["victim"]["mode"],
                        "label_mode": config["attack"]["label_mode"]}
    (out / "report.json").write_text(report.to_json())
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    with open(out / "report.tsv", "w") as f:
        f.write("benign_accuracy\tclone_accuracy\trelative_performance\tdisplay\n")
        f.write(f"{report.benign_accuracy}\t{report.clone_accuracy}\t"
                f"{report.relative_performance}\t{report.relative_display}\n")
    return report
