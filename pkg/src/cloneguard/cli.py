"""Command-line entry point: train, attack, eval, bench, and run subcommands."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .attacks import QueryOracle, run_attack
from .harness import (StageError, bench_inference, build_datasets, evaluate,
                      latency_parity, reference_config, run_experiment,
                      _attack_config, _train_config)
from .nets import load_checkpoint, save_checkpoint
from .training import train_victim


def _load_config(args) -> dict:
    if args.config:
        with open(args.config) as f:
            cfg = yaml.safe_load(f)
    else:
        cfg = reference_config()
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "mode", None):
        cfg["victim"]["mode"] = args.mode
    if getattr(args, "attack", None):
        cfg["attack"]["method"] = args.attack
    if getattr(args, "label_mode", None):
        cfg["attack"]["label_mode"] = args.label_mode
    if getattr(args, "budget", None) is not None:
        cfg["attack"]["budget"] = args.budget
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    datasets = build_datasets(cfg, cfg["seed"])
    victim, trace = train_victim(_train_config(cfg, cfg["seed"]),
                                 datasets["id_train"], datasets["id_test"],
                                 datasets["ood_train"])
    save_checkpoint(victim, out / "victim.ckpt")
    trace.export_jsonl(out / "trace.jsonl")
    final = trace.epochs[-1]
    print(f"trained {cfg['victim']['mode']} victim: "
          f"benign accuracy {final['benign_accuracy']:.4f} "
          f"(threshold met: {final['threshold_met']})")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    victim, _ = load_checkpoint(args.victim)
    datasets = build_datasets(cfg, cfg["seed"])
    atk = _attack_config(cfg)
    oracle = QueryOracle(victim, mode=atk.label_mode, budget=atk.budget)
    clone = run_attack(oracle, atk, rng_seed=cfg["seed"] * 100 + 7,
                       surrogate_data=datasets["surrogate"],
                       seed_samples=datasets["id_train"])
    save_checkpoint(clone, out / "clone.ckpt")
    oracle.export_transcript(out / "transcript.jsonl")
    print(f"attack {atk.method}/{atk.label_mode} spent "
          f"{oracle.spent}/{oracle.budget} queries")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    victim, _ = load_checkpoint(args.victim)
    clone, _ = load_checkpoint(args.clone)
    datasets = build_datasets(cfg, cfg["seed"])
    report = evaluate(clone, victim, datasets["id_test"])
    (out / "report.json").write_text(report.to_json())
    print(f"benign {report.benign_accuracy:.4f}  clone {report.clone_accuracy:.4f}  "
          f"relative {report.relative_display}")
    return 0


def cmd_bench(args) -> int:
    models = {}
    for spec in args.checkpoint:
        name, _, path = spec.partition("=")
        model, _ = load_checkpoint(path or name)
        models[name] = model
    table = bench_inference(models, batch_sizes=args.batch_sizes,
                            repetitions=args.repetitions)
    print(json.dumps(table, indent=2))
    if len(models) == 2:
        a, b = models
        print(f"latency parity {a}/{b}: {latency_parity(table, a, b):.4f}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg, _out_dir(args))
    print(f"benign {report.benign_accuracy:.4f}  clone {report.clone_accuracy:.4f}  "
          f"relative {report.relative_display}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloneguard",
        description="Train, attack, and evaluate stealing-resistant classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", default="runs/latest")

    p = sub.add_parser("train", help="train a victim model")
    common(p)
    p.add_argument("--mode", choices=["vanilla", "ini"], default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="steal a trained victim")
    common(p)
    p.add_argument("--victim", required=True, help="victim checkpoint path")
    p.add_argument("--attack", choices=["knockoff", "jbda"], default=None)
    p.add_argument("--label-mode", choices=["soft", "hard"], default=None)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="evaluate a clone against its victim")
    common(p)
    p.add_argument("--victim", required=True)
    p.add_argument("--clone", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="micro-benchmark inference latency")
    p.add_argument("checkpoint", nargs="+", help="name=path checkpoint specs")
    p.add_argument("--batch-sizes", type=int, nargs="+", default=[1, 128])
    p.add_argument("--repetitions", type=int, default=500)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("run", help="full train -> attack -> eval pipeline")
    common(p)
    p.add_argument("--mode", choices=["vanilla", "ini"], default=None)
    p.add_argument("--attack", choices=["knockoff", "jbda"], default=None)
    p.add_argument("--label-mode", choices=["soft", "hard"], default=None)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # argparse-level misuse, IO errors
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
