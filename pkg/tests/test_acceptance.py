"""Acceptance suite: each test prints one pass/fail line for its criterion.

The heavyweight criteria (5, 6, 8, 10) share one set of reference-task
pipeline runs through a session fixture so the whole suite stays well under
its time budgets.
"""

import time

import numpy as np
import pytest

from cloneguard.autodiff import Tensor
from cloneguard.data import make_id_blobs
from cloneguard.functional import kl_divergence, softmax_cross_entropy
from cloneguard.harness import (CostModel, bench_inference, format_ratio,
                                latency_parity, predict_cost,
                                reference_config, run_experiment)
from cloneguard.losses import (LossCoefficients, induction_loss,
                               isolation_loss, total_loss,
                               weighted_logprob_grad,
                               weighted_logprob_grad_materialized)
from cloneguard.nets import Classifier, load_checkpoint
from cloneguard.params import grad
from cloneguard.surgery import GradientSet, pcgrad

from conftest import fd_grad, max_rel_err, param_scalar_fn, rand_simplex


def _verdict(num, name, ok, detail):
    print(f"\n[ACCEPTANCE {num}] {name}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


def _pair(seed, dims=(3, 6, 4)):
    victim = Classifier(list(dims), "tanh", seed=seed)
    clone = Classifier(list(dims), "tanh", seed=seed + 1000)
    return victim, clone


def _batch(seed, n=4, d=3, k=4):
    r = np.random.default_rng(seed)
    return (r.normal(size=(n, d)), np.eye(k)[r.integers(0, k, size=n)],
            r.normal(size=(n, d)) + 4.0)


@pytest.fixture(scope="session")
def reference_runs(tmp_path_factory):
    """5 paired vanilla/ini runs of the reference task, plus one hard-label
    run; keyed by (mode, seed, label_mode)."""
    root = tmp_path_factory.mktemp("reference")
    t0 = time.perf_counter()
    runs = {}
    for mode in ("vanilla", "ini"):
        for seed in (1, 2, 3, 4, 5):
            out = root / f"{mode}_{seed}"
            runs[(mode, seed, "soft")] = (run_experiment(
                reference_config(seed=seed, mode=mode), out), out)
    out = root / "ini_1_hard"
    runs[("ini", 1, "hard")] = (run_experiment(
        reference_config(seed=1, mode="ini", label_mode="hard"), out), out)
    runs["elapsed"] = time.perf_counter() - t0
    runs["root"] = root
    return runs


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    worst = {"ben": 0.0, "iso": 0.0, "ig": 0.0, "ind": 0.0}
    for seed in range(10):
        victim, clone = _pair(seed)
        assert victim.num_params <= 2000
        x_id, y_id, x_ood = _batch(seed)
        losses = {
            "ben": lambda: softmax_cross_entropy(victim.logits(x_id), Tensor(y_id)),
            "iso": lambda: isolation_loss(victim, clone, x_id, y_id),
            "ig": lambda: kl_divergence(clone.predict_proba(x_ood, track=True),
                                        victim.predict_proba(x_ood, track=True)),
            "ind": lambda: induction_loss(clone, victim, x_ood, beta=1.0),
        }
        for name, fn in losses.items():
            analytic = grad(fn(), victim.params).flatten()
            numeric = fd_grad(param_scalar_fn(victim, fn), victim.params.flatten())
            worst[name] = max(worst[name], max_rel_err(analytic, numeric))
    elapsed = time.perf_counter() - t0
    ok = (max(worst[k] for k in ("ben", "iso", "ig")) <= 1e-4
          and worst["ind"] <= 1e-3 and elapsed <= 120)
    _verdict(1, "gradient correctness", ok,
             f"max rel err {worst}, {elapsed:.1f}s (limit 120s)")


def test_criterion_2_vjp_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        _, clone = _pair(seed, dims=(4, 9, 5))
        assert clone.num_params <= 2000
        r = np.random.default_rng(seed + 300)
        x = r.normal(size=(6, 4))
        w = r.random((6, 5))
        fast = weighted_logprob_grad(clone, x, w).flatten()
        slow = weighted_logprob_grad_materialized(clone, x, w)
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed <= 30
    _verdict(2, "vjp equivalence", ok,
             f"max abs dev {worst:.2e}, {elapsed:.1f}s (limit 30s)")


def test_criterion_3_pcgrad_contract():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    checked = projections = 0
    ok = True
    detail = ""
    for case in range(1000):
        n = int(rng.integers(2, 5))
        dim = int(rng.integers(8, 513))
        vecs = [rng.normal(size=dim) for _ in range(n)]
        gs = GradientSet([(f"g{i}", v) for i, v in enumerate(vecs)])
        events = []
        out = pcgrad(gs, rng_seed=case, events=events)
        projections += len(events)
        if all(v @ w >= 0 for i, v in enumerate(vecs) for w in vecs[i + 1:]):
            if not np.array_equal(out, sum(vecs[1:], vecs[0])):
                ok, detail = False, f"case {case}: conflict-free not exact"
                break
        for e in events:
            if abs(e.cos_after) > 1e-6:
                ok, detail = False, f"case {case}: residual cosine {e.cos_after}"
                break
        if n == 2:
            a, b = vecs
            d = a @ b
            a_pc = a if d >= 0 else a - d / (b @ b) * b
            b_pc = b if d >= 0 else b - d / (a @ a) * a
            scale = np.linalg.norm(a) * np.linalg.norm(b)
            if a_pc @ b < -1e-9 * scale or b_pc @ a < -1e-9 * scale:
                ok, detail = False, f"case {case}: two-gradient conflict remains"
                break
            if not np.allclose(out, a_pc + b_pc, atol=1e-10):
                ok, detail = False, f"case {case}: two-gradient sum mismatch"
                break
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed <= 10
    _verdict(3, "pcgrad contract", ok,
             detail or f"{checked} sets, {projections} projections, "
             f"{elapsed:.1f}s (limit 10s)")


def test_criterion_4_loss_identities():
    problems = []
    for seed in range(5):
        victim, clone = _pair(seed + 40)
        x_id, y_id, x_ood = _batch(seed + 40)
        v = float(isolation_loss(victim, clone, x_id,
                                 victim.predict_proba(x_id).data).data)
        if abs(v - 1.0) > 1e-10:
            problems.append(f"isolation at matched targets = {v}")
    victim, clone = _pair(60)
    clone.params.assign_flat(victim.params.flatten())
    x_id, y_id, x_ood = _batch(60)
    for beta in (0.0, 3.7, 100.0):
        v = float(induction_loss(clone, victim, x_ood, beta=beta).data)
        # the differentiability guard contributes exactly beta * sqrt(1e-24)
        if abs(v) > 1e-10 + beta * 1.1e-12:
            problems.append(f"induction at shared params (beta={beta}) = {v}")
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p, q = rand_simplex(rng, 2, 4), rand_simplex(rng, 2, 4)
        if float(kl_divergence(Tensor(p), Tensor(q)).data) < -1e-12:
            problems.append("negative KL")
            break
    victim, clone = _pair(61)
    x_id, y_id, x_ood = _batch(61)
    bundle = total_loss(victim, clone, x_id, y_id, x_ood,
                        LossCoefficients(0.0, 0.0, 0.0))
    ce = float(softmax_cross_entropy(victim.logits(x_id), Tensor(y_id)).data)
    if bundle.total != ce or bundle.total != bundle.l_ben:
        problems.append("zero-coefficient total != benign CE")
    _verdict(4, "loss identities", not problems, "; ".join(problems) or "all hold")


def test_criterion_5_directional_defense(reference_runs):
    van_ben = [reference_runs[("vanilla", s, "soft")][0].benign_accuracy
               for s in (1, 2, 3, 4, 5)]
    ini_ben = [reference_runs[("ini", s, "soft")][0].benign_accuracy
               for s in (1, 2, 3, 4, 5)]
    van_clone = [reference_runs[("vanilla", s, "soft")][0].clone_accuracy
                 for s in (1, 2, 3, 4, 5)]
    ini_clone = [reference_runs[("ini", s, "soft")][0].clone_accuracy
                 for s in (1, 2, 3, 4, 5)]
    gap = float(np.median(van_ben) - np.median(ini_ben))
    drop = float(np.median(van_clone) - np.median(ini_clone))
    elapsed = reference_runs["elapsed"]
    ok = gap <= 0.020 and drop >= 0.050 and elapsed <= 900
    _verdict(5, "directional defense reproduction", ok,
             f"benign gap {gap * 100:.2f} pts (limit 2.0), clone drop "
             f"{drop * 100:.2f} pts (floor 5.0), {elapsed:.0f}s (limit 900s); "
             f"artifacts in {reference_runs['root']}")


def test_criterion_6_hard_label_mode(reference_runs):
    report, out = reference_runs[("ini", 1, "hard")]
    ok = (0.0 <= report.clone_accuracy <= 1.0
          and 0.0 <= report.benign_accuracy <= 1.0
          and report.extra["label_mode"] == "hard"
          and (out / "report.json").exists())
    _verdict(6, "hard-label mode", ok,
             f"benign {report.benign_accuracy:.3f}, "
             f"clone {report.clone_accuracy:.3f} (validity only)")


def test_criterion_7_jbda_mechanics():
    from cloneguard.attacks import AttackConfig, QueryOracle, _augment_pool, \
        jbda_attack
    tr = make_id_blobs(1, n_classes=4, per_class=200, dim=8, spread=0.3)
    victim = Classifier([8, 16, 4], seed=0)
    cfg = AttackConfig(method="jbda", budget=10_000, seeds_count=25, rounds=3,
                       epochs_per_round=2, clone_hidden_dims=(16,))
    oracle = QueryOracle(victim, budget=10_000)
    clone = jbda_attack(oracle, tr, cfg, rng_seed=1)
    sizes_ok = clone.attack_info["pool_sizes"] == [25, 50, 100, 200]
    budget_ok = oracle.spent == clone.attack_info["spent"] == 200
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 8))
    t = np.eye(4)[rng.integers(0, 4, size=10)]
    dup_ok = np.array_equal(_augment_pool(clone, x, t, 0.0), x)
    ok = sizes_ok and budget_ok and dup_ok
    _verdict(7, "jbda mechanics", ok,
             f"pool sizes {clone.attack_info['pool_sizes']}, "
             f"spent {oracle.spent}, zero-noise duplicates: {dup_ok}")


def test_criterion_8_inference_cost(reference_runs):
    vanilla, _ = load_checkpoint(reference_runs[("vanilla", 1, "soft")][1]
                                 / "victim.ckpt")
    ini, _ = load_checkpoint(reference_runs[("ini", 1, "soft")][1]
                             / "victim.ckpt")
    table = bench_inference({"vanilla": vanilla, "ini": ini},
                            batch_sizes=[256], repetitions=400)
    parity = latency_parity(table, "ini", "vanilla")
    parity_ok = 0.95 <= parity <= 1.05
    rng = np.random.default_rng(7)
    forms_ok = True
    for _ in range(20):
        m = CostModel(m_f=float(rng.uniform(0.1, 5)),
                      m_b=float(rng.uniform(0.1, 5)),
                      s=float(rng.uniform(0.1, 5)),
                      m_h=float(rng.uniform(0.1, 5)),
                      c=int(rng.integers(2, 50)), b=int(rng.integers(1, 128)),
                      n=int(rng.integers(1, 12)))
        forms_ok &= predict_cost("vanilla", m) == m.m_f
        forms_ok &= predict_cost("ini", m) == m.m_f
        forms_ok &= predict_cost("am", m) == 2 * m.m_f
        forms_ok &= np.isclose(predict_cost("mad", m),
                               m.m_f + m.b * (m.c * m.m_b + m.s))
        forms_ok &= np.isclose(predict_cost("edm", m), m.n * m.m_f + m.m_h)
    ok = parity_ok and bool(forms_ok)
    _verdict(8, "inference-cost claim", ok,
             f"latency parity {parity:.3f} (need 0.95-1.05), "
             f"closed forms {'ok' if forms_ok else 'broken'}")


def test_criterion_9_relative_performance_arithmetic():
    got = (format_ratio(79.55, 94.71), format_ratio(69.54, 94.32),
           format_ratio(99.39, 99.46))
    ok = got == ("0.84x", "0.74x", "1.00x")
    _verdict(9, "relative-performance arithmetic", ok, f"{got}")


def test_criterion_10_determinism(reference_runs, tmp_path):
    _, first = reference_runs[("ini", 1, "soft")]
    run_experiment(reference_config(seed=1, mode="ini"), tmp_path / "again")
    mismatched = [name for name in ("report.json", "trace.jsonl",
                                    "transcript.jsonl", "victim.ckpt",
                                    "clone.ckpt", "config.json", "report.tsv")
                  if (first / name).read_bytes()
                  != (tmp_path / "again" / name).read_bytes()]
    _verdict(10, "determinism", not mismatched,
             f"byte-mismatched files: {mismatched or 'none'}")
