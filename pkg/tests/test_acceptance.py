"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The verdict lines are printed in the ``acceptance criteria`` section of the
terminal summary (see ``conftest.py``). Run with::

    pytest tests/test_acceptance.py -v
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from dnfer.config import ExperimentConfig
from dnfer.core import TrainConfig, compute_thresholds, select_clean, train
from dnfer.data import generate_blobs, load_csv, load_idx
from dnfer.losses import cross_entropy, symmetric_kl, total_loss
from dnfer.metrics import evaluate
from dnfer.nn import backward, checkpoint_bytes, lr_schedule, parse_checkpoint, softmax

from helpers import (brute_cross_entropy, brute_objective, brute_select, brute_symmetric_kl,
                     brute_thresholds, finite_difference_grads, random_model)

FIXTURES = Path(__file__).parent / "fixtures"
SEEDS = range(5)


@pytest.fixture
def verdict(acceptance_report):
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        acceptance_report[number] = line
        print(line)
        return ok
    return record


def random_posteriors(rng, batch, classes):
    return softmax(rng.normal(scale=rng.uniform(0.5, 4.0), size=(batch, classes)))


# -- 1: equation oracles ---------------------------------------------------------

def test_criterion_1_equation_oracles(verdict):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    selection_mismatches = 0
    n_batches = 150
    for _ in range(n_batches):
        b, c = int(rng.integers(1, 33)), int(rng.integers(2, 7))
        probs = random_posteriors(rng, b, c)
        other = random_posteriors(rng, b, c)
        labels = rng.integers(0, c, size=b)

        t = compute_thresholds(probs, labels)
        ref_t = brute_thresholds(probs, labels, c)
        for k in range(c):
            if k in ref_t:
                worst = max(worst, abs(t.get(k) - ref_t[k]))
            elif t.get(k) is not None:
                selection_mismatches += 1
        mask = select_clean(probs, labels, t)
        selection_mismatches += int(np.sum(mask.flags != np.array(brute_select(probs, labels, ref_t))))

        mean, per = cross_entropy(probs, labels)
        ref_mean, ref_per = brute_cross_entropy(probs, labels)
        worst = max(worst, abs(mean - ref_mean), float(np.max(np.abs(per - ref_per))))
        worst = max(worst, abs(symmetric_kl(probs, other) - brute_symmetric_kl(probs, other)))

        alpha, l_sup, l_cons = rng.uniform(), rng.uniform(0, 5), rng.uniform(0, 5)
        worst = max(worst, abs(total_loss(alpha, l_sup, l_cons)
                               - (alpha * l_cons + (1.0 - alpha) * l_sup)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and selection_mismatches == 0 and elapsed < 10
    verdict(1, ok, f"{n_batches} batches, max abs err {worst:.2e}, "
                   f"{selection_mismatches} selection mismatches, {elapsed:.1f}s")
    assert ok


# -- 2: gradient correctness ------------------------------------------------------------

def test_criterion_2_gradients(verdict):
    start = time.perf_counter()
    worst = 0.0
    checks = 0
    for seed in range(20):
        rng = np.random.default_rng(2000 + seed)
        dims = [3, int(rng.integers(2, 9)), int(rng.integers(2, 5))]
        model = random_model(dims, rng)
        batch = int(rng.integers(2, 17))
        weak = rng.normal(size=(batch, 3))
        strong = weak + rng.normal(scale=0.5, size=weak.shape)
        labels = rng.integers(0, dims[-1], size=batch)
        flags = rng.random(batch) < 0.6
        for alpha in (0.0, 0.5, 1.0):
            grads = backward(model, weak, strong, labels, flags, alpha)
            numeric = finite_difference_grads(
                lambda m: brute_objective(m, weak, strong, labels, flags, alpha), model, h=1e-5)
            for a, n in zip(grads.params(), numeric):
                rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-7)
                worst = max(worst, float(rel.max()))
            checks += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30
    verdict(2, ok, f"{checks} model/alpha pairs, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


# -- 3: selection invariants ----------------------------------------------------------

def test_criterion_3_selection_invariants(verdict):
    rng = np.random.default_rng(303)
    violations = {"threshold range": 0, "empty class": 0, "monotone": 0, "permutation": 0}
    n_batches = 1200
    for _ in range(n_batches):
        b, c = int(rng.integers(1, 65)), int(rng.integers(2, 9))
        probs = random_posteriors(rng, b, c)
        labels = rng.integers(0, c, size=b)
        t = compute_thresholds(probs, labels)
        flags = select_clean(probs, labels, t).flags
        for k in np.unique(labels):
            if not 0.0 < t.get(k) < 1.0:
                violations["threshold range"] += 1
            members = labels == k
            if not flags[members].any():
                violations["empty class"] += 1
            p = probs[members, k]
            sel = flags[members]
            if sel.any() and (~sel).any() and p[~sel].max() >= p[sel].min():
                violations["monotone"] += 1
        perm = rng.permutation(b)
        permuted = select_clean(probs[perm], labels[perm],
                                compute_thresholds(probs[perm], labels[perm])).flags
        if not np.array_equal(permuted, flags[perm]):
            violations["permutation"] += 1
    total = sum(violations.values())
    detail = ", ".join(f"{k} {v}" for k, v in violations.items())
    verdict(3, total == 0, f"{n_batches} batches, violations: {detail}")
    assert total == 0


# -- shared benchmark runs (criteria 4, 5, 6) -----------------------------------------

class Benchmark:
    """Lazily trains each (mode, noise) cell of the default blobs benchmark over five seeds."""

    def __init__(self):
        self.runs = {}
        self.seconds = {}

    def get(self, mode, noise):
        key = (mode, noise)
        if key not in self.runs:
            cfg = ExperimentConfig(mode=mode, noise_rate=noise)
            start = time.perf_counter()
            runs = []
            for seed in SEEDS:
                tr, te, _ = cfg.load_datasets(seed)
                run, _ = train(tr, te, cfg.train_config(seed), cfg.policy_for(tr))
                runs.append(run)
            self.runs[key] = runs
            self.seconds[key] = time.perf_counter() - start
        return self.runs[key]

    def mean_acc(self, mode, noise):
        return float(np.mean([r.final_test_acc for r in self.get(mode, noise)]))

    def mean_mem(self, mode, noise):
        return float(np.mean([r.final_memorization_rate for r in self.get(mode, noise)]))

    def elapsed(self, *keys):
        return sum(self.seconds[k] for k in keys)


@pytest.fixture(scope="module")
def benchmark():
    return Benchmark()


def test_criterion_4_noise_robustness(benchmark, verdict):
    acc_gap = benchmark.mean_acc("dnfer", 0.3) - benchmark.mean_acc("baseline", 0.3)
    mem_gap = benchmark.mean_mem("baseline", 0.3) - benchmark.mean_mem("dnfer", 0.3)
    elapsed = benchmark.elapsed(("dnfer", 0.3), ("baseline", 0.3))
    ok = acc_gap >= 0.03 and mem_gap >= 0.10 and elapsed < 300
    verdict(4, ok, f"test acc dnfer {benchmark.mean_acc('dnfer', 0.3):.4f} vs baseline "
                   f"{benchmark.mean_acc('baseline', 0.3):.4f} (gap {100 * acc_gap:+.1f} pts); "
                   f"memorization baseline {benchmark.mean_mem('baseline', 0.3):.4f} vs dnfer "
                   f"{benchmark.mean_mem('dnfer', 0.3):.4f} (gap {100 * mem_gap:+.1f} pts); "
                   f"{elapsed:.0f}s")
    assert ok


def test_criterion_5_component_ablation(benchmark, verdict):
    modes = ("dnfer", "baseline", "sup-only", "cons-only")
    noisy = {m: benchmark.mean_acc(m, 0.3) for m in modes}
    clean = {m: benchmark.mean_acc(m, 0.0) for m in modes}
    beats = noisy["dnfer"] >= noisy["sup-only"] and noisy["dnfer"] >= noisy["cons-only"]
    spread = max(clean.values()) - min(clean.values())
    elapsed = benchmark.elapsed(*[(m, n) for m in modes for n in (0.0, 0.3)])
    ok = beats and spread <= 0.03 and elapsed < 600
    fmt = lambda d: ", ".join(f"{m} {v:.4f}" for m, v in d.items())  # noqa: E731
    verdict(5, ok, f"30% noise: {fmt(noisy)}; 0% noise: {fmt(clean)} "
                   f"(spread {100 * spread:.1f} pts); {elapsed:.0f}s")
    assert ok


def test_criterion_6_schedule_and_precision(benchmark, verdict):
    cfg = ExperimentConfig().train_config(0)
    schedule_errors = 0
    precisions = []
    for noise in (0.3, 0.0):
        for run in benchmark.get("dnfer", noise):
            for rec in run.epochs:
                expected = 0.0 if rec.epoch < cfg.warm_epochs else cfg.alpha
                schedule_errors += rec.alpha != expected
            if noise:
                precisions += [r.selection_precision for r in run.epochs
                               if r.epoch >= cfg.warm_epochs]
    precision = float(np.mean(precisions))
    ok = schedule_errors == 0 and precision > 0.70
    verdict(6, ok, f"alpha schedule errors {schedule_errors}; "
                   f"mean post-warm-up selection precision {precision:.4f} at 30% noise")
    assert ok


# -- 7: determinism and formats --------------------------------------------------------

def test_criterion_7_determinism_and_formats(verdict):
    problems = []
    cfg = TrainConfig(max_epochs=4, warm_epochs=1, batch_size=32, hidden=(16,), seed=9)
    cfg_data = ExperimentConfig(blobs_counts=(60, 40, 20), blobs_test_per_class=20,
                                blobs_dim=6, noise_rate=0.3)
    tr, te, _ = cfg_data.load_datasets(9)
    run_a, model = train(tr, te, cfg)
    run_b, _ = train(*cfg_data.load_datasets(9)[:2], cfg)
    if run_a.to_jsonl() != run_b.to_jsonl():
        problems.append("RunMetrics differ between identical runs")

    restored, _ = parse_checkpoint(checkpoint_bytes(model))
    acc, _, _ = evaluate(restored, te)
    if acc != run_a.final_test_acc:
        problems.append(f"checkpoint accuracy {acc} != {run_a.final_test_acc}")

    csv_ds = load_csv(FIXTURES / "tiny.csv")
    if len(csv_ds) != 2 or csv_ds.features.tolist() != [[0.5, -1.25], [2.0, 3.5]]:
        problems.append("tiny.csv parsed wrongly")
    noisy_csv = load_csv(FIXTURES / "tiny_noisy.csv")
    if len(noisy_csv) != 3 or noisy_csv.flipped.tolist() != [False, True, False]:
        problems.append("tiny_noisy.csv parsed wrongly")
    idx = load_idx(FIXTURES / "tiny-images.idx3", FIXTURES / "tiny-labels.idx1")
    expected_pixels = np.array([[0, 255, 51, 102], [255, 255, 0, 0], [10, 20, 30, 40]]) / 255.0
    if (len(idx) != 3 or idx.labels.tolist() != [1, 0, 2]
            or not np.allclose(idx.features, expected_pixels, atol=1e-15)):
        problems.append("IDX fixture parsed wrongly")
    verdict(7, not problems, "; ".join(problems) or
            "byte-identical RunMetrics, exact checkpoint accuracy, fixtures parse as expected")
    assert not problems


# -- 8: hyperparameter defaults -----------------------------------------------------

def test_criterion_8_defaults(verdict):
    cfg = TrainConfig()
    lr_ok = all(math.isclose(lr_schedule(0.001, e), 0.001 * 0.95 ** e, rel_tol=1e-12)
                for e in range(100))
    ok = lr_ok and cfg.batch_size == 128 and cfg.warm_epochs == 5 and cfg.alpha == 0.5 \
        and cfg.initial_lr == 0.001 and cfg.lr_decay == 0.95
    verdict(8, ok, f"lr schedule {'ok' if lr_ok else 'wrong'}, batch {cfg.batch_size}, "
                   f"warm-up {cfg.warm_epochs}, alpha {cfg.alpha}, lr {cfg.initial_lr}")
    assert ok
