"""Acceptance gate: one test per primary criterion, each printing a PASS/FAIL line.

The MNIST training criterion (and the trained-model half of the flip-rate
criterion) needs the IDX files under ``$ROTBNN_MNIST`` (default
``/root/data/mnist``) and takes roughly a quarter of an hour on one core.
"""
import math
import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from rotbnn import seeds
from rotbnn.cli import bench_rows, main
from rotbnn.data import load_mnist
from rotbnn.linalg import kronecker, orthogonality_error, polar_maximize_trace
from rotbnn.metrics import flip_rate
from rotbnn.nn import TrainConfig, train
from rotbnn.quantize import ApproxSchedule, approx_backward, approx_forward, quantization_error
from rotbnn.rotation import RotationPair, align, rotate, rotate_flat, sign

from gradcheck import check_gradients, toy_network

MNIST_DIR = Path(os.environ.get("ROTBNN_MNIST", "/root/data/mnist"))
SMOKE_CFG = Path(__file__).resolve().parents[1] / "configs" / "synthetic_smoke.cfg"


def verdict(log, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    log.append(line)
    print(line)
    assert ok, line


def test_polar_orthogonality_and_optimality(acceptance_log):
    rng = seeds.purpose_rng(0, seeds.ROTATION, 1000)
    t0 = time.perf_counter()
    worst_orth, worst_trace = 0.0, 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 33))
        g = rng.standard_normal((m, m))
        r = polar_maximize_trace(g)
        worst_orth = max(worst_orth, orthogonality_error(r))
        # LAPACK singular values as the independent oracle
        sv = np.linalg.svd(g, compute_uv=False).sum()
        worst_trace = max(worst_trace, abs(np.trace(r @ g) - sv) / sv)
    elapsed = time.perf_counter() - t0
    ok = worst_orth < 1e-9 and worst_trace < 1e-7 and elapsed < 30
    verdict(acceptance_log, "polar orthogonality/optimality", ok,
            f"max |R^T R - I| {worst_orth:.1e}, max trace rel err {worst_trace:.1e}, {elapsed:.1f}s")


def test_kronecker_equivalence(acceptance_log):
    rng = seeds.purpose_rng(0, seeds.ROTATION, 100)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        w = rng.standard_normal((4, 6))
        rot = RotationPair.random(4, 6, rng)
        fast = rotate(w, rot).ravel()
        full = kronecker(rot.r1, rot.r2).T @ w.ravel()
        worst = max(worst, float(np.max(np.abs(fast - full))))
    elapsed = time.perf_counter() - t0
    verdict(acceptance_log, "Kronecker equivalence", worst <= 1e-10 and elapsed < 5,
            f"max diff {worst:.1e} over 100 trials, {elapsed:.2f}s")


@pytest.fixture(scope="module")
def gaussian_alignments():
    """1000 seeded 16x16 Gaussian blocks, aligned from the identity for 3 cycles."""
    t0 = time.perf_counter()
    out = []
    for trial in range(1000):
        w = seeds.purpose_rng(trial, seeds.ROTATION).standard_normal((16, 16))
        out.append((w, align(w, cycles=3)))
    return out, time.perf_counter() - t0


def test_alternating_monotonicity_and_convergence(acceptance_log, gaussian_alignments):
    results, elapsed = gaussian_alignments
    monotone, converged, changes = 0, 0, []
    for _, res in results:
        tr = np.array(res.objective_trace)
        if np.all(np.diff(tr) >= -1e-12 * np.abs(tr[:-1])):
            monotone += 1
        # objective at the end of cycle 2 vs the end of cycle 3
        change = abs(tr[8] - tr[5]) / abs(tr[5])
        changes.append(change)
        converged += change < 1e-4
    n = len(results)
    ok = monotone == n and converged >= 0.99 * n and elapsed < 120
    verdict(acceptance_log, "alternating monotonicity/convergence", ok,
            f"monotone {monotone}/{n}, cycle 2->3 change < 1e-4 in {converged}/{n} "
            f"(median change {statistics.median(changes):.1e}), {elapsed:.1f}s")


def test_angle_alignment_gain(acceptance_log, gaussian_alignments):
    results, _ = gaussian_alignments
    gains = np.array([res.cos_after - res.cos_before for _, res in results])
    frac = float(np.mean(gains >= 0))
    verdict(acceptance_log, "angle-alignment gain", frac >= 0.99 and gains.mean() > 0.01,
            f"cos_after >= cos_before in {frac:.1%}, mean gain {gains.mean():.4f}")


def test_quantization_error_reduction(acceptance_log, gaussian_alignments):
    results, _ = gaussian_alignments
    wins = [quantization_error(rotate(w, res.rotation)).error <= quantization_error(w).error
            for w, res in results]
    frac = float(np.mean(wins))
    verdict(acceptance_log, "quantization-error reduction", frac >= 0.95,
            f"rotated error <= baseline in {frac:.1%} of {len(wins)} trials")


@pytest.fixture(scope="module")
def mnist_runs():
    if not (MNIST_DIR / "train-images-idx3-ubyte").is_file():
        pytest.skip(f"MNIST IDX files not found under {MNIST_DIR}")
    tr, te = load_mnist(MNIST_DIR, "train"), load_mnist(MNIST_DIR, "test")
    t0 = time.perf_counter()
    runs = {}
    for variant in ("rbnn", "B"):
        for seed in (0, 1, 2):
            cfg = TrainConfig(arch="mlp:784-256-256-10", variant=variant, epochs=10, seed=seed)
            runs[variant, seed] = train(cfg, tr, te)
    return runs, time.perf_counter() - t0


def test_flip_rate_gaussian(acceptance_log):
    rates = []
    for trial in range(100):
        rng = seeds.purpose_rng(trial, seeds.ROTATION, 4096)
        w = rng.standard_normal(4096)
        warm = RotationPair.random(64, 64, rng)
        res = align(w.reshape(64, 64), cycles=3, warm_start=warm)
        rates.append(flip_rate(sign(w), sign(rotate_flat(w, res.rotation))))
    mean = float(np.mean(rates))
    verdict(acceptance_log, "flip rate (Gaussian, learned rotations)", 0.45 <= mean <= 0.55,
            f"mean flip rate {mean:.4f} over 100 trials of n = 4096")


@pytest.mark.slow
def test_flip_rate_trained_ordering(acceptance_log, mnist_runs):
    runs, _ = mnist_runs
    rows, ok = [], True
    for seed in (0, 1, 2):
        rb = {lm.layer_id: lm.flip_rate for lm in runs["rbnn", seed][1][-1].layers}
        bb = {lm.layer_id: lm.flip_rate for lm in runs["B", seed][1][-1].layers}
        for layer in rb:
            ok &= rb[layer] > bb[layer]
            rows.append(f"seed {seed} {layer} {rb[layer]:.3f} vs {bb[layer]:.3f}")
    verdict(acceptance_log, "flip rate (trained MNIST, RBNN > B)", ok, "; ".join(rows))


def test_gradient_correctness(acceptance_log):
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((8, 5)), rng.integers(0, 3, 8)
    t0 = time.perf_counter()
    parts, ok = [], True
    for progress in (0.0, 0.5, 1.0):
        worst, checked, skipped = check_gradients(toy_network("rbnn"), x, y, ApproxSchedule.at_progress(progress))
        ok &= worst <= 0.0 and checked > 0
        parts.append(f"e/E={progress}: {checked} checked, {skipped} near kinks")
    elapsed = time.perf_counter() - t0
    verdict(acceptance_log, "gradient correctness", ok and elapsed < 60, "; ".join(parts) + f", {elapsed:.1f}s")


def test_approximation_schedule(acceptance_log):
    worst_gap, min_deriv = 0.0, math.inf
    for progress in (0.0, 0.25, 0.5, 0.75, 1.0):
        sched = ApproxSchedule.at_progress(progress, -2.0, 1.0)
        e = sched.edge
        for edge in (e, -e):
            inside = approx_forward(np.array([edge * (1 - 1e-15)]), sched)[0]
            outside = approx_forward(np.array([edge * (1 + 1e-15)]), sched)[0]
            worst_gap = max(worst_gap, abs(outside - inside))
        xs = np.linspace(-3 * e, 3 * e, 20001)
        min_deriv = min(min_deriv, float(approx_backward(xs, sched).min()))
    verdict(acceptance_log, "approximation schedule", worst_gap < 1e-9 and min_deriv >= 0,
            f"max gap at +-sqrt(2)/t {worst_gap:.1e}, min F' {min_deriv:.1e}")


@pytest.mark.slow
def test_desk_scale_training(acceptance_log, mnist_runs):
    runs, elapsed = mnist_runs
    acc = {v: [runs[v, s][1][-1].test_acc for s in (0, 1, 2)] for v in ("rbnn", "B")}
    med = {v: statistics.median(a) for v, a in acc.items()}
    ok = med["rbnn"] >= 0.93 and med["rbnn"] >= med["B"] - 0.005 and elapsed <= 15 * 60
    verdict(acceptance_log, "desk-scale MNIST training", ok,
            f"rbnn {acc['rbnn']} (median {med['rbnn']:.4f}), B {acc['B']} (median {med['B']:.4f}), "
            f"{elapsed / 60:.1f} min")


def test_determinism(acceptance_log, tmp_path, capsys):
    assert main(["train", "--config", str(SMOKE_CFG), "--out", str(tmp_path / "a")]) == 0
    assert main(["train", "--config", str(tmp_path / "a" / "run.cfg"), "--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    first = (tmp_path / "a" / "metrics.csv").read_bytes()
    second = (tmp_path / "b" / "metrics.csv").read_bytes()
    verdict(acceptance_log, "determinism", first == second,
            f"metrics.csv {'byte-identical' if first == second else 'differs'} ({len(first)} bytes)")


def test_bench(acceptance_log):
    row = bench_rows([1024], repeats=5)[0]
    ok = row["birot_seconds"] < row["full_seconds"] and row["max_abs_diff"] <= 1e-9
    verdict(acceptance_log, "bench n = 1024", ok,
            f"bi-rotation {row['birot_seconds'] * 1e6:.1f} us vs full {row['full_seconds'] * 1e6:.1f} us, "
            f"max diff {row['max_abs_diff']:.1e}")
