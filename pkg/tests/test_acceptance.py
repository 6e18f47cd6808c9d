"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The tiny network is trained once per session (criterion 5) and reused by
the criteria that need a trained classifier.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, MaskGame, make_balanced, make_clustered
from pcx.cli import main
from pcx.cluster import KMeansConfig, kmeans
from pcx.explain import ExplainConfig, exact_shapley, integrated_gradients, kernelshap_explain, lime_explain
from pcx.model import SHAPES, SyntheticShapeSpec, forward, from_params, gradient, synth_dataset, train
from pcx.model.synth import as_arrays
from pcx.model.train import accuracy
from pcx.pointcloud import PointCloud
from pcx.verify import FlipSweepConfig, bootstrap_area_order, compare_methods

pytestmark = pytest.mark.slow

MODES = ("remove", "mean_replace", "sign_reverse")


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# --------------------------------------------------------------------------
# shared trained network


@pytest.fixture(scope="session")
def trained():
    t0 = time.perf_counter()
    train_set = synth_dataset(SHAPES, 256, SyntheticShapeSpec(points=1024, jitter=0.02, seed=101))
    test_set = synth_dataset(SHAPES, 64, SyntheticShapeSpec(points=1024, jitter=0.02, seed=202))
    result = train(train_set, epochs=30, lr=0.01, batch_size=32, seed=0, test=test_set, class_names=list(SHAPES))
    seconds = time.perf_counter() - t0
    return result, test_set, seconds


@pytest.fixture(scope="session")
def trained_handle(trained):
    return from_params(trained[0].params)


@pytest.fixture(scope="session")
def test_pick(trained):
    """Seeded random draw of test instances shared by the trained-net criteria."""
    test_set = trained[1]
    order = np.random.default_rng(2024).permutation(len(test_set))
    return [test_set[i] for i in order]


@pytest.fixture(scope="session")
def flip_report(trained_handle, test_pick):
    t0 = time.perf_counter()
    rep = compare_methods(
        trained_handle,
        test_pick[:50],
        ["lime", "integrated_gradients", "kernelshap"],
        ExplainConfig(seed=7),
        FlipSweepConfig(seed=7),
    )
    return rep, time.perf_counter() - t0


# --------------------------------------------------------------------------


def test_criterion_01_shapley_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        M = (4, 8, 10)[trial % 3]
        pc, ca = make_clustered(4 * M + 8, M, seed=trial)
        table = np.random.default_rng(1000 + trial).normal(size=2**M)
        bits = 1 << np.arange(M)
        game = MaskGame(pc, ca, lambda m, t=table, b=bits: float(t[int(m @ b)]))
        f = game.handle()
        for mode in MODES:
            ks = kernelshap_explain(f, pc, ca, 0, ExplainConfig(n_samples=2**M - 2, flip_mode=mode))
            ex = exact_shapley(f, pc, ca, 0, mode)
            assert ks.config["enumerated"]
            worst = max(worst, float(np.max(np.abs(ks.phi - ex.phi))))
    seconds = time.perf_counter() - t0
    record(1, worst <= 1e-6 and seconds < 60, f"max |phi_ks - phi_exact| = {worst:.2e} over 60 runs in {seconds:.1f}s")


def test_criterion_02_lime_linear_recovery():
    rng = np.random.default_rng(77)
    worst = 0.0
    for trial in range(20):
        M = int(rng.integers(3, 25))
        pc, ca = make_balanced(M, 4, seed=100 + trial)
        beta = rng.normal(size=M) * 3
        b0 = float(rng.normal())
        f = MaskGame(pc, ca, lambda m, b=beta, c=b0: float(b @ m) + c).handle()
        cfg = ExplainConfig(
            n_samples=int(rng.integers(M + 40, 400)),
            kernel_width=float(rng.choice([0.1, 0.25, 1.0, 4.0])),
            ridge=0.0,
            flip_mode=MODES[trial % 3],
            seed=trial,
        )
        e = lime_explain(f, pc, ca, 0, cfg)
        worst = max(worst, float(np.max(np.abs(e.phi - beta))), abs(e.phi0 - b0))
    record(2, worst <= 1e-6, f"max coefficient error {worst:.2e} over 20 trials")


def test_criterion_03_ig_completeness(trained_handle, test_pick):
    t0 = time.perf_counter()
    f = trained_handle
    rel = []
    for pc in test_pick[:20]:
        e = integrated_gradients(f, pc, None, steps=256)
        k = e.target_class
        gap = f.predict_one(pc.points)[k] - f.predict_one(np.zeros_like(pc.points))[k]
        rel.append(abs(e.point_contributions.sum() - gap) / abs(gap))
    rel = np.array(rel)
    seconds = time.perf_counter() - t0
    ok = bool(np.all(rel <= 1e-3)) and seconds < 60
    record(
        3,
        ok,
        f"{int((rel <= 1e-3).sum())}/20 instances within 1e-3 relative; "
        f"median {np.median(rel):.1e}, max {rel.max():.1e}; {seconds:.1f}s",
    )


def test_criterion_04_gradient_correctness(trained, test_pick):
    params = trained[0].params.astype(np.float64)
    rng = np.random.default_rng(4)
    worst = 0.0
    step = 1e-4
    for pc in test_pick[:10]:
        pts = pc.points.copy()
        k = int(np.argmax(forward(params, pts)))
        g = gradient(params, pts, k)
        for _ in range(20):
            i, a = int(rng.integers(len(pts))), int(rng.integers(3))
            plus, minus = pts.copy(), pts.copy()
            plus[i, a] += step
            minus[i, a] -= step
            fd = (forward(params, plus)[k] - forward(params, minus)[k]) / (2 * step)
            worst = max(worst, abs(fd - g[i, a]))
    record(4, worst <= 1e-3, f"max |analytic - central difference| = {worst:.2e} at 200 coordinates")


def test_criterion_05_classifier_quality(trained):
    result, test_set, seconds = trained
    acc = result.log[-1].test_acc
    again = accuracy(result.params, *as_arrays(test_set))
    assert again == pytest.approx(acc)
    record(5, acc >= 0.90 and seconds < 600, f"test accuracy {acc:.3f} after 30 epochs, {seconds:.0f}s training")


def test_criterion_06_flipping_order(flip_report):
    rep, seconds = flip_report
    parts, ok = [], seconds < 1800
    for method in ("lime", "integrated_gradients"):
        share = bootstrap_area_order(rep, method, n_boot=20, seed=6)
        a = rep.area_summary()[method]
        ok &= share >= 0.8
        parts.append(
            f"{method} areas +{a['area_positive']:.3f} r{a['area_random']:.3f} -{a['area_negative']:.3f}, "
            f"order holds in {share:.0%} of resamples"
        )
    record(6, ok, "; ".join(parts) + f"; {seconds:.0f}s")


def test_criterion_07_kernelshap_positive(flip_report):
    rep, _ = flip_report
    curves = rep.curves["kernelshap"]
    pos, rnd, neg = curves["positive"], curves["random"], curves["negative"]
    fr = np.asarray(rep.fractions)
    band = (fr >= 0.05 - 1e-12) & (fr <= 0.25 + 1e-12)
    neg_ok = bool(np.all(neg.s_avg[band] >= rnd.s_avg[band]))
    ok = pos.area < rnd.area and neg_ok
    record(
        7,
        ok,
        f"kernelshap area positive {pos.area:.3f} < random {rnd.area:.3f}: {pos.area < rnd.area}; "
        f"negative >= random at 5-25%: {neg_ok}",
    )


def test_criterion_08_stability_direction(trained_handle, test_pick):
    t0 = time.perf_counter()
    inst = test_pick[50:70]
    cells = {}
    for n_c, n_s in ((20, 100), (128, 1000)):
        rep = compare_methods(
            trained_handle, inst, ["lime"], ExplainConfig(n_samples=n_s, seed=8), FlipSweepConfig(seed=8), n_clusters=n_c
        )
        cells[(n_c, n_s)] = rep.curves["lime"]["positive"].variance
    seconds = time.perf_counter() - t0
    wins = int(np.sum(cells[(128, 1000)] <= cells[(20, 100)]))
    record(8, wins >= 7 and seconds < 1200, f"variance lower or equal at 128/1000 on {wins}/11 fractions; {seconds:.0f}s")


def test_criterion_09_kmeans_contract():
    rng = np.random.default_rng(9)
    bad = 0
    for trial in range(100):
        n = int(rng.integers(20, 600))
        k = int(rng.integers(1, min(n, 40) + 1))
        pts = rng.normal(size=(n, 3)) * rng.random(3)
        if trial % 10 == 0:
            pts[: n // 2] = pts[0]  # heavy duplication exercises empty-cluster repair
        pc = PointCloud(pts)
        cfg = KMeansConfig(n_clusters=k, seed=trial)
        a, b = kmeans(pc, cfg), kmeans(pc, cfg)
        hist = np.asarray(a.history)
        ok = (
            np.all(hist[1:] <= hist[:-1] * (1 + 1e-12) + 1e-12)
            and a.assignment.tobytes() == b.assignment.tobytes()
            and a.centers.tobytes() == b.centers.tobytes()
            and a.assignment.shape == (n,)
            and a.assignment.min() >= 0
            and a.assignment.max() < k
            and np.bincount(a.assignment, minlength=k).sum() == n
            and np.all(np.bincount(a.assignment, minlength=k) >= 1)
        )
        bad += not ok
    record(9, bad == 0, f"{100 - bad}/100 random clouds satisfy monotone inertia, determinism and totality")


def test_criterion_10_end_to_end_determinism(tmp_path):
    import json

    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--per-class", "1", "--seed", "10"]) == 0
    runs = {
        "explain": ["explain", "--input", str(data / "cone_0000.ply"), "--method", "lime"],
        "verify": ["verify", "--data", str(data), "--limit", "3", "--methods", "lime,integrated_gradients"],
    }
    same = {}
    for name, args in runs.items():
        first, second, replay = tmp_path / f"{name}1", tmp_path / f"{name}2", tmp_path / f"{name}3"
        assert main(args + ["--out", str(first)]) == 0
        assert main(args + ["--out", str(second)]) == 0
        assert main(["rerun", str(first / "manifest.json"), "--out", str(replay)]) == 0
        digests = [json.loads((d / "manifest.json").read_text())["outputs"] for d in (first, second, replay)]
        same[name] = digests[0] == digests[1] == digests[2] and len(digests[0]) >= 2
    record(10, all(same.values()), ", ".join(f"{k} outputs identical across 3 runs: {v}" for k, v in same.items()))
