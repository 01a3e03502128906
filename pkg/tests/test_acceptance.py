"""Acceptance gate: nine workbench-level criteria, one test each.

Each test prints a single "criterion N (<name>): PASS/FAIL" line with
the measured quantities, so `pytest -v -s` (or the captured output of a
failure) reads as a checklist. Criteria 5 and 6 share one four-arm,
three-seed benchmark run via a session fixture; it dominates the suite
runtime (about 40 minutes on one laptop core).
"""

import dataclasses
import itertools
import math
import time

import numpy as np
import pytest

from fbnet import gradcheck
from fbnet.cli import ARMS
from fbnet.data import DEFAULT_SCHEME, CamoConfig, generate
from fbnet.labels import IGNORE, ClassScheme, assign
from fbnet.metrics import EvalReport, dilution_probe
from fbnet.network import ModelConfig, build
from fbnet.train import TrainConfig, evaluate, total_loss, train


def _report(num, name, ok, detail):
    line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} — {detail}"
    print(line)
    return line


# -- criteria 5/6 shared benchmark -------------------------------------------

BENCH_DATA = CamoConfig(size=96, thickness=(4, 8), objects_per_image=(3, 6))
BENCH_TRAIN = TrainConfig(
    epochs=60,
    batch_size=4,
    crop=96,
    scale_range=(1.0, 1.5),
    flip_prob=0.5,
    lr0=0.04,
    weight_decay=1e-4,
    poly_power=0.5,
    lambda1=0.5,
)
BENCH_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    """Train the four-arm matrix over three seeds; returns scores and timings."""
    train_samples = [generate(BENCH_DATA, i) for i in range(512)]
    val_samples = [generate(dataclasses.replace(BENCH_DATA, seed=1), i) for i in range(128)]
    root = tmp_path_factory.mktemp("bench")

    scores = {arm: [] for arm, _, _ in ARMS}
    seconds = dict.fromkeys(scores, 0.0)
    for (arm, inject, variant), seed in itertools.product(ARMS, BENCH_SEEDS):
        model_config = ModelConfig(scheme=DEFAULT_SCHEME, inject=inject, block_variant=variant)
        train_config = dataclasses.replace(BENCH_TRAIN, seed=seed)
        start = time.perf_counter()
        model, _ = train(train_config, model_config, train_samples, root / f"{arm}_seed{seed}")
        report = evaluate(model, val_samples)
        seconds[arm] += time.perf_counter() - start
        scores[arm].append((report.miou(), report.f_miou()))

    means = {
        arm: (float(np.mean([m for m, _ in vals])), float(np.mean([f for _, f in vals])))
        for arm, vals in scores.items()
    }
    return {"scores": scores, "means": means, "seconds": seconds}


# -- the criteria ------------------------------------------------------------


def test_criterion_1_gradient_dilution():
    start = time.perf_counter()
    probe = dilution_probe(3)
    elapsed = time.perf_counter() - start
    ce_k1 = probe.ce_ratios()[0]
    bw_err = max(abs(r - 1.0) for r in probe.bwbce_ratios())
    ok = abs(ce_k1 - 1 / 9) <= 1e-9 and bw_err <= 1e-12 and elapsed < 1.0
    line = _report(
        1,
        "gradient dilution",
        ok,
        f"stride 3 ce ratio(k=1)={ce_k1:.12f} (want 1/9), max |bwbce-1|={bw_err:.2e}, {elapsed:.3f} s",
    )
    assert ok, line


def brute_force_assign(mask, scheme, stride):
    h, w = mask.shape[0] // stride, mask.shape[1] // stride
    out = np.zeros((len(scheme.foreground_ids), h, w), dtype=np.uint8)
    for ci, cls in enumerate(scheme.foreground_ids):
        for i in range(h):
            for j in range(w):
                block = mask[i * stride : (i + 1) * stride, j * stride : (j + 1) * stride]
                if (block == cls).any():
                    out[ci, i, j] = 1
    return out


def test_criterion_2_label_assignment_oracle():
    start = time.perf_counter()
    scheme8 = ClassScheme(total=8, foreground_ids=(3, 4, 5, 6, 7))
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        stride = int(rng.integers(2, 5))
        side = lambda: stride * int(rng.integers(max(1, math.ceil(4 / stride)), 16 // stride + 1))
        mask = rng.integers(0, 8, size=(side(), side())).astype(np.uint8)
        mask[rng.random(size=mask.shape) < 0.05] = IGNORE
        got = assign(mask, scheme8, stride).data
        if not np.array_equal(got, brute_force_assign(mask, scheme8, stride)):
            mismatches += 1

    scheme2 = ClassScheme(total=2, foreground_ids=(1,))
    for cells in itertools.product((0, 1, IGNORE), repeat=4):
        mask = np.array(cells, dtype=np.uint8).reshape(2, 2)
        got = assign(mask, scheme2, 2).data
        if not np.array_equal(got, brute_force_assign(mask, scheme2, 2)):
            mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 10.0
    line = _report(
        2,
        "label assignment oracle",
        ok,
        f"1000 random + 81 exhaustive masks, {mismatches} mismatches, {elapsed:.2f} s",
    )
    assert ok, line


def test_criterion_3_differentiation_soundness():
    start = time.perf_counter()
    results = gradcheck.battery(seeds=range(10), full=True)
    elapsed = time.perf_counter() - start
    worst = max(err for _, _, err in results)
    ok = worst < 1e-4 and elapsed < 60.0
    line = _report(
        3,
        "differentiation soundness",
        ok,
        f"{len(results)} finite-difference cases, max rel err {worst:.3e} (tol 1e-4), {elapsed:.1f} s",
    )
    assert ok, line


def test_criterion_4_determinism(tmp_path):
    samples = [generate(CamoConfig(size=32), i) for i in range(6)]
    config = TrainConfig(
        epochs=2, batch_size=2, crop=32, scale_range=(0.75, 1.25), flip_prob=0.5, lr0=0.02, seed=5
    )
    model_config = ModelConfig(scheme=DEFAULT_SCHEME, stage_channels=(4, 6, 6, 8))
    train(config, model_config, samples, tmp_path / "a")
    train(config, model_config, samples, tmp_path / "b")
    same_ckpt = (tmp_path / "a" / "checkpoint_final.fbn1").read_bytes() == (
        tmp_path / "b" / "checkpoint_final.fbn1"
    ).read_bytes()
    same_log = (tmp_path / "a" / "train_log.csv").read_text() == (
        tmp_path / "b" / "train_log.csv"
    ).read_text()
    ok = same_ckpt and same_log
    line = _report(
        4,
        "determinism",
        ok,
        f"checkpoints byte-identical: {same_ckpt}, logs identical: {same_log}",
    )
    assert ok, line


def test_criterion_5_directional_trend(benchmark):
    base_m, base_f = benchmark["means"]["baseline"]
    fb_m, fb_f = benchmark["means"]["fbnet"]
    subset_seconds = benchmark["seconds"]["baseline"] + benchmark["seconds"]["fbnet"]
    ok = fb_f > base_f and (base_m - fb_m) <= 0.005 and subset_seconds < 1200.0
    line = _report(
        5,
        "directional trend",
        ok,
        f"f-mIoU baseline {base_f:.4f} -> fbnet {fb_f:.4f} (+{(fb_f - base_f) * 100:.2f} pts), "
        f"mIoU {base_m:.4f} -> {fb_m:.4f} ({(fb_m - base_m) * 100:+.2f} pts), "
        f"{subset_seconds:.0f} s for the two arms",
    )
    assert ok, line


def test_criterion_6_component_synergy(benchmark):
    rows = [(arm, *benchmark["means"][arm]) for arm, _, _ in ARMS]
    print("arm         miou    f_miou   (3-seed means)")
    for arm, m, f in rows:
        print(f"{arm:<11} {m:.4f}  {f:.4f}")
    fb_f = benchmark["means"]["fbnet"][1]
    best_single = max(benchmark["means"]["bwbce_only"][1], benchmark["means"]["dfm_only"][1])
    ok = fb_f >= best_single - 0.003
    line = _report(
        6,
        "component synergy",
        ok,
        f"full f-mIoU {fb_f:.4f} vs best single-component {best_single:.4f} (tolerance -0.3 pts)",
    )
    assert ok, line


def test_criterion_7_residual_identity():
    injected_config = ModelConfig(scheme=DEFAULT_SCHEME, inject=("res5",), block_variant="full")
    plain_config = dataclasses.replace(injected_config, inject=())
    injected = build(injected_config, seed=3)
    plain = build(plain_config, seed=3)
    injected_params = injected.parameters()
    for name, p in plain.parameters().items():
        p.data[...] = injected_params[name].data
    injected.blocks["res5"].close_gates()

    sample = generate(CamoConfig(size=32), 4)
    diff = float(np.abs(injected.forward(sample.image).z.data - plain.forward(sample.image).z.data).max())
    ok = diff <= 1e-5
    line = _report(7, "residual identity", ok, f"max |z_gated - z_plain| = {diff:.2e} (tol 1e-5)")
    assert ok, line


def test_criterion_8_metric_correctness():
    scheme = ClassScheme(total=3, foreground_ids=(1, 2))
    truth = np.array(
        [[0, 0, 1, 1], [0, 2, 1, 1], [2, 2, IGNORE, 1], [2, 0, 0, 2]], dtype=np.uint8
    )
    pred = np.array(
        [[0, 1, 1, 1], [0, 2, 2, 1], [2, 2, 1, 1], [1, 0, 0, 2]], dtype=np.int64
    )
    report = EvalReport(scheme).accumulate(pred, truth)
    hand_confusion = [[4, 1, 0], [0, 4, 1], [0, 1, 4]]
    hand_iou = [4 / 5, 4 / 7, 4 / 6]
    exact = (
        report.confusion.tolist() == hand_confusion
        and report.per_class_iou() == hand_iou
        and report.miou() == float(np.mean(hand_iou))
        and report.f_miou() == float(np.mean(hand_iou[1:]))
    )

    perfect = EvalReport(scheme).accumulate(truth.clip(max=2).astype(np.int64), truth.clip(max=2))
    perfect_ok = perfect.miou() == 1.0 and perfect.f_miou() == 1.0
    ok = exact and perfect_ok
    line = _report(
        8,
        "metric correctness",
        ok,
        f"hand case exact: {exact}, perfect prediction mIoU=f-mIoU=1: {perfect_ok}",
    )
    assert ok, line


def test_criterion_9_overfit_sanity(tmp_path):
    data_config = CamoConfig(size=96, color_offset=0.3, thickness=(8, 14), objects_per_image=(2, 4))
    samples = [generate(data_config, i) for i in range(16)]
    train_config = TrainConfig(
        epochs=125,
        batch_size=4,
        crop=96,
        scale_range=(1.0, 1.0),
        flip_prob=0.0,
        lr0=0.04,
        weight_decay=0.0,
        poly_power=0.3,
        seed=0,
    )
    assert train_config.epochs * math.ceil(len(samples) / train_config.batch_size) == 500

    losses = {}
    for arm, inject in (("baseline", ()), ("fbnet", ("res5",))):
        model_config = ModelConfig(scheme=DEFAULT_SCHEME, inject=inject, convs_per_stage=2)
        model, _ = train(train_config, model_config, samples, tmp_path / arm)
        per_sample = [
            float(total_loss(model.forward(s.image), s.mask, DEFAULT_SCHEME).value.data)
            for s in samples
        ]
        losses[arm] = float(np.mean(per_sample))

    ok = all(v < 0.05 for v in losses.values())
    line = _report(
        9,
        "overfit sanity",
        ok,
        f"mean training loss after 500 iterations: baseline {losses['baseline']:.4f}, "
        f"fbnet {losses['fbnet']:.4f} (want < 0.05)",
    )
    assert ok, line
