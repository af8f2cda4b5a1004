"""Acceptance criteria, one printed PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines; they are also written
through the terminal reporter so they appear in a plain ``pytest -v`` log.
"""

import math
import re
import time

import numpy as np
import pytest

from smalltarget import gradcheck
from smalltarget.ablation import AblationSetup, run as run_ablation
from smalltarget.blocks import CARG, SqueezeExcite
from smalltarget.cli import main
from smalltarget.data import Dataset, SceneSpec, generate_scene
from smalltarget.detect import iou
from smalltarget.fusion import MEPF, REFERENCE_PARAM_COUNT
from smalltarget.metrics import evaluate_map50
from smalltarget.model import ModelConfig, build_model
from smalltarget.scan import (bench_scan, discretize, discretize_dense, linear_fit_r2,
                              selective_scan_1d)
from smalltarget.tensor import Tensor
from smalltarget.train import TrainConfig, predict, train

from map_oracle import handcrafted_cases, oracle_map
from test_scan import brute_force_scan


@pytest.fixture
def report(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:2d} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


class TestAcceptance:
    def test_01_scan_matches_brute_force(self, report):
        rng = np.random.default_rng(2024)
        t0, worst = time.perf_counter(), 0.0
        for _ in range(100):
            L, N, C = int(rng.integers(1, 65)), int(rng.integers(1, 9)), int(rng.integers(1, 5))
            x = rng.standard_normal((L, C))
            delta = rng.uniform(0.01, 1.0, (L, C))
            A = -rng.uniform(0.1, 3.0, (C, N))
            B, Cm = rng.standard_normal((L, N)), rng.standard_normal((L, N))
            y = selective_scan_1d(x, lambda _x: (delta, B, Cm), A)
            ref = brute_force_scan(x, delta, A, B, Cm)
            worst = max(worst, float(np.max(np.abs(y - ref)) / max(np.max(np.abs(ref)), 1e-12)))
        secs = time.perf_counter() - t0
        report(1, "scan vs brute force", worst <= 1e-5 and secs < 60,
               f"max rel {worst:.2e} <= 1e-5 over 100 instances, {secs:.1f}s")

    def test_02_zoh(self, report):
        a_bar, b_bar = discretize(1.0, 0.7, math.log(2))
        hand = abs(a_bar - 2.0) <= 1e-6 and abs(b_bar - 0.7) <= 1e-6
        rng = np.random.default_rng(0)
        A = rng.standard_normal((5, 5))
        norm = np.linalg.norm(A, 2)
        slack = []
        for d in (1e-1, 1e-2, 1e-3, 1e-4):
            a_d, _ = discretize_dense(A, np.ones(5), d)
            slack.append(d * norm * math.exp(d * norm) - np.linalg.norm(a_d - np.eye(5), 2))
        report(2, "ZOH sanity", hand and min(slack) >= 0,
               f"A_bar={a_bar:.9f} B_bar={b_bar:.9f}, min bound slack {min(slack):.2e}")

    def test_03_linear_complexity(self, report):
        t0 = time.perf_counter()
        lengths = [256, 1024, 4096, 16384]
        rows = bench_scan(lengths, repeats=3)
        r2 = linear_fit_r2(lengths, [r.ss2d_ns for r in rows])
        ratio = rows[2].attention_ns / rows[1].attention_ns
        secs = time.perf_counter() - t0
        report(3, "linear complexity", r2 >= 0.98 and ratio >= 8 and secs < 300,
               f"ss2d R2 {r2:.4f} >= 0.98, attention 4096/1024 {ratio:.1f}x >= 8, {secs:.0f}s")

    def test_04_gradients(self, report):
        t0 = time.perf_counter()
        results = gradcheck.run_all()
        secs = time.perf_counter() - t0
        worst = ", ".join(f"{r.name} {r.max_rel_error:.1e}" for r in results)
        ok = all(r.passed for r in results) and secs < 600
        report(4, "gradient suite", ok, f"{worst}; {secs:.0f}s")

    def test_05_mepf_budget(self, report, tmp_path, capsys):
        n = MEPF().num_parameters()
        root = tmp_path
        assert main(["gen-data", "--n", "2", "--size", "64", "--out", str(root / "d")]) == 0
        (root / "c.cfg").write_text("width_scale=0.0625\nbatch=2\nepochs=1\n")
        assert main(["train", "--data", str(root / "d"), "--cfg", str(root / "c.cfg"),
                     "--out", str(root / "m.ckpt")]) == 0
        capsys.readouterr()
        printed = []
        for _ in range(2):
            assert main(["eval", "--ckpt", str(root / "m.ckpt"), "--data", str(root / "d")]) == 0
            out = capsys.readouterr().out
            printed.append(tuple(re.findall(r"^(mepf_\w+): (-?\d+)$", out, re.M)))
        expected = (("mepf_params", str(n)), ("mepf_target", str(REFERENCE_PARAM_COUNT)),
                    ("mepf_delta", str(n - REFERENCE_PARAM_COUNT)))
        ok = n <= 2000 and printed[0] == printed[1] == expected
        report(5, "MEPF budget", ok, f"{n} params <= 2000, delta {n - REFERENCE_PARAM_COUNT:+d} "
                                     f"vs {REFERENCE_PARAM_COUNT}, eval output stable")

    def test_06_attention_ranges(self, report):
        rng = np.random.default_rng(6)
        t0, bad = time.perf_counter(), 0
        for _ in range(1000):
            c = int(rng.choice([4, 8, 16]))
            h, w = (int(v) for v in rng.integers(1, 12, 2))
            mag = float(10 ** rng.uniform(-2, 1.7))
            x = Tensor((rng.standard_normal((1, c, h, w)) * mag).astype(np.float32))
            pix = Tensor(rng.uniform(0, 1, (1, 6, h, w)).astype(np.float32) * min(mag, 50.0))
            mepf = MEPF(rng=rng)
            se = SqueezeExcite(c, rng=rng)
            carg = CARG(c, spatial_kernel=int(rng.choice([1, 3, 7])), rng=rng)
            shapes = (mepf(pix).shape == pix.shape and se(x).shape == x.shape
                      and carg(x).shape == x.shape)
            gates = [*mepf.last_masks, se.last_weights,
                     carg.last["x_channelattention"], carg.last["x_spatialattention"]]
            if not shapes or not all(((g > 0) & (g < 1)).all() for g in gates):
                bad += 1
        secs = time.perf_counter() - t0
        report(6, "attention ranges", bad == 0 and secs < 60,
               f"{bad} violations in 1000 inputs, {secs:.1f}s")

    def test_07_map_oracle(self, report):
        cases = {name: (preds, truths) for name, preds, truths in handcrafted_cases()}
        worst = 0.0
        for preds, truths in cases.values():
            got, want = evaluate_map50(preds, truths).map50, float(oracle_map(preds, truths))
            worst = max(worst, abs(got - want) / max(abs(want), 1e-300) if want else abs(got))
        empty = evaluate_map50(*cases["no predictions"]).map50
        perfect = evaluate_map50(*cases["perfect"]).map50
        ok = len(cases) == 20 and worst <= 1e-12 and empty == 0.0 and perfect == 1.0
        report(7, "mAP oracle", ok, f"max rel diff {worst:.1e} over {len(cases)} cases "
                                    f"(exact fractions), empty {empty}, perfect {perfect}")

    @pytest.mark.slow
    def test_08_ablation_direction(self, report):
        setup = AblationSetup()
        result = run_ablation(setup, progress=lambda v, s, m: print(f"  {v} seed {s}: {m:.4f}"))
        slowest = max(max(v) for v in result.seconds.values())
        ok = result.direction_holds() and slowest < 3600
        medians = ", ".join(f"{v} {result.median(v):.4f}" for v in setup.variants)
        report(8, "ablation direction", ok, f"median mAP50 {medians}; slowest run {slowest:.0f}s")

    def test_09_small_targets(self, report):
        worst = 0.0
        for seed in range(100):
            scene = generate_scene(seed, SceneSpec(size=int(64 * (1 + seed % 4)), mode="mixed"))
            h, w = scene.size
            for b in scene.boxes:
                worst = max(worst, b.w / w, b.h / h)
        report(9, "small-target definition", worst < 0.1,
               f"max side ratio {worst:.4f} < 0.1 over 100 seeds")

    def test_10_overfit(self, report):
        scene = generate_scene(0, SceneSpec(size=64, density=1, mode="day"))
        data = Dataset.from_scenes([scene])
        model = build_model(ModelConfig(width_scale=0.0625, seed=0))
        res = train(model, data, TrainConfig(batch=1, epochs=200, seed=0))
        ratio = min(res.losses) / res.losses[0]
        top = predict(model, data.images)[0][0]
        best_iou = iou(top, scene.boxes[0])
        report(10, "overfit smoke", res.steps <= 200 and ratio < 0.1 and best_iou >= 0.5,
               f"loss {res.losses[0]:.3f} -> {min(res.losses):.3f} ({ratio:.1%}) in "
               f"{res.steps} steps, top-box IoU {best_iou:.3f}")
