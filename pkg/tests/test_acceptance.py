"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed in the terminal summary
under "acceptance criteria", then asserts.  Tolerances are the contractual
ones; nothing here is loosened to make a run pass.
"""

import json
import struct
import time
from dataclasses import replace

import numpy as np
import pytest

from jcdnet import model as M
from jcdnet.autograd import Tensor, precision
from jcdnet.cli import main
from jcdnet.config import synthetic_run_config
from jcdnet.data import (
    Dataset, FeatureDataError, FeatureFormatError, decode_features, encode_features, load_features, write_features,
)
from jcdnet.evaluation import GroundTruthSegment, _sort_detections, average_precision, map_report, match_detections, tiou
from jcdnet.gradcheck import KINKED_TOL, SMOOTH_TOL, run_checks
from jcdnet.inference import Proposal, nms
from jcdnet.rng import Xoshiro256
from jcdnet.synth import SynthConfig, synth_generate
from jcdnet.train import run_ablation

from oracles import as_float, definite_features_loop, micro_instance, oracle_ap


def _model(rng_seed, C=3, F2=10, D=6, dtype=np.float32):
    cfg = M.ModelConfig(num_classes=C, feature_dim=F2, hidden_dim=D, snippets_per_video=16, dropout_rate=0.7)
    return cfg, M.init_params(cfg, Xoshiro256(rng_seed), dtype=dtype)


def _f32(a):
    # the training precision
    return Tensor(a.astype(np.float32))


def test_criterion_1_gradient_integrity(acceptance):
    t0 = time.perf_counter()
    outcomes = run_checks()
    seconds = time.perf_counter() - t0
    failed = [o.name for o in outcomes if not o.passed]
    worst_smooth = max(o.result.max_rel_error for o in outcomes if o.tolerance == SMOOTH_TOL)
    worst_kinked = max(o.result.max_rel_error for o in outcomes if o.tolerance == KINKED_TOL)
    ok = not failed and seconds < 60 and SMOOTH_TOL == 1e-5 and KINKED_TOL == 1e-3
    acceptance(1, ok, f"{len(outcomes)} checks, worst smooth {worst_smooth:.1e} (<1e-5), worst kinked "
                      f"{worst_kinked:.1e} (<1e-3), {seconds:.1f}s (<60s), failed={failed}")
    assert ok


def test_criterion_2_initialization_identity(acceptance):
    rng = np.random.default_rng(2)
    mismatches = 0
    for i in range(100):
        cfg, params = _model(i)
        T = int(rng.integers(1, 20))
        out = M.forward(_f32(rng.normal(scale=2.0, size=(T, 10))), cfg, params, mode="eval")
        assert out.e_a.dtype == np.float32
        mismatches += not np.array_equal(out.e_a.data, out.x_a.data)
        mismatches += not np.array_equal(out.e_e.data, out.x_e.data)
    acceptance(2, mismatches == 0, f"e_a==x_a and e_e==x_e bit-exact on 100 random inputs ({mismatches} mismatches)")
    assert mismatches == 0


def test_criterion_3_normalization_invariants(acceptance):
    rng = np.random.default_rng(3)
    worst = 0.0
    a_ok = True
    for i in range(100):
        cfg, params = _model(i)
        params["cad.alpha"].data[...] = rng.normal(size=1)
        params["tea.beta"].data[...] = rng.normal(size=1)
        T = int(rng.integers(1, 30))
        out = M.forward(_f32(rng.normal(scale=4.0, size=(T, 10))), cfg, params, mode="eval")
        worst = max(worst, np.abs(out.s_coarse.data.sum(1) - 1).max(), np.abs(out.s_final.data.sum(1) - 1).max(),
                    np.abs(out.m_e.data.sum(0) - 1).max())
        a_ok &= bool(np.all((out.a_ness.data > 0) & (out.a_ness.data < 1)))
    ok = worst <= 1e-5 and a_ok
    acceptance(3, ok, f"max |row/column sum - 1| = {worst:.1e} (<=1e-5), a_ness in (0,1): {a_ok}")
    assert ok


def test_criterion_4_definite_feature_oracle(acceptance):
    rng = np.random.default_rng(4)
    worst = 0.0
    with precision(np.float64):
        for i in range(200):
            C1, D, T = int(rng.integers(2, 5)), int(rng.integers(1, 7)), int(rng.integers(1, 9))
            cfg, params = _model(i, C=C1 - 1, F2=5, D=D, dtype=np.float64)
            params["cad.alpha"].data[...] = rng.normal(size=1)
            s, x_a, m_def, _ = M.cad_forward(Tensor(rng.normal(size=(T, 5))), cfg, params)
            worst = max(worst, np.abs(m_def.data - definite_features_loop(s.data, x_a.data)).max())
    acceptance(4, worst <= 1e-6, f"max |m_def - double-loop| = {worst:.1e} over 200 instances (<=1e-6)")
    assert worst <= 1e-6


def test_criterion_5_evaluation_oracle(acceptance):
    rng = np.random.default_rng(5)
    assignment_mismatch = value_mismatch = 0
    for _ in range(1000):
        dets, gts = micro_instance(rng)
        thr = float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9]))
        want, hits = oracle_ap(dets, gts, thr, with_hits=True)
        fdets, fgts = as_float(dets, gts)
        assignment_mismatch += list(match_detections(_sort_detections(fdets), fgts, thr)) != hits
        # exact rational value, up to rounding of the float sum
        value_mismatch += abs(average_precision(fdets, fgts, thr) - float(want)) > 4 * np.spacing(float(want) or 1.0)
    gts = [GroundTruthSegment(f"v{i % 3}", float(i), i + 1.5, i % 4) for i in range(12)]
    perfect = map_report([Proposal(g.t_start, g.t_end, 1.0, g.class_id, g.video_id) for g in gts], gts,
                         activitynet=True)
    perfect_ok = all(v == 1.0 for v in perfect.map)
    ok = assignment_mismatch == 0 and value_mismatch == 0 and perfect_ok
    acceptance(5, ok, f"1000 micro-instances: {assignment_mismatch} matching and {value_mismatch} AP mismatches; "
                      f"proposals==GTs give 1.0 at all {len(perfect.thresholds)} thresholds: {perfect_ok}")
    assert ok


def test_criterion_6_nms_contract(acceptance):
    rng = np.random.default_rng(6)
    overlap_violations = order_violations = 0
    for _ in range(1000):
        props = []
        for _ in range(int(rng.integers(0, 15))):
            a = float(rng.integers(0, 50)) / 2
            props.append(Proposal(a, a + float(rng.integers(1, 20)) / 2, float(rng.integers(0, 8)) / 7, 0, "v"))
        kept = nms(props, 0.7)
        overlap_violations += any(tiou((p.t_start, p.t_end), (q.t_start, q.t_end)) > 0.7
                                  for i, p in enumerate(kept) for q in kept[i + 1:])
        order_violations += nms([props[i] for i in rng.permutation(len(props))], 0.7) != kept
    ok = overlap_violations == 0 and order_violations == 0
    acceptance(6, ok, f"1000 random sets: {overlap_violations} kept pairs over IoU 0.7, "
                      f"{order_violations} order-dependent outputs")
    assert ok


def test_criterion_7_synthetic_conjoint_benchmark(acceptance):
    t0 = time.perf_counter()
    ds = synth_generate(SynthConfig()).dataset
    assert (len(ds.videos), ds.num_classes, len(ds.conjoint_sets), ds.feature_dim) == (200, 4, 2, 64)
    train_set = Dataset(ds.classes, ds.videos[:150], ds.conjoint_sets)
    test_set = Dataset(ds.classes, ds.videos[150:], ds.conjoint_sets)
    seeds = [0, 1, 2]
    results = run_ablation(train_set, test_set, synthetic_run_config(), [1, 2, 5, 6, 7, 10], seeds)
    minutes = (time.perf_counter() - t0) / 60
    avg = {e: [results[e][s].average(0.3, 0.7) for s in seeds] for e in results}
    mean = {e: float(np.mean(v)) for e, v in avg.items()}
    a = mean[10] - mean[1] >= 0.10
    b = mean[2] > mean[1]
    c5 = sum(x > y for x, y in zip(avg[7], avg[5]))
    c6 = sum(x > y for x, y in zip(avg[7], avg[6]))
    c = c5 >= 2 and c6 >= 2
    ok = a and b and c and minutes <= 15
    table = ", ".join(f"Exp{e}={100 * mean[e]:.1f}" for e in sorted(mean))
    acceptance(7, ok, f"AVG mAP(0.3:0.7) {table}; (a) {100 * (mean[10] - mean[1]):+.1f} pts {a}; (b) {b}; "
                      f"(c) Exp7>Exp5 {c5}/3, Exp7>Exp6 {c6}/3 {c}; {minutes:.1f} min")
    assert ok


def test_criterion_8_determinism(acceptance, tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--holdout", "50"]) == 0
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        common = ["--preset", "synthetic", "--set", "optim.epochs=5", "--seed", "11"]
        assert main(["train", "--out", str(out), "--manifest", str(data / "manifest_train.json"), *common]) == 0
        assert main(["eval", "--out", str(out / "eval"), "--manifest", str(data / "manifest_test.json"),
                     "--checkpoint", str(out / "checkpoint.jcdc"), *common]) == 0
        runs.append({p: (out / p).read_bytes() for p in ("checkpoint.jcdc", "train_log.jsonl",
                                                         "eval/proposals.jsonl", "eval/report.json")})
    same = {p: runs[0][p] == runs[1][p] for p in runs[0]}
    nonempty = len(runs[0]["eval/proposals.jsonl"]) > 0
    ok = all(same.values()) and nonempty
    acceptance(8, ok, "byte-identical across two runs: " + ", ".join(f"{p}={v}" for p, v in same.items()))
    assert ok


def test_criterion_9_format_robustness(acceptance, tmp_path):
    checks = {}
    rng = np.random.default_rng(9)
    x = rng.normal(size=(13, 7)).astype(np.float32)
    write_features(tmp_path / "ok.jcdf", x)
    checks["round-trip bit-exact"] = load_features(tmp_path / "ok.jcdf").tobytes() == x.tobytes()
    good = encode_features(x)

    def rejected(blob, error, needle):
        try:
            decode_features(blob)
        except error as exc:
            return needle in str(exc)
        return False

    checks["bad magic"] = rejected(b"JCDX" + good[4:], FeatureFormatError, "at byte 0")
    checks["bad version"] = rejected(good[:4] + struct.pack("<H", 9) + good[6:], FeatureFormatError, "at byte 4")
    checks["truncated"] = rejected(good[:-1], FeatureFormatError, f"expected {13 * 7 * 4}")
    checks["T=0"] = rejected(good[:6] + struct.pack("<I", 0) + good[10:14], FeatureFormatError, "T=0")
    nan = bytearray(good)
    struct.pack_into("<f", nan, 14 + 4 * 10, float("nan"))
    checks["NaN payload"] = rejected(bytes(nan), FeatureDataError, "snippet 1, dim 3")

    # a corrupted file referenced by a manifest stops the command before any output exists
    write_features(tmp_path / "v1.jcdf", x)
    (tmp_path / "v2.jcdf").write_bytes(bytes(nan))
    manifest = {"classes": ["a", "b"], "videos": [
        {"video_id": f"v{i}", "feature_path": f"v{i}.jcdf", "labels": ["a"]} for i in (1, 2)]}
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    out = tmp_path / "run"
    code = main(["train", "--out", str(out), "--manifest", str(tmp_path / "m.json"), "--preset", "synthetic"])
    checks["no partial outputs"] = code == 1 and not out.exists()
    try:
        write_features(tmp_path / "nan.jcdf", np.full((2, 2), np.nan, np.float32))
    except FeatureDataError:
        pass
    checks["NaN never written"] = not (tmp_path / "nan.jcdf").exists() and \
        not any(p.name.startswith(".nan.jcdf") for p in tmp_path.iterdir())
    ok = all(checks.values())
    acceptance(9, ok, ", ".join(f"{k}={v}" for k, v in checks.items()))
    assert ok
