import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dvpnet.evaluator import (AblationBudget, ablate_S, ablate_scales, bench_latency, center_baseline,
                              coverage_curve, coverage_row, curve_table, default_curve_grid,
                              draw_overlay, evaluate, ground_truth_edges, records_table, score,
                              write_table)
from dvpnet.geometry import d_rms_bruteforce
from dvpnet.model import ModelConfig, build
from dvpnet.synthgen import SceneConfig, generate_scenes
from dvpnet.trainer import TrainConfig

SMALL = ModelConfig(input_size=96, width_multiplier=0.1, S=3)


@pytest.fixture(scope="module")
def scenes():
    return generate_scenes(SceneConfig(image_size=96, seed=4), 12)


def test_true_vp_scores_zero(scenes):
    for sc in scenes:
        r = score(sc, sc.vp)
        assert r.ce <= 1e-6
        assert len(r.ground_truth_edges) == 2 and all(len(e) == 64 for e in r.ground_truth_edges)


def test_corner_detection_vs_bruteforce(scenes):
    sc = scenes[0]
    r = score(sc, (0.0, 0.0))
    k = 100 / np.hypot(96, 96)
    edges = [np.linspace(s.a, s.b, 64) * k for s in sc.main_lines]
    oracle = np.mean([d_rms_bruteforce(e, (0, 0)) for e in edges])
    assert abs(r.ce - oracle) <= 1e-4
    assert r.ce > 1


def test_coverage_examples():
    c = coverage_curve([0.5, 1.5, 3.0], [1, 2, 5])
    np.testing.assert_allclose(c.coverage, [1 / 3, 2 / 3, 1])
    assert coverage_curve([0.5, 1.5], [0.1]).coverage[0] == 0
    assert c.at(2) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        coverage_curve([], [1])
    with pytest.raises(ValueError):
        coverage_curve([1.0], [2, 1])


@given(st.lists(st.floats(0, 50), min_size=1, max_size=40))
def test_coverage_monotone(ces):
    grid = np.unique(np.r_[default_curve_grid(), max(ces)])
    cov = coverage_curve(ces, grid).coverage
    assert np.all(np.diff(cov) >= 0) and 0 <= cov.min() and cov.max() <= 1
    assert coverage_curve(ces, [max(ces)]).coverage[0] == 1


def test_default_grid():
    g = default_curve_grid()
    assert g[0] == 0.25 and g[-1] == 10 and len(g) == 40


def test_evaluate_and_order_independence(scenes):
    net = build(SMALL, seed=1)
    recs = evaluate(net, scenes, batch_size=5)
    assert len(recs) == len(scenes)
    assert all(r.ce >= 0 and 0 <= r.vp.x <= 96 for r in recs)
    perm = np.random.default_rng(0).permutation(len(scenes))
    recs2 = evaluate(net, [scenes[i] for i in perm], batch_size=4)
    for j, i in enumerate(perm):
        assert recs2[j].scene_id == recs[i].scene_id
        assert recs2[j].vp == recs[i].vp


def test_evaluate_rejects_size_mismatch(scenes):
    net = build(ModelConfig(input_size=128, width_multiplier=0.1, S=3))
    with pytest.raises(ValueError):
        evaluate(net, scenes)


def test_center_baseline(scenes):
    recs = center_baseline(scenes)
    assert all(r.vp == (48, 48) for r in recs)
    row = coverage_row(recs)
    assert list(row) == ["ce<=1", "ce<=2", "ce<=3", "ce<=5"]


def test_bench_latency():
    net = build(SMALL)
    stats = bench_latency(net, warmup=1, reps=10)
    assert stats["p5_ms"] <= stats["median_ms"] <= stats["p95_ms"]
    assert stats["fps"] == 1000 / stats["median_ms"]
    with pytest.raises(ValueError):
        bench_latency(net, warmup=0, reps=10)


def test_narrow_model_is_faster():
    wide = bench_latency(build(ModelConfig(input_size=128, width_multiplier=1.0, S=7)), warmup=2, reps=10)
    narrow = bench_latency(build(ModelConfig(input_size=128, width_multiplier=0.25, S=7)), warmup=2, reps=10)
    assert narrow["median_ms"] < wide["median_ms"]


def test_tables_and_overlay(tmp_path, scenes):
    net = build(SMALL)
    recs = evaluate(net, scenes[:3])
    write_table(records_table(recs), tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["scene_id", "vp_x", "vp_y", "confidence", "true_vp_x", "true_vp_y", "ce"]
    assert len(rows) == 4
    write_table(curve_table(coverage_curve(recs, [1, 2])), tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "threshold,coverage"
    from PIL import Image
    sc = scenes[0]
    draw_overlay(sc.image, recs[0].detection, tmp_path / "o.png",
                 ground_truth=[(s.a, s.b) for s in sc.main_lines], true_vp=sc.vp)
    im = np.asarray(Image.open(tmp_path / "o.png"))
    assert im.shape[0] >= 96 and im.shape[2] == 3


def _budget():
    return AblationBudget(train_count=6, test_count=4, epochs=1, batch_size=3,
                          train_config=TrainConfig(augment=False))


def test_ablate_S_table():
    rows = ablate_S(SMALL, [2, 3], _budget())
    assert [r["S"] for r in rows] == [2, 3]
    assert rows[0]["lambda_l"] == 1.25
    assert all(r["status"] == "ok" for r in rows)
    assert set(rows[0]) == {"S", "lambda_l", "ce<=1", "ce<=2", "ce<=3", "status"}
    assert rows == ablate_S(SMALL, [2, 3], _budget())


def test_ablate_scales_table():
    rows = ablate_scales(SMALL, [[1], [1, 2], [4]], _budget())
    assert [r["scales"] for r in rows] == ["Scale-1", "Scale-1,2", "Scale-4"]
    assert [r["status"] for r in rows[:2]] == ["ok", "ok"]
    assert rows[2]["status"].startswith("error")


def test_single_scale_decodes_from_that_grid(scenes):
    net = build(SMALL, seed=2)
    for k in range(3):
        recs = evaluate(net, scenes[:4], scales=[k])
        assert all(r.detection.scale_id == k + 1 for r in recs)
