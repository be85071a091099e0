import json
import math

import numpy as np
import pytest
import torch

from ovlw_detr.config import ModelConfig
from ovlw_detr.detector import DetectionOutput
from ovlw_detr.errors import ConfigError, DataError, InvalidInputError
from ovlw_detr.evaluation import (Detection, GroundTruth, assign_frequency_buckets, benchmark_latency,
                                  detections_to_results, evaluate_ap, flop_estimate, interpolated_ap,
                                  postprocess)
from oracles import reference_ap


def random_scene(rng, n_img=3, n_cat=3):
    gts, dets = [], []
    for img in range(n_img):
        for _ in range(rng.integers(0, 4)):
            x, y = rng.uniform(0, 50, 2)
            w, h = rng.uniform(5, 30, 2)
            box = (x, y, x + w, y + h)
            cat = int(rng.integers(n_cat))
            gts.append(GroundTruth(img, cat, box))
            if rng.random() < 0.8:
                jitter = rng.normal(0, 3, 4)
                dets.append(Detection(img, cat, float(rng.random()), tuple(np.array(box) + jitter)))
        for _ in range(rng.integers(0, 3)):
            x, y = rng.uniform(0, 50, 2)
            dets.append(Detection(img, int(rng.integers(n_cat)), float(rng.random()),
                                  (x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20))))
    return dets, gts


def as_tuples(dets, gts):
    return ([(d.image_id, d.category, d.score, d.box) for d in dets],
            [(g.image_id, g.category, g.box) for g in gts])


def test_matches_reference_on_random_scenes():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 30:
        dets, gts = random_scene(rng)
        if not gts:
            continue
        rep = evaluate_ap(dets, gts)
        ap, ap50, per_cat = reference_ap(*as_tuples(dets, gts))
        assert rep.ap == ap and rep.ap50 == ap50
        checked += 1


def test_interpolated_ap_known_values():
    assert interpolated_ap(np.array([True, True]), 2) == 1.0
    assert interpolated_ap(np.array([], dtype=bool), 3) == 0.0
    # one hit out of two gts at rank 1: precision 1 up to recall 0.5
    assert interpolated_ap(np.array([True, False]), 2) == pytest.approx(51 / 101)
    # hit at rank 2: precision 0.5 for recall <= 1
    assert interpolated_ap(np.array([False, True]), 1) == pytest.approx(0.5)


def test_duplicates_count_as_false_positives():
    g = [GroundTruth(0, 0, (0, 0, 10, 10))]
    d = [Detection(0, 0, 0.9, (0, 0, 10, 10)), Detection(0, 0, 0.8, (0, 0, 10, 10))]
    assert evaluate_ap(d, g).ap == 1.0
    d = [Detection(0, 0, 0.9, (50, 50, 60, 60)), Detection(0, 0, 0.8, (0, 0, 10, 10))]
    assert evaluate_ap(d, g).ap == pytest.approx(0.5)


def test_buckets_and_categories_without_gt():
    b = assign_frequency_buckets([0, 10, 11, 100, 101])
    assert b.buckets == ["rare", "rare", "common", "common", "frequent"]
    with pytest.raises(InvalidInputError):
        assign_frequency_buckets([-1])
    gts = [GroundTruth(0, 0, (0, 0, 10, 10)), GroundTruth(0, 2, (20, 20, 30, 30))]
    dets = [Detection(0, 0, 0.9, (0, 0, 10, 10)), Detection(0, 1, 0.9, (0, 0, 10, 10))]
    rep = evaluate_ap(dets, gts, buckets=assign_frequency_buckets([5, 50, 500]), category_names=["a", "b", "c"])
    assert rep.num_categories == 2
    assert rep.ap == pytest.approx(0.5)
    assert rep.ap_r == 1.0 and rep.ap_c is None and rep.ap_f == 0.0
    assert set(rep.per_category) == {"a", "c"}
    with pytest.raises(DataError):
        evaluate_ap(dets, [])


def test_report_serialization():
    gts = [GroundTruth(0, 0, (0, 0, 10, 10))]
    rep = evaluate_ap([Detection(0, 0, 0.5, (0, 0, 10, 10))], gts)
    assert json.loads(rep.to_json())["ap"] == 1.0
    table = rep.to_table("OVLW-DETR-S").splitlines()
    assert table[0].split() == ["Model", "AP", "APr", "APc", "APf", "Params", "Latency"]
    assert table[1].split()[:5] == ["OVLW-DETR-S", "100.0", "-", "-", "-"]
    res = detections_to_results([[Detection(3, 1, 0.5, (1, 2, 4, 8))]], category_ids=[10, 20])
    assert res == [{"image_id": 3, "category_id": 20, "bbox": [1, 2, 3, 6], "score": 0.5}]


def test_postprocess_top_n_and_scaling():
    logits = torch.tensor([[[0.0, 3.0], [2.0, -1.0], [1.0, 1.0]]])
    boxes = torch.tensor([[[0.5, 0.5, 0.2, 0.2]] * 3])
    out = DetectionOutput([logits], [boxes], torch.zeros(3, dtype=torch.long), 1)
    dets = postprocess(out, [(200, 100)], top_n=3, image_ids=[9])[0]
    assert [(d.category, round(d.score, 4)) for d in dets] == [(1, 0.9526), (0, 0.8808), (0, 0.7311)]
    assert dets[0].box == pytest.approx((80, 40, 120, 60))
    assert dets[2].image_id == 9
    with pytest.raises(InvalidInputError):
        postprocess(DetectionOutput([logits], [boxes], None, 2), [(1, 1)])


def test_flop_estimate_linear_in_vocab_only_through_alignment():
    cfg = ModelConfig.desk("S")
    a, b, c = (flop_estimate(cfg, n) for n in (10, 20, 30))
    assert b["total"] - a["total"] == c["total"] - b["total"] > 0
    assert {k for k in a if a[k] != b[k]} == {"alignment_logits", "total"}
    assert flop_estimate(cfg, 10, batch=2)["total"] == 2 * a["total"]
    assert flop_estimate(cfg, 10, mode="train")["decoder"] > a["decoder"]


def test_benchmark_validation(tiny_model, toy_table):
    imgs = [np.zeros((32, 32, 3), np.float32)]
    with pytest.raises(ConfigError):
        benchmark_latency(tiny_model, toy_table, imgs, trials=5)
    with pytest.raises(ConfigError):
        benchmark_latency(tiny_model, toy_table, imgs, warmup=1)
    with pytest.raises(ConfigError):
        benchmark_latency(tiny_model, toy_table, [])
    stats = benchmark_latency(tiny_model, toy_table, imgs, trials=10, warmup=3, top_n=10)
    assert len(stats.samples_ms) == 10 and all(math.isfinite(v) and v > 0 for v in stats.samples_ms)
    assert stats.min_ms <= stats.median_ms <= stats.p90_ms
    assert stats.environment["threads"] == 1
