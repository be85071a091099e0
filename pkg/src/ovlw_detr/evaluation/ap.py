"""COCO-style box AP with LVIS-style rare / common / frequent buckets."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..box_ops import box_cxcywh_to_xyxy
from ..errors import DataError, InvalidInputError

IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
BUCKETS = ("rare", "common", "frequent")


@dataclass
class Detection:
    image_id: int
    category: int
    score: float
    box: tuple  # xyxy absolute


@dataclass
class GroundTruth:
    image_id: int
    category: int
    box: tuple  # xyxy absolute


@dataclass
class FrequencyBuckets:
    buckets: list            # per category: "rare" | "common" | "frequent"
    r_max: int = 10
    c_max: int = 100

    def members(self, bucket: str) -> list:
        return [c for c, b in enumerate(self.buckets) if b == bucket]


def assign_frequency_buckets(counts, r_max: int = 10, c_max: int = 100) -> FrequencyBuckets:
    """rare: <= r_max training images, common: <= c_max, frequent otherwise."""
    out = []
    for n in counts:
        if n < 0:
            raise InvalidInputError("category counts must be non-negative")
        out.append("rare" if n <= r_max else "common" if n <= c_max else "frequent")
    return FrequencyBuckets(out, r_max, c_max)


@dataclass
class EvalReport:
    ap: float
    ap50: float
    ap_r: float | None
    ap_c: float | None
    ap_f: float | None
    per_category: dict
    num_categories: int = 0
    vocab_size: int = 0
    size_tag: str = ""
    params: int | None = None
    latency: dict | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_table(self, model_name: str = "model") -> str:
        """Plain-text row in the order Model | AP | APr | APc | APf | Params | Latency."""
        def pct(v):
            return "-" if v is None else f"{100 * v:.1f}"

        params = "-" if self.params is None else f"{self.params / 1e6:.2f}M"
        lat = "" if not self.latency else f"{self.latency['mean_ms']:.2f}"
        header = ["Model", "AP", "APr", "APc", "APf", "Params", "Latency"]
        row = [model_name, pct(self.ap), pct(self.ap_r), pct(self.ap_c), pct(self.ap_f), params, lat]
        widths = [max(len(h), len(r)) for h, r in zip(header, row)]
        fmt = "  ".join("{:<%d}" % w for w in widths)
        return fmt.format(*header) + "\n" + fmt.format(*row) + "\n"


def postprocess(output, image_sizes, top_n: int = 300, image_ids=None):
    """Keep the global top-``top_n`` (query, category) pairs per image.

    ``image_sizes`` holds (width, height) of each original image; boxes are
    returned in absolute xyxy at that size. Ties keep the lower flat index.
    """
    if output.num_groups != 1:
        raise InvalidInputError("postprocess expects single-group (eval mode) output")
    logits, boxes = output.pred_logits, output.pred_boxes
    B, Q, C = logits.shape
    image_ids = list(range(B)) if image_ids is None else list(image_ids)
    results = []
    with torch.no_grad():
        probs = logits.sigmoid().reshape(B, Q * C)
        xyxy = box_cxcywh_to_xyxy(boxes)
        for b in range(B):
            n = min(top_n, Q * C)
            order = torch.argsort(probs[b], descending=True, stable=True)[:n]
            w, h = image_sizes[b]
            scale = torch.tensor([w, h, w, h], dtype=xyxy.dtype)
            dets = []
            for flat in order.tolist():
                q, c = divmod(flat, C)
                box = (xyxy[b, q] * scale).tolist()
                dets.append(Detection(image_ids[b], c, float(probs[b, flat]), tuple(box)))
            results.append(dets)
    return results


def _iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    area_a = (a[:, 2] - a[:, 0]).clip(0) * (a[:, 3] - a[:, 1]).clip(0)
    area_b = (b[:, 2] - b[:, 0]).clip(0) * (b[:, 3] - b[:, 1]).clip(0)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clip(0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def interpolated_ap(tp: np.ndarray, num_gt: int) -> float:
    """101-point interpolated AP from score-ordered true-positive flags."""
    if num_gt == 0:
        raise ValueError("num_gt must be positive")
    if len(tp) == 0:
        return 0.0
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / num_gt
    precision = tps / (tps + fps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return math.fsum(q) / len(RECALL_POINTS)


def _category_ap(dets, gts, thresholds):
    """Per-threshold AP of one category; dets/gts are lists for that category only."""
    num_gt = len(gts)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)  # stable
    dets = [dets[i] for i in order]
    gt_by_img = {}
    for k, g in enumerate(gts):
        gt_by_img.setdefault(g.image_id, []).append(k)
    det_by_img = {}
    for k, d in enumerate(dets):
        det_by_img.setdefault(d.image_id, []).append(k)
    ious = {}
    for img, dk in det_by_img.items():
        gk = gt_by_img.get(img, [])
        if gk:
            ious[img] = _iou_matrix(np.array([dets[k].box for k in dk], dtype=np.float64),
                                    np.array([gts[k].box for k in gk], dtype=np.float64))
    out = []
    for thr in thresholds:
        tp = np.zeros(len(dets), dtype=bool)
        for img, dk in det_by_img.items():
            if img not in ious:
                continue
            m = ious[img]
            taken = np.zeros(m.shape[1], dtype=bool)
            for row, k in enumerate(dk):
                cand = np.where(taken | (m[row] < thr), -1.0, m[row])
                j = int(np.argmax(cand))
                if cand[j] >= 0:
                    taken[j] = True
                    tp[k] = True
        out.append(interpolated_ap(tp, num_gt))
    return out


def evaluate_ap(detections, ground_truth, iou_thresholds=IOU_THRESHOLDS, buckets: FrequencyBuckets | None = None,
                category_names=None) -> EvalReport:
    """Mean AP over categories that have ground truth, averaged over IoU thresholds."""
    detections = [d for per_image in detections for d in per_image] \
        if detections and isinstance(detections[0], list) else list(detections)
    gts = list(ground_truth)
    if not gts:
        raise DataError("no ground-truth boxes to evaluate against")
    thresholds = tuple(float(t) for t in iou_thresholds)
    dets_by_cat, gts_by_cat = {}, {}
    for d in detections:
        dets_by_cat.setdefault(d.category, []).append(d)
    for g in gts:
        gts_by_cat.setdefault(g.category, []).append(g)
    per_cat, per_cat50 = {}, {}
    for c in sorted(gts_by_cat):
        aps = _category_ap(dets_by_cat.get(c, []), gts_by_cat[c], thresholds)
        per_cat[c] = math.fsum(aps) / len(aps)
        per_cat50[c] = aps[thresholds.index(0.5)] if 0.5 in thresholds else float("nan")

    def mean(cats):
        vals = [per_cat[c] for c in cats if c in per_cat]
        return math.fsum(vals) / len(vals) if vals else None

    ap = mean(per_cat)
    ap50 = math.fsum(per_cat50.values()) / len(per_cat50)
    bucket_ap = {b: None for b in BUCKETS}
    if buckets is not None:
        for b in BUCKETS:
            bucket_ap[b] = mean(buckets.members(b))
    names = category_names or {}
    per_category = {(names[c] if c < len(names) else str(c)): v for c, v in per_cat.items()}
    return EvalReport(ap=ap, ap50=ap50, ap_r=bucket_ap["rare"], ap_c=bucket_ap["common"],
                      ap_f=bucket_ap["frequent"], per_category=per_category,
                      num_categories=len(per_cat), vocab_size=len(names))


def detections_to_results(detections, category_ids=None) -> list:
    """coco-results-like records: image_id, category_id, bbox [x, y, w, h], score."""
    out = []
    for d in (d for per_image in detections for d in per_image):
        x0, y0, x1, y1 = d.box
        cat = category_ids[d.category] if category_ids is not None else d.category
        out.append({"image_id": d.image_id, "category_id": cat,
                    "bbox": [round(x0, 4), round(y0, 4), round(x1 - x0, 4), round(y1 - y0, 4)],
                    "score": round(d.score, 6)})
    return out
