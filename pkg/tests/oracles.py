"""Independent reference implementations used only by the tests.

Each oracle is written from the definition, in plain Python where
practical, and shares no code with the package.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import torch


# -- assignment ------------------------------------------------------------

def brute_force_assignment(cost):
    """Minimum total over all injections of the smaller side into the larger."""
    rows, cols = len(cost), len(cost[0]) if len(cost) else 0
    if rows == 0 or cols == 0:
        return 0.0
    best = math.inf
    if rows <= cols:
        for perm in itertools.permutations(range(cols), rows):
            best = min(best, math.fsum(cost[i][perm[i]] for i in range(rows)))
    else:
        for perm in itertools.permutations(range(rows), cols):
            best = min(best, math.fsum(cost[perm[j]][j] for j in range(cols)))
    return best


# -- boxes -----------------------------------------------------------------

def giou_exact(a, b) -> Fraction:
    """GIoU of two xyxy boxes in exact rational arithmetic."""
    a = [Fraction(v) for v in a]
    b = [Fraction(v) for v in b]
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])  # noqa: E731
    iw = max(Fraction(0), min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(Fraction(0), min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = area(a) + area(b) - inter
    hull = (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))
    return inter / union - (hull - union) / hull


def iou_py(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1]) + max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


# -- alignment logits ---------------------------------------------------------

def naive_alignment_logits(embs, table, weight, bias, scale, logit_bias):
    """Double loop over (row, class) of s * cos(W e + b, t_c) + logit_bias."""
    out = []
    for e in embs:
        z = [sum(weight[i][k] * e[k] for k in range(len(e))) + bias[i] for i in range(len(bias))]
        nz = max(math.sqrt(sum(v * v for v in z)), 1e-8)
        row = []
        for t in table:
            cos = sum(z[i] * t[i] for i in range(len(z))) / nz
            row.append(scale * max(-1.0, min(1.0, cos)) + logit_bias)
        out.append(row)
    return out


# -- finite differences --------------------------------------------------------

def central_difference(fn, inputs, eps: float = 1e-6):
    """Numerical gradient of scalar ``fn(*inputs)`` w.r.t. each input tensor."""
    grads = []
    for x in inputs:
        g = torch.zeros_like(x)
        flat, gflat = x.view(-1), g.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + eps
            hi = float(fn(*inputs))
            flat[i] = old - eps
            lo = float(fn(*inputs))
            flat[i] = old
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric) -> float:
    """max |a - n| / max(max |a|, max |n|), over all inputs together."""
    diff = max(float((a - n).abs().max()) for a, n in zip(analytic, numeric))
    scale = max(max(float(a.abs().max()), float(n.abs().max())) for a, n in zip(analytic, numeric))
    return diff / scale if scale > 0 else diff


# -- average precision ---------------------------------------------------------

def reference_ap(detections, ground_truth, thresholds=(0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)):
    """COCO-style AP from the definition.

    detections: (image_id, category, score, box) tuples; ground_truth:
    (image_id, category, box). Detections are ranked by score (stable for
    ties); each takes the still-unmatched gt of its image and category with
    the highest IoU >= threshold, lowest gt index on ties. Precision is
    interpolated at 101 recall points. Returns (AP, AP50, {category: AP}).
    """
    cats = sorted({g[1] for g in ground_truth})
    per_cat, per_cat50 = {}, {}
    for c in cats:
        gts = [g for g in ground_truth if g[1] == c]
        dets = [d for d in detections if d[1] == c]
        dets = sorted(dets, key=lambda d: -d[2])
        aps = []
        for thr in thresholds:
            taken = [False] * len(gts)
            flags = []
            for d in dets:
                best, best_iou = -1, -1.0
                for k, g in enumerate(gts):
                    if g[0] != d[0] or taken[k]:
                        continue
                    v = iou_py(d[3], g[2])
                    if v >= thr and v > best_iou:
                        best, best_iou = k, v
                if best >= 0:
                    taken[best] = True
                flags.append(best >= 0)
            prec, rec = [], []
            tp = fp = 0
            for f in flags:
                tp += f
                fp += not f
                prec.append(tp / (tp + fp))
                rec.append(tp / len(gts))
            points = []
            for i in range(101):
                r = i * 0.01  # the COCO grid, np.linspace(0, 1, 101)
                cand = [p for p, q in zip(prec, rec) if q >= r]
                points.append(max(cand) if cand else 0.0)
            aps.append(math.fsum(points) / 101)
        per_cat[c] = math.fsum(aps) / len(aps)
        per_cat50[c] = aps[list(thresholds).index(0.5)] if 0.5 in thresholds else float("nan")
    ap = math.fsum(per_cat.values()) / len(per_cat)
    ap50 = math.fsum(per_cat50.values()) / len(per_cat50)
    return ap, ap50, per_cat
