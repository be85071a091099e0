"""IA-BCE classification loss, box losses and the Group DETR aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .box_ops import box_cxcywh_to_xyxy, elementwise_box_iou, elementwise_giou
from .errors import InvalidInputError
from .matching import MatchAssignment, hungarian_match, matching_cost


@dataclass
class LossWeights:
    cls: float = 2.0
    l1: float = 5.0
    giou: float = 2.0
    alpha: float = 0.25
    match_cls: float = 2.0
    match_l1: float = 5.0
    match_giou: float = 2.0


@dataclass
class LossBreakdown:
    """Per-term losses for each decoder layer (``dec0``..) and the encoder head (``enc``).

    Decoder entries are already averaged over groups.
    """

    terms: dict = field(default_factory=dict)
    weights: LossWeights = field(default_factory=LossWeights)
    total: torch.Tensor | None = None
    num_groups: int = 1
    assignments: dict = field(default_factory=dict)

    def as_floats(self) -> dict:
        out = {"total": float(self.total.detach())}
        for stage, parts in self.terms.items():
            for name, value in parts.items():
                out[f"{stage}.{name}"] = float(value.detach())
        return out


def ia_bce_target(prob: torch.Tensor, iou: torch.Tensor, alpha: float = 0.25) -> torch.Tensor:
    """t = p**alpha * u**(1 - alpha), always in [0, 1]."""
    return prob.clamp(0, 1).pow(alpha) * iou.clamp(0, 1).pow(1 - alpha)


def ia_bce_loss(logits: torch.Tensor, query_idx, gt_idx, gt_labels: torch.Tensor,
                pred_boxes: torch.Tensor, gt_boxes: torch.Tensor, alpha: float = 0.25,
                num_pos: float | None = None, detach_target: bool = True) -> torch.Tensor:
    """IoU-aware BCE over a [Q, C] logit block.

    Matched (query, label) cells are pulled toward ``p**alpha * IoU**(1-alpha)``;
    every other cell toward 0. The sum is divided by the positive count.
    ``detach_target`` stops gradients through the soft target (training
    default); turning it off makes the loss a plain differentiable function of
    logits and boxes.
    """
    if not 0 < alpha < 1:
        raise InvalidInputError("alpha must lie in (0, 1)")
    query_idx = torch.as_tensor(query_idx, dtype=torch.long, device=logits.device)
    gt_idx = torch.as_tensor(gt_idx, dtype=torch.long, device=logits.device)
    target = torch.zeros_like(logits)
    if query_idx.numel():
        labels = gt_labels[gt_idx]
        prob = logits[query_idx, labels].sigmoid()
        iou = elementwise_box_iou(box_cxcywh_to_xyxy(pred_boxes[query_idx]),
                                  box_cxcywh_to_xyxy(gt_boxes[gt_idx].to(pred_boxes.dtype)))
        tau = ia_bce_target(prob, iou, alpha)
        if detach_target:
            tau = tau.detach()
        target = target.index_put((query_idx, labels), tau)
    loss = F.binary_cross_entropy_with_logits(logits, target, reduction="sum")
    denom = float(max(query_idx.numel(), 1)) if num_pos is None else max(float(num_pos), 1.0)
    return loss / denom


def box_losses(pred_boxes, gt_boxes, query_idx, gt_idx, num_pos=None):
    """Summed L1 (cxcywh) and 1 - GIoU over matched pairs, divided by the positive count."""
    n = len(query_idx)
    denom = float(max(n, 1)) if num_pos is None else max(float(num_pos), 1.0)
    if n == 0:
        zero = pred_boxes.sum() * 0.0
        return zero, zero
    src = pred_boxes[query_idx]
    tgt = gt_boxes[gt_idx].to(src.dtype)
    l1 = (src - tgt).abs().sum() / denom
    g = (1 - elementwise_giou(box_cxcywh_to_xyxy(src), box_cxcywh_to_xyxy(tgt))).sum() / denom
    return l1, g


def _match_batch(logits, boxes, targets, w: LossWeights):
    """Per-image assignment for a [B, Q, C] block, returned as flat indices into B*Q."""
    B, Q, C = logits.shape
    q_all, t_all, per_image = [], [], []
    sizes = [len(t["labels"]) for t in targets]
    with torch.no_grad():
        cost = None
        if sum(sizes):
            # one [B*Q, T_total] cost matrix, sliced per image
            labels = torch.cat([t["labels"] for t in targets])
            gt = torch.cat([t["boxes"] for t in targets])
            cost = matching_cost(logits.reshape(B * Q, C), boxes.reshape(B * Q, 4), labels, gt,
                                 w.match_cls, w.match_l1, w.match_giou)
            cost = cost.view(B, Q, -1).double().cpu().numpy()
        offset_t = 0
        for b, n in enumerate(sizes):
            if n == 0:
                per_image.append([])
                continue
            qi, ti = hungarian_match(cost[b, :, offset_t:offset_t + n])
            per_image.append(list(zip(qi.tolist(), ti.tolist())))
            q_all.extend((qi + b * Q).tolist())
            t_all.extend((ti + offset_t).tolist())
            offset_t += n
    return q_all, t_all, per_image


def set_loss(logits, boxes, targets, w: LossWeights, num_pos: float):
    """Match and compute (cls, l1, giou) for one [B, Q, ...] block of predictions."""
    B, Q, C = logits.shape
    q_idx, t_idx, per_image = _match_batch(logits, boxes, targets, w)
    gt_labels = torch.cat([t["labels"] for t in targets]) if targets else logits.new_zeros(0, dtype=torch.long)
    gt_boxes = torch.cat([t["boxes"] for t in targets]) if targets else logits.new_zeros(0, 4)
    flat_logits = logits.reshape(B * Q, C)
    flat_boxes = boxes.reshape(B * Q, 4)
    cls = ia_bce_loss(flat_logits, q_idx, t_idx, gt_labels, flat_boxes, gt_boxes,
                      alpha=w.alpha, num_pos=num_pos)
    l1, g = box_losses(flat_boxes, gt_boxes, q_idx, t_idx, num_pos=num_pos)
    return {"cls": cls, "l1": l1, "giou": g}, per_image


def _weighted(parts, w: LossWeights):
    return w.cls * parts["cls"] + w.l1 * parts["l1"] + w.giou * parts["giou"]


def group_detr_loss(outputs, targets, weights: LossWeights | None = None,
                    num_groups: int | None = None) -> LossBreakdown:
    """Group DETR objective.

    Each group is matched one-to-one on its own at every decoder layer; the
    decoder terms are summed over layers and groups and divided by the group
    count. The encoder-stage auxiliary term is shared by all groups and is
    added once. ``targets`` is a list of dicts with ``labels`` [T] and
    normalized cxcywh ``boxes`` [T, 4].
    """
    w = weights or LossWeights()
    G = outputs.num_groups if num_groups is None else num_groups
    if outputs.group_ids is None:
        raise InvalidInputError("outputs carry no group ids")
    if G != outputs.num_groups:
        raise InvalidInputError(f"outputs have {outputs.num_groups} groups, expected {G}")
    num_pos = sum(len(t["labels"]) for t in targets)
    gids = outputs.group_ids
    group_slices = [torch.nonzero(gids == g).flatten() for g in range(G)]

    terms, assignments = {}, {}
    total = 0.0
    for layer, (logits, boxes) in enumerate(zip(outputs.logits, outputs.boxes)):
        acc = None
        matches = []
        for g, idx in enumerate(group_slices):
            parts, per_image = set_loss(logits[:, idx], boxes[:, idx], targets, w, num_pos)
            matches.append(per_image)
            acc = parts if acc is None else {k: acc[k] + parts[k] for k in acc}
        parts = {k: v / G for k, v in acc.items()}
        terms[f"dec{layer}"] = parts
        assignments[f"dec{layer}"] = MatchAssignment(
            [[matches[g][b] for g in range(G)] for b in range(len(targets))])
        total = total + _weighted(parts, w)
    if outputs.enc_logits is not None:
        parts, per_image = set_loss(outputs.enc_logits, outputs.enc_boxes, targets, w, num_pos)
        terms["enc"] = parts
        assignments["enc"] = MatchAssignment([[p] for p in per_image])
        total = total + _weighted(parts, w)
    if not isinstance(total, torch.Tensor):
        raise InvalidInputError("outputs contain no predictions")
    return LossBreakdown(terms, w, total, G, assignments)


def single_group_loss(logits_per_layer, boxes_per_layer, targets, weights=None,
                      enc_logits=None, enc_boxes=None) -> torch.Tensor:
    """Reference objective for one group without any grouping logic."""
    w = weights or LossWeights()
    num_pos = sum(len(t["labels"]) for t in targets)
    total = 0.0
    for logits, boxes in zip(logits_per_layer, boxes_per_layer):
        parts, _ = set_loss(logits, boxes, targets, w, num_pos)
        total = total + _weighted(parts, w)
    if enc_logits is not None:
        parts, _ = set_loss(enc_logits, enc_boxes, targets, w, num_pos)
        total = total + _weighted(parts, w)
    return total
