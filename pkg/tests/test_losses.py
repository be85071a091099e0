import math

import pytest
import torch
import torch.nn.functional as F

from ovlw_detr.errors import InvalidInputError
from ovlw_detr.losses import (LossWeights, box_losses, group_detr_loss, ia_bce_loss, ia_bce_target,
                              single_group_loss)


def test_ia_bce_target_values():
    p = torch.tensor([0.0, 1.0, 0.5, 0.5])
    u = torch.tensor([1.0, 0.0, 1.0, 0.5])
    t = ia_bce_target(p, u, alpha=0.25)
    assert t[0] == 0 and t[1] == 0
    assert t[2].item() == pytest.approx(0.5 ** 0.25)
    assert t[3].item() == pytest.approx(0.5)
    assert ((t >= 0) & (t <= 1)).all()


def test_ia_bce_matches_hand_computation():
    logits = torch.tensor([[0.3, -1.0], [2.0, 0.5], [-0.2, 0.1]], dtype=torch.float64)
    boxes = torch.tensor([[0.5, 0.5, 0.4, 0.4], [0.3, 0.3, 0.2, 0.2], [0.7, 0.7, 0.1, 0.1]], dtype=torch.float64)
    gt_boxes = torch.tensor([[0.5, 0.5, 0.2, 0.4]], dtype=torch.float64)
    gt_labels = torch.tensor([1])
    loss = ia_bce_loss(logits, [0], [0], gt_labels, boxes, gt_boxes, alpha=0.25)
    iou = 0.5  # same centre, half the width
    tau = torch.sigmoid(torch.tensor(-1.0, dtype=torch.float64)) ** 0.25 * iou ** 0.75
    target = torch.zeros_like(logits)
    target[0, 1] = tau
    expected = F.binary_cross_entropy_with_logits(logits, target, reduction="sum")
    assert loss.item() == pytest.approx(expected.item(), rel=1e-12)


def test_ia_bce_normalizes_by_positives_and_detaches_target():
    logits = torch.zeros(4, 3, requires_grad=True)
    boxes = torch.tensor([[0.5, 0.5, 0.2, 0.2]] * 4, requires_grad=True)
    gt = torch.tensor([[0.5, 0.5, 0.2, 0.2], [0.5, 0.5, 0.2, 0.2]])
    a = ia_bce_loss(logits, [0, 1], [0, 1], torch.tensor([0, 2]), boxes, gt, num_pos=2)
    b = ia_bce_loss(logits, [0, 1], [0, 1], torch.tensor([0, 2]), boxes, gt, num_pos=4)
    assert a.item() == pytest.approx(2 * b.item())
    a.backward()
    assert boxes.grad is None or torch.count_nonzero(boxes.grad) == 0
    with pytest.raises(InvalidInputError):
        ia_bce_loss(logits, [], [], torch.tensor([0]), boxes, gt, alpha=1.0)


def test_no_positives_is_pure_negative_bce():
    logits = torch.full((3, 2), -2.0)
    loss = ia_bce_loss(logits, [], [], torch.zeros(0, dtype=torch.long), torch.rand(3, 4) * 0.5, torch.zeros(0, 4))
    assert loss.item() == pytest.approx(6 * math.log1p(math.exp(-2.0)))


def test_box_losses_zero_when_exact():
    boxes = torch.tensor([[0.5, 0.5, 0.2, 0.3]])
    l1, g = box_losses(boxes, boxes, [0], [0])
    assert l1.item() == 0 and g.item() == pytest.approx(0, abs=1e-7)


def _targets():
    return [{"labels": torch.tensor([0, 2]), "boxes": torch.tensor([[0.3, 0.3, 0.2, 0.2], [0.7, 0.6, 0.3, 0.2]])},
            {"labels": torch.tensor([1]), "boxes": torch.tensor([[0.5, 0.5, 0.4, 0.4]])}]


def test_group_loss_is_mean_of_per_group_losses(tiny_model, toy_table):
    torch.manual_seed(1)
    images = torch.rand(2, 3, 32, 32)
    out = tiny_model(images, toy_table.as_tensor(), mode="train")
    w = LossWeights()
    total = group_detr_loss(out, _targets(), w).total
    G = out.num_groups
    per_group = []
    for g in range(G):
        idx = torch.nonzero(out.group_ids == g).flatten()
        per_group.append(single_group_loss([lg[:, idx] for lg in out.logits], [b[:, idx] for b in out.boxes],
                                           _targets(), w))
    enc = single_group_loss([], [], _targets(), w, out.enc_logits, out.enc_boxes)
    expected = sum(per_group) / G + enc
    assert total.item() == pytest.approx(expected.item(), rel=1e-6)


def test_group_detr_loss_validates(tiny_model, toy_table):
    out = tiny_model(torch.rand(1, 3, 32, 32), toy_table.as_tensor(), mode="train")
    with pytest.raises(InvalidInputError):
        group_detr_loss(out, _targets()[:1], num_groups=2)
    breakdown = group_detr_loss(out, _targets()[:1])
    floats = breakdown.as_floats()
    assert {"total", "dec0.cls", "dec1.giou", "enc.l1"} <= set(floats)
    pairs = breakdown.assignments["dec1"].group(0, 2)
    assert len(pairs) == 2
