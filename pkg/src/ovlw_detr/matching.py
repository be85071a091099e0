"""One-to-one assignment between queries and ground-truth objects."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .box_ops import box_cxcywh_to_xyxy, generalized_box_iou
from .errors import InvalidInputError


@dataclass
class MatchAssignment:
    """Matched (query, gt) index pairs, indexed as ``pairs[image][group]``."""

    pairs: list = field(default_factory=list)

    def group(self, image: int, group: int = 0):
        return self.pairs[image][group]


def _solve(cost: np.ndarray):
    """Shortest augmenting path Hungarian for n <= m rows.

    Returns (col_of_row, u, v) where u, v are optimal dual potentials with
    u[i] + v[j] <= cost[i, j] everywhere and equality on matched pairs.
    """
    n, m = cost.shape
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    row_of_col = np.zeros(m + 1, dtype=np.int64)  # 1-based rows, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    c = np.zeros((n + 1, m + 1))
    c[1:, 1:] = cost
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            cur = c[i0, 1:] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if row_of_col[j]:
            col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _optimal(cost: np.ndarray):
    """Optimal assignment of a Q x T matrix as (gt_of_query, total, reduced costs)."""
    Q, T = cost.shape
    gt_of_query = np.full(Q, -1, dtype=np.int64)
    if Q == 0 or T == 0:
        return gt_of_query, 0.0, np.zeros_like(cost)
    if T <= Q:
        q_of_gt, u, v = _solve(cost.T)
        gt_of_query[q_of_gt] = np.arange(T)
        reduced = cost - v[:, None] - u[None, :]
    else:
        gt_of_query, u, v = _solve(cost)
        reduced = cost - u[:, None] - v[None, :]
    rows = np.nonzero(gt_of_query >= 0)[0]
    return gt_of_query, _total(cost, rows, gt_of_query[rows]), reduced


def _total(cost, rows, cols) -> float:
    order = np.argsort(rows, kind="stable")
    return float(sum(cost[rows[k], cols[k]] for k in order))


def hungarian_match(cost) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost injective assignment of size min(Q, T).

    Among optimal assignments the lexicographically smallest is returned,
    comparing the per-query gt index (unmatched counts as larger than any
    gt). Returns (query_indices, gt_indices) sorted by query index.
    """
    if isinstance(cost, torch.Tensor):
        cost = cost.detach().cpu().double().numpy()
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InvalidInputError(f"cost must be 2-D, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise InvalidInputError("cost matrix contains NaN")
    if not np.isfinite(cost).all():
        raise InvalidInputError("cost matrix contains infinite entries")
    Q, T = cost.shape
    if Q == 0 or T == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    gt_of_query, best, reduced = _optimal(cost)
    gt_of_query = _canonicalize(cost, gt_of_query, best, reduced)
    rows = np.nonzero(gt_of_query >= 0)[0]
    return rows, gt_of_query[rows]


def _canonicalize(cost, gt_of_query, best, reduced):
    """Swap to the lexicographically smallest optimum.

    Only zero-reduced-cost edges can appear in any optimal assignment, so
    candidates are limited to those; each candidate is confirmed by re-solving
    with the decided prefix forced.
    """
    Q, T = cost.shape
    scale = max(1.0, float(np.abs(cost).max()))
    tol = 1e-9 * scale * (Q + T)
    tight = reduced <= tol
    current = gt_of_query.copy()
    fixed_rows, fixed_cols = [], []
    dropped = []  # queries decided to stay unmatched
    for i in range(Q):
        cur = current[i] if current[i] >= 0 else T
        for j in range(cur):
            if not tight[i, j] or j in fixed_cols:
                continue
            trial = _forced(cost, fixed_rows + [i], fixed_cols + [j], dropped)
            if trial is not None and trial[1] <= best + tol:
                current = trial[0]
                break
        if current[i] >= 0:
            fixed_rows.append(i)
            fixed_cols.append(int(current[i]))
        else:
            dropped.append(i)
    return current


def _forced(cost, rows, cols, dropped):
    Q, T = cost.shape
    free_r = [r for r in range(Q) if r not in rows and r not in dropped]
    free_c = [c for c in range(T) if c not in cols]
    need = min(Q, T) - len(rows)
    sub_total = 0.0
    result = np.full(Q, -1, dtype=np.int64)
    result[rows] = cols
    if need > 0:
        if len(free_r) < need or len(free_c) < need:
            return None
        sub = cost[np.ix_(free_r, free_c)]
        assign, _, _ = _optimal(sub)
        for a, b in enumerate(assign):
            if b >= 0:
                result[free_r[a]] = free_c[b]
    r = np.nonzero(result >= 0)[0]
    sub_total = _total(cost, r, result[r])
    return result, sub_total


def matching_cost(logits: torch.Tensor, pred_boxes: torch.Tensor, gt_labels: torch.Tensor,
                  gt_boxes: torch.Tensor, w_cls: float = 2.0, w_l1: float = 5.0,
                  w_giou: float = 2.0) -> torch.Tensor:
    """[Q, T] cost: -w_cls * p[label] + w_l1 * L1(cxcywh) + w_giou * (1 - GIoU).

    Boxes are normalized cxcywh. Empty ground truth gives a [Q, 0] matrix.
    """
    Q = logits.shape[0]
    if gt_labels.numel() == 0:
        return logits.new_zeros(Q, 0)
    if int(gt_labels.max()) >= logits.shape[-1] or int(gt_labels.min()) < 0:
        raise InvalidInputError("gt label outside the logit columns")
    prob = logits.sigmoid()
    cost_cls = -prob[:, gt_labels]
    cost_l1 = torch.cdist(pred_boxes, gt_boxes.to(pred_boxes.dtype), p=1)
    cost_giou = 1 - generalized_box_iou(box_cxcywh_to_xyxy(pred_boxes),
                                        box_cxcywh_to_xyxy(gt_boxes.to(pred_boxes.dtype)))
    return w_cls * cost_cls + w_l1 * cost_l1 + w_giou * cost_giou
