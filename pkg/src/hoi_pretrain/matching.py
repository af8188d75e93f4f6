"""Bipartite matching between predicted and ground-truth objects."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .boxes import cxcywh_to_xyxy, pairwise_giou


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int]]
    unmatched_queries: List[int]
    total_cost: float
    num_queries: int = 0
    num_targets: int = 0

    @property
    def query_indices(self) -> List[int]:
        return [q for q, _ in self.pairs]

    @property
    def target_indices(self) -> List[int]:
        return [t for _, t in self.pairs]


def hungarian_match(cost) -> MatchResult:
    """Minimum-cost injective assignment of rows (queries) to columns (targets)."""
    cost = np.asarray(cost.detach().cpu() if torch.is_tensor(cost) else cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a 2D matrix, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains infinite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        return MatchResult([], list(range(n)), 0.0, n, m)
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    matched = {q for q, _ in pairs}
    total = float(sum(cost[q, t] for q, t in pairs))
    return MatchResult(pairs, [q for q in range(n) if q not in matched], total, n, m)


def detection_cost(pred_boxes: torch.Tensor, object_logits: torch.Tensor,
                   target_boxes: torch.Tensor, target_labels: torch.Tensor,
                   box_weight: float = 5.0, giou_weight: float = 2.0,
                   cls_weight: float = 1.0) -> torch.Tensor:
    """Matching cost [N, M]: weighted L1, negated GIoU and negated class probability."""
    with torch.no_grad():
        prob = object_logits.softmax(-1)
        cost_class = -prob[:, target_labels]
        cost_l1 = torch.cdist(pred_boxes, target_boxes.to(pred_boxes.dtype), p=1)
        cost_giou = -pairwise_giou(cxcywh_to_xyxy(pred_boxes), cxcywh_to_xyxy(target_boxes.to(pred_boxes.dtype)))
        return box_weight * cost_l1 + cls_weight * cost_class + giou_weight * cost_giou


def match_detections(pred_boxes, object_logits, target_boxes, target_labels, weights) -> MatchResult:
    if target_boxes.shape[0] == 0:
        n = pred_boxes.shape[0]
        return MatchResult([], list(range(n)), 0.0, n, 0)
    cost = detection_cost(pred_boxes, object_logits, target_boxes, target_labels,
                          weights.box, weights.giou, weights.cls)
    return hungarian_match(cost)
