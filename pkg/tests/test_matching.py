import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hoi_pretrain.boxes import (
    cxcywh_to_xyxy,
    elementwise_giou,
    elementwise_iou,
    pairwise_giou,
    pairwise_iou,
    xyxy_to_cxcywh,
)
from hoi_pretrain.config import LossWeights
from hoi_pretrain.matching import detection_cost, hungarian_match, match_detections


def brute_force_min(cost):
    n, m = cost.shape
    if n >= m:
        candidates = (list(zip(rows, range(m))) for rows in itertools.permutations(range(n), m))
    else:
        candidates = (list(zip(range(n), cols)) for cols in itertools.permutations(range(m), n))
    best = None
    for pairs in candidates:
        pairs = sorted(pairs)
        total = float(sum(cost[q, t] for q, t in pairs))
        if best is None or total < best[0]:
            best = (total, pairs)
    return best


def test_two_by_two_prefers_diagonal():
    result = hungarian_match([[1.0, 2.0], [2.0, 1.0]])
    assert result.pairs == [(0, 0), (1, 1)]
    assert result.total_cost == 2.0
    assert result.unmatched_queries == []


def test_single_cell():
    result = hungarian_match([[5.0]])
    assert result.pairs == [(0, 0)]
    assert result.total_cost == 5.0


def test_five_queries_three_targets_matches_all_injections():
    cost = np.random.default_rng(3).random((5, 3))
    result = hungarian_match(cost)
    total, _ = brute_force_min(cost)
    assert result.total_cost == total
    assert len(result.pairs) == 3
    assert sorted(result.unmatched_queries + result.query_indices) == list(range(5))


def test_rejects_nan_and_inf():
    with pytest.raises(ValueError, match="NaN"):
        hungarian_match([[np.nan, 1.0]])
    with pytest.raises(ValueError, match="infinite"):
        hungarian_match([[np.inf, 1.0]])
    with pytest.raises(ValueError):
        hungarian_match([1.0, 2.0])


def test_empty_targets_leave_every_query_unmatched():
    result = hungarian_match(np.zeros((4, 0)))
    assert result.pairs == []
    assert result.unmatched_queries == [0, 1, 2, 3]


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_assignment_is_injective_and_optimal(cost):
    result = hungarian_match(cost)
    n, m = cost.shape
    assert len(result.pairs) == min(n, m)
    assert len(set(result.query_indices)) == len(result.pairs)
    assert len(set(result.target_indices)) == len(result.pairs)
    total, _ = brute_force_min(cost)
    np.testing.assert_allclose(result.total_cost, total, rtol=0, atol=1e-9)


def test_matching_cost_combines_l1_probability_and_giou():
    pred = torch.tensor([[0.5, 0.5, 0.2, 0.2], [0.2, 0.2, 0.1, 0.1]], dtype=torch.float64)
    logits = torch.tensor([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64)
    target = torch.tensor([[0.5, 0.5, 0.2, 0.2]], dtype=torch.float64)
    labels = torch.tensor([1])
    cost = detection_cost(pred, logits, target, labels)
    prob = logits.softmax(-1)[:, 1]
    l1 = (pred - target).abs().sum(-1)
    giou = pairwise_giou(cxcywh_to_xyxy(pred), cxcywh_to_xyxy(target))[:, 0]
    np.testing.assert_allclose(cost[:, 0].numpy(), (5 * l1 - prob - 2 * giou).numpy(), atol=1e-12)


def test_match_detections_prefers_the_overlapping_query():
    pred = torch.tensor([[0.1, 0.1, 0.1, 0.1], [0.52, 0.5, 0.2, 0.2], [0.9, 0.9, 0.1, 0.1]])
    logits = torch.zeros(3, 4)
    target = torch.tensor([[0.5, 0.5, 0.2, 0.2]])
    result = match_detections(pred, logits, target, torch.tensor([0]), LossWeights())
    assert result.pairs == [(1, 0)]


# ---------------------------------------------------------------------------
# box geometry

def test_box_conversion_round_trip():
    boxes = torch.tensor([[0.5, 0.4, 0.2, 0.3], [0.1, 0.9, 0.05, 0.1]], dtype=torch.float64)
    np.testing.assert_allclose(xyxy_to_cxcywh(cxcywh_to_xyxy(boxes)).numpy(), boxes.numpy(), atol=1e-15)


def test_disjoint_equal_boxes_have_negative_giou():
    a = cxcywh_to_xyxy(torch.tensor([[0.2, 0.5, 0.1, 0.1]], dtype=torch.float64))
    b = cxcywh_to_xyxy(torch.tensor([[0.8, 0.5, 0.1, 0.1]], dtype=torch.float64))
    giou = float(elementwise_giou(a, b)[0])
    # enclosing box is 0.7 x 0.1, union is two 0.1 x 0.1 squares
    expected = 0.0 - (0.07 - 0.02) / 0.07
    np.testing.assert_allclose(giou, expected, atol=1e-12)
    assert 1 - giou > 1


def test_pairwise_matches_elementwise_on_the_diagonal():
    rng = np.random.default_rng(0)
    centers = rng.uniform(0.2, 0.8, (6, 2))
    sizes = rng.uniform(0.05, 0.3, (6, 2))
    boxes = cxcywh_to_xyxy(torch.as_tensor(np.hstack([centers, sizes])))
    other = boxes.flip(0)
    np.testing.assert_allclose(pairwise_giou(boxes, other).diagonal().numpy(),
                               elementwise_giou(boxes, other).numpy(), atol=1e-12)
    iou, _ = pairwise_iou(boxes, other)
    np.testing.assert_allclose(iou.diagonal().numpy(), elementwise_iou(boxes, other).numpy(), atol=1e-12)


box_strategy = st.tuples(st.floats(0.1, 0.9), st.floats(0.1, 0.9), st.floats(0.01, 0.5), st.floats(0.01, 0.5))


@settings(max_examples=200, deadline=None)
@given(box_strategy, box_strategy)
def test_giou_is_bounded_and_below_iou(first, second):
    a = cxcywh_to_xyxy(torch.tensor([first], dtype=torch.float64))
    b = cxcywh_to_xyxy(torch.tensor([second], dtype=torch.float64))
    giou = float(elementwise_giou(a, b)[0])
    iou = float(elementwise_iou(a, b)[0])
    assert -1 - 1e-12 <= giou <= iou + 1e-12
    assert 0 <= iou <= 1 + 1e-12
