"""Denoising queries built from jittered ground-truth boxes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch

MIN_EXTENT = 1e-4


@dataclass
class DenoisedQueryGroup:
    noised_boxes: torch.Tensor
    noised_labels: torch.Tensor
    encoded_queries: torch.Tensor
    content: torch.Tensor
    target_boxes: torch.Tensor
    target_labels: torch.Tensor
    noise_scale: float
    label_flip_prob: float

    def __len__(self) -> int:
        return self.noised_boxes.shape[0]


def jitter_boxes(boxes: torch.Tensor, noise_scale: float, generator: Optional[torch.Generator] = None):
    """Shift centers by up to ``±noise_scale·(w, h)/2`` and scale sizes by ``1 ± noise_scale``.

    Centers are clamped to [0, 1], sizes to [MIN_EXTENT, 1].
    """
    if noise_scale == 0:
        return boxes.clone()
    u = torch.rand(boxes.shape, generator=generator, dtype=boxes.dtype) * 2 - 1
    cxcy, wh = boxes[:, :2], boxes[:, 2:]
    cxcy = cxcy + u[:, :2] * noise_scale * wh / 2
    wh = wh * (1 + u[:, 2:] * noise_scale)
    return torch.cat([cxcy.clamp(0.0, 1.0), wh.clamp(MIN_EXTENT, 1.0)], dim=-1)


def flip_labels(labels: torch.Tensor, num_classes: int, flip_prob: float,
                generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Replace each label with a uniformly random class with probability ``flip_prob``."""
    if flip_prob == 0 or labels.numel() == 0:
        return labels.clone()
    flip = torch.rand(labels.shape, generator=generator) < flip_prob
    random_labels = torch.randint(0, num_classes, labels.shape, generator=generator)
    return torch.where(flip, random_labels, labels)


def build_dn_queries(gt_boxes, gt_labels, dn_encoder, noise_scale: float = 0.4,
                     label_flip_prob: float = 0.2, num_classes: Optional[int] = None,
                     generator: Optional[torch.Generator] = None) -> DenoisedQueryGroup:
    """Noise the ground truth and encode it into positional and content queries.

    Args:
        gt_boxes: ``[n, 4]`` normalized cxcywh boxes, ``n >= 1``.
        gt_labels: ``[n]`` object classes.
        dn_encoder: module with a two-layer ``box_encoder`` and a ``label_embed``.
        num_classes: label space for flipping; defaults to the embedding
            size minus the no-object row.
    """
    dtype = dn_encoder.label_embed.weight.dtype
    boxes = torch.as_tensor(gt_boxes, dtype=dtype).reshape(-1, 4)
    labels = torch.as_tensor(gt_labels, dtype=torch.long).reshape(-1)
    if boxes.shape[0] == 0:
        raise ValueError("denoising queries need at least one ground-truth box")
    if labels.shape[0] != boxes.shape[0]:
        raise ValueError("gt_boxes and gt_labels disagree in length")
    if num_classes is None:
        num_classes = dn_encoder.label_embed.num_embeddings - 1
    noised = jitter_boxes(boxes, noise_scale, generator)
    noised_labels = flip_labels(labels, num_classes, label_flip_prob, generator)
    return DenoisedQueryGroup(
        noised_boxes=noised,
        noised_labels=noised_labels,
        encoded_queries=dn_encoder.box_encoder(noised),
        content=dn_encoder.label_embed(noised_labels),
        target_boxes=boxes,
        target_labels=labels,
        noise_scale=float(noise_scale),
        label_flip_prob=float(label_flip_prob),
    )
