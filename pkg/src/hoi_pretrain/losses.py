"""Loss terms for both branches and their weighted composition."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from .boxes import cxcywh_to_xyxy, elementwise_giou
from .config import LossWeights

TERMS = ("L_b", "L_g", "L_c", "L_a", "L_s")


class NonFiniteLossError(FloatingPointError):
    """A loss term came out NaN or infinite; the step must not be applied."""


def _zero(like: Optional[torch.Tensor] = None) -> torch.Tensor:
    if like is None:
        return torch.zeros((), dtype=torch.get_default_dtype())
    return like.new_zeros(())


def box_losses(pred_boxes: torch.Tensor, target_boxes: torch.Tensor,
               pairs: Sequence[Tuple[int, int]]) -> Tuple[torch.Tensor, torch.Tensor]:
    """Mean L1 and mean ``1 - GIoU`` over matched (query, target) pairs.

    The L1 term sums the four coordinate differences of each pair.
    """
    if len(pairs) == 0:
        return _zero(pred_boxes), _zero(pred_boxes)
    q = torch.as_tensor([p[0] for p in pairs], dtype=torch.long)
    t = torch.as_tensor([p[1] for p in pairs], dtype=torch.long)
    src = pred_boxes[q]
    tgt = target_boxes[t].to(src.dtype)
    l1 = (src - tgt).abs().sum(-1).mean()
    giou = elementwise_giou(cxcywh_to_xyxy(src), cxcywh_to_xyxy(tgt))
    return l1, (1 - giou).mean()


def object_ce(object_logits: torch.Tensor, target_labels: torch.Tensor,
              pairs: Sequence[Tuple[int, int]], no_object_weight: float = 0.1) -> torch.Tensor:
    """Weighted cross-entropy over all queries; unmatched queries target no-object.

    Normalized by the summed class weights, so an unmatched query counts
    ``no_object_weight`` times as much as a matched one.
    """
    n, k1 = object_logits.shape
    no_object = k1 - 1
    labels = torch.as_tensor(target_labels, dtype=torch.long)
    if labels.numel() and (labels.min() < 0 or labels.max() >= no_object):
        raise ValueError(f"target class outside label space [0, {no_object})")
    targets = torch.full((n,), no_object, dtype=torch.long)
    for qi, ti in pairs:
        targets[qi] = labels[ti]
    class_weight = object_logits.new_ones(k1)
    class_weight[no_object] = no_object_weight
    return F.cross_entropy(object_logits, targets, weight=class_weight)


def object_ce_terms(object_logits, targets, no_object_weight):
    """Weighted CE numerator and denominator, for batch-level normalization."""
    k1 = object_logits.shape[1]
    class_weight = object_logits.new_ones(k1)
    class_weight[k1 - 1] = no_object_weight
    nll = F.cross_entropy(object_logits, targets, reduction="none")
    w = class_weight[targets]
    return (w * nll).sum(), w.sum()


def verb_focal(fused_scores: torch.Tensor, target: torch.Tensor, mask: torch.Tensor,
               alpha: float = 0.25, gamma: float = 2.0, eps: float = 1e-6) -> torch.Tensor:
    """Binary focal loss summed over the classes enabled by ``mask``.

    Classes outside the mask are never read, so they receive exactly zero
    loss and zero gradient.
    """
    mask = torch.as_tensor(mask, dtype=torch.bool)
    target = torch.as_tensor(target).to(fused_scores.dtype)
    if bool(((target > 0) & ~mask).any()):
        raise ValueError("verb target is positive on a class outside the sample's dataset")
    idx = torch.nonzero(mask, as_tuple=False).flatten()
    if idx.numel() == 0:
        return _zero(fused_scores)
    p = fused_scores.index_select(-1, idx).clamp(eps, 1 - eps)
    t = target.index_select(-1, idx)
    pos = -alpha * t * (1 - p) ** gamma * torch.log(p)
    neg = -(1 - alpha) * (1 - t) * p ** gamma * torch.log(1 - p)
    return (pos + neg).sum(-1)


def _one_direction(sim_pos: torch.Tensor, sim_negs: torch.Tensor, temperature: float) -> torch.Tensor:
    if sim_negs.numel() == 0:
        return sim_pos * 0
    gaps = (sim_negs.reshape(-1) - sim_pos.reshape(())) / temperature
    top = float(gaps.detach().max())
    if top <= 0:
        # log(1 + sum exp(gap)) stays accurate when the loss is tiny
        return torch.log1p(torch.exp(gaps).sum())
    return top + torch.log(torch.exp(-gaps.new_tensor(top)) + torch.exp(gaps - top).sum())


def info_nce_bidirectional(sim_pos, sim_negs, temperature: float = 0.07,
                           sim_negs_t2i=None) -> torch.Tensor:
    """Average of the image-to-text and text-to-image InfoNCE losses.

    Each direction is a softmax cross-entropy with the positive at index 0.
    ``sim_negs`` are the negatives for the image anchor; ``sim_negs_t2i``
    the negatives for the text anchor, defaulting to the same set.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    sim_pos = torch.as_tensor(sim_pos, dtype=torch.get_default_dtype()) if not torch.is_tensor(sim_pos) else sim_pos
    sim_negs = torch.as_tensor(sim_negs, dtype=sim_pos.dtype) if not torch.is_tensor(sim_negs) else sim_negs
    if sim_negs_t2i is None:
        sim_negs_t2i = sim_negs
    elif not torch.is_tensor(sim_negs_t2i):
        sim_negs_t2i = torch.as_tensor(sim_negs_t2i, dtype=sim_pos.dtype)
    i2t = _one_direction(sim_pos, sim_negs, temperature)
    t2i = _one_direction(sim_pos, sim_negs_t2i, temperature)
    return 0.5 * (i2t + t2i)


@dataclass
class LossReport:
    L_b: torch.Tensor
    L_g: torch.Tensor
    L_c: torch.Tensor
    L_a: torch.Tensor
    L_s: torch.Tensor
    total: torch.Tensor
    weights: LossWeights = field(default_factory=LossWeights)
    dn: Optional[torch.Tensor] = None
    skips: Dict[str, int] = field(default_factory=dict)

    @property
    def objective(self) -> torch.Tensor:
        """What the optimizer minimizes: the composite loss plus denoising terms."""
        return self.total if self.dn is None else self.total + self.dn

    def as_floats(self) -> Dict[str, float]:
        out = {name: float(getattr(self, name).detach()) for name in TERMS}
        out["total"] = float(self.total.detach())
        out["dn"] = 0.0 if self.dn is None else float(self.dn.detach())
        return out


def compose_total(terms: Dict[str, object], weights: Optional[LossWeights] = None,
                  dn=None, skips=None) -> LossReport:
    """Weighted sum ``λb·Lb + λg·Lg + λc·Lc + λv·(λa·La + λs·Ls)``.

    Missing terms count as zero. Raises :class:`NonFiniteLossError` when
    any term is NaN or infinite.
    """
    weights = weights or LossWeights()
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise KeyError(f"unknown loss terms {sorted(unknown)}")
    like = next((v for v in terms.values() if torch.is_tensor(v)), None)
    values = {}
    for name in TERMS:
        v = terms.get(name, 0.0)
        if not torch.is_tensor(v):
            v = torch.tensor(float(v), dtype=like.dtype if like is not None else torch.float64)
        if not torch.isfinite(v).all():
            raise NonFiniteLossError(f"loss term {name} is not finite ({float(v)})")
        values[name] = v
    if dn is not None and torch.is_tensor(dn) and not torch.isfinite(dn).all():
        raise NonFiniteLossError(f"denoising loss is not finite ({float(dn)})")
    w = weights
    total = (w.box * values["L_b"] + w.giou * values["L_g"] + w.cls * values["L_c"]
             + w.branch * (w.verb * values["L_a"] + w.caption * values["L_s"]))
    return LossReport(total=total, weights=w, dn=dn, skips=dict(skips or {}), **values)
