"""Detection and interaction supervision branches.

The detection branch matches queries to ground truth and returns the box and
class terms. The verb branch picks reliable person queries (RPQs) out of the
detection decoder, runs them through the interaction decoder, fuses the
per-person verb scores into one prediction per image or video and supervises
that with the sample's dataset-masked labels. The caption branch aligns the
best-matching RPQ with the text embedding of each parsed triplet.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import LossWeights
from .losses import box_losses, info_nce_bidirectional, object_ce_terms, verb_focal
from .matching import MatchResult, match_detections
from .model import EncoderOutput, HOIPretrainModel, Predictions

FUSION_MODES = ("max", "avg", "none")


# ---------------------------------------------------------------------------
# detection

@dataclass
class DetectionTerms:
    """Unnormalized sums for one decoder layer of one image."""

    l1_sum: torch.Tensor
    giou_sum: torch.Tensor
    num_pairs: int
    ce_num: torch.Tensor
    ce_den: torch.Tensor


@dataclass
class DetectionOutcome:
    predictions: Predictions
    match: MatchResult
    layers: List[DetectionTerms]
    dn_loss: Optional[torch.Tensor] = None
    dn_count: int = 0

    def terms(self) -> Dict[str, torch.Tensor]:
        return reduce_detection_terms([self])


def _layer_terms(preds: Predictions, boxes, labels, weights: LossWeights, match=None):
    if match is None:
        match = match_detections(preds.boxes, preds.object_logits, boxes, labels, weights)
    l1, giou = box_losses(preds.boxes, boxes, match.pairs)
    n = len(match.pairs)
    targets = torch.full((preds.object_logits.shape[0],), preds.object_logits.shape[1] - 1, dtype=torch.long)
    for q, t in match.pairs:
        targets[q] = int(labels[t])
    num, den = object_ce_terms(preds.object_logits, targets, weights.no_object)
    return DetectionTerms(l1 * n, giou * n, n, num, den), match


def _dn_loss(model: HOIPretrainModel, dn_embeddings, dn_group, weights: LossWeights):
    preds = model.detection_heads(dn_embeddings)
    pairs = [(i, i) for i in range(len(dn_group))]
    l1, giou = box_losses(preds.boxes, dn_group.target_boxes, pairs)
    ce = F.cross_entropy(preds.object_logits, dn_group.target_labels)
    return weights.box * l1 + weights.giou * giou + weights.cls * ce


def run_detection_branch(model: HOIPretrainModel, image, boxes, labels,
                         weights: Optional[LossWeights] = None, dn_group_builder=None,
                         enc: Optional[EncoderOutput] = None) -> DetectionOutcome:
    """Decode one image and compute matched box/class sums (and the DN loss).

    ``dn_group_builder`` maps (boxes, labels) to a denoising query group; it
    is skipped for images without ground truth.
    """
    weights = weights or LossWeights()
    boxes = torch.as_tensor(np.asarray(boxes), dtype=model.dtype).reshape(-1, 4)
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long).reshape(-1)
    if enc is None:
        enc = model.embed_and_encode(image)
    dn_group = dn_group_builder(boxes, labels) if dn_group_builder is not None and len(labels) else None
    state = model.detection_decode(enc, dn_group=dn_group)
    preds = model.detection_heads(state.output_embeddings)
    final, match = _layer_terms(preds, boxes, labels, weights)
    layers = [final]
    if model.config.aux_loss:
        for emb in state.intermediate[:-1]:
            aux, _ = _layer_terms(model.detection_heads(emb), boxes, labels, weights)
            layers.append(aux)
    outcome = DetectionOutcome(preds, match, layers)
    if dn_group is not None:
        outcome.dn_loss = _dn_loss(model, state.dn_embeddings, dn_group, weights)
        outcome.dn_count = 1
    return outcome


def reduce_detection_terms(outcomes: Sequence[DetectionOutcome]) -> Dict[str, torch.Tensor]:
    """Batch-normalized L_b, L_g, L_c: box terms per matched pair, CE per unit weight.

    Auxiliary layers each add their own normalized terms.
    """
    if not outcomes:
        return {}
    depth = min(len(o.layers) for o in outcomes)
    like = outcomes[0].layers[0].ce_num
    out = {"L_b": like.new_zeros(()), "L_g": like.new_zeros(()), "L_c": like.new_zeros(())}
    for k in range(depth):
        layer = [o.layers[k] for o in outcomes]
        pairs = sum(t.num_pairs for t in layer)
        if pairs:
            out["L_b"] = out["L_b"] + sum(t.l1_sum for t in layer) / pairs
            out["L_g"] = out["L_g"] + sum(t.giou_sum for t in layer) / pairs
        out["L_c"] = out["L_c"] + sum(t.ce_num for t in layer) / sum(t.ce_den for t in layer)
    return out


def reduce_dn_loss(outcomes: Sequence[DetectionOutcome]) -> Optional[torch.Tensor]:
    losses = [o.dn_loss for o in outcomes if o.dn_loss is not None]
    if not losses:
        return None
    return torch.stack(losses).mean()


# ---------------------------------------------------------------------------
# reliable person queries and fusion

@dataclass
class RPQSet:
    indices: torch.Tensor
    queries: torch.Tensor
    person_scores: torch.Tensor
    threshold: float

    def __len__(self) -> int:
        return int(self.indices.numel())

    @property
    def empty(self) -> bool:
        return len(self) == 0


def select_rpq(predictions: Predictions, threshold: float, embeddings: torch.Tensor,
               person_class_id: int = 0) -> RPQSet:
    """Queries whose softmax person score is strictly above ``threshold``, in query order."""
    logits = predictions.object_logits
    if not 0 <= person_class_id < logits.shape[1] - 1:
        raise ValueError(f"person class {person_class_id} is outside the object label space")
    scores = logits.softmax(-1)[:, person_class_id]
    keep = torch.nonzero(scores > threshold, as_tuple=False).flatten()
    return RPQSet(keep, embeddings[keep], scores[keep].detach(), float(threshold))


@dataclass
class FusedVerbPrediction:
    scores: torch.Tensor
    fusion_mode: str
    source_count: int


def fuse_verb_predictions(scores: torch.Tensor, mode: str = "max") -> FusedVerbPrediction:
    """Combine per-person verb scores ``[N_p, C_a]`` into one prediction.

    ``max`` and ``avg`` reduce over rows; ``none`` hands the matrix back for
    per-query supervision.
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
    if scores.dim() != 2 or scores.shape[0] == 0:
        raise ValueError("fusion needs a non-empty [N_p, C_a] score matrix")
    n = scores.shape[0]
    if mode == "max":
        return FusedVerbPrediction(scores.max(dim=0).values, mode, n)
    if mode == "avg":
        return FusedVerbPrediction(scores.mean(dim=0), mode, n)
    return FusedVerbPrediction(scores, mode, n)


def fused_verb_loss(verb_scores: torch.Tensor, target, mask, mode: str = "max",
                    weights: Optional[LossWeights] = None) -> torch.Tensor:
    """Focal loss on the fused prediction; under ``none`` the per-row losses are averaged."""
    weights = weights or LossWeights()
    fused = fuse_verb_predictions(verb_scores, mode)
    loss = verb_focal(fused.scores, target, mask, weights.focal_alpha, weights.focal_gamma)
    return loss.mean() if mode == "none" else loss


# ---------------------------------------------------------------------------
# verb branch

@dataclass
class VerbOutcome:
    loss: Optional[torch.Tensor]
    skipped: bool
    rpq_counts: List[int] = field(default_factory=list)
    fused: Optional[FusedVerbPrediction] = None


def person_verb_scores(model: HOIPretrainModel, image, threshold: Optional[float] = None):
    """Encode, detect, select RPQs and return their sigmoid verb scores.

    Returns ``(scores or None, rpq, encoder output, detection state)``.
    """
    cfg = model.config
    enc = model.embed_and_encode(image)
    det = model.detection_decode(enc)
    preds = model.detection_heads(det.output_embeddings)
    rpq = select_rpq(preds, cfg.rpq_threshold if threshold is None else threshold,
                     det.output_embeddings, cfg.person_class_id)
    if rpq.empty:
        return None, rpq, enc, det
    queries = rpq.queries.detach() if cfg.detach_rpq else rpq.queries
    inter = model.interaction_decode(enc, queries)
    return model.predict_heads(inter, "verb").verb_logits.sigmoid(), rpq, enc, inter


def run_verb_branch_image(model: HOIPretrainModel, sample, fusion_mode: str = "max",
                          weights: Optional[LossWeights] = None) -> VerbOutcome:
    scores, rpq, _, _ = person_verb_scores(model, sample.image)
    if scores is None:
        return VerbOutcome(None, True, [0])
    c_a = model.config.num_verb_classes
    target = torch.as_tensor(sample.verb_target(c_a))
    mask = torch.as_tensor(sample.dataset.verb_mask(c_a))
    loss = fused_verb_loss(scores, target, mask, fusion_mode, weights)
    return VerbOutcome(loss, False, [len(rpq)], fuse_verb_predictions(scores.detach(), fusion_mode))


def sample_frame_indices(num_available: int, num_frames: int, rng: np.random.Generator) -> List[int]:
    """``num_frames`` sorted frame indices; with replacement when the video is too short."""
    if num_available < 1:
        raise ValueError("video has no frames")
    replace = num_available < num_frames
    return sorted(rng.choice(num_available, size=num_frames, replace=replace).tolist())


def run_verb_branch_video(model: HOIPretrainModel, sample, num_frames: int = 4,
                          rng: Optional[np.random.Generator] = None, fusion_mode: str = "max",
                          weights: Optional[LossWeights] = None) -> VerbOutcome:
    """Concatenate RPQ verb scores of sampled frames and fuse them once."""
    rng = rng if rng is not None else np.random.default_rng(0)
    frames = sample_frame_indices(len(sample.frames), num_frames, rng)
    rows, counts = [], []
    for f in frames:
        scores, rpq, _, _ = person_verb_scores(model, sample.frames[f])
        counts.append(len(rpq))
        if scores is not None:
            rows.append(scores)
    if not rows:
        return VerbOutcome(None, True, counts)
    scores = torch.cat(rows)
    c_a = model.config.num_verb_classes
    target = torch.as_tensor(sample.verb_target(c_a))
    mask = torch.as_tensor(sample.dataset.verb_mask(c_a))
    loss = fused_verb_loss(scores, target, mask, fusion_mode, weights)
    return VerbOutcome(loss, False, counts, fuse_verb_predictions(scores.detach(), fusion_mode))


# ---------------------------------------------------------------------------
# caption branch

@dataclass
class CaptionAlignmentBatch:
    rpq_embeddings: torch.Tensor
    positive_text: torch.Tensor
    negative_texts: torch.Tensor
    temperature: float
    triplet_id: str = ""

    def similarities(self) -> torch.Tensor:
        return self.rpq_embeddings @ self.positive_text

    def selected_index(self) -> int:
        return int(torch.argmax(self.similarities().detach()))


def caption_alignment_loss(batch: CaptionAlignmentBatch, image_negatives: Optional[torch.Tensor] = None):
    """Bidirectional InfoNCE for the RPQ most similar to the positive text.

    ``image_negatives`` are competing image embeddings for the text anchor;
    without them the text anchor uses the same negative texts.
    Returns ``(loss, selected index)``.
    """
    j = batch.selected_index()
    z = batch.rpq_embeddings[j]
    sim_pos = z @ batch.positive_text
    sim_negs = batch.negative_texts @ z
    sim_negs_t2i = None
    if image_negatives is not None and image_negatives.shape[0] > 0:
        sim_negs_t2i = image_negatives @ batch.positive_text
    return info_nce_bidirectional(sim_pos, sim_negs, batch.temperature, sim_negs_t2i), j


def _text_vectors(bank, text_encoder, triplet_id, prompt, dtype, rng=None):
    from .captions.text import embed_texts

    if triplet_id in bank:
        pos = bank.embeddings[bank.row_of(triplet_id)]
        neg_ids = bank.negatives_for(triplet_id, rng)
    else:
        pos = embed_texts([prompt], text_encoder)[0]
        neg_ids = [t for t in bank.sampled_ids() if bank.prompts[bank.row_of(t)] != prompt]
    negs = bank.embeddings_for(neg_ids)
    return torch.as_tensor(pos, dtype=dtype), torch.as_tensor(negs, dtype=dtype).reshape(-1, len(pos))


@dataclass
class CaptionOutcome:
    loss: Optional[torch.Tensor]
    skipped: bool
    selected: List[int] = field(default_factory=list)
    num_triplets: int = 0


def caption_rpq_embeddings(model: HOIPretrainModel, image) -> Optional[torch.Tensor]:
    """L2-normalized caption projections of the RPQ interaction embeddings, or None."""
    cfg = model.config
    enc = model.embed_and_encode(image)
    det = model.detection_decode(enc)
    preds = model.detection_heads(det.output_embeddings)
    rpq = select_rpq(preds, cfg.rpq_threshold, det.output_embeddings, cfg.person_class_id)
    if rpq.empty:
        return None
    queries = rpq.queries.detach() if cfg.detach_rpq else rpq.queries
    inter = model.interaction_decode(enc, queries)
    return F.normalize(model.caption_embeddings(inter), dim=-1)


def run_caption_batch(model: HOIPretrainModel, samples: Sequence, bank, text_encoder=None,
                      temperature: Optional[float] = None,
                      rng: Optional[np.random.Generator] = None) -> List[CaptionOutcome]:
    """Caption losses for a batch, summed over each sample's triplets.

    Text anchors contrast against the RPQs selected for the other caption
    samples in the batch; with a single sample they fall back to the
    negative texts. Passing ``rng`` redraws the bank's per-cluster
    negatives for every triplet.
    """
    from .captions.parser import template_prompt

    tau = model.config.temperature if temperature is None else temperature
    embedded = [caption_rpq_embeddings(model, s.image) for s in samples]
    alignments: List[List[CaptionAlignmentBatch]] = []
    for s, z in zip(samples, embedded):
        rows = []
        if z is not None:
            for tid, trip in zip(s.triplet_ids, s.triplets):
                pos, negs = _text_vectors(bank, text_encoder, tid, template_prompt(trip), z.dtype, rng)
                rows.append(CaptionAlignmentBatch(z, pos, negs, tau, tid))
        alignments.append(rows)
    chosen = [[a.rpq_embeddings[a.selected_index()] for a in rows] for rows in alignments]
    outcomes = []
    for i, rows in enumerate(alignments):
        if embedded[i] is None or not rows:
            outcomes.append(CaptionOutcome(None, True, [], len(samples[i].triplets)))
            continue
        others = [v for k, vs in enumerate(chosen) if k != i for v in vs]
        image_negs = torch.stack(others) if others else None
        total, selected = None, []
        for a in rows:
            loss, j = caption_alignment_loss(a, image_negs)
            total = loss if total is None else total + loss
            selected.append(j)
        outcomes.append(CaptionOutcome(total, False, selected, len(rows)))
    return outcomes


def run_caption_branch(model: HOIPretrainModel, sample, bank, text_encoder=None,
                       temperature: Optional[float] = None) -> CaptionOutcome:
    return run_caption_batch(model, [sample], bank, text_encoder, temperature)[0]


def mean_or_zero(losses: Sequence[Optional[torch.Tensor]], like: torch.Tensor) -> torch.Tensor:
    kept = [l for l in losses if l is not None]
    if not kept:
        return like.new_zeros(())
    return torch.stack(kept).mean()


def skip_counter() -> Counter:
    return Counter({"verb_image": 0, "verb_video": 0, "caption": 0})
