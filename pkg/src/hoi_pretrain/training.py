"""Mixed-batch pre-training loop, evaluation and per-sample probing."""
from __future__ import annotations

import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch

from .boxes import cxcywh_to_xyxy, elementwise_iou
from .branches import (
    fuse_verb_predictions,
    mean_or_zero,
    person_verb_scores,
    reduce_detection_terms,
    reduce_dn_loss,
    run_caption_batch,
    run_detection_branch,
    run_verb_branch_image,
    run_verb_branch_video,
    select_rpq,
)
from .captions.bank import NegativeBank, build_negative_bank
from .captions.parser import template_prompt
from .captions.text import HashingTextEncoder, embed_texts
from .config import DatasetConfig, RunConfig
from .data import (
    BatchComposer,
    BatchPlan,
    DatasetSpec,
    build_dn_queries,
    generate_synthetic_actions,
    generate_synthetic_captions,
    generate_synthetic_detection,
    ingest_manifest,
)
from .losses import NonFiniteLossError, compose_total
from .matching import match_detections
from .model import HOIPretrainModel
from .transfer import save_checkpoint

log = logging.getLogger(__name__)

LOSS_LOG = "loss_log.jsonl"


def build_dataset(ds: DatasetConfig, config: RunConfig) -> List:
    spec = DatasetSpec(ds.name, ds.kind, tuple(ds.verb_class_ids), ds.person_class_id, ds.sampling_weight)
    if ds.source == "manifest":
        result = ingest_manifest(ds.manifest)
        records = [r for r in result.records if r.dataset.name == ds.name]
        if result.filtered:
            log.info("%s: filtered %s", ds.name, dict(result.filtered))
        return records
    m = config.model
    if ds.kind == "detection":
        return generate_synthetic_detection(ds.n_samples, tuple(ds.n_boxes), config.canvas, ds.seed,
                                            m.num_object_classes, m.num_verb_classes, spec)
    if ds.kind in ("action_image", "action_video"):
        return generate_synthetic_actions(ds.n_samples, ds.verb_class_ids,
                                          "video" if ds.kind == "action_video" else "image",
                                          ds.num_frames, ds.seed, config.canvas, tuple(ds.n_persons),
                                          m.num_object_classes, spec)
    verb_ids = ds.verb_class_ids or list(range(m.num_verb_classes))
    return generate_synthetic_captions(ds.n_samples, verb_ids, config.canvas, ds.seed,
                                       m.num_object_classes, spec)


def build_datasets(config: RunConfig) -> Dict[str, List]:
    return {ds.name: build_dataset(ds, config) for ds in config.datasets}


def build_caption_bank(datasets: Dict[str, List], config: RunConfig, encoder=None) -> Optional[NegativeBank]:
    ids, prompts = [], []
    for records in datasets.values():
        for rec in records:
            if rec.dataset.kind != "caption":
                continue
            for tid, trip in zip(rec.triplet_ids, rec.triplets):
                ids.append(tid)
                prompts.append(template_prompt(trip))
    if not ids:
        return None
    encoder = encoder or HashingTextEncoder(config.model.proj_dim)
    emb = embed_texts(prompts, encoder)
    return build_negative_bank(emb, config.num_clusters, config.negatives_per_cluster, config.seed, ids, prompts)


@dataclass
class StepResult:
    step: int
    losses: Dict[str, float]
    skips: Dict[str, int]
    processed: int
    skipped: int
    lr: float


@dataclass
class TrainingState:
    steps: int = 0
    processed: int = 0
    skipped: int = 0
    skips: Counter = field(default_factory=Counter)


class Trainer:
    """Runs the joint detection + interaction pre-training objective."""

    def __init__(self, config: RunConfig, datasets: Optional[Dict[str, List]] = None,
                 output_dir: Optional[str] = None):
        self.config = config.check()
        torch.manual_seed(config.seed)
        self.model = HOIPretrainModel(config.model)
        self.datasets = datasets if datasets is not None else build_datasets(config)
        self.text_encoder = HashingTextEncoder(config.model.proj_dim)
        self.bank = build_caption_bank(self.datasets, config, self.text_encoder)
        self.full_plan = BatchPlan(dict(config.plan), config.batch_size)
        warmup = {g: r for g, r in config.plan.items() if g == "detection"}
        self.warmup_plan = BatchPlan(warmup, config.batch_size) if warmup and config.action_start_step > 0 else None
        self.composer = BatchComposer(self.datasets, self.warmup_plan or self.full_plan, config.seed)
        self.rng = np.random.default_rng(config.seed + 1)
        self.dn_generator = torch.Generator().manual_seed(config.seed + 2)
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=config.optim.lr,
                                           weight_decay=config.optim.weight_decay)
        decay_at = max(1, int(round(config.optim.decay_fraction * config.optim.total_steps)))
        self.scheduler = torch.optim.lr_scheduler.StepLR(self.optimizer, decay_at, config.optim.decay_gamma)
        self.state = TrainingState()
        self.config_hash = config.config_hash()
        self.output_dir = output_dir

    def _dn_builder(self):
        if not self.config.dn_enabled:
            return None
        cfg = self.config
        return lambda boxes, labels: build_dn_queries(boxes, labels, self.model.dn, cfg.dn_noise_scale,
                                                      cfg.dn_label_flip_prob, cfg.model.num_object_classes,
                                                      self.dn_generator)

    def compute_losses(self, batch):
        """Loss report for one batch plus (processed, skipped) counts."""
        cfg = self.config
        det, verb, captions = [], [], []
        skips = Counter()
        for rec in batch:
            kind = rec.dataset.kind
            if kind == "detection":
                det.append(run_detection_branch(self.model, rec.image, rec.boxes, rec.labels, cfg.loss,
                                                self._dn_builder()))
            elif kind == "action_image":
                out = run_verb_branch_image(self.model, rec, cfg.fusion_mode, cfg.loss)
                skips["verb_image"] += int(out.skipped)
                verb.append(out.loss)
            elif kind == "action_video":
                out = run_verb_branch_video(self.model, rec, cfg.num_frames, self.rng, cfg.fusion_mode, cfg.loss)
                skips["verb_video"] += int(out.skipped)
                verb.append(out.loss)
            else:
                captions.append(rec)
        if captions:
            outs = run_caption_batch(self.model, captions, self.bank, self.text_encoder, cfg.model.temperature,
                                     self.rng if cfg.resample_negatives else None)
            skips["caption"] += sum(o.skipped for o in outs)
            caption_losses = [o.loss for o in outs]
        else:
            caption_losses = []
        like = self.model.detection_decoder.query_embed.new_zeros(())
        terms = reduce_detection_terms(det)
        terms["L_a"] = mean_or_zero(verb, like)
        terms["L_s"] = mean_or_zero(caption_losses, like)
        skipped = sum(skips.values())
        report = compose_total(terms, cfg.loss, dn=reduce_dn_loss(det), skips=dict(sorted(skips.items())))
        return report, len(batch) - skipped, skipped

    def step(self) -> StepResult:
        cfg = self.config
        s = self.state.steps
        if self.warmup_plan is not None and s == cfg.action_start_step:
            self.composer.set_plan(self.full_plan)
        self.model.train()
        batch = self.composer.next_batch()
        report, processed, skipped = self.compute_losses(batch)
        self.optimizer.zero_grad(set_to_none=True)
        objective = report.objective
        if objective.requires_grad:
            objective.backward()
            if cfg.optim.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.optim.grad_clip)
            self.optimizer.step()
        lr = self.optimizer.param_groups[0]["lr"]
        self.scheduler.step()
        self.state.steps += 1
        self.state.processed += processed
        self.state.skipped += skipped
        self.state.skips.update(report.skips)
        return StepResult(s, report.as_floats(), report.skips, processed, skipped, lr)

    def log_record(self, result: StepResult) -> Dict:
        rec = {"step": result.step}
        rec.update(result.losses)
        rec.update({"skips": result.skips, "processed": result.processed, "skipped": result.skipped,
                    "lr": result.lr, "fusion_mode": self.config.fusion_mode,
                    "config_hash": self.config_hash})
        return rec

    def save(self, path: str):
        return save_checkpoint(self.model, path, step=self.state.steps, seed=self.config.seed,
                               config_hash=self.config_hash, run_config=self.config.to_dict())

    def train(self, steps: Optional[int] = None, log_path: Optional[str] = None, callback=None) -> TrainingState:
        """Run ``steps`` optimizer steps (default: the configured total).

        Each step appends one JSON line to ``log_path``. A non-finite loss
        is logged as an error line and re-raised.
        """
        steps = self.config.optim.total_steps if steps is None else steps
        fh = open(log_path, "w", encoding="utf-8") if log_path else None
        try:
            for _ in range(steps):
                try:
                    result = self.step()
                except NonFiniteLossError as exc:
                    if fh:
                        fh.write(json.dumps({"step": self.state.steps, "error": str(exc)}, sort_keys=True) + "\n")
                    raise
                if fh:
                    fh.write(json.dumps(self.log_record(result), sort_keys=True) + "\n")
                every = self.config.checkpoint_every
                if self.output_dir and every and self.state.steps % every == 0:
                    self.save(os.path.join(self.output_dir, f"checkpoint_{self.state.steps:06d}.ckpt"))
                if callback is not None:
                    callback(result)
        finally:
            if fh:
                fh.close()
        return self.state


# ---------------------------------------------------------------------------
# evaluation and probing

@torch.no_grad()
def evaluate(model: HOIPretrainModel, records, weights=None) -> Dict[str, float]:
    """Training-set metrics: matched class accuracy, matched IoU, fused-verb hit rate.

    A verb sample counts as correct when the highest fused score among its
    dataset's classes belongs to a labeled verb. Samples whose RPQ set is
    empty count as wrong.
    """
    from .config import LossWeights

    weights = weights or LossWeights()
    model.eval()
    correct = total = 0
    ious: List[float] = []
    verb_hits = verb_total = empty = 0
    c_a = model.config.num_verb_classes
    for rec in records:
        kind = rec.dataset.kind
        if kind == "detection":
            if len(rec.labels) == 0:
                continue
            enc = model.embed_and_encode(rec.image)
            state = model.detection_decode(enc)
            preds = model.detection_heads(state.output_embeddings)
            boxes = torch.as_tensor(rec.boxes, dtype=model.dtype)
            labels = torch.as_tensor(rec.labels, dtype=torch.long)
            match = match_detections(preds.boxes, preds.object_logits, boxes, labels, weights)
            q = torch.as_tensor(match.query_indices, dtype=torch.long)
            t = torch.as_tensor(match.target_indices, dtype=torch.long)
            pred_cls = preds.object_logits[q].argmax(-1)
            correct += int((pred_cls == labels[t]).sum())
            total += len(t)
            ious.extend(elementwise_iou(cxcywh_to_xyxy(preds.boxes[q]), cxcywh_to_xyxy(boxes[t])).tolist())
        elif kind.startswith("action"):
            verb_total += 1
            frames = [rec.image] if kind == "action_image" else list(rec.frames)
            rows = [s for s in (person_verb_scores(model, f)[0] for f in frames) if s is not None]
            if not rows:
                empty += 1
                continue
            fused = fuse_verb_predictions(torch.cat(rows), "max").scores
            mask = torch.as_tensor(rec.dataset.verb_mask(c_a))
            masked = torch.where(mask, fused, torch.full_like(fused, -1.0))
            verb_hits += int(int(masked.argmax()) in set(rec.verbs))
    return {
        "det_class_acc": correct / total if total else float("nan"),
        "det_mean_iou": float(np.mean(ious)) if ious else float("nan"),
        "verb_acc": verb_hits / verb_total if verb_total else float("nan"),
        "verb_empty_rpq": float(empty),
        "num_gt_boxes": float(total),
        "num_verb_samples": float(verb_total),
    }


@torch.no_grad()
def probe(model: HOIPretrainModel, image, threshold: Optional[float] = None) -> Dict:
    """RPQ selection, fused verb scores and attention maps for one image.

    Attention tensors are nested lists shaped [layers, heads, queries, tokens].
    """
    model.eval()
    cfg = model.config
    threshold = cfg.rpq_threshold if threshold is None else threshold
    enc = model.embed_and_encode(image)
    det = model.detection_decode(enc)
    preds = model.detection_heads(det.output_embeddings)
    person = preds.object_logits.softmax(-1)[:, cfg.person_class_id]
    rpq = select_rpq(preds, threshold, det.output_embeddings, cfg.person_class_id)
    record = {
        "threshold": threshold,
        "grid": list(enc.grid),
        "num_queries": int(preds.object_logits.shape[0]),
        "person_scores": person.tolist(),
        "rpq_indices": rpq.indices.tolist(),
        "rpq_person_scores": rpq.person_scores.tolist(),
        "empty_rpq": rpq.empty,
        "detection_attention": det.per_layer_attention[:, :, rpq.indices].tolist(),
        "fused_verb_scores": None,
        "verb_scores": None,
        "interaction_attention": None,
    }
    if not rpq.empty:
        inter = model.interaction_decode(enc, rpq.queries)
        scores = model.predict_heads(inter, "verb").verb_logits.sigmoid()
        record["verb_scores"] = scores.tolist()
        record["fused_verb_scores"] = fuse_verb_predictions(scores, "max").scores.tolist()
        record["interaction_attention"] = inter.per_layer_attention.tolist()
    return record
