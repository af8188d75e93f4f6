"""Line-delimited manifest files for small real datasets.

Layout (one JSON object per line)::

    {"format": "hoi-manifest", "version": 1, "datasets": [DatasetSpec, ...]}
    {"id": "img-1", "dataset": "coco-mini", "media": "img1.png",
     "annotation": {"boxes": [[cx, cy, w, h], ...], "labels": [0, ...]}}
    {"id": "act-1", "dataset": "haa-mini", "pixels": [[[r, g, b], ...], ...],
     "annotation": {"verbs": [3]}}
    {"id": "vid-1", "dataset": "k700-mini", "frames": ["f0.npy", "f1.npy"],
     "annotation": {"verbs": [7]}}
    {"id": "cap-1", "dataset": "flickr-mini", "media": "c1.png",
     "annotation": {"caption": "a man drives a car"}}

Media paths are resolved relative to the manifest. ``.npy`` files hold
float ``[H, W, C]`` arrays in [0, 1]; anything else is opened with Pillow.
"""
from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..captions.parser import CaptionParser, parse_caption
from .records import CaptionRecord, DatasetSpec, ImageRecord, VideoRecord

MANIFEST_FORMAT = "hoi-manifest"
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    """Every problem found in a manifest, each tagged with its line number."""

    def __init__(self, path: str, problems: List[Tuple[int, str]]):
        self.path = path
        self.problems = problems
        lines = "\n".join(f"  {path}:{ln}: {msg}" for ln, msg in problems)
        super().__init__(f"{len(problems)} problem(s) in manifest:\n{lines}")


@dataclass
class IngestResult:
    records: list
    datasets: Dict[str, DatasetSpec]
    filtered: Counter = field(default_factory=Counter)


@dataclass
class ResizePolicy:
    """Optional resize at ingestion: ``shorter`` (min/max side) or ``fixed``."""

    mode: str = "shorter"
    min_side: int = 800
    max_side: int = 1333
    size: Tuple[int, int] = (256, 256)

    def target_size(self, height: int, width: int) -> Tuple[int, int]:
        if self.mode == "fixed":
            return tuple(self.size)
        scale = self.min_side / min(height, width)
        if max(height, width) * scale > self.max_side:
            scale = self.max_side / max(height, width)
        return int(round(height * scale)), int(round(width * scale))

    def apply(self, image: np.ndarray) -> np.ndarray:
        import torch
        import torch.nn.functional as F

        h, w = self.target_size(*image.shape[:2])
        t = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)[None]
        out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
        return out[0].permute(1, 2, 0).numpy().astype(np.float32)


def _load_media(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        arr = np.load(path, allow_pickle=False)
    else:
        from PIL import Image

        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"expected an [H, W, C] array, got shape {arr.shape}")
    return arr


def _pixels(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"inline pixels must be [H, W, C], got shape {arr.shape}")
    return arr


def _check_box(box) -> Optional[str]:
    if not isinstance(box, (list, tuple)) or len(box) != 4:
        return "box must have four numbers [cx, cy, w, h]"
    try:
        cx, cy, w, h = (float(v) for v in box)
    except (TypeError, ValueError):
        return "box coordinates must be numbers"
    if not (w > 0 and h > 0):
        return f"box {list(box)} has non-positive width or height"
    if not all(0.0 <= v <= 1.0 for v in (cx, cy, w, h)):
        return f"box {list(box)} is outside the normalized range [0, 1]"
    return None


def _parse_header(path: str, line: str) -> Dict[str, DatasetSpec]:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(path, [(1, f"invalid JSON ({exc.msg})")]) from None
    if not isinstance(header, dict) or header.get("format") != MANIFEST_FORMAT:
        raise ManifestError(path, [(1, f"first line must be a {MANIFEST_FORMAT!r} header")])
    if header.get("version") != MANIFEST_VERSION:
        raise ManifestError(path, [(1, f"unsupported manifest version {header.get('version')!r}")])
    specs = {}
    problems = []
    for raw in header.get("datasets", []):
        try:
            spec = DatasetSpec(**raw)
        except (TypeError, ValueError) as exc:
            problems.append((1, f"bad dataset declaration {raw!r}: {exc}"))
            continue
        specs[spec.name] = spec
    if problems:
        raise ManifestError(path, problems)
    return specs


def ingest_manifest(path: str, parser: Optional[CaptionParser] = None,
                    resize: Optional[ResizePolicy] = None, load_media: bool = True) -> IngestResult:
    """Validate and load every record; raises :class:`ManifestError` listing all problems."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestError(path, [(1, "empty manifest (missing header)")])
    specs = _parse_header(path, lines[0])
    records = []
    filtered: Counter = Counter()
    problems: List[Tuple[int, str]] = []
    seen_ids = set()

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append((lineno, f"invalid JSON ({exc.msg})"))
            continue
        if not isinstance(rec, dict):
            problems.append((lineno, "record must be a JSON object"))
            continue
        rid, ds_name, ann = rec.get("id"), rec.get("dataset"), rec.get("annotation")
        if rid is None or ds_name is None or not isinstance(ann, dict):
            problems.append((lineno, "record needs 'id', 'dataset' and an 'annotation' object"))
            continue
        rid = str(rid)
        if rid in seen_ids:
            problems.append((lineno, f"duplicate record id {rid!r}"))
            continue
        seen_ids.add(rid)
        spec = specs.get(ds_name)
        if spec is None:
            problems.append((lineno, f"dataset {ds_name!r} is not declared in the header"))
            continue
        errs_before = len(problems)

        # annotation schema
        if spec.kind == "detection":
            boxes, labels = ann.get("boxes"), ann.get("labels")
            if not isinstance(boxes, list) or not isinstance(labels, list) or len(boxes) != len(labels):
                problems.append((lineno, "detection annotation needs equal-length 'boxes' and 'labels'"))
            else:
                for b in boxes:
                    msg = _check_box(b)
                    if msg:
                        problems.append((lineno, msg))
                if any(not isinstance(c, int) or c < 0 for c in labels):
                    problems.append((lineno, "labels must be non-negative integers"))
        elif spec.kind.startswith("action"):
            verbs = ann.get("verbs")
            if not isinstance(verbs, list) or not all(isinstance(v, int) for v in verbs):
                problems.append((lineno, "action annotation needs an integer list 'verbs'"))
            else:
                outside = sorted(set(verbs) - set(spec.verb_class_ids))
                if outside:
                    problems.append((lineno, f"verb ids {outside} are outside dataset {spec.name!r}'s classes"))
        elif spec.kind == "caption":
            if not isinstance(ann.get("caption"), str):
                problems.append((lineno, "caption annotation needs a string 'caption'"))

        # media
        media = rec.get("media")
        frames = rec.get("frames")
        pixels = rec.get("pixels")
        image = None
        video = None
        try:
            if spec.kind == "action_video":
                if isinstance(frames, list) and frames:
                    if all(isinstance(f, str) for f in frames):
                        video = np.stack([_load_media(resolve(f)) for f in frames]) if load_media else None
                    else:
                        video = np.stack([_pixels(f) for f in frames])
                else:
                    problems.append((lineno, "video records need a non-empty 'frames' list"))
            elif isinstance(media, str):
                image = _load_media(resolve(media)) if load_media else None
            elif pixels is not None:
                image = _pixels(pixels)
            else:
                problems.append((lineno, "record needs 'media' (path) or inline 'pixels'"))
        except (OSError, ValueError) as exc:
            problems.append((lineno, f"unreadable media: {exc}"))
        if len(problems) > errs_before:
            continue

        if resize is not None:
            if image is not None:
                image = resize.apply(image)
            if video is not None:
                video = np.stack([resize.apply(f) for f in video])

        if spec.kind == "detection":
            records.append(ImageRecord(rid, image, spec,
                                       np.asarray(ann["boxes"], dtype=np.float32).reshape(-1, 4),
                                       np.asarray(ann["labels"], dtype=np.int64),
                                       media=media if isinstance(media, str) else None))
        elif spec.kind == "action_image":
            records.append(ImageRecord(rid, image, spec, verbs=tuple(sorted(set(ann["verbs"]))),
                                       media=media if isinstance(media, str) else None))
        elif spec.kind == "action_video":
            records.append(VideoRecord(rid, video, spec, verbs=tuple(sorted(set(ann["verbs"]))),
                                       media=list(frames) if all(isinstance(f, str) for f in frames) else None))
        else:
            triplets = parse_caption(ann["caption"], rid, parser)
            if not triplets:
                filtered["no_triplets"] += 1
                continue
            records.append(CaptionRecord(rid, image, spec, ann["caption"], triplets,
                                         [f"{rid}:{k}" for k in range(len(triplets))],
                                         media=media if isinstance(media, str) else None))
    if problems:
        raise ManifestError(path, problems)
    return IngestResult(records, specs, filtered)


def _float_list(arr) -> list:
    return [float(v) for v in np.asarray(arr, dtype=np.float64).reshape(-1)]


def record_to_dict(record) -> dict:
    out = {"id": record.id, "dataset": record.dataset.name}
    if isinstance(record, VideoRecord):
        if record.media:
            out["frames"] = list(record.media)
        else:
            out["frames"] = np.asarray(record.frames, dtype=np.float64).tolist()
        out["annotation"] = {"verbs": list(record.verbs)}
        return out
    if record.media:
        out["media"] = record.media
    else:
        out["pixels"] = np.asarray(record.image, dtype=np.float64).tolist()
    if isinstance(record, CaptionRecord):
        out["annotation"] = {"caption": record.caption}
    elif record.dataset.kind == "detection":
        out["annotation"] = {"boxes": [_float_list(b) for b in record.boxes],
                             "labels": [int(c) for c in record.labels]}
    else:
        out["annotation"] = {"verbs": list(record.verbs)}
    return out


def serialize_manifest(records, datasets: Dict[str, DatasetSpec]) -> str:
    """Normalized manifest text: header, then one sorted-key record per line."""
    header = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION,
              "datasets": [datasets[k].to_dict() for k in sorted(datasets)]}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(record_to_dict(r), sort_keys=True) for r in records]
    return "\n".join(lines) + "\n"
