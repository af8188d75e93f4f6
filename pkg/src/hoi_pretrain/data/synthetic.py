"""Procedural datasets: colored rectangles, with persons carrying verb glyphs.

Every object is a filled rectangle whose color identifies its class. A
person's top third (its "head") is painted with the color of the verb it
performs, which gives the verb branch something learnable. Box annotations
are derived from the integer pixel extents, so they are exact.
"""
from __future__ import annotations

import colorsys
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..captions.parser import parse_caption
from .records import CaptionRecord, DatasetSpec, ImageRecord, VideoRecord

_CLASS_COLORS = [(0.9, 0.1, 0.1), (0.1, 0.8, 0.2), (0.15, 0.3, 0.95)]
# kept at least ~0.5 (RGB distance) away from every class color
_VERB_COLORS = [(1.0, 1.0, 0.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 1.0),
                (0.5, 0.5, 0.5), (1.0, 0.6, 0.6)]

VERB_WORDS = ["ride", "hold", "kick", "carry", "throw", "push", "pull", "watch",
              "feed", "wash", "touch", "catch"]
OBJECT_WORDS = ["person", "bike", "ball", "box", "kite", "dog", "chair", "cup"]
HUMAN_WORDS = ["man", "woman", "boy", "girl", "person", "player"]

# caption templates: ({human}, {verb in some form}, {object})
_CAPTION_TEMPLATES = [
    ("a {h} {v3} a {o}", "v3"),
    ("the {h} is {ving} the {o}", "ving"),
    ("a young {h} {v3} a red {o} in the park", "v3"),
    ("a {h} {ving} a {o}", "ving"),
    ("one {h} {v3} the {o} near a wall", "v3"),
]


def class_color(k: int) -> Tuple[float, float, float]:
    if k < len(_CLASS_COLORS):
        return _CLASS_COLORS[k]
    return colorsys.hsv_to_rgb((0.13 + 0.37 * k) % 1.0, 0.6, 0.7)


def verb_color(v: int) -> Tuple[float, float, float]:
    if v < len(_VERB_COLORS):
        return _VERB_COLORS[v]
    return colorsys.hsv_to_rgb((0.07 + 0.29 * v) % 1.0, 1.0, 1.0)


def _third_person(verb: str) -> str:
    if verb.endswith(("sh", "ch", "s", "x")):
        return verb + "es"
    if verb.endswith("y") and verb[-2] not in "aeiou":
        return verb[:-1] + "ies"
    return verb + "s"


def _gerund(verb: str) -> str:
    if verb.endswith("e") and not verb.endswith("ee"):
        return verb[:-1] + "ing"
    return verb + "ing"


def _place(rng, canvas: int, taken: List[Tuple[int, int, int, int]], size_range, tries: int = 60):
    """Pick a non-overlapping integer rectangle (x0, y0, x1, y1)."""
    lo, hi = size_range
    for _ in range(tries):
        w = int(rng.integers(max(2, int(lo * canvas)), max(3, int(hi * canvas)) + 1))
        h = int(rng.integers(max(2, int(lo * canvas)), max(3, int(hi * canvas)) + 1))
        x0 = int(rng.integers(0, canvas - w + 1))
        y0 = int(rng.integers(0, canvas - h + 1))
        rect = (x0, y0, x0 + w, y0 + h)
        if all(rect[2] <= t[0] or t[2] <= rect[0] or rect[3] <= t[1] or t[3] <= rect[1] for t in taken):
            return rect
    return None


def _paint(image, rect, cls, verb=None):
    x0, y0, x1, y1 = rect
    image[y0:y1, x0:x1] = class_color(cls)
    if verb is not None:
        head = max(1, (y1 - y0) // 3)
        image[y0:y0 + head, x0:x1] = verb_color(verb)


def _to_cxcywh(rect, canvas: int) -> List[float]:
    x0, y0, x1, y1 = rect
    return [(x0 + x1) / 2 / canvas, (y0 + y1) / 2 / canvas, (x1 - x0) / canvas, (y1 - y0) / canvas]


def _blank(rng, canvas: int, channels: int = 3) -> np.ndarray:
    return (rng.random((canvas, canvas, channels)) * 0.05).astype(np.float32)


def _scene(rng, canvas, objects, size_range=(0.25, 0.45)):
    """Render ``objects`` = [(cls, verb_or_None)] at random free positions.

    Returns the image, boxes, labels and the placed (cls, verb, rect) list;
    objects that find no free spot are dropped.
    """
    image = _blank(rng, canvas)
    placed = []
    for cls, verb in objects:
        rect = _place(rng, canvas, [p[2] for p in placed], size_range)
        if rect is None:
            continue
        _paint(image, rect, cls, verb)
        placed.append((cls, verb, rect))
    boxes = np.asarray([_to_cxcywh(p[2], canvas) for p in placed], dtype=np.float32).reshape(-1, 4)
    labels = np.asarray([p[0] for p in placed], dtype=np.int64)
    return image, boxes, labels, placed


def generate_synthetic_detection(n_images: int, n_boxes_range=(1, 3), canvas: int = 32, seed: int = 0,
                                 num_object_classes: int = 3, num_verb_classes: int = 6,
                                 spec: Optional[DatasetSpec] = None,
                                 ensure_person: bool = True) -> List[ImageRecord]:
    """Detection images; persons carry random verb glyphs but no verb labels.

    With ``ensure_person`` the first object of every non-empty image is a
    person, so the person class dominates the way it does in real corpora.
    """
    if canvas < 16:
        raise ValueError("canvas must be at least 16x16")
    spec = spec or DatasetSpec("synthetic-detection", "detection")
    rng = np.random.default_rng(seed)
    lo, hi = n_boxes_range
    records = []
    for i in range(n_images):
        n = int(rng.integers(lo, hi + 1))
        objects = []
        for k in range(n):
            cls = int(rng.integers(0, num_object_classes))
            if k == 0 and ensure_person:
                cls = spec.person_class_id
            verb = int(rng.integers(0, num_verb_classes)) if cls == spec.person_class_id else None
            objects.append((cls, verb))
        image, boxes, labels, _ = _scene(rng, canvas, objects)
        records.append(ImageRecord(f"{spec.name}-{i:05d}", image, spec, boxes, labels))
    return records


def generate_synthetic_actions(n_samples: int, verb_classes: Sequence[int], kind: str = "image",
                               num_frames: int = 4, seed: int = 0, canvas: int = 32,
                               n_persons_range=(1, 1), num_object_classes: int = 3,
                               spec: Optional[DatasetSpec] = None):
    """Action-labeled images or N-frame videos with image/video-level verb targets."""
    verb_classes = [int(v) for v in verb_classes]
    if spec is None:
        spec = DatasetSpec(f"synthetic-action-{kind}", "action_video" if kind == "video" else "action_image",
                           tuple(verb_classes))
    if not set(verb_classes) <= set(spec.verb_class_ids):
        raise ValueError("verb_classes must be a subset of the dataset's declared classes")
    rng = np.random.default_rng(seed)
    person = spec.person_class_id
    others = [c for c in range(num_object_classes) if c != person]
    lo, hi = n_persons_range
    records = []
    for i in range(n_samples):
        n_persons = int(rng.integers(lo, hi + 1))
        objects = [(person, int(rng.choice(verb_classes))) for _ in range(n_persons)]
        if others and rng.random() < 0.5:
            objects.append((int(rng.choice(others)), None))
        image, _, _, placed = _scene(rng, canvas, objects)
        placed_verbs = tuple(sorted({v for _, v, _ in placed if v is not None}))
        rid = f"{spec.name}-{i:05d}"
        if kind != "video":
            records.append(ImageRecord(rid, image, spec, verbs=placed_verbs))
            continue
        frames = []
        drift = rng.integers(-1, 2, size=2)
        for f in range(num_frames):
            frame = _blank(rng, canvas)
            dx, dy = (drift * f).tolist()
            for cls, verb, rect in placed:
                x0 = int(np.clip(rect[0] + dx, 0, canvas - (rect[2] - rect[0])))
                y0 = int(np.clip(rect[1] + dy, 0, canvas - (rect[3] - rect[1])))
                _paint(frame, (x0, y0, x0 + rect[2] - rect[0], y0 + rect[3] - rect[1]), cls, verb)
            frames.append(frame)
        records.append(VideoRecord(rid, np.stack(frames), spec, verbs=placed_verbs))
    return records


def synthetic_caption(rng, human: str, verb: str, obj: str) -> str:
    template, form = _CAPTION_TEMPLATES[int(rng.integers(len(_CAPTION_TEMPLATES)))]
    v = _third_person(verb) if form == "v3" else _gerund(verb)
    return template.format(h=human, v3=v, ving=v, o=obj)


def generate_synthetic_captions(n_samples: int, verb_word_ids: Sequence[int] = (0, 1, 2, 3, 4, 5),
                                canvas: int = 32, seed: int = 0, num_object_classes: int = 3,
                                spec: Optional[DatasetSpec] = None) -> List[CaptionRecord]:
    """Images with one acting person and one object, described by a caption."""
    spec = spec or DatasetSpec("synthetic-caption", "caption")
    rng = np.random.default_rng(seed)
    person = spec.person_class_id
    others = [c for c in range(num_object_classes) if c != person] or [person]
    records = []
    for i in range(n_samples):
        verb_id = int(rng.choice(list(verb_word_ids)))
        obj_cls = int(rng.choice(others))
        image, _, _, _ = _scene(rng, canvas, [(person, verb_id), (obj_cls, None)])
        human = HUMAN_WORDS[int(rng.integers(len(HUMAN_WORDS)))]
        text = synthetic_caption(rng, human, VERB_WORDS[verb_id % len(VERB_WORDS)],
                                 OBJECT_WORDS[obj_cls % len(OBJECT_WORDS)])
        rid = f"{spec.name}-{i:05d}"
        triplets = parse_caption(text, rid)
        records.append(CaptionRecord(rid, image, spec, text, triplets,
                                     [f"{rid}:{k}" for k in range(len(triplets))]))
    return records
