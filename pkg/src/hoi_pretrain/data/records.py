"""Training samples and the dataset descriptors they point back to."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..captions.parser import HOITriplet

KINDS = ("detection", "action_image", "action_video", "caption")


def group_of(kind: str) -> str:
    """Batch-plan group: action images and videos share the ``action`` slot."""
    return "action" if kind.startswith("action") else kind


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    kind: str
    verb_class_ids: Tuple[int, ...] = ()
    person_class_id: int = 0
    sampling_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.sampling_weight <= 0:
            raise ValueError("sampling_weight must be positive")
        object.__setattr__(self, "verb_class_ids", tuple(int(v) for v in self.verb_class_ids))

    @property
    def group(self) -> str:
        return group_of(self.kind)

    def verb_mask(self, num_verb_classes: int) -> np.ndarray:
        mask = np.zeros(num_verb_classes, dtype=bool)
        mask[list(self.verb_class_ids)] = True
        return mask

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "verb_class_ids": list(self.verb_class_ids),
                "person_class_id": self.person_class_id, "sampling_weight": self.sampling_weight}


@dataclass
class ImageRecord:
    id: str
    image: np.ndarray
    dataset: DatasetSpec
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.float32))
    labels: np.ndarray = field(default_factory=lambda: np.zeros((0,), dtype=np.int64))
    verbs: Tuple[int, ...] = ()
    media: Optional[str] = None

    @property
    def kind(self) -> str:
        return self.dataset.kind

    def verb_target(self, num_verb_classes: int) -> np.ndarray:
        return multi_hot(self.verbs, num_verb_classes)


@dataclass
class VideoRecord:
    id: str
    frames: np.ndarray
    dataset: DatasetSpec
    verbs: Tuple[int, ...] = ()
    media: Optional[Sequence[str]] = None

    @property
    def kind(self) -> str:
        return self.dataset.kind

    def verb_target(self, num_verb_classes: int) -> np.ndarray:
        return multi_hot(self.verbs, num_verb_classes)


@dataclass
class CaptionRecord:
    id: str
    image: np.ndarray
    dataset: DatasetSpec
    caption: str
    triplets: List[HOITriplet] = field(default_factory=list)
    triplet_ids: List[str] = field(default_factory=list)
    media: Optional[str] = None

    @property
    def kind(self) -> str:
        return self.dataset.kind


def multi_hot(ids: Sequence[int], size: int) -> np.ndarray:
    out = np.zeros(size, dtype=np.float32)
    for i in ids:
        out[int(i)] = 1.0
    return out
