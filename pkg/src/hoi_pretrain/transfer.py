"""Checkpoint files and weight transfer into downstream layouts.

File layout, all integers little-endian::

    b"HOICKPT\\0" | u32 version | u64 header length | header JSON | tensor data | sha256

The header carries metadata plus an index of (name, tag, dtype, shape,
offset, nbytes) entries into the data block. The trailing digest covers
every preceding byte and is checked before anything is parsed.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import torch

from .model import component_of

MAGIC = b"HOICKPT\0"
FORMAT_VERSION = 1
_DIGEST = 32
_PREAMBLE = struct.Struct("<8sIQ")

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.float16: "<f2",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.bool: "|b1",
}
_TORCH_OF = {v: k for k, v in _DTYPES.items()}

STRATEGIES = ("backbone_encoder", "plus_detection_decoder", "full")


class CheckpointError(ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TransferError(ValueError):
    pass


@dataclass
class Checkpoint:
    parameters: Dict[str, torch.Tensor]
    component_tags: Dict[str, str]
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.parameters) - set(self.component_tags)
        if missing:
            raise CheckpointError(f"parameters without component tag: {sorted(missing)}")

    @classmethod
    def from_model(cls, model, **metadata) -> "Checkpoint":
        params = {k: v.detach().clone() for k, v in model.state_dict().items()}
        tags = {k: component_of(k) for k in params}
        meta = {"format_version": FORMAT_VERSION}
        if hasattr(model, "config"):
            meta["model_config"] = model.config.to_dict()
        meta.update(metadata)
        return cls(params, tags, meta)

    def tags_present(self) -> set:
        return set(self.component_tags.values())


def save_checkpoint(model_or_ckpt, path: str, **metadata) -> Dict:
    """Write a checkpoint atomically; returns its metadata."""
    ckpt = model_or_ckpt if isinstance(model_or_ckpt, Checkpoint) else Checkpoint.from_model(model_or_ckpt, **metadata)
    if isinstance(model_or_ckpt, Checkpoint) and metadata:
        ckpt = Checkpoint(ckpt.parameters, ckpt.component_tags, {**ckpt.metadata, **metadata})
    index, chunks, offset = [], [], 0
    for name in sorted(ckpt.parameters):
        t = ckpt.parameters[name].detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        raw = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
        index.append({"name": name, "tag": ckpt.component_tags[name], "dtype": _DTYPES[t.dtype],
                      "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"metadata": ckpt.metadata, "tensors": index}, sort_keys=True).encode("utf-8")
    body = _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())
    os.replace(tmp, path)
    return ckpt.metadata


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _PREAMBLE.size + _DIGEST:
        raise CorruptCheckpointError(f"{path}: file is truncated")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (file is truncated or corrupted)")
    magic, version, header_len = _PREAMBLE.unpack_from(body)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREAMBLE.size
    header = json.loads(body[start:start + header_len].decode("utf-8"))
    data = body[start + header_len:]
    params, tags = {}, {}
    for entry in header["tensors"]:
        raw = data[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        params[entry["name"]] = torch.from_numpy(arr.copy()).to(_TORCH_OF[entry["dtype"]])
        tags[entry["name"]] = entry["tag"]
    return Checkpoint(params, tags, header["metadata"])


# ---------------------------------------------------------------------------
# transfer

@dataclass
class TransferReport:
    strategy: str
    copied: List[Tuple[str, str]] = field(default_factory=list)  # (target, source)
    skipped: List[Tuple[str, str]] = field(default_factory=list)  # (target, reason)
    shape_mismatches: List[str] = field(default_factory=list)
    fallback_interaction_from_detection: bool = False

    def copied_tags(self, tags: Mapping[str, str]) -> set:
        return {tags[t] for t, _ in self.copied}

    def covered(self) -> set:
        return {t for t, _ in self.copied} | {t for t, _ in self.skipped} | set(self.shape_mismatches)

    def to_dict(self) -> Dict:
        return {
            "strategy": self.strategy,
            "copied": [list(p) for p in self.copied],
            "skipped": [list(p) for p in self.skipped],
            "shape_mismatches": list(self.shape_mismatches),
            "fallback_interaction_from_detection": self.fallback_interaction_from_detection,
        }


_STRATEGY_TAGS = {
    "backbone_encoder": {"backbone", "encoder"},
    "plus_detection_decoder": {"backbone", "encoder", "detection_decoder"},
    "full": {"backbone", "encoder", "detection_decoder", "interaction_decoder"},
}
# heads travel with the decoder that feeds them
_STRATEGY_HEADS = {
    "backbone_encoder": (),
    "plus_detection_decoder": ("heads.box.", "heads.object."),
    "full": ("heads.box.", "heads.object.", "heads.verb.", "heads.caption."),
}


def strategy_components(strategy: str) -> set:
    if strategy not in STRATEGIES:
        raise TransferError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    tags = set(_STRATEGY_TAGS[strategy])
    if _STRATEGY_HEADS[strategy]:
        tags.add("heads")
    return tags


def _in_strategy(name: str, tag: str, strategy: str) -> bool:
    if tag == "heads":
        return name.startswith(_STRATEGY_HEADS[strategy])
    return tag in _STRATEGY_TAGS[strategy]


def apply_init_strategy(source: Checkpoint, target: Checkpoint, strategy: str):
    """Initialize ``target`` parameters from ``source`` according to ``strategy``.

    Returns ``(parameters, report)``; parameters not copied keep their target
    values. Denoising parameters are never copied. Under ``full``, a source
    without an interaction decoder seeds the target's interaction decoder from
    its detection decoder.
    """
    strategy_components(strategy)
    names = list(target.parameters)
    if not set(names) & set(source.parameters):
        raise TransferError("source and target share no parameter names")
    source_has_interaction = "interaction_decoder" in source.tags_present()
    report = TransferReport(strategy)
    out = {k: v.clone() for k, v in target.parameters.items()}
    for name in names:
        tag = target.component_tags[name]
        if tag == "dn":
            report.skipped.append((name, "denoising parameters are pre-training only"))
            continue
        if not _in_strategy(name, tag, strategy):
            report.skipped.append((name, f"component {tag!r} not transferred by {strategy}"))
            continue
        src_name = name
        if tag == "interaction_decoder" and not source_has_interaction:
            src_name = "detection_decoder." + name[len("interaction_decoder."):]
            report.fallback_interaction_from_detection = True
        if src_name not in source.parameters:
            report.skipped.append((name, f"source has no {src_name!r}"))
            continue
        src = source.parameters[src_name]
        if tuple(src.shape) != tuple(out[name].shape):
            report.shape_mismatches.append(name)
            continue
        out[name] = src.detach().clone().to(out[name].dtype)
        report.copied.append((name, src_name))
    return out, report


def transfer_into_model(source: Checkpoint, model, strategy: str) -> TransferReport:
    """Apply a strategy in place to ``model``."""
    params, report = apply_init_strategy(source, Checkpoint.from_model(model), strategy)
    model.load_state_dict(params)
    return report


def diff_checkpoints(a: Checkpoint, b: Checkpoint) -> Dict[str, float]:
    """Maximum absolute difference per component tag."""
    if set(a.parameters) != set(b.parameters):
        only = sorted(set(a.parameters) ^ set(b.parameters))
        raise CheckpointError(f"layout mismatch; names present in only one checkpoint: {only[:5]}")
    table: Dict[str, float] = {}
    for name in sorted(a.parameters):
        x, y = a.parameters[name], b.parameters[name]
        if x.shape != y.shape:
            raise CheckpointError(f"layout mismatch for {name}: {tuple(x.shape)} vs {tuple(y.shape)}")
        tag = a.component_tags[name]
        d = float((x.double() - y.double()).abs().max()) if x.numel() else 0.0
        table[tag] = max(table.get(tag, 0.0), d)
    return table
