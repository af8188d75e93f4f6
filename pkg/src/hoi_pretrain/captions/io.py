"""Line-delimited caption and triplet record files."""
from __future__ import annotations

import json
from typing import Iterable, Iterator, List, Tuple

from .parser import HOITriplet, parse_caption, template_prompt

TRIPLET_RECORD_VERSION = 1


class RecordError(ValueError):
    """A malformed input line; carries the 1-based line number."""

    def __init__(self, path: str, line: int, message: str):
        self.path, self.line = path, line
        super().__init__(f"{path}:{line}: {message}")


def read_caption_records(path: str) -> Iterator[Tuple[str, str]]:
    """Yield ``(id, text)`` from a JSONL file of ``{"id": ..., "text": ...}``."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "id" not in rec or not isinstance(rec.get("text"), str):
                raise RecordError(path, lineno, "caption records need 'id' and string 'text'")
            yield str(rec["id"]), rec["text"]


def triplet_record(triplet: HOITriplet, triplet_id: str) -> dict:
    return {
        "v": TRIPLET_RECORD_VERSION,
        "triplet_id": triplet_id,
        "caption_id": triplet.source_caption_id,
        "human": triplet.human,
        "verb": triplet.verb,
        "object": triplet.object,
        "prompt": template_prompt(triplet),
    }


def parse_caption_file(src: str, dst: str) -> Tuple[int, int]:
    """Parse every caption in ``src``; returns (captions read, triplets written)."""
    n_captions = n_triplets = 0
    with open(dst, "w", encoding="utf-8") as out:
        for cap_id, text in read_caption_records(src):
            n_captions += 1
            for k, t in enumerate(parse_caption(text, cap_id)):
                out.write(json.dumps(triplet_record(t, f"{cap_id}:{k}"), sort_keys=True) + "\n")
                n_triplets += 1
    return n_captions, n_triplets


def read_triplet_records(path: str) -> List[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if rec.get("v") != TRIPLET_RECORD_VERSION:
                raise RecordError(path, lineno, f"unsupported triplet record version {rec.get('v')!r}")
            for key in ("triplet_id", "prompt"):
                if key not in rec:
                    raise RecordError(path, lineno, f"missing field {key!r}")
            records.append(rec)
    return records
