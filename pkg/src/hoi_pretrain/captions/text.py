"""Text encoders for triplet prompts."""
from __future__ import annotations

import hashlib
from typing import Dict, Protocol, Sequence

import numpy as np

from .parser import tokenize

PROMPT_STOPWORDS = frozenset("a an the photo of".split())


class TextEncodingError(RuntimeError):
    def __init__(self, prompt: str, cause: Exception):
        self.prompt = prompt
        super().__init__(f"text encoder failed on prompt {prompt!r}: {cause}")


class TextEncoder(Protocol):
    dim: int

    def encode(self, prompts: Sequence[str]) -> np.ndarray:
        ...


class HashingTextEncoder:
    """Bag of content words, each word hashed to a fixed Gaussian direction.

    Deterministic across processes and platforms (the hash is blake2b, not
    Python's salted ``hash``). Prompts that share content words share
    embedding mass, which is enough structure for clustering and ranking.
    """

    def __init__(self, dim: int = 64, stopwords=PROMPT_STOPWORDS):
        self.dim = dim
        self.stopwords = frozenset(stopwords)
        self._cache: Dict[str, np.ndarray] = {}

    def _word_vector(self, word: str) -> np.ndarray:
        vec = self._cache.get(word)
        if vec is None:
            digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim)
            self._cache[word] = vec
        return vec

    def encode_one(self, prompt: str) -> np.ndarray:
        words = [w for w in tokenize(prompt) if w.isalpha() and w not in self.stopwords]
        if not words:
            words = [" ".join(prompt.split())]
        vec = np.zeros(self.dim)
        for w in words:
            vec += self._word_vector(w)
        return vec

    def encode(self, prompts: Sequence[str]) -> np.ndarray:
        return np.stack([self.encode_one(p) for p in prompts])


def embed_texts(prompts: Sequence[str], encoder: TextEncoder = None) -> np.ndarray:
    """Encode prompts and L2-normalize each row."""
    if len(prompts) == 0:
        raise ValueError("embed_texts needs at least one prompt")
    encoder = encoder or HashingTextEncoder()
    rows = []
    for prompt in prompts:
        try:
            row = np.asarray(encoder.encode([prompt]), dtype=np.float64).reshape(-1)
        except Exception as exc:
            raise TextEncodingError(prompt, exc) from exc
        norm = np.linalg.norm(row)
        if not np.isfinite(norm) or norm == 0:
            raise TextEncodingError(prompt, ValueError("zero or non-finite embedding"))
        rows.append(row / norm)
    return np.stack(rows)
