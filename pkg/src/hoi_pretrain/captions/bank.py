"""Offline clustering of triplet embeddings and the negative bank built from it."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans

BANK_FORMAT = "hoi-negative-bank"
BANK_VERSION = 1


@dataclass
class NegativeBank:
    triplet_ids: List[str]
    prompts: List[str]
    embeddings: np.ndarray
    cluster_assignments: Dict[str, int]
    per_cluster_samples: Dict[int, List[str]]
    per_cluster: int = 10
    seed: int = 0

    def __post_init__(self):
        self._row = {tid: i for i, tid in enumerate(self.triplet_ids)}

    @property
    def num_clusters(self) -> int:
        return len(set(self.cluster_assignments.values()))

    def __contains__(self, triplet_id) -> bool:
        return triplet_id in self._row

    def row_of(self, triplet_id: str) -> int:
        return self._row[triplet_id]

    def sampled_ids(self) -> List[str]:
        return [tid for c in sorted(self.per_cluster_samples) for tid in self.per_cluster_samples[c]]

    def resample(self, rng: np.random.Generator) -> Dict[int, List[str]]:
        """Fresh per-cluster draws, for the per-batch sampling mode."""
        return _sample_clusters(self.cluster_assignments, self.triplet_ids, self.per_cluster, rng)

    def negatives_for(self, positive_id: str, rng: Optional[np.random.Generator] = None) -> List[str]:
        """Sampled ids minus the positive and anything with the positive's prompt.

        With ``rng`` the per-cluster draws are redone for this call instead of
        using the offline sample.
        """
        if positive_id not in self._row:
            raise KeyError(f"unknown triplet id {positive_id!r}")
        prompt = self.prompts[self._row[positive_id]]
        samples = self.per_cluster_samples if rng is None else self.resample(rng)
        out = []
        for c in sorted(samples):
            for tid in samples[c]:
                if tid == positive_id or self.prompts[self._row[tid]] == prompt:
                    continue
                out.append(tid)
        return out

    def embeddings_for(self, ids: Sequence[str]) -> np.ndarray:
        if not ids:
            return np.zeros((0, self.embeddings.shape[1]))
        return self.embeddings[[self._row[t] for t in ids]]

    # -- persistence -------------------------------------------------------

    def save(self, path: str) -> None:
        table = {
            "format": BANK_FORMAT,
            "version": BANK_VERSION,
            "per_cluster": self.per_cluster,
            "seed": self.seed,
            "triplet_ids": self.triplet_ids,
            "prompts": self.prompts,
            "clusters": [self.cluster_assignments[t] for t in self.triplet_ids],
            "samples": {str(c): ids for c, ids in sorted(self.per_cluster_samples.items())},
        }
        with open(path, "wb") as fh:
            np.savez(fh, embeddings=self.embeddings.astype("<f8"),
                     table=np.frombuffer(json.dumps(table, sort_keys=True).encode("utf-8"), dtype=np.uint8))

    @classmethod
    def load(cls, path: str) -> "NegativeBank":
        with np.load(path, allow_pickle=False) as data:
            table = json.loads(bytes(data["table"]).decode("utf-8"))
            embeddings = np.array(data["embeddings"], dtype=np.float64)
        if table.get("format") != BANK_FORMAT or table.get("version") != BANK_VERSION:
            raise ValueError(f"{path}: not a version-{BANK_VERSION} negative bank")
        ids = table["triplet_ids"]
        return cls(
            triplet_ids=ids,
            prompts=table["prompts"],
            embeddings=embeddings,
            cluster_assignments=dict(zip(ids, table["clusters"])),
            per_cluster_samples={int(c): v for c, v in table["samples"].items()},
            per_cluster=table["per_cluster"],
            seed=table["seed"],
        )


def _sample_clusters(assignments: Dict[str, int], order: Sequence[str], per_cluster: int,
                     rng: np.random.Generator) -> Dict[int, List[str]]:
    members: Dict[int, List[str]] = {}
    for tid in order:
        members.setdefault(assignments[tid], []).append(tid)
    samples = {}
    for c in sorted(members):
        group = members[c]
        take = min(per_cluster, len(group))
        picks = rng.choice(len(group), size=take, replace=False)
        samples[c] = [group[i] for i in sorted(picks.tolist())]
    return samples


def cluster_embeddings(embeddings: np.ndarray, k: int = 100, seed: int = 0,
                       max_iter: int = 50) -> np.ndarray:
    """k-means++ labels; ``k`` is capped at the number of rows."""
    n = embeddings.shape[0]
    k = min(k, n)
    if k == n:
        return np.arange(n)
    with warnings.catch_warnings():
        # duplicate prompts can leave fewer distinct points than clusters
        warnings.simplefilter("ignore")
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=max_iter, random_state=seed)
        return km.fit_predict(embeddings)


def build_negative_bank(embeddings: np.ndarray, k: int = 100, per_cluster: int = 10, seed: int = 0,
                        triplet_ids: Optional[Sequence[str]] = None,
                        prompts: Optional[Sequence[str]] = None) -> NegativeBank:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    if n < 1:
        raise ValueError("negative bank needs at least one triplet")
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    embeddings = embeddings / np.where(norms == 0, 1.0, norms)
    ids = [str(t) for t in (triplet_ids if triplet_ids is not None else range(n))]
    if len(set(ids)) != n:
        raise ValueError("triplet ids must be unique")
    prompts = list(prompts) if prompts is not None else ids
    labels = cluster_embeddings(embeddings, k, seed)
    assignments = {tid: int(c) for tid, c in zip(ids, labels)}
    samples = _sample_clusters(assignments, ids, per_cluster, np.random.default_rng(seed))
    return NegativeBank(ids, prompts, embeddings, assignments, samples, per_cluster, seed)


def negatives_for(positive_id: str, bank: NegativeBank,
                  rng: Optional[np.random.Generator] = None) -> List[str]:
    return bank.negatives_for(positive_id, rng)
