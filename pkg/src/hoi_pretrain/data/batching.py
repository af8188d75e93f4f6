"""Mixed-dataset batch composition."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Sequence

import numpy as np

from .records import group_of

GROUP_ORDER = ("detection", "action", "caption")


class EmptyGroupError(ValueError):
    """A group in the plan has no records to draw from."""


@dataclass(frozen=True)
class BatchPlan:
    """Ratio of records per group (detection : action : caption) in a batch.

    When ``batch_size`` is divisible by the ratio total every batch has the
    exact counts; otherwise the fractional shares are carried from batch to
    batch so the long-run proportions stay exact.
    """

    ratios: Mapping[str, float]
    batch_size: int = 8

    def __post_init__(self):
        ratios = {g: r for g, r in self.ratios.items() if r}
        if not ratios:
            raise ValueError("batch plan needs at least one group with a positive ratio")
        for g, r in ratios.items():
            if g not in GROUP_ORDER:
                raise ValueError(f"unknown batch group {g!r}")
            if r < 0:
                raise ValueError(f"ratio for {g!r} must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        object.__setattr__(self, "ratios", {g: ratios[g] for g in GROUP_ORDER if g in ratios})

    @property
    def groups(self) -> List[str]:
        return list(self.ratios)

    def shares(self) -> Dict[str, Fraction]:
        """Exact expected records per batch for each group."""
        exact = {g: Fraction(r).limit_denominator(10 ** 6) for g, r in self.ratios.items()}
        total = sum(exact.values())
        return {g: v * self.batch_size / total for g, v in exact.items()}

    def is_divisible(self) -> bool:
        return all(s.denominator == 1 for s in self.shares().values())


class _Allocator:
    """Largest-remainder rounding with carried credit across batches."""

    def __init__(self, plan: BatchPlan):
        self.shares = plan.shares()
        self.batch_size = plan.batch_size
        self.credit = {g: Fraction(0) for g in self.shares}

    def next_counts(self) -> Dict[str, int]:
        want = {g: self.credit[g] + s for g, s in self.shares.items()}
        counts = {g: int(w) for g, w in want.items()}  # floor; shares are non-negative
        left = self.batch_size - sum(counts.values())
        order = sorted(want, key=lambda g: (-(want[g] - counts[g]), GROUP_ORDER.index(g)))
        for g in order[:left]:
            counts[g] += 1
        for g in want:
            self.credit[g] = want[g] - counts[g]
        return counts


class BatchComposer:
    """Infinite seeded stream of mixed batches.

    Within a group, datasets are chosen in proportion to their
    ``sampling_weight``; each dataset is walked through reshuffled epochs, so
    every record is seen once before any is repeated.
    """

    def __init__(self, datasets: Mapping[str, Sequence], plan: BatchPlan, seed: int = 0):
        self.plan = plan
        self.rng = np.random.default_rng(seed)
        self._by_group: Dict[str, List[str]] = {}
        self._records = {}
        self._weights: Dict[str, np.ndarray] = {}
        for name in sorted(datasets):
            records = list(datasets[name])
            if not records:
                continue
            group = group_of(records[0].dataset.kind)
            self._by_group.setdefault(group, []).append(name)
            self._records[name] = records
        self._orders: Dict[str, List[int]] = {}
        self._cursor: Dict[str, int] = {}
        self.set_plan(plan)

    def set_plan(self, plan: BatchPlan):
        """Switch plans mid-stream (e.g. when action data starts)."""
        missing = [g for g in plan.groups if not self._by_group.get(g)]
        if missing:
            raise EmptyGroupError(f"no non-empty dataset for planned group(s) {missing}")
        self.plan = plan
        self._allocator = _Allocator(plan)
        for g in plan.groups:
            names = self._by_group[g]
            w = np.asarray([self._records[n][0].dataset.sampling_weight for n in names], dtype=np.float64)
            self._weights[g] = w / w.sum()

    def _draw(self, name: str):
        records = self._records[name]
        if self._cursor.get(name, len(records)) >= len(records):
            self._orders[name] = self.rng.permutation(len(records)).tolist()
            self._cursor[name] = 0
        idx = self._orders[name][self._cursor[name]]
        self._cursor[name] += 1
        return records[idx]

    def next_batch(self) -> List:
        counts = self._allocator.next_counts()
        batch = []
        for g in self.plan.groups:
            names = self._by_group[g]
            for _ in range(counts[g]):
                k = 0 if len(names) == 1 else int(self.rng.choice(len(names), p=self._weights[g]))
                batch.append(self._draw(names[k]))
        return batch

    def __iter__(self) -> Iterator[List]:
        while True:
            yield self.next_batch()


def compose_batches(datasets: Mapping[str, Sequence], plan: BatchPlan, seed: int = 0) -> Iterator[List]:
    return iter(BatchComposer(datasets, plan, seed))


def batch_counts(batch) -> Dict[str, int]:
    out: Dict[str, int] = {}
    for rec in batch:
        g = group_of(rec.dataset.kind)
        out[g] = out.get(g, 0) + 1
    return out
