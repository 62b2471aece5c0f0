"""Label frequency statistics and the rare / non-rare triplet split."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class FrequencyTable:
    """Counts over a training set.

    ``label_counts[l]`` is the number of positive (pair, label) occurrences of
    predicate ``l`` in the combined spatial-then-action index space; these are
    also the per-class sample counts used by the class-balanced loss.
    ``triplet_counts`` is keyed by ``(object_category, predicate)``.
    """

    label_counts: np.ndarray
    triplet_counts: dict = field(default_factory=dict)
    total: int = 0

    @property
    def num_predicates(self):
        return len(self.label_counts)

    @property
    def class_counts(self):
        return self.label_counts

    def __add__(self, other):
        trip = dict(self.triplet_counts)
        for k, v in other.triplet_counts.items():
            trip[k] = trip.get(k, 0) + v
        return FrequencyTable(self.label_counts + other.label_counts, trip, self.total + other.total)

    def __eq__(self, other):
        return (np.array_equal(self.label_counts, other.label_counts)
                and self.triplet_counts == other.triplet_counts and self.total == other.total)

    def to_dict(self):
        return {
            "label_counts": [int(c) for c in self.label_counts],
            "triplet_counts": [[int(o), int(p), int(n)] for (o, p), n in sorted(self.triplet_counts.items())],
            "total": int(self.total),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["label_counts"], dtype=np.int64),
                   {(o, p): n for o, p, n in d["triplet_counts"]}, int(d["total"]))


def compute_frequencies(dataset):
    ls = dataset.label_space
    counts = np.zeros(ls.num_predicates, dtype=np.int64)
    trip = {}
    total = 0
    for _, p in dataset.pairs():
        total += 1
        for l in p.predicate_indices(ls):
            counts[l] += 1
            trip[(p.obj, l)] = trip.get((p.obj, l), 0) + 1
    return FrequencyTable(counts, trip, total)


def split_rare(freqs, threshold=25):
    """Triplets seen fewer than ``threshold`` times in training are rare."""
    if threshold < 1:
        raise ValueError("rare threshold must be >= 1")
    rare = {k for k, n in freqs.triplet_counts.items() if 0 < n < threshold}
    non_rare = {k for k, n in freqs.triplet_counts.items() if n >= threshold}
    return rare, non_rare
