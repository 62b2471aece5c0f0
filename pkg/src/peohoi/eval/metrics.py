"""Rank metrics, mAP reporting, silhouette and sample variance."""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..data.stats import split_rare
from ..errors import SchemaError


def average_precision(scores, positives):
    """All-point interpolated average precision.

    ``scores`` is a sequence of floats and ``positives`` a same-length
    sequence of booleans.  Items are ranked by descending score with ties
    kept in input order.  Precision is replaced by its running maximum from
    the right (the PR envelope) and integrated over recall.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    if scores.shape != pos.shape:
        raise ValueError("scores and positives differ in length")
    npos = int(pos.sum())
    if npos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-scores, kind="stable")
    hits = pos[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # each positive adds 1/npos of recall at its rank
    return float(np.sum(envelope[hits]) / npos)


@dataclass
class ScoredPrediction:
    video: str
    frame: int
    h_id: int
    o_id: int
    triplet: tuple
    score: float


@dataclass
class Predictions:
    """Scores for ground-truth pairs: ``keys[i] = (video, frame, h_id, o_id)``, ``scores[i, l]``."""

    keys: list
    scores: np.ndarray

    def scored(self, dataset):
        objs = {(fr.video, fr.frame, p.h_id, p.o_id): p.obj for fr, p in dataset.pairs()}
        for (v, f, h, o), row in zip(self.keys, self.scores):
            for l, s in enumerate(row):
                yield ScoredPrediction(v, f, h, o, (objs[(v, f, h, o)], l), float(s))


@dataclass
class EvalReport:
    ap: dict  # triplet -> AP
    map_full: float
    map_non_rare: float
    map_rare: float
    n_full: int
    n_non_rare: int
    n_rare: int
    rare_threshold: int
    average: str = "triplet"
    config: dict = field(default_factory=dict)
    non_rare_keys: frozenset = frozenset()

    def row(self):
        return (self.map_full, self.map_non_rare, self.map_rare)

    def to_dict(self):
        return {
            "mAP_full": self.map_full, "mAP_non_rare": self.map_non_rare, "mAP_rare": self.map_rare,
            "counts": {"full": self.n_full, "non_rare": self.n_non_rare, "rare": self.n_rare},
            "rare_threshold": self.rare_threshold, "average": self.average,
            "per_class_ap": [{"object": k[0], "predicate": k[1], "ap": v,
                              "split": "non_rare" if k in self.non_rare_keys else "rare"}
                             for k, v in sorted(self.ap.items())]
            if self.average == "triplet" else
            [{"predicate": k, "ap": v, "split": "non_rare" if k in self.non_rare_keys else "rare"}
             for k, v in sorted(self.ap.items())],
            "config": self.config,
        }


def _mean(values):
    return float(np.mean(values)) if values else float("nan")


def map_report(predictions, dataset, freqs, rare_threshold=25, average="triplet", threads=1, config=None):
    """mAP over classes with at least one positive in ``dataset``.

    Oracle-pair protocol: every ground-truth pair must carry a prediction.
    With ``average="triplet"`` classes are ``(object_category, predicate)``
    and candidates for a class are the pairs of that object category; with
    ``"predicate"`` every pair is a candidate.  Rare / non-rare splits follow
    training counts ``freqs``; triplets unseen in training count as rare.
    """
    ls = dataset.label_space
    if predictions.scores.shape[1] != ls.num_predicates:
        raise SchemaError(f"predictions have {predictions.scores.shape[1]} labels, "
                          f"dataset has {ls.num_predicates}")
    if freqs.num_predicates != ls.num_predicates:
        raise SchemaError("frequency table and dataset label spaces differ")
    if average not in ("triplet", "predicate"):
        raise ValueError(f"unknown averaging {average!r}")
    index = {k: i for i, k in enumerate(predictions.keys)}
    rows, objs, labels = [], [], []
    for fr, p in dataset.pairs():
        key = (fr.video, fr.frame, p.h_id, p.o_id)
        if key not in index:
            raise SchemaError(f"no prediction for ground-truth pair {key}")
        rows.append(index[key])
        objs.append(p.obj)
        y = np.zeros(ls.num_predicates, dtype=bool)
        y[list(p.predicate_indices(ls))] = True
        labels.append(y)
    S = predictions.scores[np.asarray(rows, dtype=np.int64)] if rows else np.zeros((0, ls.num_predicates))
    Y = np.asarray(labels).reshape(-1, ls.num_predicates)
    objs = np.asarray(objs, dtype=np.int64)

    jobs = []
    if average == "triplet":
        for c in np.unique(objs):
            sel = objs == c
            for l in np.flatnonzero(Y[sel].any(axis=0)):
                jobs.append(((int(c), int(l)), sel, l))
    else:
        for l in np.flatnonzero(Y.any(axis=0)):
            jobs.append((int(l), slice(None), l))

    def run(job):
        key, sel, l = job
        return key, average_precision(S[sel, l], Y[sel, l])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    ap = dict(results)  # job order is fixed, so the reduction order is too

    if average == "triplet":
        _, non_rare_train = split_rare(freqs, rare_threshold)
        non_rare = [k for k in ap if k in non_rare_train]
        rare = [k for k in ap if k not in non_rare_train]
    else:
        non_rare = [k for k in ap if freqs.label_counts[k] >= rare_threshold]
        rare = [k for k in ap if freqs.label_counts[k] < rare_threshold]
    return EvalReport(ap, _mean(list(ap.values())), _mean([ap[k] for k in non_rare]),
                      _mean([ap[k] for k in rare]), len(ap), len(non_rare), len(rare),
                      rare_threshold, average, dict(config or {}), frozenset(non_rare))


def expected_random_ap(n, k):
    """Expected AP of a uniformly random ranking of ``n`` items with ``k`` positives.

    Non-interpolated; a lower bound for the interpolated statistic.
    """
    H = sum(1.0 / r for r in range(1, n + 1))
    if n == 1:
        return 1.0
    return (H + (k - 1) * (n - H) / (n - 1)) / n


@dataclass
class SeparabilityReport:
    before: float | None
    after: float | None
    class_counts: dict
    min_count: int
    per_class: int
    computable: bool = True
    note: str = ""

    def to_dict(self):
        return {"silhouette_before": self.before, "silhouette_after": self.after,
                "class_counts": {str(k): v for k, v in sorted(self.class_counts.items())},
                "min_count": self.min_count, "per_class": self.per_class,
                "computable": self.computable, "note": self.note}


def silhouette(features, labels):
    """Mean Euclidean silhouette coefficient.

    Points in singleton classes score 0.  Needs at least two classes.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes, inv = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("silhouette needs at least two classes")
    sq = np.sum(X * X, axis=1)
    D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0))
    np.fill_diagonal(D, 0.0)
    onehot = np.eye(len(classes))[inv]
    sizes = onehot.sum(axis=0)
    sums = D @ onehot  # [n, k] distance totals to each class
    own = sizes[inv]
    a = np.where(own > 1, sums[np.arange(len(X)), inv] / np.maximum(own - 1, 1), 0.0)
    means = sums / sizes
    means[np.arange(len(X)), inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1), 0.0)
    return float(s.mean())


def filter_classes(labels, min_count, per_class=None, seed=0):
    """Indices of points whose class has at least ``min_count`` members.

    Each kept class is subsampled to ``per_class`` points (default
    ``min_count``) with a seeded generator.
    """
    labels = np.asarray(labels)
    per_class = per_class or min_count
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) >= min_count:
            if len(idx) > per_class:
                idx = np.sort(rng.choice(idx, size=per_class, replace=False))
            keep.append(idx)
    return np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)


def separability(before, after, labels, min_count=200, per_class=None, seed=0):
    """Silhouette of two feature sets of the same points under the same class filter."""
    labels = np.asarray(labels)
    idx = filter_classes(labels, min_count, per_class, seed)
    kept = labels[idx]
    counts = {int(c): int((kept == c).sum()) for c in np.unique(kept)}
    per_class = per_class or min_count
    if len(counts) < 2:
        return SeparabilityReport(None, None, counts, min_count, per_class, computable=False,
                                  note=f"fewer than two classes with >= {min_count} samples")
    return SeparabilityReport(silhouette(np.asarray(before)[idx], kept),
                              silhouette(np.asarray(after)[idx], kept), counts, min_count, per_class)


def sample_variance(values):
    """Unbiased (n - 1) sample variance; NaN if any value is NaN."""
    values = [float(v) for v in values]
    if len(values) < 2:
        raise ValueError("sample variance needs at least two values")
    if any(math.isnan(v) for v in values):
        return float("nan")
    return statistics.variance(values)


def is_finite_report(report):
    return all(math.isfinite(v) for v in report.row() if not math.isnan(v))
