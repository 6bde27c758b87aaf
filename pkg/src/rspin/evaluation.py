"""Representation similarity and boundary segmentation metrics."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import check_frames, check_units


def linear_cka(X, Y):
    """Linear centered kernel alignment between two representations of the same frames.

    Uses the feature-space form ``||Yc' Xc||_F^2 / (||Xc' Xc||_F ||Yc' Yc||_F)``.
    """
    X = check_frames(X, "X", min_rows=2)
    Y = check_frames(Y, "Y", min_rows=2)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row count mismatch: {X.shape[0]} vs {Y.shape[0]}")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    den = np.linalg.norm(Xc.T @ Xc) * np.linalg.norm(Yc.T @ Yc)
    if den == 0:
        raise ValueError("CKA is undefined for a constant representation")
    return float(np.linalg.norm(Yc.T @ Xc) ** 2 / den)


@dataclass(frozen=True)
class BoundarySet:
    """Frame boundaries; ``t`` marks the boundary between frames ``t-1`` and ``t``."""

    positions: tuple
    sequence_length: int

    def __post_init__(self):
        pos = tuple(int(p) for p in self.positions)
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("boundary positions must be strictly increasing")
        if pos and not (0 < pos[0] and pos[-1] < self.sequence_length):
            raise ValueError(f"boundaries must lie strictly inside (0, {self.sequence_length})")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.positions)


def boundaries_from_units(units):
    """Boundaries wherever two adjacent units differ."""
    s = check_units(units)
    return BoundarySet(tuple(np.flatnonzero(s[1:] != s[:-1]) + 1), s.size)


def uniform_segmentation(n_boundaries, length):
    """``n_boundaries`` evenly spaced boundaries over ``length`` frames."""
    if not 0 <= n_boundaries < length:
        raise ValueError(f"need 0 <= n_boundaries < length, got {n_boundaries}, {length}")
    pos = sorted({int(round(length * (i + 1) / (n_boundaries + 1))) for i in range(n_boundaries)})
    return BoundarySet(tuple(p for p in pos if 0 < p < length), length)


def char_boundaries_from_words(word_segments, sequence_length=None):
    """Approximate character boundaries by splitting each word evenly.

    ``word_segments`` holds ``(start, end, char_count)`` frame spans. Word
    edges are boundaries too, except at the very start and end.
    """
    segs = [(int(s), int(e), int(c)) for s, e, c in word_segments]
    for (s0, e0, _), (s1, _, _) in zip(segs, segs[1:]):
        if s1 < e0 or s1 < s0:
            raise ValueError(f"word segments overlap or are unsorted near frame {s1}")
    for s, e, c in segs:
        if e <= s or c < 1:
            raise ValueError(f"bad word segment {(s, e, c)}")
    if sequence_length is None:
        sequence_length = segs[-1][1] if segs else 1
    pos = set()
    for s, e, c in segs:
        pos.update((s, e))
        pos.update(s + int(round(j * (e - s) / c)) for j in range(1, c))
    return BoundarySet(tuple(sorted(p for p in pos if 0 < p < sequence_length)), sequence_length)


@dataclass(frozen=True)
class SegMetrics:
    precision: float
    recall: float
    f1: float
    os: float
    r_value: float

    def as_dict(self):
        return asdict(self)


def match_boundaries(pred, ref, tol_frames=1):
    """Greedy one-to-one matching, references in time order.

    Each reference takes the earliest unused prediction within
    ``tol_frames``. Because every window has the same width this greedy
    choice yields a maximum matching.
    """
    p = list(pred.positions)
    used = [False] * len(p)
    hits = 0
    start = 0
    for r in ref.positions:
        while start < len(p) and (used[start] or p[start] < r - tol_frames):
            start += 1
        j = start
        while j < len(p) and p[j] <= r + tol_frames:
            if not used[j]:
                used[j] = True
                hits += 1
                break
            j += 1
    return hits


def r_value(recall, os):
    r1 = math.sqrt((1.0 - recall) ** 2 + os ** 2)
    r2 = (-os + recall - 1.0) / math.sqrt(2.0)
    return 1.0 - (abs(r1) + abs(r2)) / 2.0


def segmentation_metrics(pred, ref, tol_frames=1):
    """Precision, recall, F1, over-segmentation and R-value of ``pred`` against ``ref``."""
    if len(ref) == 0:
        raise ValueError("reference boundary set is empty")
    if pred.sequence_length != ref.sequence_length:
        raise ValueError("prediction and reference cover different lengths")
    hits = match_boundaries(pred, ref, tol_frames)
    precision = hits / len(pred) if len(pred) else 0.0
    recall = hits / len(ref)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    os = len(pred) / len(ref) - 1.0
    return SegMetrics(precision, recall, f1, os, r_value(recall, os))


def pooled_segmentation_metrics(pairs, tol_frames=1):
    """Corpus-level metrics from summed hit / boundary counts over ``(pred, ref)`` pairs."""
    hits = n_pred = n_ref = 0
    for pred, ref in pairs:
        if pred.sequence_length != ref.sequence_length:
            raise ValueError("prediction and reference cover different lengths")
        hits += match_boundaries(pred, ref, tol_frames)
        n_pred += len(pred)
        n_ref += len(ref)
    if n_ref == 0:
        raise ValueError("reference boundary sets are all empty")
    precision = hits / n_pred if n_pred else 0.0
    recall = hits / n_ref
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    os = n_pred / n_ref - 1.0
    return SegMetrics(precision, recall, f1, os, r_value(recall, os))


def cluster_purity(assignments, reference):
    """Fraction of frames carrying their cluster's majority reference label."""
    a = check_units(assignments, "assignments")
    r = check_units(reference, "reference")
    if a.size != r.size:
        raise ValueError(f"length mismatch: {a.size} vs {r.size}")
    pairs = a * (r.max() + 1) + r
    counts = np.bincount(pairs)
    majority = 0
    for cluster in np.unique(a):
        block = counts[cluster * (r.max() + 1): (cluster + 1) * (r.max() + 1)]
        majority += block.max()
    return float(majority / a.size)


def majority_baseline(reference):
    """Purity of putting every frame in one cluster."""
    r = check_units(reference, "reference")
    return float(np.bincount(r).max() / r.size)
