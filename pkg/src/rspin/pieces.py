"""Acoustic pieces: byte-pair encoding over deduplicated discrete units.

Frame-level unit sequences are run-length collapsed, BPE merge rules are
learned on the collapsed sequences, and encoded tokens are stretched back to
frame rate so they can serve as frame-wise pseudo-labels.
"""

from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_units


@dataclass(frozen=True)
class DedupSequence:
    units: tuple
    run_lengths: tuple

    def __post_init__(self):
        if len(self.units) != len(self.run_lengths) or not self.units:
            raise ValueError("units and run_lengths must be non-empty and equally long")
        if any(r < 1 for r in self.run_lengths):
            raise ValueError("run lengths must be positive")

    @property
    def n_frames(self):
        return sum(self.run_lengths)

    def expand(self):
        return np.repeat(np.asarray(self.units, dtype=np.int64), self.run_lengths)


def deduplicate(units):
    """Run-length encode a frame-level unit sequence."""
    s = check_units(units)
    change = np.flatnonzero(s[1:] != s[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [s.size]])
    return DedupSequence(tuple(int(u) for u in s[starts]), tuple(int(n) for n in ends - starts))


@dataclass
class MergeRuleTable:
    """Ordered merges; rule ``rank`` creates token ``base_vocab + rank``."""

    base_vocab: int
    nominal_size: int
    rules: list = field(default_factory=list)  # (rank, left, right, new)

    def __post_init__(self):
        seen = set()
        for i, (rank, left, right, new) in enumerate(self.rules):
            if rank != i or new != self.base_vocab + rank:
                raise ValueError(f"rule {i} has rank {rank} / id {new}; expected {i} / {self.base_vocab + i}")
            if (left, right) in seen:
                raise ValueError(f"duplicate merge pair {(left, right)}")
            if not (0 <= left < new and 0 <= right < new):
                raise ValueError(f"rule {i} references undefined token")
            seen.add((left, right))

    def __len__(self):
        return len(self.rules)

    def decompose(self, token):
        """Base units a token stands for, in order."""
        out, stack = [], [int(token)]
        while stack:
            t = stack.pop()
            if t < self.base_vocab:
                out.append(t)
            else:
                _, left, right, _ = self.rules[t - self.base_vocab]
                stack.extend((right, left))
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"base_vocab={self.base_vocab} nominal={self.nominal_size}\n")
            f.write("rank\tleft\tright\tnew\n")
            for rule in self.rules:
                f.write("\t".join(str(v) for v in rule) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        if len(lines) < 2:
            raise ValueError(f"{path}: truncated merge table")
        try:
            meta = dict(item.split("=", 1) for item in lines[0].split())
            base_vocab, nominal = int(meta["base_vocab"]), int(meta["nominal"])
        except (ValueError, KeyError):
            raise ValueError(f"{path}:1: bad metadata line {lines[0]!r}") from None
        if lines[1].split("\t") != ["rank", "left", "right", "new"]:
            raise ValueError(f"{path}:2: bad header {lines[1]!r}")
        rules = []
        for lineno, line in enumerate(lines[2:], start=3):
            if not line.strip():
                continue
            try:
                rules.append(tuple(int(v) for v in line.split("\t")))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer field in {line!r}") from None
        return cls(base_vocab, nominal, rules)


def _pair_counts(seq):
    return Counter(zip(seq, seq[1:]))


def _merge(seq, lens, pair, new):
    """Replace non-overlapping occurrences of ``pair`` left to right."""
    out, out_lens = [], []
    i, n = 0, len(seq)
    while i < n:
        if i + 1 < n and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(new)
            if lens is not None:
                out_lens.append(lens[i] + lens[i + 1])
            i += 2
        else:
            out.append(seq[i])
            if lens is not None:
                out_lens.append(lens[i])
            i += 1
    return out, out_lens


def _as_dedup(s):
    return s if isinstance(s, DedupSequence) else deduplicate(s)


def learn_bpe(corpus, nominal_size, base_vocab=None, min_count=2):
    """Learn merge rules on a corpus of deduplicated sequences.

    Merges the most frequent adjacent pair (ties to the smallest pair) until
    ``nominal_size - base_vocab`` merges exist or no pair occurs
    ``min_count`` times. Pairs never span two utterances.
    """
    seqs = [list(_as_dedup(s).units) for s in corpus]
    if not seqs:
        raise ValueError("cannot learn merges from an empty corpus")
    if base_vocab is None:
        base_vocab = max(max(s) for s in seqs) + 1
    if any(max(s) >= base_vocab for s in seqs):
        raise ValueError("corpus contains ids outside the base vocabulary")
    if nominal_size <= base_vocab:
        raise ValueError(f"nominal_size {nominal_size} must exceed base_vocab {base_vocab}")

    per_seq = [_pair_counts(s) for s in seqs]
    totals = Counter()
    where = defaultdict(set)
    for i, c in enumerate(per_seq):
        totals.update(c)
        for pair in c:
            where[pair].add(i)

    rules = []
    for rank in range(nominal_size - base_vocab):
        if not totals:
            break
        pair, count = min(totals.items(), key=lambda kv: (-kv[1], kv[0]))
        if count < min_count:
            break
        new = base_vocab + rank
        rules.append((rank, pair[0], pair[1], new))
        for i in sorted(where.pop(pair, ())):
            old = per_seq[i]
            totals.subtract(old)
            for p in old:
                where[p].discard(i)
            seqs[i], _ = _merge(seqs[i], None, pair, new)
            per_seq[i] = _pair_counts(seqs[i])
            totals.update(per_seq[i])
            for p in per_seq[i]:
                where[p].add(i)
        totals = +totals  # drop zero / negative entries
    return MergeRuleTable(base_vocab, nominal_size, rules)


def encode(s, rules):
    """Apply merges in rank order.

    Returns
    -------
    tokens : list of int
    segment_lengths : list of int
        Frames covered by each token.
    """
    d = _as_dedup(s)
    if max(d.units) >= rules.base_vocab:
        raise ValueError(f"unit {max(d.units)} is outside the base vocabulary {rules.base_vocab}")
    seq, lens = list(d.units), list(d.run_lengths)
    for _, left, right, new in rules.rules:
        if len(seq) < 2:
            break
        if left in seq and right in seq:
            seq, lens = _merge(seq, lens, (left, right), new)
    return seq, lens


def expand_to_frames(encoded, segment_lengths):
    """Repeat token ``i`` ``segment_lengths[i]`` times."""
    encoded = np.asarray(encoded, dtype=np.int64)
    segment_lengths = np.asarray(segment_lengths, dtype=np.int64)
    if encoded.shape != segment_lengths.shape or encoded.ndim != 1:
        raise ValueError(f"{encoded.size} tokens but {segment_lengths.size} segment lengths")
    if np.any(segment_lengths < 1):
        raise ValueError("segment lengths must be positive")
    return np.repeat(encoded, segment_lengths)


def actual_vocab_used(encoded_corpus):
    """Number of distinct token ids across an encoded corpus."""
    used = set()
    for seq in encoded_corpus:
        used.update(int(t) for t in seq)
    return len(used)


def remap_labels(encoded_corpus):
    """Map used ids onto ``0..V-1`` in increasing order.

    Returns the remapped corpus and the forward map ``{old_id: new_id}``.
    """
    used = sorted({int(t) for seq in encoded_corpus for t in seq})
    mapping = {old: new for new, old in enumerate(used)}
    remapped = [np.array([mapping[int(t)] for t in seq], dtype=np.int64) for seq in encoded_corpus]
    return remapped, mapping


def invert_map(mapping):
    return {v: k for k, v in mapping.items()}


class AcousticPieces(TransformerMixin, BaseEstimator):
    """Learn acoustic pieces on frame-level unit sequences.

    ``fit`` learns the merge table and the dense label map of the pieces the
    training corpus actually uses; ``transform`` turns frame-level unit
    sequences into frame-level dense pseudo-labels.

    Parameters
    ----------
    nominal_size : int
        Base vocabulary plus the maximum number of merges.
    base_vocab : int, optional
        Number of discrete unit ids; inferred from the data when omitted.
    min_count : int
        Pairs seen fewer times than this are never merged.
    """

    def __init__(self, nominal_size=100, base_vocab=None, min_count=2):
        self.nominal_size = nominal_size
        self.base_vocab = base_vocab
        self.min_count = min_count

    def fit(self, X, y=None):
        dedup = [deduplicate(s) for s in X]
        self.rules_ = learn_bpe(dedup, self.nominal_size, self.base_vocab, self.min_count)
        encoded = [encode(d, self.rules_)[0] for d in dedup]
        _, self.label_map_ = remap_labels(encoded)
        self.n_labels_ = len(self.label_map_)
        return self

    def encode(self, X):
        """Frame-level AP ids (not remapped) for each sequence in ``X``."""
        check_is_fitted(self, "rules_")
        return [expand_to_frames(*encode(deduplicate(s), self.rules_)) for s in X]

    def transform(self, X):
        check_is_fitted(self, "label_map_")
        out = []
        for frames in self.encode(X):
            try:
                out.append(np.array([self.label_map_[int(t)] for t in frames], dtype=np.int64))
            except KeyError as exc:
                raise ValueError(f"acoustic piece {exc.args[0]} never occurred during fit") from None
        return out

    def inverse_transform(self, labels):
        check_is_fitted(self, "label_map_")
        inv = invert_map(self.label_map_)
        return [np.array([inv[int(t)] for t in seq], dtype=np.int64) for seq in labels]


def kmeans_units(features, n_clusters=50, seed=0):
    """Discretize per-utterance feature matrices with one shared k-means model.

    Returns one frame-level unit sequence per input matrix.
    """
    from sklearn.cluster import KMeans

    lengths = [f.shape[0] for f in features]
    km = KMeans(n_clusters=n_clusters, n_init=4, random_state=seed).fit(np.concatenate(features))
    return [a.astype(np.int64) for a in np.split(km.labels_, np.cumsum(lengths)[:-1])]


def read_unit_corpus(path):
    """One utterance per line, space-separated decimal unit ids."""
    corpus = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                raise ValueError(f"{path}:{lineno}: empty utterance")
            try:
                ids = [int(t) for t in tokens]
            except ValueError:
                bad = next(t for t in tokens if not t.lstrip("-").isdigit())
                raise ValueError(f"{path}:{lineno}: non-integer token {bad!r}") from None
            if min(ids) < 0:
                raise ValueError(f"{path}:{lineno}: negative unit id")
            corpus.append(np.asarray(ids, dtype=np.int64))
    return corpus


def write_unit_corpus(path, corpus):
    with open(path, "w", encoding="utf-8") as f:
        for seq in corpus:
            f.write(" ".join(str(int(u)) for u in seq) + "\n")
