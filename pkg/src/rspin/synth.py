"""Deterministic synthetic corpus with known content units and speakers.

Each frame is ``centroid[unit] + offset[speaker] + noise``. The perturbed view
of an utterance keeps the unit sequence and swaps in another speaker's
offset with fresh noise, the feature-space analogue of re-voicing plus
distortion.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from ._validation import derive_rng
from .formats import write_fmat
from .pieces import write_unit_corpus


@dataclass(frozen=True)
class SynthSpec:
    n_units: int = 20
    n_speakers: int = 4
    feat_dim: int = 16
    frames_per_utt: tuple = (80, 120)
    run_length: tuple = (2, 6)
    centroid_scale: float = 1.0
    speaker_offset_scale: float = 0.5
    noise_scale: float = 0.3
    transition_concentration: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_units < 2:
            raise ValueError("n_units must be >= 2")
        if self.n_speakers < 2:
            raise ValueError("n_speakers must be >= 2")
        if self.feat_dim < 1:
            raise ValueError("feat_dim must be >= 1")
        for name in ("frames_per_utt", "run_length"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must be a non-empty range of positive ints, got {(lo, hi)}")
        for name in ("centroid_scale", "speaker_offset_scale", "noise_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.transition_concentration <= 0:
            raise ValueError("transition_concentration must be positive")


@dataclass
class Utterance:
    features: np.ndarray
    perturbed: np.ndarray
    units: np.ndarray
    speaker: int
    perturbed_speaker: int

    @property
    def n_frames(self):
        return self.units.size


@dataclass
class SynthWorld:
    """Shared generative parameters: unit centroids, speaker offsets, unit transitions."""

    centroids: np.ndarray
    offsets: np.ndarray
    transitions: np.ndarray
    spec: SynthSpec = field(repr=False)

    @classmethod
    def from_spec(cls, spec):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))
        centroids = spec.centroid_scale * rng.standard_normal((spec.n_units, spec.feat_dim))
        offsets = spec.speaker_offset_scale * rng.standard_normal((spec.n_speakers, spec.feat_dim))
        # Sparse-ish Markov chain over units, never staying on the same unit,
        # so recurring unit pairs exist for BPE to discover.
        trans = rng.dirichlet(np.full(spec.n_units - 1, spec.transition_concentration), size=spec.n_units)
        full = np.zeros((spec.n_units, spec.n_units))
        for u in range(spec.n_units):
            full[u, np.arange(spec.n_units) != u] = trans[u]
        return cls(centroids, offsets, full, spec)

    def render(self, units, speaker, rng):
        noise = self.spec.noise_scale * rng.standard_normal((units.size, self.spec.feat_dim))
        return self.centroids[units] + self.offsets[speaker] + noise


def _unit_walk(world, n_frames, rng):
    lo, hi = world.spec.run_length
    units = []
    u = int(rng.integers(world.spec.n_units))
    while len(units) < n_frames:
        units.extend([u] * int(rng.integers(lo, hi + 1)))
        u = int(rng.choice(world.spec.n_units, p=world.transitions[u]))
    return np.asarray(units[:n_frames], dtype=np.int64)


def generate(spec, n_utts):
    """Generate ``n_utts`` utterances; utterance ``i`` depends only on ``(seed, i)``."""
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    world = SynthWorld.from_spec(spec)
    utts = []
    for i in range(n_utts):
        rng = derive_rng(spec.seed, i)
        n_frames = int(rng.integers(spec.frames_per_utt[0], spec.frames_per_utt[1] + 1))
        units = _unit_walk(world, n_frames, rng)
        speaker = int(rng.integers(spec.n_speakers))
        other = int(rng.integers(spec.n_speakers - 1))
        other += other >= speaker
        utts.append(Utterance(
            features=world.render(units, speaker, rng),
            perturbed=world.render(units, other, rng),
            units=units,
            speaker=speaker,
            perturbed_speaker=other,
        ))
    return utts


def write_corpus(utts, out_dir):
    """Write FMAT features, per-utterance unit files, ``units.txt`` and ``manifest.csv``.

    The manifest columns are ``utt_id,speaker,frames,path_feats,path_units``;
    paths are relative to ``out_dir``. Perturbed-view features sit next to the
    clean ones with a ``.pert.fmat`` suffix.
    """
    os.makedirs(os.path.join(out_dir, "feats"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "units"), exist_ok=True)
    rows = []
    for i, u in enumerate(utts):
        utt_id = f"utt{i:05d}"
        feats = os.path.join("feats", f"{utt_id}.fmat")
        units = os.path.join("units", f"{utt_id}.txt")
        write_fmat(os.path.join(out_dir, feats), u.features)
        write_fmat(os.path.join(out_dir, "feats", f"{utt_id}.pert.fmat"), u.perturbed)
        write_unit_corpus(os.path.join(out_dir, units), [u.units])
        rows.append((utt_id, u.speaker, u.n_frames, feats, units))
    write_unit_corpus(os.path.join(out_dir, "units.txt"), [u.units for u in utts])
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["utt_id", "speaker", "frames", "path_feats", "path_units"])
        w.writerows(rows)
    return os.path.join(out_dir, "manifest.csv")
