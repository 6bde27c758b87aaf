import csv

import numpy as np
import pytest
from sklearn.neighbors import NearestCentroid

from rspin.formats import read_fmat
from rspin.pieces import deduplicate, read_unit_corpus
from rspin.synth import SynthSpec, SynthWorld, generate, write_corpus


def test_same_seed_is_bit_identical():
    a = generate(SynthSpec(seed=3), 5)
    b = generate(SynthSpec(seed=3), 5)
    for u, v in zip(a, b):
        assert np.array_equal(u.features, v.features)
        assert np.array_equal(u.perturbed, v.perturbed)
        assert np.array_equal(u.units, v.units)


def test_different_seeds_differ():
    a = generate(SynthSpec(seed=1), 1)[0]
    b = generate(SynthSpec(seed=2), 1)[0]
    assert a.units.size != b.units.size or not np.array_equal(a.features, b.features)


def test_utterance_depends_only_on_its_index():
    assert np.array_equal(generate(SynthSpec(), 3)[2].features, generate(SynthSpec(), 6)[2].features)


def test_degenerate_spec_repeats_rows():
    spec = SynthSpec(noise_scale=0.0, speaker_offset_scale=0.0)
    u = generate(spec, 1)[0]
    for unit in np.unique(u.units):
        rows = u.features[u.units == unit]
        assert np.all(rows == rows[0])


def test_views_share_units_but_not_speaker():
    for u in generate(SynthSpec(), 30):
        assert u.speaker != u.perturbed_speaker
        assert u.features.shape == u.perturbed.shape
        assert not np.array_equal(u.features, u.perturbed)


def test_run_lengths_and_frames_within_range():
    spec = SynthSpec()
    runs = []
    for u in generate(spec, 1000):
        assert spec.frames_per_utt[0] <= u.n_frames <= spec.frames_per_utt[1]
        d = deduplicate(u.units)
        # The last run may be truncated at the utterance end.
        runs.extend(d.run_lengths[:-1])
    lo, hi = spec.run_length
    assert min(runs) >= lo and max(runs) <= hi
    assert set(range(lo, hi + 1)) <= set(runs)


def test_nearest_centroid_recovers_units_without_noise():
    spec = SynthSpec(noise_scale=0.0)
    world = SynthWorld.from_spec(spec)
    utts = generate(spec, 10)
    X = np.concatenate([u.features - world.offsets[u.speaker] for u in utts])
    y = np.concatenate([u.units for u in utts])
    clf = NearestCentroid().fit(X[: X.shape[0] // 2], y[: X.shape[0] // 2])
    np.testing.assert_allclose(clf.centroids_, world.centroids[clf.classes_], atol=1e-12)
    assert np.mean(clf.predict(X) == y) == 1.0


@pytest.mark.parametrize("bad", [dict(n_units=1), dict(n_speakers=1), dict(run_length=(3, 2)),
                                 dict(noise_scale=-1.0), dict(frames_per_utt=(0, 5))])
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        SynthSpec(**bad)


def test_write_corpus(tmp_path):
    utts = generate(SynthSpec(), 3)
    write_corpus(utts, tmp_path)
    with open(tmp_path / "manifest.csv") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["utt_id", "speaker", "frames", "path_feats", "path_units"]
    assert len(rows) == 3
    for row, u in zip(rows, utts):
        X = read_fmat(tmp_path / row["path_feats"])
        np.testing.assert_allclose(X, u.features, atol=1e-6)
        assert int(row["frames"]) == X.shape[0]
        assert read_unit_corpus(tmp_path / row["path_units"])[0].tolist() == u.units.tolist()
    assert len(read_unit_corpus(tmp_path / "units.txt")) == 3
