import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from spikegan.dataio import (ClassLabel, SplitSpec, SyntheticClassProfile, default_class_profiles,
                           generate_synthetic_recording, load_window_set, make_synthetic_dataset, read_recording,
                           save_window_set, split_counts, split_dataset, window_set_nbytes, write_recording)
from spikegan.errors import CorruptionError, FormatError, InvalidInputError, SplitInfeasibleError
from spikegan.signal import FilterSpec, RawRecording, SpikeWindowSet, apply_filter, design_highpass_butterworth, \
    extract_spikes


# splits --------------------------------------------------------------------------

def test_split_sizes_small():
    s = split_dataset(1000, SplitSpec())
    assert s.sizes() == {"test": 200, "labeled_train": 23, "validation": 1, "unlabeled_train": 776}


def test_split_counts_full_dataset():
    n_test, n_pool, n_val, n_lab, n_unl = split_counts(15_728_580, SplitSpec())
    assert (n_test, n_pool, n_val) == (3_145_716, 377_486, 3_775)
    assert n_lab + n_val + n_unl + n_test == 15_728_580


def test_split_is_deterministic():
    a, b = split_dataset(500, SplitSpec(seed=3)), split_dataset(500, SplitSpec(seed=3))
    for name in a.sizes():
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = split_dataset(500, SplitSpec(seed=4))
    assert not np.array_equal(a.test, c.test)


def test_validation_floor_of_one():
    # 1% of a 10-window labeled pool rounds to zero
    n_test, n_pool, n_val, _, _ = split_counts(400, SplitSpec(labeled_fraction=0.03))
    assert n_pool == 10 and n_val == 1


def test_infeasible_split_names_partition():
    with pytest.raises(SplitInfeasibleError) as info:
        split_dataset(10, SplitSpec())
    assert info.value.partition == "labeled_train"


def test_fully_labeled_split_has_no_unlabeled():
    s = split_dataset(300, SplitSpec(labeled_fraction=1.0))
    assert len(s.unlabeled_train) == 0
    assert len(s.labeled_train) + len(s.validation) == 240


@pytest.mark.parametrize("kw", [dict(test_fraction=0), dict(test_fraction=1.0), dict(labeled_fraction=0),
                                dict(labeled_fraction=1.2), dict(validation_fraction=1.0), dict(seed=-1)])
def test_split_spec_validation(kw):
    with pytest.raises(InvalidInputError):
        split_dataset(1000, SplitSpec(**kw))


@given(n=st.integers(100, 5000), seed=st.integers(0, 2 ** 32), frac=st.sampled_from([0.01, 0.02, 0.03, 0.1, 0.5]))
def test_split_partition_property(n, seed, frac):
    try:
        s = split_dataset(n, SplitSpec(labeled_fraction=frac, seed=seed))
    except SplitInfeasibleError:
        return
    parts = [s.test, s.labeled_train, s.validation, s.unlabeled_train]
    allidx = np.concatenate(parts)
    assert len(allidx) == n
    np.testing.assert_array_equal(np.sort(allidx), np.arange(n))
    np.testing.assert_array_equal(s.train, np.sort(np.concatenate(parts[1:])))


def test_labeled_pool_is_unstratified_and_uniform():
    labels = np.repeat([0, 1, 2], [500, 300, 200])
    counts = np.zeros(3)
    for seed in range(300):
        s = split_dataset(len(labels), SplitSpec(seed=seed))
        pool = np.concatenate([s.labeled_train, s.validation])
        counts += np.bincount(labels[pool], minlength=3)
    expected = counts.sum() * np.array([0.5, 0.3, 0.2])
    assert stats.chisquare(counts, expected).pvalue > 1e-3


# synthetic data ------------------------------------------------------------------

def _filtered_spikes(rec, threshold=10.0):
    return extract_spikes(apply_filter(design_highpass_butterworth(FilterSpec()), rec), threshold)


def test_silent_profile_produces_almost_no_spikes():
    profile = SyntheticClassProfile(0.0, 40.0, 6.0, 16, noise_sd_uV=5.0)
    rec = generate_synthetic_recording(profile, 1.0, seed=1, n_channels=8)
    frac = np.mean(_filtered_spikes(rec).samples != 0)
    assert frac < 1e-4


def count_events(x, threshold, refractory):
    """Threshold-crossing events with a refractory gap, per channel."""
    counts = []
    for ch in range(x.shape[1]):
        hits = np.flatnonzero(np.abs(x[:, ch]) > threshold)
        n, last = 0, -10 ** 9
        for i in hits:
            if i - last > refractory:
                n += 1
            last = i
        counts.append(n)
    return np.array(counts)


def test_spike_rate_matches_profile():
    profile = SyntheticClassProfile(50.0, 40.0, 6.0, 16)
    duration = 10.0
    rec = generate_synthetic_recording(profile, duration, seed=2, n_channels=6)
    events = count_events(_filtered_spikes(rec).samples, 10.0, refractory=16)
    assert np.all(np.abs(events - 50 * duration) <= 0.2 * 50 * duration)


def test_synthetic_recording_is_seed_deterministic():
    profile = default_class_profiles()[ClassLabel.ZIKA]
    a = generate_synthetic_recording(profile, 0.05, seed=9, n_channels=4)
    b = generate_synthetic_recording(profile, 0.05, seed=9, n_channels=4)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_synthetic_recording_rejects_bad_input():
    profile = default_class_profiles()[ClassLabel.CONTROL]
    with pytest.raises(InvalidInputError):
        generate_synthetic_recording(profile, 0.001, seed=0)
    with pytest.raises(InvalidInputError):
        generate_synthetic_recording(SyntheticClassProfile(-1.0, 40.0, 6.0, 16), 1.0, seed=0)
    with pytest.raises(InvalidInputError):
        default_class_profiles(-0.5)


def test_make_dataset_is_balanced():
    ds = make_synthetic_dataset(20, seed=0)
    assert ds.windows.shape == (60, 100, 60)
    np.testing.assert_array_equal(np.bincount(ds.labels), [20, 20, 20])
    assert ds.windows.dtype == np.float32


def _features(w):
    pos = np.clip(w, 0, None).sum(axis=(1, 2))
    neg = -np.clip(w, None, 0).sum(axis=(1, 2))
    active = (w != 0).sum(axis=(1, 2))
    return np.column_stack([pos, neg, active, np.abs(w).max(axis=(1, 2))])


def centroid_accuracy(separation, seed=0):
    train = make_synthetic_dataset(60, separation, seed)
    test = make_synthetic_dataset(60, separation, seed + 100)
    ftr, fte = _features(train.windows), _features(test.windows)
    mu, sd = ftr.mean(0), ftr.std(0) + 1e-9
    ftr, fte = (ftr - mu) / sd, (fte - mu) / sd
    cents = np.stack([ftr[train.labels == k].mean(0) for k in range(3)])
    pred = np.argmin(((fte[:, None, :] - cents[None]) ** 2).sum(-1), axis=1)
    return float(np.mean(pred == test.labels))


def test_separation_knob_increases_centroid_accuracy():
    accs = [centroid_accuracy(s) for s in (0.0, 0.3, 0.6, 1.0)]
    assert accs[0] < 0.5
    assert all(b >= a for a, b in zip(accs, accs[1:])), accs
    assert accs[-1] > 0.9


# files -------------------------------------------------------------------------

def test_window_set_round_trip(tmp_path, rng):
    ws = SpikeWindowSet(rng.standard_normal((5, 100, 60)).astype(np.float32), rng.integers(0, 3, 5), 37.5, 10.0)
    save_window_set(ws, tmp_path / "a.spk")
    back = load_window_set(tmp_path / "a.spk")
    assert back.windows.tobytes() == ws.windows.tobytes()
    np.testing.assert_array_equal(back.labels, ws.labels)
    assert (back.scale_uV, back.threshold_uV) == (37.5, 10.0)


def test_unlabeled_window_set_round_trip(tmp_path, rng):
    ws = SpikeWindowSet(rng.standard_normal((3, 10, 4)).astype(np.float32))
    save_window_set(ws, tmp_path / "u.spk")
    back = load_window_set(tmp_path / "u.spk")
    assert back.labels is None
    assert (tmp_path / "u.spk").stat().st_size == window_set_nbytes(3, 10, 4, labeled=False)


def test_window_set_file_size(tmp_path):
    n = 10_485
    header = 8 + 4 + 4 + 3 * 8
    footer = 16
    assert window_set_nbytes(n) == header + n * 100 * 60 * 4 + n + footer
    ws = SpikeWindowSet(np.zeros((n, 100, 60), dtype=np.float32), np.zeros(n, dtype=np.int64))
    save_window_set(ws, tmp_path / "big.spk")
    assert (tmp_path / "big.spk").stat().st_size == window_set_nbytes(n)


def test_window_set_bad_files(tmp_path, rng):
    (tmp_path / "empty.spk").write_bytes(b"")
    with pytest.raises(FormatError):
        load_window_set(tmp_path / "empty.spk")
    (tmp_path / "magic.spk").write_bytes(b"NOTMAGIC" + bytes(40))
    with pytest.raises(FormatError):
        load_window_set(tmp_path / "magic.spk")
    save_window_set(SpikeWindowSet(rng.standard_normal((2, 10, 3))), tmp_path / "ok.spk")
    blob = (tmp_path / "ok.spk").read_bytes()
    (tmp_path / "cut.spk").write_bytes(blob[:-5])
    with pytest.raises(CorruptionError):
        load_window_set(tmp_path / "cut.spk")


def test_recording_round_trip(tmp_path, rng):
    rec = RawRecording(rng.normal(0, 20, (300, 5)).astype(np.float32), 30000.0, label=2)
    write_recording(rec, tmp_path / "r.raw")
    back = read_recording(tmp_path / "r.raw")
    np.testing.assert_array_equal(back.samples, rec.samples)
    assert back.sampling_rate_hz == 30000.0 and back.label == 2


def test_recording_needs_sidecar(tmp_path):
    np.zeros(10, dtype="<f4").tofile(tmp_path / "r.raw")
    with pytest.raises(FormatError):
        read_recording(tmp_path / "r.raw")
    (tmp_path / "r.raw.meta").write_text("sampling_rate_hz=30000\nchannel_count=3\n")
    with pytest.raises(CorruptionError):
        read_recording(tmp_path / "r.raw")
