import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from spikegan import SpikeGANClassifier
from spikegan.errors import InvalidInputError, LabelError
from spikegan.preprocessing import ButterworthFilter, MaxAbsWindowScaler, SpikeThreshold, WindowSegmenter
from spikegan.signal import FilterSpec, RawRecording, preprocess_recording

TINY = dict(noise_dim=6, head_size=4, num_heads=2, ff_dim=8, num_blocks=2, embed_dim=8, window_size=4,
            generator_channels=(3, 2), iterations=4, batch_size=8)


def test_pipeline_matches_functional_chain(rng):
    x = rng.normal(0, 20, (1234, 3))
    pipe = make_pipeline(ButterworthFilter(), SpikeThreshold(10.0), WindowSegmenter(100))
    got = pipe.fit_transform(x)
    expected = preprocess_recording(RawRecording(x), FilterSpec(), 10.0, 100).windows
    np.testing.assert_array_equal(got, expected)


def test_filter_params_and_clone():
    f = ButterworthFilter(cutoff_hz=300, order=2)
    assert clone(f).get_params() == {"cutoff_hz": 300, "order": 2, "sampling_rate_hz": 30000.0}
    with pytest.raises(NotFittedError):
        f.transform(np.zeros((10, 1)))


def test_scaler_fits_train_and_clips_held_out(rng):
    train = rng.normal(0, 10, (5, 20, 2))
    scaler = MaxAbsWindowScaler().fit(train)
    assert scaler.scale_ == np.abs(train).max()
    held = train * 3
    out = scaler.transform(held)
    assert out.max() <= 1 and out.min() >= -1
    np.testing.assert_allclose(scaler.inverse_transform(scaler.transform(train)), train, atol=1e-12)
    ws = scaler.to_window_set(train, np.zeros(5, dtype=int))
    assert ws.scale_uV == scaler.scale_


def separable_windows(n=120, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1, 2], n // 3)
    X = rng.normal(0, 3, (n, 8, 4)) + 15 * (y[:, None, None] - 1)
    return X, y


def test_classifier_fit_predict_contract():
    X, y = separable_windows()
    y_semi = y.copy()
    y_semi[np.random.default_rng(0).random(len(y)) < 0.7] = -1
    clf = SpikeGANClassifier(**TINY).fit(X, y_semi)
    proba = clf.predict_proba(X)
    assert proba.shape == (len(X), 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert set(np.unique(clf.predict(X))) <= {0, 1, 2}
    np.testing.assert_array_equal(clf.classes_, [0, 1, 2])
    assert clf.n_features_in_ == 32 and clf.window_shape_ == (8, 4)
    assert len(clf.log_.steps) >= 1
    assert 0.0 <= clf.score(X, y) <= 1.0


def test_classifier_is_seed_deterministic():
    X, y = separable_windows()
    a = SpikeGANClassifier(**TINY, random_state=3).fit(X, y).decision_function(X)
    b = SpikeGANClassifier(**TINY, random_state=3).fit(X, y).decision_function(X)
    assert a.tobytes() == b.tobytes()


def test_classifier_clone_keeps_params():
    clf = SpikeGANClassifier(**TINY, learning_rate=1e-4)
    assert clone(clf).get_params() == clf.get_params()


def test_classifier_input_checks():
    X, y = separable_windows()
    clf = SpikeGANClassifier(**TINY)
    with pytest.raises(NotFittedError):
        clf.predict(X)
    with pytest.raises(LabelError):
        clf.fit(X, np.full(len(y), -1))
    with pytest.raises(LabelError):
        clf.fit(X, np.where(y == 2, 5, y))
    with pytest.raises(InvalidInputError):
        clf.fit(X.reshape(len(X), -1), y)
    with pytest.raises(InvalidInputError):
        SpikeGANClassifier(**{**TINY, "generator_channels": (3, 2, 2)}).fit(X, y)
    clf.fit(X, y)
    with pytest.raises(InvalidInputError):
        clf.predict(X[:, :4])
