"""scikit-learn transformers wrapping the signal-processing chain.

``ButterworthFilter`` and ``SpikeThreshold`` map a ``(time, channel)``
recording to another of the same shape; ``WindowSegmenter`` turns it into
``(n_windows, window_len, channel)``; ``MaxAbsWindowScaler`` learns the
training-set scale.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .signal import (
    CUTOFF_HZ,
    FILTER_ORDER,
    SAMPLING_RATE_HZ,
    WINDOW_LEN,
    FilterSpec,
    RawRecording,
    SpikeWindowSet,
    apply_filter,
    design_highpass_butterworth,
    extract_spikes,
    max_abs_scale,
    segment_windows,
)


def _recording(X):
    X = check_array(X, dtype=np.float64, ensure_2d=False, ensure_all_finite=False)
    return RawRecording(X)


class ButterworthFilter(TransformerMixin, BaseEstimator):
    """Causal high-pass Butterworth filter applied per channel."""

    def __init__(self, cutoff_hz=CUTOFF_HZ, order=FILTER_ORDER, sampling_rate_hz=SAMPLING_RATE_HZ):
        self.cutoff_hz = cutoff_hz
        self.order = order
        self.sampling_rate_hz = sampling_rate_hz

    def fit(self, X=None, y=None):
        spec = FilterSpec(self.cutoff_hz, self.order, self.sampling_rate_hz)
        self.coefficients_ = design_highpass_butterworth(spec)
        return self

    def transform(self, X):
        check_is_fitted(self, "coefficients_")
        return apply_filter(self.coefficients_, _recording(X)).samples


class SpikeThreshold(TransformerMixin, BaseEstimator):
    """Zero every sample whose magnitude does not exceed ``threshold_uV``."""

    def __init__(self, threshold_uV=10.0):
        self.threshold_uV = threshold_uV

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return extract_spikes(_recording(X), self.threshold_uV).samples

    def __sklearn_is_fitted__(self):
        return True


class WindowSegmenter(TransformerMixin, BaseEstimator):
    """Cut a recording into non-overlapping windows, dropping the remainder."""

    def __init__(self, window_len=WINDOW_LEN):
        self.window_len = window_len

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return segment_windows(_recording(X), self.window_len).windows

    def __sklearn_is_fitted__(self):
        return True


class MaxAbsWindowScaler(TransformerMixin, BaseEstimator):
    """Scale windows into ``[-1, 1]`` by the training set's largest magnitude.

    Data seen later is divided by the same scale and clipped.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
        self.scale_ = max_abs_scale(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X, dtype=None, allow_nd=True, ensure_2d=False)
        return np.clip(X / self.scale_, -1.0, 1.0)

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        return np.asarray(X) * self.scale_

    def to_window_set(self, X, labels=None):
        """Normalized :class:`SpikeWindowSet` carrying the fitted scale."""
        return SpikeWindowSet(self.transform(X), labels, scale_uV=self.scale_)
