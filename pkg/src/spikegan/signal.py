"""Spike-signal preprocessing: high-pass filtering, thresholding,
segmentation into fixed windows and max-abs normalization.

Voltages are in microvolts throughout. Recordings are ``(time, channel)``
matrices; window sets are ``(n_windows, window_len, channel)`` tensors.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter, sosfilt, zpk2sos

from .errors import (
    DataError,
    DegenerateScaleError,
    InvalidInputError,
    InvalidSpecError,
    TooShortError,
)

SAMPLING_RATE_HZ = 30000.0
CUTOFF_HZ = 700.0
FILTER_ORDER = 4
WINDOW_LEN = 100
N_CHANNELS = 60


def _first_nonfinite(arr):
    bad = np.argwhere(~np.isfinite(arr))
    return tuple(int(i) for i in bad[0]) if len(bad) else None


@dataclass
class RawRecording:
    """Multi-channel voltage trace in microvolts, shape ``(time, channel)``."""

    samples: np.ndarray
    sampling_rate_hz: float = SAMPLING_RATE_HZ
    label: int = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if self.samples.ndim != 2:
            raise InvalidInputError(f"recording must be (time, channel), got shape {self.samples.shape}")
        if self.samples.shape[0] < 1:
            raise InvalidInputError("recording has no samples")
        if not self.sampling_rate_hz > 0:
            raise InvalidInputError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        bad = _first_nonfinite(self.samples)
        if bad is not None:
            raise DataError(f"non-finite sample at index {bad}")

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def channel_count(self):
        return self.samples.shape[1]


@dataclass(frozen=True)
class FilterSpec:
    cutoff_hz: float = CUTOFF_HZ
    order: int = FILTER_ORDER
    sampling_rate_hz: float = SAMPLING_RATE_HZ

    def validate(self):
        if self.order < 1 or int(self.order) != self.order:
            raise InvalidSpecError(f"filter order must be a positive integer, got {self.order}")
        if not self.sampling_rate_hz > 0:
            raise InvalidSpecError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        nyquist = self.sampling_rate_hz / 2
        if not 0 < self.cutoff_hz < nyquist:
            raise InvalidSpecError(f"cutoff {self.cutoff_hz} Hz must lie in (0, {nyquist}) Hz")


@dataclass(frozen=True)
class FilterCoefficients:
    """Transfer function ``b(z) / a(z)`` with ``a[0] == 1``.

    ``sections`` holds the same filter as cascaded second-order sections
    (rows ``b0 b1 b2 a0 a1 a2``). Filtering and response evaluation use the
    sections when present: expanding high-order polynomials whose roots
    cluster near ``z = 1`` or ``z = -1`` (very low or near-Nyquist cutoffs)
    loses enough precision to move poles onto or past the unit circle.
    """

    numerator: np.ndarray
    denominator: np.ndarray
    sections: np.ndarray = None

    def frequency_response(self, freqs_hz, sampling_rate_hz):
        """Complex response evaluated on the unit circle at ``freqs_hz``."""
        w = 2 * np.pi * np.asarray(freqs_hz, dtype=float) / sampling_rate_hz
        zinv = np.exp(-1j * w)
        if self.sections is None:
            return np.polyval(self.numerator[::-1], zinv) / np.polyval(self.denominator[::-1], zinv)
        out = np.ones_like(zinv)
        for b0, b1, b2, a0, a1, a2 in self.sections:
            out = out * ((b0 + zinv * (b1 + zinv * b2)) / (a0 + zinv * (a1 + zinv * a2)))
        return out

    def poles(self):
        if self.sections is None:
            return np.roots(self.denominator)
        return np.concatenate([np.roots(np.trim_zeros(sec[3:], "b")) for sec in self.sections])


def design_butterworth(spec, btype="highpass"):
    """Digital Butterworth filter by bilinear transform with pre-warping.

    The analog prototype's cutoff is pre-warped to ``2 fs tan(pi fc / fs)``
    so the digital response is exactly -3.01 dB at ``cutoff_hz``.
    """
    spec.validate()
    if btype not in ("highpass", "lowpass"):
        raise InvalidSpecError(f"unsupported filter type {btype!r}")
    n = int(spec.order)
    fs2 = 2.0 * spec.sampling_rate_hz
    warped = fs2 * math.tan(math.pi * spec.cutoff_hz / spec.sampling_rate_hz)
    k = np.arange(n)
    proto = np.exp(1j * np.pi * (2 * k + n + 1) / (2 * n))
    if n % 2:
        # odd orders have one real pole; exp(i*pi) leaves an unpaired 1e-16 imaginary part
        proto[n // 2] = -1.0
    if btype == "lowpass":
        poles = warped * proto
        zeros_digital = -np.ones(n)
        gain = warped ** n
    else:
        poles = warped / proto
        zeros_digital = np.ones(n)
        # analog zeros sit at s = 0; prod(-proto) == 1 for a Butterworth prototype
        gain = 1.0 / np.real(np.prod(-proto))
    poles_digital = (fs2 + poles) / (fs2 - poles)
    if btype == "lowpass":
        gain_digital = gain / np.real(np.prod(fs2 - poles))
    else:
        gain_digital = gain * np.real(fs2 ** n / np.prod(fs2 - poles))
    b = gain_digital * np.real(np.poly(zeros_digital))
    a = np.real(np.poly(poles_digital))
    sections = zpk2sos(zeros_digital, poles_digital, gain_digital)
    return FilterCoefficients(numerator=b, denominator=a, sections=sections)


def design_highpass_butterworth(spec):
    return design_butterworth(spec, "highpass")


def apply_filter(coeffs, recording):
    """Causal per-channel IIR filtering with zero initial conditions."""
    if not isinstance(recording, RawRecording):
        recording = RawRecording(recording)
    if coeffs.sections is not None:
        out = sosfilt(coeffs.sections, recording.samples, axis=0)
    else:
        out = lfilter(coeffs.numerator, coeffs.denominator, recording.samples, axis=0)
    return replace(recording, samples=out)


def round_half_away(x):
    return math.floor(abs(x) + 0.5) * (1 if x >= 0 else -1)


def compute_threshold(noise_stds_uV):
    """Twice the rounded mean of per-class noise standard deviations."""
    stds = [float(s) for s in noise_stds_uV]
    if not stds:
        raise InvalidInputError("need at least one noise standard deviation")
    if any(not math.isfinite(s) or s <= 0 for s in stds):
        raise InvalidInputError(f"noise standard deviations must be finite and positive, got {stds}")
    return float(2 * round_half_away(sum(stds) / len(stds)))


def extract_spikes(recording, threshold_uV):
    """Keep samples with ``|v| > threshold`` (strict); zero the rest."""
    if not threshold_uV > 0:
        raise InvalidInputError(f"threshold must be positive, got {threshold_uV}")
    if not isinstance(recording, RawRecording):
        recording = RawRecording(recording)
    x = recording.samples
    return replace(recording, samples=np.where(np.abs(x) > threshold_uV, x, 0.0))


@dataclass
class SpikeWindowSet:
    """``N`` windows of shape ``(window_len, channels)``.

    Physical voltage is ``windows * scale_uV``; a freshly segmented set has
    ``scale_uV == 1`` (values already in microvolts).
    """

    windows: np.ndarray
    labels: np.ndarray = None
    scale_uV: float = 1.0
    threshold_uV: float = 10.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.windows = np.asarray(self.windows)
        if self.windows.dtype.kind != "f":
            self.windows = self.windows.astype(np.float64)
        if self.windows.ndim != 3:
            raise InvalidInputError(f"window set must be (N, length, channels), got {self.windows.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.windows),):
                raise InvalidInputError(
                    f"need one label per window: {self.labels.shape} labels for {len(self.windows)} windows")
            if np.any((self.labels < 0) | (self.labels > 2)):
                raise InvalidInputError("labels must lie in {0, 1, 2}")
        if not self.scale_uV > 0:
            raise InvalidInputError(f"scale must be positive, got {self.scale_uV}")

    def __len__(self):
        return len(self.windows)

    @property
    def window_len(self):
        return self.windows.shape[1]

    @property
    def n_channels(self):
        return self.windows.shape[2]

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return replace(self, windows=self.windows[idx], labels=labels)

    @classmethod
    def concatenate(cls, sets):
        sets = list(sets)
        if not sets:
            raise InvalidInputError("nothing to concatenate")
        scales = {s.scale_uV for s in sets}
        if len(scales) > 1:
            raise InvalidInputError("cannot concatenate window sets with different scales")
        labels = None
        if all(s.labels is not None for s in sets):
            labels = np.concatenate([s.labels for s in sets])
        return cls(np.concatenate([s.windows for s in sets]), labels, sets[0].scale_uV, sets[0].threshold_uV)


def segment_windows(recording, window_len=WINDOW_LEN, threshold_uV=10.0):
    """Cut into ``floor(T / window_len)`` non-overlapping windows.

    The trailing remainder is discarded. If the recording carries a class
    label every window inherits it.
    """
    if not isinstance(recording, RawRecording):
        recording = RawRecording(recording)
    if window_len < 1:
        raise InvalidInputError(f"window length must be positive, got {window_len}")
    t, c = recording.samples.shape
    if t < window_len:
        raise TooShortError(f"recording has {t} samples, shorter than one window of {window_len}")
    n = t // window_len
    windows = recording.samples[: n * window_len].reshape(n, window_len, c)
    labels = None if recording.label is None else np.full(n, int(recording.label))
    return SpikeWindowSet(windows, labels, 1.0, threshold_uV)


def max_abs_scale(windows):
    scale = float(np.max(np.abs(windows))) if np.size(windows) else 0.0
    if scale == 0.0:
        raise DegenerateScaleError("cannot normalize an all-zero window set")
    return scale


def normalize_windows(window_set, scale_uV=None):
    """Divide by the max absolute value (or a given training-data scale).

    Values that exceed a supplied scale are clipped into ``[-1, 1]``.
    """
    if scale_uV is None:
        scale_uV = max_abs_scale(window_set.windows)
    elif not scale_uV > 0:
        raise DegenerateScaleError(f"scale must be positive, got {scale_uV}")
    normed = np.clip(window_set.windows / scale_uV, -1.0, 1.0)
    return replace(window_set, windows=normed, scale_uV=window_set.scale_uV * scale_uV)


def denormalize_windows(window_set):
    return replace(window_set, windows=window_set.windows * window_set.scale_uV, scale_uV=1.0)


def preprocess_recording(recording, spec=FilterSpec(), threshold_uV=10.0, window_len=WINDOW_LEN):
    """Filter, threshold and segment one recording (normalization is fitted later)."""
    filtered = apply_filter(design_highpass_butterworth(spec), recording)
    spikes = extract_spikes(filtered, threshold_uV)
    return segment_windows(spikes, window_len, threshold_uV)
