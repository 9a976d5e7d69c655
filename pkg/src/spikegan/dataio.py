"""Dataset assembly: semi-supervised splits, synthetic spike recordings,
and the binary window-set / raw-recording file formats."""

import enum
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    FormatError,
    InvalidInputError,
    SplitInfeasibleError,
)
from .signal import (
    N_CHANNELS,
    SAMPLING_RATE_HZ,
    WINDOW_LEN,
    FilterSpec,
    RawRecording,
    SpikeWindowSet,
    apply_filter,
    design_butterworth,
    preprocess_recording,
    round_half_away,
)


class ClassLabel(enum.IntEnum):
    CONTROL = 0
    DENGUE = 1
    ZIKA = 2


CLASS_NAMES = tuple(c.name.capitalize() for c in ClassLabel)


# splitting ----------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    labeled_fraction: float = 0.03
    validation_fraction: float = 0.01
    seed: int = 0

    def validate(self):
        if not 0 < self.test_fraction < 1:
            raise InvalidInputError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if not 0 < self.labeled_fraction <= 1:
            raise InvalidInputError(f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}")
        if not 0 < self.validation_fraction < 1:
            raise InvalidInputError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")


@dataclass
class DatasetSplits:
    """Disjoint, sorted index arrays into one window set."""

    test: np.ndarray
    labeled_train: np.ndarray
    validation: np.ndarray
    unlabeled_train: np.ndarray

    def sizes(self):
        return {name: len(getattr(self, name)) for name in ("test", "labeled_train", "validation", "unlabeled_train")}

    @property
    def train(self):
        """Every non-test index (the portion used to fit normalization)."""
        return np.sort(np.concatenate([self.labeled_train, self.validation, self.unlabeled_train]))


def split_counts(n, spec):
    """Partition sizes ``(test, labeled_pool, validation, labeled_train, unlabeled)``."""
    n_test = round_half_away(spec.test_fraction * n)
    n_pool = round_half_away(spec.labeled_fraction * (n - n_test))
    n_val = max(1, round_half_away(spec.validation_fraction * n_pool))
    n_lab = n_pool - n_val
    n_unl = n - n_test - n_pool
    return n_test, n_pool, n_val, n_lab, n_unl


def split_dataset(data, spec=SplitSpec()):
    """Uniform random test / labeled / validation / unlabeled partition.

    ``data`` is a :class:`SpikeWindowSet` or a window count. The unlabeled
    partition may only be empty when ``labeled_fraction == 1``.
    """
    spec.validate()
    n = data if isinstance(data, (int, np.integer)) else len(data)
    n_test, n_pool, n_val, n_lab, n_unl = split_counts(n, spec)
    for name, count in (("test", n_test), ("labeled_train", n_lab), ("validation", n_val)):
        if count < 1:
            raise SplitInfeasibleError(name, f"split infeasible for N={n}: partition {name!r} would be empty")
    if n_unl < 1 and spec.labeled_fraction < 1:
        raise SplitInfeasibleError("unlabeled_train", f"split infeasible for N={n}: no unlabeled windows remain")
    if n_unl < 0:
        raise SplitInfeasibleError("unlabeled_train", f"split infeasible for N={n}")
    perm = np.random.default_rng(int(spec.seed)).permutation(n)
    test = perm[:n_test]
    pool = perm[n_test:n_test + n_pool]
    return DatasetSplits(
        test=np.sort(test),
        labeled_train=np.sort(pool[n_val:]),
        validation=np.sort(pool[:n_val]),
        unlabeled_train=np.sort(perm[n_test + n_pool:]),
    )


# synthetic data -----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticClassProfile:
    """Spiking statistics of one synthetic class.

    Background noise has total standard deviation ``noise_sd_uV``; all but
    ``white_noise_sd_uV`` of it is low-frequency (below ``lfp_cutoff_hz``),
    standing in for the field potentials the high-pass filter removes.
    """

    spike_rate_hz: float
    amplitude_mean_uV: float
    amplitude_sd_uV: float
    spike_width_samples: int
    polarity_bias: float = 0.0
    noise_sd_uV: float = 5.0
    white_noise_sd_uV: float = 1.0
    lfp_cutoff_hz: float = 300.0

    def validate(self):
        if self.spike_rate_hz < 0:
            raise InvalidInputError(f"spike rate must be non-negative, got {self.spike_rate_hz}")
        if self.amplitude_mean_uV <= 0 or self.amplitude_sd_uV < 0:
            raise InvalidInputError("amplitude mean must be positive and its sd non-negative")
        if self.spike_width_samples < 2:
            raise InvalidInputError(f"spike width must be at least 2 samples, got {self.spike_width_samples}")
        if not -1 <= self.polarity_bias <= 1:
            raise InvalidInputError(f"polarity bias must lie in [-1, 1], got {self.polarity_bias}")
        if not 0 <= self.white_noise_sd_uV <= self.noise_sd_uV:
            raise InvalidInputError("white noise sd must lie between 0 and the total noise sd")


_BASE_PROFILE = dict(spike_rate_hz=50.0, amplitude_mean_uV=40.0, amplitude_sd_uV=6.0,
                     spike_width_samples=16, polarity_bias=0.0)
_CLASS_TARGETS = {
    ClassLabel.CONTROL: dict(spike_rate_hz=25.0, amplitude_mean_uV=30.0, amplitude_sd_uV=5.0,
                             spike_width_samples=20, polarity_bias=0.0),
    ClassLabel.DENGUE: dict(spike_rate_hz=60.0, amplitude_mean_uV=45.0, amplitude_sd_uV=6.0,
                            spike_width_samples=12, polarity_bias=-0.8),
    ClassLabel.ZIKA: dict(spike_rate_hz=100.0, amplitude_mean_uV=65.0, amplitude_sd_uV=8.0,
                          spike_width_samples=24, polarity_bias=0.8),
}


def default_class_profiles(separation=1.0):
    """Three class profiles interpolated from a shared base.

    ``separation=0`` makes the classes statistically identical; ``1`` gives
    the well-separated defaults. Values above 1 extrapolate (polarity bias
    is clamped to ``[-1, 1]``).
    """
    if separation < 0:
        raise InvalidInputError(f"separation must be non-negative, got {separation}")
    profiles = {}
    for label, target in _CLASS_TARGETS.items():
        values = {}
        for key, base in _BASE_PROFILE.items():
            v = base + separation * (target[key] - base)
            if key == "polarity_bias":
                v = min(1.0, max(-1.0, v))
            values[key] = int(round(v)) if key == "spike_width_samples" else float(v)
        profiles[label] = SyntheticClassProfile(**values)
    return profiles


def spike_template(width):
    """Biphasic unit-peak waveform of ``width`` samples."""
    u = (np.arange(width) + 0.5) / width
    w = np.sin(2 * np.pi * u) * np.sin(np.pi * u)
    return w / np.abs(w).max()


def generate_synthetic_recording(profile, duration_s, seed, n_channels=N_CHANNELS,
                                 sampling_rate_hz=SAMPLING_RATE_HZ, label=None):
    """Background noise plus Poisson-timed biphasic spikes on every channel."""
    profile.validate()
    if not duration_s > 0:
        raise InvalidInputError(f"duration must be positive, got {duration_s}")
    n = int(round(duration_s * sampling_rate_hz))
    if n < WINDOW_LEN:
        raise InvalidInputError(f"duration {duration_s}s gives {n} samples, fewer than one window")
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((n, n_channels))
    lfp_sd = math.sqrt(profile.noise_sd_uV ** 2 - profile.white_noise_sd_uV ** 2)
    x = profile.white_noise_sd_uV * white
    if lfp_sd > 0:
        low = design_butterworth(FilterSpec(profile.lfp_cutoff_hz, 2, sampling_rate_hz), "lowpass")
        lfp = apply_filter(low, RawRecording(rng.standard_normal((n, n_channels)), sampling_rate_hz)).samples
        lfp *= lfp_sd / lfp.std(axis=0, keepdims=True)
        x += lfp
    template = spike_template(profile.spike_width_samples)
    width = len(template)
    counts = rng.poisson(profile.spike_rate_hz * duration_s, size=n_channels)
    p_positive = (1.0 + profile.polarity_bias) / 2.0
    for ch in range(n_channels):
        k = int(counts[ch])
        if k == 0:
            continue
        onsets = rng.integers(0, max(1, n - width), size=k)
        amps = np.abs(rng.normal(profile.amplitude_mean_uV, profile.amplitude_sd_uV, size=k))
        signs = np.where(rng.random(k) < p_positive, 1.0, -1.0)
        idx = onsets[:, None] + np.arange(width)[None, :]
        np.add.at(x[:, ch], idx.ravel(), ((amps * signs)[:, None] * template[None, :]).ravel())
    return RawRecording(x, sampling_rate_hz, label)


def make_synthetic_dataset(windows_per_class=1000, separation=1.0, seed=0, profiles=None,
                           spec=FilterSpec(), threshold_uV=10.0, window_len=WINDOW_LEN):
    """Balanced labeled window set built through the full preprocessing chain."""
    profiles = profiles or default_class_profiles(separation)
    duration = windows_per_class * window_len / spec.sampling_rate_hz
    seeds = np.random.SeedSequence(seed).spawn(len(profiles))
    sets = []
    for (label, profile), ss in zip(sorted(profiles.items()), seeds):
        rec = generate_synthetic_recording(profile, duration, ss, sampling_rate_hz=spec.sampling_rate_hz,
                                           label=int(label))
        sets.append(preprocess_recording(rec, spec, threshold_uV, window_len))
    out = SpikeWindowSet.concatenate(sets)
    out.windows = out.windows.astype(np.float32)
    return out


# window-set files ---------------------------------------------------------

WINDOW_MAGIC = b"SPKGANWS"
WINDOW_VERSION = 1
_HEADER = struct.Struct("<8sII")      # magic, version, flags
_DIMS = struct.Struct("<QQQ")
_FOOTER = struct.Struct("<dd")
_HAS_LABELS = 1


def window_set_nbytes(n, window_len=WINDOW_LEN, n_channels=N_CHANNELS, labeled=True):
    return _HEADER.size + _DIMS.size + 4 * n * window_len * n_channels + (n if labeled else 0) + _FOOTER.size


def save_window_set(window_set, path):
    w = np.ascontiguousarray(window_set.windows, dtype="<f4")
    flags = _HAS_LABELS if window_set.labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WINDOW_MAGIC, WINDOW_VERSION, flags))
        fh.write(_DIMS.pack(*w.shape))
        fh.write(w.tobytes())
        if flags & _HAS_LABELS:
            fh.write(np.asarray(window_set.labels, dtype=np.uint8).tobytes())
        fh.write(_FOOTER.pack(window_set.scale_uV, window_set.threshold_uV))


def load_window_set(path):
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: too short for a window-set header")
    magic, version, flags = _HEADER.unpack_from(blob, 0)
    if magic != WINDOW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != WINDOW_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(blob) < _HEADER.size + _DIMS.size:
        raise CorruptionError(f"{path}: truncated dimensions")
    n, length, channels = _DIMS.unpack_from(blob, _HEADER.size)
    expected = window_set_nbytes(n, length, channels, bool(flags & _HAS_LABELS))
    if len(blob) != expected:
        raise CorruptionError(f"{path}: expected {expected} bytes, found {len(blob)}")
    pos = _HEADER.size + _DIMS.size
    count = n * length * channels
    windows = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(n, length, channels).copy()
    pos += 4 * count
    labels = None
    if flags & _HAS_LABELS:
        labels = np.frombuffer(blob, dtype=np.uint8, count=n, offset=pos).astype(np.int64)
        pos += n
    scale, threshold = _FOOTER.unpack_from(blob, pos)
    return SpikeWindowSet(windows, labels, scale, threshold)


# raw recordings -----------------------------------------------------------

def _meta_path(path):
    return Path(str(path) + ".meta")


def write_recording(recording, path):
    """Little-endian float32 time-major matrix plus a ``key=value`` sidecar."""
    np.ascontiguousarray(recording.samples, dtype="<f4").tofile(path)
    lines = [f"sampling_rate_hz={recording.sampling_rate_hz!r}",
             f"channel_count={recording.channel_count}",
             "units=uV"]
    if recording.label is not None:
        lines.append(f"label={int(recording.label)}")
    _meta_path(path).write_text("\n".join(lines) + "\n")


def read_recording(path):
    meta_file = _meta_path(path)
    if not meta_file.exists():
        raise FormatError(f"{path}: missing sidecar {meta_file.name}")
    meta = {}
    for line in meta_file.read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    try:
        fs = float(meta["sampling_rate_hz"])
        channels = int(meta["channel_count"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{meta_file}: bad or missing field ({exc})") from None
    if meta.get("units", "uV") != "uV":
        raise FormatError(f"{meta_file}: unsupported units {meta['units']!r}")
    raw = np.fromfile(path, dtype="<f4")
    if channels < 1 or raw.size % channels:
        raise CorruptionError(f"{path}: {raw.size} values do not fill {channels} channels")
    label = int(meta["label"]) if "label" in meta else None
    return RawRecording(raw.reshape(-1, channels).astype(np.float64), fs, label)


def with_labels(window_set, labels):
    return replace(window_set, labels=np.asarray(labels))
