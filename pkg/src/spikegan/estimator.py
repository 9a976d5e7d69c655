"""scikit-learn style semi-supervised classifier.

Unlabeled windows are marked with ``y == -1`` (the scikit-learn convention
for semi-supervised estimators).
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataio import DatasetSplits
from .errors import ConfigurationError, InvalidInputError, LabelError
from .model import ModelConfig, generator_grid_for
from .signal import SpikeWindowSet, max_abs_scale, round_half_away

UNLABELED = -1


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SpikeGANClassifier(ClassifierMixin, BaseEstimator):
    """Shifted-window transformer discriminator trained adversarially.

    Parameters mirror :class:`~spikegan.model.ModelConfig` and
    :class:`~spikegan.train.TrainConfig`. ``fit`` takes raw windows of shape
    ``(n, window_len, channels)`` in microvolts; the max-abs scale is fitted
    on all of them.

    Attributes
    ----------
    classes_ : ndarray
        ``[0, 1, 2]``.
    scale_ : float
        Normalization scale in microvolts.
    discriminator_, generator_ : Module
        Trained networks.
    log_ : TrainLog
    """

    def __init__(self, noise_dim=128, head_size=64, num_heads=4, ff_dim=128, num_blocks=2, dropout_rate=0.29,
                 embed_dim=64, window_size=10, shift_size=None, generator_variant="transformer",
                 discriminator_variant="shifted_window", generator_channels=(32, 16), dtype="float64",
                 iterations=500, batch_size=128, learning_rate=0.0009, label_smooth_real=0.9,
                 validation_fraction=0.01, random_state=0):
        self.noise_dim = noise_dim
        self.head_size = head_size
        self.num_heads = num_heads
        self.ff_dim = ff_dim
        self.num_blocks = num_blocks
        self.dropout_rate = dropout_rate
        self.embed_dim = embed_dim
        self.window_size = window_size
        self.shift_size = shift_size
        self.generator_variant = generator_variant
        self.discriminator_variant = discriminator_variant
        self.generator_channels = generator_channels
        self.dtype = dtype
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.label_smooth_real = label_smooth_real
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _configs(self, seq_len, n_channels):
        from .train import TrainConfig

        model = ModelConfig(
            noise_dim=self.noise_dim, head_size=self.head_size, num_heads=self.num_heads, ff_dim=self.ff_dim,
            num_blocks=self.num_blocks, dropout_rate=self.dropout_rate, embed_dim=self.embed_dim,
            window_size=self.window_size, shift_size=self.shift_size, generator_variant=self.generator_variant,
            discriminator_variant=self.discriminator_variant, generator_channels=tuple(self.generator_channels),
            seq_len=seq_len, n_channels=n_channels, generator_grid=self._grid(seq_len, n_channels),
            dtype=self.dtype)
        train = TrainConfig(iterations=self.iterations, batch_size=self.batch_size,
                            learning_rate=self.learning_rate, label_smooth_real=self.label_smooth_real,
                            seed=int(self.random_state or 0), log_every=max(1, self.iterations // 10))
        return model, train

    def _grid(self, seq_len, n_channels):
        try:
            return generator_grid_for(seq_len, n_channels, len(self.generator_channels))
        except ConfigurationError as exc:
            raise InvalidInputError(str(exc)) from None

    def _validate_X(self, X, reset):
        X = check_array(X, dtype=np.float64, allow_nd=True)
        if X.ndim != 3:
            raise InvalidInputError(f"expected windows of shape (n, length, channels), got {X.shape}")
        if reset:
            self.n_features_in_ = X.shape[1] * X.shape[2]
            self.window_shape_ = X.shape[1:]
        elif X.shape[1:] != self.window_shape_:
            raise InvalidInputError(f"windows of shape {X.shape[1:]} do not match fitted {self.window_shape_}")
        return X

    def fit(self, X, y):
        """Train on windows ``X`` with labels ``y`` (``-1`` = unlabeled)."""
        from .train import train

        X = self._validate_X(X, reset=True)
        y = np.asarray(y)
        if y.shape != (len(X),) or not np.issubdtype(y.dtype, np.integer):
            raise LabelError("y must be one integer label per window")
        if np.any((y < UNLABELED) | (y > 2)):
            raise LabelError("labels must be 0, 1, 2 or -1 for unlabeled")
        labeled = np.flatnonzero(y != UNLABELED)
        if len(labeled) < 2:
            raise LabelError("need at least two labeled windows")
        rng = np.random.default_rng(self.random_state)
        labeled = rng.permutation(labeled)
        n_val = min(max(1, round_half_away(self.validation_fraction * len(labeled))), len(labeled) - 1)
        splits = DatasetSplits(
            test=np.array([], dtype=np.int64),
            labeled_train=np.sort(labeled[n_val:]),
            validation=np.sort(labeled[:n_val]),
            unlabeled_train=np.flatnonzero(y == UNLABELED),
        )
        self.scale_ = max_abs_scale(X)
        data = SpikeWindowSet(np.clip(X / self.scale_, -1, 1), np.where(y == UNLABELED, 0, y), self.scale_)
        model_config, train_config = self._configs(X.shape[1], X.shape[2])
        result = train(splits, model_config, train_config, data)
        self.classes_ = np.arange(3)
        self.generator_ = result.generator
        self.discriminator_ = result.discriminator
        self.log_ = result.log
        return self

    def decision_function(self, X):
        """Class logits."""
        from .train import predict_logits

        check_is_fitted(self, "discriminator_")
        X = self._validate_X(X, reset=False)
        return predict_logits(self.discriminator_, np.clip(X / self.scale_, -1, 1).astype(self.dtype))

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]
