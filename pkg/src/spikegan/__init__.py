"""Semi-supervised spike classification with a shifted-window transformer GAN.

Subpackages and modules
-----------------------
signal        filtering, thresholding, segmentation, normalization
dataio        splits, synthetic data, window-set files
autodiff      tape-based reverse-mode differentiation on numpy
model         generator and discriminator networks
train         adversarial training loop and losses
evaluation    metrics and Monte Carlo cross-validation
hpo           hyperparameter search
preprocessing, estimator   scikit-learn wrappers
cli           command-line entry point
"""

__version__ = "0.1.0"

from .dataio import ClassLabel, DatasetSplits, SplitSpec, make_synthetic_dataset, split_dataset
from .estimator import SpikeGANClassifier
from .model import ModelConfig, build_models
from .signal import FilterSpec, SpikeWindowSet, RawRecording
from .train import TrainConfig, train

__all__ = [
    "ClassLabel", "DatasetSplits", "FilterSpec", "ModelConfig", "RawRecording", "SpikeGANClassifier",
    "SpikeWindowSet", "SplitSpec", "TrainConfig", "build_models", "make_synthetic_dataset", "split_dataset",
    "train", "__version__",
]
