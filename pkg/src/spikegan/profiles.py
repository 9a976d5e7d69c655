"""Named configuration profiles.

``full``
    The library defaults: the tuned optimum of the search space at full
    width and float64.
``desk``
    The same training protocol (fractions, 500 iterations, learning rate,
    dropout, smoothing) at widths and batch size that a single CPU core can
    train in about a minute and a half: one attention head of width 32, model
    width 16, feed-forward width 32, transposed-convolution channels (8, 4),
    batch 16, float32.
"""

from .dataio import SplitSpec, make_synthetic_dataset
from .errors import ConfigurationError
from .model import ModelConfig

PROFILES = ("full", "desk")

#: class-profile separation of the end-to-end synthetic benchmark
BENCHMARK_SEPARATION = 1.5
BENCHMARK_WINDOWS_PER_CLASS = 1000

DESK_MODEL = dict(head_size=32, num_heads=1, head_size_mode="total", ff_dim=32, embed_dim=16,
                  generator_channels=(8, 4), dtype="float32")
DESK_TRAIN = dict(batch_size=16)

#: reduced-budget search settings used at desk scale
DESK_SEARCH = dict(budget_iterations=10, memory_limit_bytes=4 * 2 ** 30,
                   split_spec=SplitSpec(labeled_fraction=0.1, validation_fraction=0.25))


def profile_configs(name="full", **model_overrides):
    """``(ModelConfig, TrainConfig)`` for a named profile."""
    from .train import TrainConfig

    if name == "full":
        return ModelConfig(**model_overrides), TrainConfig()
    if name == "desk":
        model = {**DESK_MODEL, **model_overrides}
        if model.get("head_size_mode") == "total" and model["head_size"] % model.get("num_heads", 4):
            raise ConfigurationError("desk profile head_size must divide evenly across heads")
        return ModelConfig(**model), TrainConfig(**DESK_TRAIN)
    raise ConfigurationError(f"unknown profile {name!r}; choose from {PROFILES}")


def desk_search_base():
    """Base model config for desk-scale searches (searched fields are overridden per trial)."""
    return ModelConfig(**{k: v for k, v in DESK_MODEL.items() if k not in ("head_size", "num_heads", "ff_dim")})


def benchmark_dataset(seed=0, windows_per_class=BENCHMARK_WINDOWS_PER_CLASS):
    """Balanced 3-class synthetic window set (un-normalized microvolts)."""
    return make_synthetic_dataset(windows_per_class, BENCHMARK_SEPARATION, seed)
