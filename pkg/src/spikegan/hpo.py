"""Hyperparameter search: seeded random sampling with top-quantile exploitation.

Early trials are uniform draws from the search space. Once enough trials
have completed, most new draws perturb one of the best configurations so
far, while a fixed share stays uniform so the search keeps exploring.
"""

import csv
import io
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .dataio import SplitSpec, split_dataset
from .errors import ConfigurationError, InvalidInputError, SearchFailureError, SpikeGANError
from .model import ModelConfig, build_models
from .signal import max_abs_scale, normalize_windows

COMPLETED, PRUNED, FAILED = "completed", "pruned", "failed"

MODEL_KEYS = ("noise_dim", "head_size", "num_heads", "ff_dim", "num_blocks", "dropout_rate")
TRAIN_KEYS = ("learning_rate", "batch_size")


@dataclass(frozen=True)
class SearchSpace:
    noise_dim: tuple = (64, 100, 128)
    head_size: tuple = (64, 128, 256)
    num_heads: tuple = (2, 4, 8)
    ff_dim: tuple = (32, 64, 128)
    num_blocks: tuple = (1, 2, 3, 4)
    dropout_rate: tuple = (0.1, 0.5)
    learning_rate: tuple = (1e-5, 1e-3)
    batch_size: tuple = (64, 128)

    CATEGORICAL = ("noise_dim", "head_size", "num_heads", "ff_dim", "num_blocks", "batch_size")

    def validate(self):
        for name in self.CATEGORICAL:
            if not getattr(self, name):
                raise ConfigurationError(f"search space field {name} is empty")
        lo, hi = self.dropout_rate
        if not 0 <= lo <= hi < 1:
            raise ConfigurationError(f"dropout range must lie in [0, 1), got {self.dropout_rate}")
        lo, hi = self.learning_rate
        if not 0 < lo <= hi:
            raise ConfigurationError(f"learning-rate range must be positive, got {self.learning_rate}")

    def contains(self, params):
        for name in self.CATEGORICAL:
            if params[name] not in getattr(self, name):
                return False
        d_lo, d_hi = self.dropout_rate
        l_lo, l_hi = self.learning_rate
        return d_lo <= params["dropout_rate"] <= d_hi and l_lo <= params["learning_rate"] <= l_hi


@dataclass
class TrialResult:
    trial: int
    params: dict
    val_accuracy: float = float("nan")
    status: str = COMPLETED
    seconds: float = 0.0
    n_parameters: int = 0
    message: str = ""


def _uniform_draw(space, rng):
    out = {name: getattr(space, name)[rng.integers(len(getattr(space, name)))] for name in space.CATEGORICAL}
    out = {k: int(v) for k, v in out.items()}
    out["dropout_rate"] = float(rng.uniform(*space.dropout_rate))
    lo, hi = np.log10(space.learning_rate)
    out["learning_rate"] = float(10 ** rng.uniform(lo, hi))
    return out


def _perturb(parent, space, rng, keep=0.7):
    out = {}
    for name in space.CATEGORICAL:
        choices = getattr(space, name)
        out[name] = int(parent[name]) if rng.random() < keep else int(choices[rng.integers(len(choices))])
    lo, hi = space.dropout_rate
    out["dropout_rate"] = float(np.clip(parent["dropout_rate"] + rng.normal(0, 0.1 * (hi - lo)), lo, hi))
    llo, lhi = np.log10(space.learning_rate)
    log_lr = np.clip(np.log10(parent["learning_rate"]) + rng.normal(0, 0.1 * (lhi - llo)), llo, lhi)
    out["learning_rate"] = float(min(max(10 ** log_lr, space.learning_rate[0]), space.learning_rate[1]))
    return out


def sample_config(space, history, rng, quantile=0.25, explore=0.3, min_history=4):
    """Draw one configuration as a flat dict of overrides.

    With fewer than ``min_history`` completed trials, or with probability
    ``explore``, the draw is uniform (dropout uniform, learning rate
    log-uniform). Otherwise a parent is picked from the top ``quantile`` of
    completed trials and perturbed.
    """
    space.validate()
    done = [t for t in history if t.status == COMPLETED and math.isfinite(t.val_accuracy)]
    if len(done) < min_history or rng.random() < explore:
        return _uniform_draw(space, rng)
    ranked = sorted(done, key=lambda t: (-t.val_accuracy, t.n_parameters, t.trial))
    top = ranked[:max(1, int(math.ceil(quantile * len(ranked))))]
    return _perturb(top[rng.integers(len(top))].params, space, rng)


def split_params(params):
    return ({k: params[k] for k in MODEL_KEYS if k in params}, {k: params[k] for k in TRAIN_KEYS if k in params})


def estimate_activation_bytes(config, batch_size):
    """Rough peak memory of one recorded generator-plus-discriminator step."""
    itemsize = np.dtype(config.dtype).itemsize
    gh, gw = config.generator_grid
    inner = config.num_heads * config.per_head_width
    per_block_g = gh * gw * (6 * inner + 6 * config.embed_dim + 3 * config.ff_dim) + config.num_heads * (gh * gw) ** 2
    w = min(config.window_size, config.seq_len)
    per_block_d = config.seq_len * (6 * inner + 6 * config.embed_dim + 3 * config.ff_dim + config.num_heads * w)
    blocks = config.num_blocks if config.generator_variant == "transformer" else 0
    total = batch_size * (blocks * per_block_g + config.num_blocks * per_block_d)
    return int(2.5 * total * itemsize)


def _prepare(dataset, split_spec):
    splits = split_dataset(dataset, split_spec)
    normed = normalize_windows(dataset, max_abs_scale(dataset.windows[splits.train]))
    return splits, normed


def _train_trial(splits, data, model_config, train_config):
    from .train import predict_logits, train

    result = train(splits, model_config, train_config, data)
    pred = predict_logits(result.discriminator, data.windows[splits.validation]).argmax(axis=1)
    return float(np.mean(pred == data.labels[splits.validation]))


def run_search(dataset, trials=20, budget_iterations=100, seed=0, space=None, base_model_config=None,
               base_train_config=None, split_spec=None, memory_limit_bytes=None, trial_fn=None):
    """Sequential seeded search; returns ``(best, table)``.

    Parameters
    ----------
    dataset : SpikeWindowSet
        Labeled, un-normalized windows. It is split once (seeded by
        ``seed``) and every trial scores accuracy on the same validation set.
    budget_iterations : int
        Training iterations per trial.
    memory_limit_bytes : int, optional
        Trials whose :func:`estimate_activation_bytes` exceeds this are
        recorded as ``pruned`` without training.
    trial_fn : callable, optional
        ``trial_fn(splits, data, model_config, train_config) -> accuracy``;
        defaults to full training at the reduced budget.

    The best trial has maximal validation accuracy among completed trials;
    ties go to the smaller parameter count, then the earlier trial.
    """
    from .train import TrainConfig

    if trials < 1:
        raise InvalidInputError(f"need at least one trial, got {trials}")
    space = space or SearchSpace()
    space.validate()
    base_model = base_model_config or ModelConfig()
    base_train = base_train_config or TrainConfig()
    spec = replace(split_spec or SplitSpec(), seed=int(seed))
    splits, data = _prepare(dataset, spec)
    fn = trial_fn or _train_trial
    sampler_rng, seed_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(2))
    table = []
    for i in range(trials):
        params = sample_config(space, table, sampler_rng)
        train_seed = int(seed_rng.integers(2 ** 32))
        m_kw, t_kw = split_params(params)
        mc = replace(base_model, **m_kw)
        tc = replace(base_train, iterations=int(budget_iterations), seed=train_seed,
                     log_every=max(int(budget_iterations), 1), **t_kw)
        n_params = sum(m.num_parameters() for m in build_models(mc, 0))
        row = TrialResult(i, params, n_parameters=n_params)
        started = time.perf_counter()
        if memory_limit_bytes is not None and estimate_activation_bytes(mc, tc.batch_size) > memory_limit_bytes:
            row.status = PRUNED
            row.message = "estimated activation memory exceeds the limit"
        else:
            try:
                row.val_accuracy = float(fn(splits, data, mc, tc))
                if not 0.0 <= row.val_accuracy <= 1.0:
                    raise ValueError(f"accuracy {row.val_accuracy} outside [0, 1]")
            except (SpikeGANError, ValueError, ArithmeticError, MemoryError) as exc:
                row.status = FAILED
                row.val_accuracy = float("nan")
                row.message = f"{type(exc).__name__}: {exc}"
        row.seconds = time.perf_counter() - started
        table.append(row)
    return best_trial(table), table


def best_trial(table):
    done = [t for t in table if t.status == COMPLETED]
    if not done:
        raise SearchFailureError([t.message or t.status for t in table])
    return min(done, key=lambda t: (-t.val_accuracy, t.n_parameters, t.trial))


TABLE_COLUMNS = ("trial",) + MODEL_KEYS + TRAIN_KEYS + ("n_parameters", "val_accuracy", "status", "seconds")


def trials_to_csv(table, path=None, include_time=True):
    """Trial table in trial order; ``include_time=False`` drops wall time for reproducible output."""
    cols = TABLE_COLUMNS if include_time else TABLE_COLUMNS[:-1]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for t in sorted(table, key=lambda r: r.trial):
        row = [t.trial] + [repr(t.params[k]) for k in MODEL_KEYS + TRAIN_KEYS]
        row += [t.n_parameters, repr(t.val_accuracy), t.status]
        if include_time:
            row.append(f"{t.seconds:.3f}")
        writer.writerow(row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
