import csv
import io
import math

import numpy as np
import pytest
from scipy import stats

import gradcases
from spikegan.dataio import SplitSpec
from spikegan.errors import ConfigurationError, InvalidInputError, SearchFailureError
from spikegan.hpo import (COMPLETED, FAILED, MODEL_KEYS, PRUNED, TRAIN_KEYS, SearchSpace, TrialResult, best_trial,
                        estimate_activation_bytes, run_search, sample_config, trials_to_csv)
from spikegan.model import ModelConfig
from spikegan.signal import SpikeWindowSet

SPACE = SearchSpace()


def tiny_dataset(n=150):
    rng = np.random.default_rng(0)
    labels = np.repeat([0, 1, 2], n // 3)
    return SpikeWindowSet(rng.normal(0, 5, (n, 8, 4)) + 20 * (labels[:, None, None] - 1), labels)


def fake_trial(splits, data, model_config, train_config):
    # deterministic surrogate score favouring larger heads and a mid learning rate
    score = 0.5 + 0.1 * math.log2(model_config.head_size / 64) - 0.05 * abs(math.log10(train_config.learning_rate) + 4)
    return float(min(1.0, max(0.0, score + (train_config.seed % 7) * 1e-3)))


# sampler ------------------------------------------------------------------------

def test_empty_history_draws_uniformly_within_ranges():
    params = sample_config(SPACE, [], np.random.default_rng(0))
    assert set(params) == set(MODEL_KEYS + TRAIN_KEYS)
    assert SPACE.contains(params)


def test_thousand_draws_in_bounds():
    rng = np.random.default_rng(1)
    history = []
    for i in range(1000):
        params = sample_config(SPACE, history, rng)
        assert SPACE.contains(params), params
        if i < 30:
            history.append(TrialResult(i, params, val_accuracy=float(rng.random())))


def test_learning_rate_is_log_uniform():
    rng = np.random.default_rng(2)
    lrs = np.array([sample_config(SPACE, [], rng)["learning_rate"] for _ in range(10_000)])
    u = (np.log10(lrs) + 5) / 2
    assert stats.kstest(u, "uniform").statistic < 0.02


def test_dropout_is_uniform():
    rng = np.random.default_rng(3)
    d = np.array([sample_config(SPACE, [], rng)["dropout_rate"] for _ in range(5000)])
    assert stats.kstest((d - 0.1) / 0.4, "uniform").pvalue > 1e-3


def test_exploitation_stays_near_top_trials():
    rng = np.random.default_rng(4)
    best = {"noise_dim": 64, "head_size": 256, "num_heads": 8, "ff_dim": 32, "num_blocks": 1,
            "batch_size": 64, "dropout_rate": 0.2, "learning_rate": 5e-4}
    history = [TrialResult(0, best, 0.99)] + [TrialResult(i, sample_config(SPACE, [], rng), 0.3) for i in range(1, 8)]
    draws = [sample_config(SPACE, history, rng, explore=0.0, quantile=0.1) for _ in range(200)]
    share = np.mean([d["head_size"] == 256 for d in draws])
    assert share > 0.7


@pytest.mark.parametrize("kw", [dict(head_size=()), dict(dropout_rate=(0.5, 0.1)), dict(dropout_rate=(0.1, 1.0)),
                                dict(learning_rate=(0.0, 1e-3))])
def test_space_validation(kw):
    with pytest.raises(ConfigurationError):
        SearchSpace(**kw).validate()


# search ------------------------------------------------------------------------

BASE = ModelConfig(**{**gradcases.TINY_CONFIG, "head_size_mode": "total"})


def test_single_trial_is_best():
    best, table = run_search(tiny_dataset(), trials=1, seed=0, trial_fn=fake_trial)
    assert len(table) == 1 and best is table[0]


def test_same_seed_same_table():
    a = run_search(tiny_dataset(), trials=12, seed=5, trial_fn=fake_trial)[1]
    b = run_search(tiny_dataset(), trials=12, seed=5, trial_fn=fake_trial)[1]
    c = run_search(tiny_dataset(), trials=12, seed=6, trial_fn=fake_trial)[1]
    assert trials_to_csv(a, include_time=False) == trials_to_csv(b, include_time=False)
    assert trials_to_csv(a, include_time=False) != trials_to_csv(c, include_time=False)


def test_best_dominates_table():
    best, table = run_search(tiny_dataset(), trials=15, seed=1, trial_fn=fake_trial)
    done = [t.val_accuracy for t in table if t.status == COMPLETED]
    assert best.val_accuracy == max(done)


def test_ties_prefer_fewer_parameters_then_earlier():
    table = [TrialResult(0, {}, 0.9, n_parameters=50), TrialResult(1, {}, 0.9, n_parameters=40),
             TrialResult(2, {}, 0.9, n_parameters=40), TrialResult(3, {}, 0.8, n_parameters=1)]
    assert best_trial(table).trial == 1


def parse_table(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        params = {k: (float(r[k]) if k in ("dropout_rate", "learning_rate") else int(r[k]))
                  for k in MODEL_KEYS + TRAIN_KEYS}
        out.append((int(r["trial"]), params, float(r["val_accuracy"]), r["status"]))
    return out


def test_trial_configs_round_trip_through_csv():
    _, table = run_search(tiny_dataset(), trials=10, seed=2, trial_fn=fake_trial)
    parsed = parse_table(trials_to_csv(table))
    for t, (i, params, acc, status) in zip(table, parsed):
        assert (t.trial, t.params, t.status) == (i, params, status)
        assert acc == t.val_accuracy


def test_every_sampled_config_in_space():
    _, table = run_search(tiny_dataset(), trials=20, seed=3, trial_fn=fake_trial)
    assert all(SPACE.contains(t.params) for t in table)


def test_memory_estimate_scales():
    cfg = ModelConfig(head_size=256, num_heads=8)
    small = ModelConfig(head_size=64, num_heads=2, num_blocks=1)
    assert estimate_activation_bytes(cfg, 128) > estimate_activation_bytes(small, 128)
    assert estimate_activation_bytes(cfg, 128) == 2 * estimate_activation_bytes(cfg, 64)
    f32 = ModelConfig(head_size=256, num_heads=8, dtype="float32")
    assert estimate_activation_bytes(f32, 128) * 2 == estimate_activation_bytes(cfg, 128)


def test_memory_guard_prunes_exactly_the_oversized():
    limit = estimate_activation_bytes(ModelConfig(), 64)
    _, table = run_search(tiny_dataset(), trials=20, seed=0, trial_fn=fake_trial, memory_limit_bytes=limit)
    statuses = {t.status for t in table}
    assert statuses == {PRUNED, COMPLETED}
    for t in table:
        mc = ModelConfig(**{k: t.params[k] for k in MODEL_KEYS})
        over = estimate_activation_bytes(mc, t.params["batch_size"]) > limit
        assert (t.status == PRUNED) == over
        assert math.isnan(t.val_accuracy) == over


def test_all_pruned_is_a_search_failure():
    with pytest.raises(SearchFailureError):
        run_search(tiny_dataset(), trials=3, seed=0, trial_fn=fake_trial, memory_limit_bytes=0)


def test_failures_are_recorded():
    calls = []

    def flaky(splits, data, mc, tc):
        calls.append(1)
        if len(calls) % 2:
            raise FloatingPointError("diverged")
        return 0.5

    best, table = run_search(tiny_dataset(), trials=4, seed=0, trial_fn=flaky)
    assert [t.status for t in table] == [FAILED, COMPLETED, FAILED, COMPLETED]
    assert "diverged" in table[0].message
    assert best.trial == min((1, 3), key=lambda i: table[i].n_parameters)


def test_out_of_range_accuracy_is_a_failure():
    with pytest.raises(SearchFailureError) as info:
        run_search(tiny_dataset(), trials=2, seed=0, trial_fn=lambda *a: 1.5)
    assert len(info.value.diagnostics) == 2
    assert all("outside [0, 1]" in d for d in info.value.diagnostics)


def test_needs_a_trial():
    with pytest.raises(InvalidInputError):
        run_search(tiny_dataset(), trials=0)


def test_real_tiny_search_is_reproducible():
    space = SearchSpace(head_size=(4, 8), num_heads=(2,), ff_dim=(8,), noise_dim=(6,), num_blocks=(1, 2),
                        batch_size=(8,))
    kw = dict(trials=3, budget_iterations=2, seed=4, space=space, base_model_config=BASE,
              split_spec=SplitSpec(labeled_fraction=0.2, validation_fraction=0.2))
    a = run_search(tiny_dataset(), **kw)
    b = run_search(tiny_dataset(), **kw)
    assert trials_to_csv(a[1], include_time=False) == trials_to_csv(b[1], include_time=False)
    assert all(t.status == COMPLETED for t in a[1])
