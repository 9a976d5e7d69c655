"""Classification metrics and Monte Carlo cross-validation.

Metrics are macro-averaged over the three classes. Monte Carlo runs
re-draw every partition, re-fit normalization, re-initialize and re-train
from a per-run seed, then evaluate on that run's own test set.
"""

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataio import SplitSpec, split_dataset
from .errors import EmptyEvaluationError, InvalidInputError, RunError, SpikeGANError
from .model import ModelConfig
from .signal import max_abs_scale, normalize_windows

METRICS = ("accuracy", "macro_precision", "macro_recall", "macro_f1")
METRIC_TITLES = {"accuracy": "Accuracy", "macro_precision": "Precision", "macro_recall": "Recall",
                 "macro_f1": "F1-score"}


class ZeroSupportWarning(UserWarning):
    """A class had a zero denominator; its metric was set to 0."""


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise InvalidInputError(f"confusion matrix must be square, got shape {counts.shape}")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise InvalidInputError("confusion matrix entries must be non-negative integers")
        self.counts = counts.astype(np.int64)

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes=3):
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise InvalidInputError(f"y_true {y_true.shape} and y_pred {y_pred.shape} differ in shape")
        for y in (y_true, y_pred):
            if np.any((y < 0) | (y >= n_classes)):
                raise InvalidInputError(f"labels must lie in [0, {n_classes})")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def n_classes(self):
        return self.counts.shape[0]


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    undefined: list = field(default_factory=list)

    def as_dict(self):
        return {m: getattr(self, m) for m in METRICS}


def _safe_ratio(num, den, what, undefined):
    out = np.zeros(len(num))
    for k, (n, d) in enumerate(zip(num, den)):
        if d > 0:
            out[k] = n / d
        else:
            undefined.append((what, k))
    return out


def compute_metrics(cm):
    """Accuracy plus per-class and macro precision, recall and F1.

    Classes whose denominator is zero score 0 for that metric and are listed
    in ``undefined``; a :class:`ZeroSupportWarning` is emitted.
    """
    if not isinstance(cm, ConfusionMatrix):
        cm = ConfusionMatrix(cm)
    if cm.total == 0:
        raise EmptyEvaluationError("cannot compute metrics on an empty confusion matrix")
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    undefined = []
    precision = _safe_ratio(tp, c.sum(axis=0), "precision", undefined)
    recall = _safe_ratio(tp, c.sum(axis=1), "recall", undefined)
    f1 = _safe_ratio(2 * precision * recall, precision + recall, "f1", undefined)
    if undefined:
        warnings.warn(f"zero denominators for {undefined}; those entries are reported as 0", ZeroSupportWarning,
                      stacklevel=2)
    return MetricsReport(
        accuracy=float(tp.sum() / c.sum()),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        undefined=undefined,
    )


@dataclass
class MonteCarloReport:
    """Per-run metrics with mean and sample (n-1) standard deviation."""

    runs: list
    seeds: list = field(default_factory=list)

    def values(self, metric):
        return np.array([getattr(r, metric) for r in self.runs], dtype=np.float64)

    @property
    def mean(self):
        return {m: float(np.mean(self.values(m))) for m in METRICS}

    @property
    def std(self):
        out = {}
        for m in METRICS:
            v = self.values(m)
            # exact zero for identical runs, independent of summation rounding
            out[m] = 0.0 if np.all(v == v[0]) else float(np.std(v, ddof=1))
        return out

    def to_csv(self, path=None):
        """Per-run rows followed by ``mean`` and ``std`` rows."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("run", "seed") + METRICS)
        for i, (r, s) in enumerate(zip(self.runs, self.seeds or [""] * len(self.runs))):
            writer.writerow([i, s] + [repr(getattr(r, m)) for m in METRICS])
        mean, std = self.mean, self.std
        writer.writerow(["mean", ""] + [repr(mean[m]) for m in METRICS])
        writer.writerow(["std", ""] + [repr(std[m]) for m in METRICS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def format_table(self, row_label="Overall"):
        """Percentages as ``mean ± std``, one column per metric."""
        mean, std = self.mean, self.std
        width = max(len(row_label), 8)
        head = " " * width + "".join(f"  {METRIC_TITLES[m]:>15}" for m in METRICS)
        cells = "".join(f"  {f'{100 * mean[m]:.2f} ± {100 * std[m]:.2f}':>15}" for m in METRICS)
        return f"{head}\n{row_label:<{width}}{cells}\n"


def run_seeds(base_seed, runs):
    """Independent ``(split_seed, train_seed)`` pairs derived from one base seed."""
    children = np.random.SeedSequence(int(base_seed)).spawn(runs)
    return [tuple(int(v) for v in c.generate_state(2, dtype=np.uint32)) for c in children]


def evaluate_classifier(discriminator, windows, labels):
    from .train import predict_logits

    pred = predict_logits(discriminator, windows).argmax(axis=1)
    return compute_metrics(ConfusionMatrix.from_predictions(labels, pred))


def _one_run(dataset, split_kwargs, model_config, train_config, split_seed, train_seed):
    from .train import TrainConfig, train

    splits = split_dataset(dataset, SplitSpec(seed=split_seed, **split_kwargs))
    scale = max_abs_scale(dataset.windows[splits.train])
    normed = normalize_windows(dataset, scale)
    tc = TrainConfig.from_dict({**train_config.to_dict(), "seed": train_seed})
    result = train(splits, model_config, tc, normed)
    return evaluate_classifier(result.discriminator, normed.windows[splits.test], normed.labels[splits.test])


def monte_carlo_cv(dataset, model_config=None, train_config=None, runs=5, base_seed=0, split_spec=None,
                   n_jobs=1, run_fn=None):
    """Repeat split, fit and evaluate ``runs`` times with fresh partitions.

    Parameters
    ----------
    dataset : SpikeWindowSet
        Labeled, un-normalized windows (microvolts).
    split_spec : SplitSpec, optional
        Fractions to use; its seed is ignored (each run derives its own).
    n_jobs : int
        Worker processes; results are assembled in run order either way.
    run_fn : callable, optional
        Replaces the train-and-evaluate step, called as
        ``run_fn(dataset, split_kwargs, model_config, train_config, split_seed, train_seed)``
        and returning a :class:`MetricsReport`.

    Raises
    ------
    RunError
        When any run fails; carries the run index and the original error.
    """
    from .train import TrainConfig

    if runs < 2:
        raise InvalidInputError(f"need at least 2 runs for a standard deviation, got {runs}")
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    spec = split_spec or SplitSpec()
    split_kwargs = {"test_fraction": spec.test_fraction, "labeled_fraction": spec.labeled_fraction,
                    "validation_fraction": spec.validation_fraction}
    fn = run_fn or _one_run
    seeds = run_seeds(base_seed, runs)
    args = [(dataset, split_kwargs, model_config, train_config, s, t) for s, t in seeds]
    reports = []
    if n_jobs == 1:
        for i, a in enumerate(args):
            try:
                reports.append(fn(*a))
            except SpikeGANError as exc:
                raise RunError(i, exc) from exc
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(fn, *a) for a in args]
            for i, fut in enumerate(futures):
                try:
                    reports.append(fut.result())
                except SpikeGANError as exc:
                    raise RunError(i, exc) from exc
    for r in reports:
        if not all(math.isfinite(getattr(r, m)) for m in METRICS):
            raise RunError(reports.index(r), "non-finite metric")
    return MonteCarloReport(reports, [s for s, _ in seeds])


# ablation --------------------------------------------------------------------------

#: (generator_variant, discriminator_variant) in table column order
ABLATION_VARIANTS = (("conv_only", "plain_transformer"), ("transformer", "plain_transformer"),
                     ("conv_only", "shifted_window"), ("transformer", "shifted_window"))
_SHORT = {"conv_only": "CNN", "transformer": "Transformer", "plain_transformer": "Transformer",
          "shifted_window": "Shifted-window"}
_ABBREV = {"accuracy": "AC", "macro_precision": "PR", "macro_recall": "RE", "macro_f1": "FS"}


@dataclass
class AblationResult:
    generator_variant: str
    discriminator_variant: str
    report: MetricsReport
    final_losses: dict
    seconds: float = 0.0

    @property
    def label(self):
        return f"G:{_SHORT[self.generator_variant]} D:{_SHORT[self.discriminator_variant]}"


def run_ablation(dataset, model_config=None, train_config=None, split_spec=None, seed=0,
                 variants=ABLATION_VARIANTS):
    """Train every generator/discriminator combination on one shared split.

    All variants see the same partition, normalization scale and training
    seed, so only the architecture differs. Returns a list of
    :class:`AblationResult` in ``variants`` order.
    """
    from .train import TrainConfig, train

    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    spec = split_spec or SplitSpec()
    splits = split_dataset(dataset, SplitSpec(spec.test_fraction, spec.labeled_fraction,
                                              spec.validation_fraction, int(seed)))
    normed = normalize_windows(dataset, max_abs_scale(dataset.windows[splits.train]))
    tc = TrainConfig.from_dict({**train_config.to_dict(), "seed": int(seed)})
    out = []
    for g_variant, d_variant in variants:
        mc = ModelConfig.from_dict({**model_config.to_dict(), "generator_variant": g_variant,
                                    "discriminator_variant": d_variant})
        result = train(splits, mc, tc, normed)
        log = result.log
        losses = {"d_sup_loss": log.d_sup_loss[-1], "d_unsup_loss": log.d_unsup_loss[-1],
                  "g_loss": log.g_loss[-1]}
        report = evaluate_classifier(result.discriminator, normed.windows[splits.test], normed.labels[splits.test])
        out.append(AblationResult(g_variant, d_variant, report, losses, result.seconds))
    return out


def format_ablation_table(results, row_label="synthetic"):
    """Metric rows (AC, PR, RE, FS, in percent) by configuration columns."""
    labels = [r.label for r in results]
    width = max(max(len(lab) for lab in labels), 7) + 2
    lead = max(len(row_label), 7)
    lines = [f"{'Data':<{lead}}  {'Metric':<6}" + "".join(f"{lab:>{width}}" for lab in labels)]
    for i, m in enumerate(METRICS):
        first = row_label if i == 0 else ""
        lines.append(f"{first:<{lead}}  {_ABBREV[m]:<6}" + "".join(f"{100 * getattr(r.report, m):>{width}.2f}"
                                                              for r in results))
    return "\n".join(lines) + "\n"
