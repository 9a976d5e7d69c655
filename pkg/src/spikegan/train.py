"""Semi-supervised adversarial training.

Each iteration performs exactly three optimizer updates:

1. discriminator, supervised: 3-class cross-entropy on a labeled batch;
2. discriminator, unsupervised: real/fake binary cross-entropy on an
   unlabeled batch (real target smoothed to 0.9) and a generated batch;
3. generator: non-saturating ``-log D(G(z))`` on fresh fakes, with the
   discriminator frozen.
"""

import contextlib
import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, save_tensors
from .errors import ConfigurationError, DivergenceError, DomainError, LabelError, ShapeError
from .model import ModelConfig, build_models, coerce_fields, parse_key_values, realfake_probability

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass
class TrainConfig:
    iterations: int = 500
    batch_size: int = 128
    learning_rate: float = 0.0009
    label_smooth_real: float = 0.9
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 50
    supervised_weight: float = 1.0
    unsupervised_weight: float = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.iterations < 1:
            raise ConfigurationError(f"iterations must be positive, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 < self.label_smooth_real <= 1:
            raise ConfigurationError(f"label_smooth_real must lie in (0, 1], got {self.label_smooth_real}")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2 (batch normalization)")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be positive")

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_dict(cls, values):
        return cls(**coerce_fields(cls, values))

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(parse_key_values(text))


# losses -------------------------------------------------------------------

def one_hot(labels, n_classes=3, dtype=np.float64):
    labels = np.asarray(labels)
    if labels.ndim != 1 or np.any((labels < 0) | (labels >= n_classes)) or not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"labels must be integers in [0, {n_classes})")
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def supervised_loss(class_logits, labels):
    """Mean categorical cross-entropy against one-hot (unsmoothed) labels."""
    logits = ad.as_tensor(class_logits)
    return ad.softmax_cross_entropy(logits, one_hot(labels, logits.shape[-1], logits.dtype))


def _check_probs(p, what):
    d = ad.as_tensor(p).data
    if not np.all(np.isfinite(d)) or np.any((d < 0) | (d > 1)):
        raise DomainError(f"{what}: probabilities must lie in (0, 1)")


def _bce(p, target):
    # clamped so saturated sigmoids never reach log(0)
    p = ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = []
    if target > 0:
        terms.append(ad.log(p) * (-target))
    if target < 1:
        terms.append(ad.log(1.0 - p) * (-(1.0 - target)))
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def unsupervised_discriminator_loss(real_probs, fake_probs, smooth=0.9):
    """Mean BCE over real (target ``smooth``) and generated (target 0) terms."""
    _check_probs(real_probs, "real")
    _check_probs(fake_probs, "fake")
    real = _bce(ad.as_tensor(real_probs), smooth)
    fake = _bce(ad.as_tensor(fake_probs), 0.0)
    return ad.concatenate([real, fake], axis=0).mean()


def generator_loss(fake_probs):
    """Non-saturating generator loss ``mean(-log D(G(z)))``."""
    _check_probs(fake_probs, "fake")
    return _bce(ad.as_tensor(fake_probs), 1.0).mean()


# optimizer ----------------------------------------------------------------

@dataclass
class OptimizerState:
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)
    step: int = 0


def adam_step(params, grads, state, lr, beta1=0.5, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction; missing grads count as zero."""
    if not state.first:
        state.first = [np.zeros_like(p.data) for p in params]
        state.second = [np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.first, state.second):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class Adam:
    def __init__(self, params, lr, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = OptimizerState()

    @property
    def steps(self):
        return self.state.step

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state,
                  self.lr, self.beta1, self.beta2, self.eps)
        for p in self.params:
            p.grad = None


@contextlib.contextmanager
def frozen(module):
    """Temporarily stop ``module``'s parameters from receiving gradients."""
    params = module.parameters()
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


# training loop ------------------------------------------------------------

@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    d_sup_loss: list = field(default_factory=list)
    d_unsup_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    COLUMNS = ("step", "d_sup_loss", "d_unsup_loss", "g_loss", "val_accuracy")

    def append(self, step, d_sup, d_unsup, g, val_acc):
        self.steps.append(int(step))
        self.d_sup_loss.append(float(d_sup))
        self.d_unsup_loss.append(float(d_unsup))
        self.g_loss.append(float(g))
        self.val_accuracy.append(float(val_acc))

    def rows(self):
        return list(zip(self.steps, self.d_sup_loss, self.d_unsup_loss, self.g_loss, self.val_accuracy))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows():
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])


@dataclass
class TrainResult:
    generator: object
    discriminator: object
    log: TrainLog
    counters: dict
    seconds: float


def predict_logits(discriminator, windows, batch_size=256):
    """Inference-mode class logits for an array of windows."""
    out = []
    for start in range(0, len(windows), batch_size):
        out.append(discriminator(windows[start:start + batch_size]).data)
    return np.concatenate(out) if out else np.zeros((0, discriminator.config.n_classes))


def _draw(rng, pool, size):
    return pool[rng.choice(len(pool), size=min(size, len(pool)), replace=False)]


def save_checkpoint(generator, discriminator, path):
    state = {f"generator.{k}": v for k, v in generator.state_dict().items()}
    state.update({f"discriminator.{k}": v for k, v in discriminator.state_dict().items()})
    save_tensors(state, path)


def load_checkpoint(generator, discriminator, tensors):
    generator.load_state_dict({k[len("generator."):]: v for k, v in tensors.items() if k.startswith("generator.")})
    discriminator.load_state_dict(
        {k[len("discriminator."):]: v for k, v in tensors.items() if k.startswith("discriminator.")})


def train(splits, model_config=None, train_config=None, data=None, callback=None, checkpoint_path=None):
    """Jointly train generator and discriminator.

    ``data.windows`` must already be normalized into ``[-1, 1]``; labels are
    read only at ``splits.labeled_train`` and ``splits.validation``. The
    optional ``callback(step, result_so_far)`` is invoked after every
    iteration and may raise to abort.
    """
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    if data is None or data.labels is None:
        raise ConfigurationError("training needs a labeled window set")
    if len(splits.labeled_train) == 0 or len(splits.validation) == 0:
        raise ConfigurationError("labeled_train and validation splits must be non-empty")
    real_pool = splits.unlabeled_train if len(splits.unlabeled_train) else splits.labeled_train
    windows, labels = data.windows, data.labels
    if np.abs(windows).max() > 1.0:
        raise ConfigurationError("window set is not normalized into [-1, 1]")

    tc = train_config
    seed_model, seed_loop = np.random.SeedSequence(int(tc.seed)).spawn(2)
    generator, discriminator = build_models(model_config, seed_model)
    rng = np.random.default_rng(seed_loop)
    opt_d = Adam(discriminator.parameters(), tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps)
    opt_g = Adam(generator.parameters(), tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps)
    log = TrainLog()
    counters = {"d_supervised": 0, "d_unsupervised": 0, "generator": 0}
    dtype = np.dtype(model_config.dtype)
    x_val = windows[splits.validation].astype(dtype)
    y_val = labels[splits.validation]
    b = tc.batch_size
    nz = model_config.noise_dim
    started = time.perf_counter()
    result = TrainResult(generator, discriminator, log, counters, 0.0)

    for step in range(1, tc.iterations + 1):
        # (a) supervised discriminator update
        idx = _draw(rng, splits.labeled_train, b)
        with Tape() as tape:
            logits = discriminator(windows[idx].astype(dtype), training=True, rng=rng)
            d_sup = supervised_loss(logits, labels[idx]) * tc.supervised_weight
        tape.backward(d_sup)
        opt_d.step()
        counters["d_supervised"] += 1

        # (b) unsupervised discriminator update on real unlabeled + generated
        idx = _draw(rng, real_pool, b)
        fakes = generator(rng.standard_normal((b, nz)).astype(dtype), training=True, rng=rng).data
        batch = np.concatenate([windows[idx].astype(dtype), fakes])
        with Tape() as tape:
            probs = realfake_probability(discriminator(batch, training=True, rng=rng))
            n_real = len(idx)
            d_unsup = unsupervised_discriminator_loss(
                probs[:n_real], probs[n_real:], tc.label_smooth_real) * tc.unsupervised_weight
        tape.backward(d_unsup)
        opt_d.step()
        counters["d_unsupervised"] += 1

        # (c) generator update against a frozen discriminator
        with frozen(discriminator):
            with Tape() as tape:
                fake = generator(rng.standard_normal((b, nz)).astype(dtype), training=True, rng=rng)
                g_loss = generator_loss(realfake_probability(discriminator(fake, training=True, rng=rng)))
            # backward must run while frozen, or D's parameters collect adjoints
            tape.backward(g_loss)
        opt_g.step()
        counters["generator"] += 1

        losses = (d_sup.item(), d_unsup.item(), g_loss.item())
        if not all(np.isfinite(losses)):
            raise DivergenceError(step)
        if step % tc.log_every == 0 or step == tc.iterations:
            val_acc = float(np.mean(predict_logits(discriminator, x_val).argmax(axis=1) == y_val))
            log.append(step, *losses, val_acc)
            logger.info("step %d d_sup=%.4f d_unsup=%.4f g=%.4f val_acc=%.3f", step, *losses, val_acc)
        if checkpoint_path and tc.checkpoint_every and step % tc.checkpoint_every == 0:
            save_checkpoint(generator, discriminator, f"{checkpoint_path}.step{step}")
        result.seconds = time.perf_counter() - started
        if callback is not None:
            callback(step, result)

    if checkpoint_path:
        save_checkpoint(generator, discriminator, checkpoint_path)
    result.seconds = time.perf_counter() - started
    return result
