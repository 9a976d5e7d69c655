"""Networks: transformer/transposed-conv generator and a flat
shifted-window transformer discriminator with a semi-supervised head.

Tensors are channel-last throughout: the discriminator consumes
``(batch, time=100, channels=60)`` and keeps all 100 tokens through every
block; the generator maps ``(batch, noise_dim)`` to the same shape.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Module, RunningStats, Tensor
from .errors import ConfigurationError, ShapeError

GENERATOR_VARIANTS = ("transformer", "conv_only")
DISCRIMINATOR_VARIANTS = ("shifted_window", "plain_transformer")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    The first block of fields carries the tuned optimum of the search space
    (noise 128, head size 64, 4 heads, feed-forward 128, 2 blocks, dropout
    0.29). By default ``head_size`` is the per-head query/key width; with
    ``head_size_mode="total"`` it is the combined attention width, split
    evenly across heads. The model width is ``embed_dim``.
    """

    noise_dim: int = 128
    head_size: int = 64
    num_heads: int = 4
    ff_dim: int = 128
    num_blocks: int = 2
    dropout_rate: float = 0.29
    embed_dim: int = 64
    window_size: int = 10
    shift_size: int = None
    leaky_slope: float = 0.2
    generator_variant: str = "transformer"
    discriminator_variant: str = "shifted_window"
    seq_len: int = 100
    n_channels: int = 60
    n_classes: int = 3
    generator_grid: tuple = (25, 15)
    generator_channels: tuple = (32, 16)
    kernel_size: int = 4
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    ln_eps: float = 1e-5
    dtype: str = "float64"
    head_size_mode: str = "per_head"

    def __post_init__(self):
        if self.shift_size is None:
            self.shift_size = self.window_size // 2
        self.generator_grid = tuple(int(v) for v in self.generator_grid)
        self.generator_channels = tuple(int(v) for v in self.generator_channels)
        self.validate()

    def validate(self):
        positive = ("noise_dim", "head_size", "num_heads", "ff_dim", "num_blocks",
                    "embed_dim", "window_size", "seq_len", "n_channels", "n_classes", "kernel_size")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.generator_variant not in GENERATOR_VARIANTS:
            raise ConfigurationError(f"generator_variant must be one of {GENERATOR_VARIANTS}")
        if self.discriminator_variant not in DISCRIMINATOR_VARIANTS:
            raise ConfigurationError(f"discriminator_variant must be one of {DISCRIMINATOR_VARIANTS}")
        if self.discriminator_variant == "shifted_window":
            if self.seq_len % self.window_size:
                raise ConfigurationError(
                    f"window_size {self.window_size} does not divide sequence length {self.seq_len}")
            if not 0 <= self.shift_size < self.window_size:
                raise ConfigurationError(
                    f"shift_size must satisfy 0 <= shift < window_size, got {self.shift_size}")
        gh, gw = self.generator_grid
        up = 2 ** len(self.generator_channels)
        if (gh * up, gw * up) != (self.seq_len, self.n_channels):
            raise ConfigurationError(
                f"generator grid {self.generator_grid} with {len(self.generator_channels)} stride-2 "
                f"stages gives {gh * up}x{gw * up}, expected {self.seq_len}x{self.n_channels}")
        if self.kernel_size < 2:
            raise ConfigurationError("kernel_size must be at least the stride (2)")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.head_size_mode not in ("per_head", "total"):
            raise ConfigurationError(f"head_size_mode must be per_head or total, got {self.head_size_mode!r}")
        if self.head_size_mode == "total" and self.head_size % self.num_heads:
            raise ConfigurationError(
                f"total head_size {self.head_size} is not divisible by num_heads {self.num_heads}")

    @property
    def per_head_width(self):
        if self.head_size_mode == "total":
            return self.head_size // self.num_heads
        return self.head_size

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_text(self):
        """Serialize as ``key=value`` lines (tuples comma-separated)."""
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, values):
        return cls(**coerce_fields(cls, values))

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(parse_key_values(text))


def generator_grid_for(seq_len, n_channels, n_stages):
    """Starting grid the generator upsamples (2x per transposed convolution) to ``(seq_len, n_channels)``."""
    up = 2 ** int(n_stages)
    if seq_len % up or n_channels % up:
        raise ConfigurationError(
            f"window shape ({seq_len}, {n_channels}) must be divisible by {up} for {n_stages} upsampling stages")
    return seq_len // up, n_channels // up


def parse_key_values(text):
    values = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"malformed config line {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def coerce_fields(cls, values):
    """Convert string values to the types of the dataclass defaults."""
    defaults = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for key, value in values.items():
        if key not in defaults:
            raise ConfigurationError(f"unknown {cls.__name__} field {key!r}")
        f = defaults[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        if not isinstance(value, str):
            out[key] = value
        elif isinstance(default, tuple):
            out[key] = tuple(int(v) for v in value.split(",") if v)
        elif isinstance(default, bool):
            out[key] = value.lower() in ("1", "true", "yes")
        elif isinstance(default, int) or key == "shift_size":
            out[key] = int(value)
        elif isinstance(default, float):
            out[key] = float(value)
        elif value == "None":
            out[key] = None
        else:
            out[key] = value
    return out


# layers -------------------------------------------------------------------

def _glorot(rng, fan_in, fan_out, shape, dtype=np.float64):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Dense(Module):
    def __init__(self, n_in, n_out, rng, bias=True, dtype=np.float64):
        self.weight = Tensor(_glorot(rng, n_in, n_out, (n_in, n_out), dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm(Module):
    def __init__(self, dim, momentum=0.99, eps=1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.stats = RunningStats(dim, dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, training):
        return ad.batch_norm(x, self.gamma, self.beta, self.stats, training, self.momentum, self.eps)


class ConvTranspose(Module):
    def __init__(self, c_in, c_out, kernel_size, stride, rng, dtype=np.float64):
        k = kernel_size
        self.kernel = Tensor(_glorot(rng, c_in * k * k, c_out * k * k, (k, k, c_in, c_out), dtype),
                             requires_grad=True)
        self.stride = stride

    def __call__(self, x):
        return ad.conv2d_transpose(x, self.kernel, self.stride)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over the second-to-last axis.

    Any leading axes are treated as independent batches, which is how the
    windowed variant runs every window at once.
    """

    def __init__(self, dim, num_heads, head_size, rng, dtype=np.float64):
        inner = num_heads * head_size
        self.wq = Dense(dim, inner, rng, dtype=dtype)
        self.wk = Dense(dim, inner, rng, dtype=dtype)
        self.wv = Dense(dim, inner, rng, dtype=dtype)
        self.wo = Dense(inner, dim, rng, dtype=dtype)
        self.num_heads = num_heads
        self.head_size = head_size
        self.last_weights = None

    def _split(self, t, lead, n):
        # (..., n, H*hs) -> (..., H, n, hs)
        k = len(lead)
        t = t.reshape(*lead, n, self.num_heads, self.head_size)
        return t.transpose(*range(k), k + 1, k, k + 2)

    def __call__(self, x, keep_weights=False):
        lead, n = x.shape[:-2], x.shape[-2]
        k = len(lead)
        q = self._split(self.wq(x), lead, n)
        kk = self._split(self.wk(x), lead, n)
        v = self._split(self.wv(x), lead, n)
        ctx, weights = ad.scaled_dot_product_attention(q, kk, v, 1.0 / math.sqrt(self.head_size))
        self.last_weights = weights if keep_weights else None
        ctx = ctx.transpose(*range(k), k + 1, k, k + 2)
        return self.wo(ctx.reshape(*lead, n, self.num_heads * self.head_size))


class WindowAttention(Module):
    """Multi-head attention restricted to contiguous windows of tokens.

    With a shift ``s`` the sequence is rolled by ``-s`` before partitioning
    and by ``+s`` afterwards, so tokens at the end of the sequence share a
    window with tokens at the start. The wrapped seam is not masked.
    """

    def __init__(self, dim, num_heads, head_size, rng, dtype=np.float64):
        self.mha = MultiHeadAttention(dim, num_heads, head_size, rng, dtype)

    def __call__(self, x, window_size, shift=0, keep_weights=False):
        b, t, d = x.shape
        if window_size < 1 or t % window_size:
            raise ConfigurationError(f"window_size {window_size} does not divide sequence length {t}")
        if not 0 <= shift < window_size:
            raise ConfigurationError(f"shift must satisfy 0 <= shift < window_size, got {shift}")
        if shift:
            x = ad.roll(x, -shift, axis=1)
        y = self.mha(x.reshape(b, t // window_size, window_size, d), keep_weights=keep_weights)
        y = y.reshape(b, t, d)
        if shift:
            y = ad.roll(y, shift, axis=1)
        return y


def window_attention(x, attention, window_size, shift=0):
    """Functional form of :class:`WindowAttention` for an existing module."""
    return attention(x, window_size, shift)


def attention_support(weights, shift):
    """Token-level reachability mask from window attention weights.

    ``weights`` has shape ``(B, n_windows, H, w, w)`` as recorded by
    :class:`MultiHeadAttention`; entry ``[i, j]`` of the result is True when
    some head in some batch row gives token ``i`` non-zero weight on ``j``.
    """
    n_windows, w = weights.shape[1], weights.shape[-1]
    t = n_windows * w
    live = (weights != 0).any(axis=(0, 2))
    mask = np.zeros((t, t), dtype=bool)
    for n in range(n_windows):
        tokens = (np.arange(n * w, (n + 1) * w) + shift) % t
        mask[np.ix_(tokens, tokens)] = live[n]
    return mask


class FeedForward(Module):
    def __init__(self, dim, ff_dim, rng, dtype=np.float64):
        self.inner = Dense(dim, ff_dim, rng, dtype=dtype)
        self.outer = Dense(ff_dim, dim, rng, dtype=dtype)

    def __call__(self, x, slope, rate, training, rng):
        h = ad.leaky_relu(self.inner(x), slope)
        return self.outer(ad.dropout(h, rate, training, rng))


class SwinBlock(Module):
    """Pre-norm residual block: windowed attention then feed-forward."""

    def __init__(self, config, rng):
        d, dt = config.embed_dim, config.dtype
        self.norm1 = LayerNorm(d, config.ln_eps, dt)
        self.attn = WindowAttention(d, config.num_heads, config.per_head_width, rng, dt)
        self.norm2 = LayerNorm(d, config.ln_eps, dt)
        self.ff = FeedForward(d, config.ff_dim, rng, dt)
        self.slope = config.leaky_slope
        self.rate = config.dropout_rate

    def __call__(self, x, window_size, shift=0, training=False, rng=None, keep_weights=False):
        x = x + self.attn(self.norm1(x), window_size, shift, keep_weights=keep_weights)
        return x + self.ff(self.norm2(x), self.slope, self.rate, training, rng)


def swin_block_forward(x, block, window_size, shift=0, training=False, rng=None):
    return block(x, window_size, shift, training, rng)


# networks -----------------------------------------------------------------

class Discriminator(Module):
    """Flat shifted-window transformer classifier producing 3 class logits."""

    def __init__(self, config, rng):
        self.config = config
        d, dt = config.embed_dim, config.dtype
        self.proj = Dense(config.n_channels, d, rng, dtype=dt)
        self.blocks = [SwinBlock(config, rng) for _ in range(config.num_blocks)]
        self.hidden = Dense(d, config.ff_dim, rng, dtype=dt)
        self.out = Dense(config.ff_dim, config.n_classes, rng, dtype=dt)

    def block_layout(self):
        """``(window_size, shift)`` used by each block, in order."""
        c = self.config
        if c.discriminator_variant == "plain_transformer":
            return [(c.seq_len, 0)] * c.num_blocks
        return [(c.window_size, 0 if k % 2 == 0 else c.shift_size) for k in range(c.num_blocks)]

    def __call__(self, x, training=False, rng=None, keep_weights=False):
        c = self.config
        x = ad.as_tensor(x, c.dtype)
        if x.ndim != 3 or x.shape[1:] != (c.seq_len, c.n_channels):
            raise ShapeError(f"discriminator expects (B, {c.seq_len}, {c.n_channels}), got {x.shape}")
        h = self.proj(x)
        for block, (window, shift) in zip(self.blocks, self.block_layout()):
            h = block(h, window, shift, training, rng, keep_weights)
            if h.shape[1] != c.seq_len:
                raise AssertionError("token count changed inside the discriminator")
        h = ad.leaky_relu(self.hidden(ad.global_average_pool(h)), c.leaky_slope)
        return self.out(ad.dropout(h, c.dropout_rate, training, rng))


class Generator(Module):
    """Noise to ``(B, 100, 60)`` spike-like windows in (-1, 1).

    dense projection -> (25x15 grid, embed_dim) -> transformer blocks over
    the 375 grid tokens -> two stride-2 transposed convolutions with batch
    norm and LeakyReLU -> 1-channel projection -> tanh.
    """

    # largest pre-activation whose tanh still rounds strictly below 1
    PREACTIVATION_BOUND = {"float64": 18.0, "float32": 8.0}

    def __init__(self, config, rng):
        self.config = config
        gh, gw = config.generator_grid
        d, dt = config.embed_dim, config.dtype
        self.dense = Dense(config.noise_dim, gh * gw * d, rng, dtype=dt)
        self.bn0 = BatchNorm(d, config.bn_momentum, config.bn_eps, dt)
        self.blocks = []
        if config.generator_variant == "transformer":
            self.blocks = [SwinBlock(config, rng) for _ in range(config.num_blocks)]
        self.ups = []
        self.bns = []
        c_in = d
        for c_out in config.generator_channels:
            self.ups.append(ConvTranspose(c_in, c_out, config.kernel_size, 2, rng, dt))
            self.bns.append(BatchNorm(c_out, config.bn_momentum, config.bn_eps, dt))
            c_in = c_out
        self.to_signal = Dense(c_in, 1, rng, dtype=dt)

    def __call__(self, z, training=False, rng=None):
        c = self.config
        z = ad.as_tensor(z, c.dtype)
        if z.ndim != 2 or z.shape[1] != c.noise_dim:
            raise ShapeError(f"generator expects (B, {c.noise_dim}) noise, got {z.shape}")
        b = z.shape[0]
        gh, gw = c.generator_grid
        n_tokens = gh * gw
        h = self.dense(z).reshape(b, n_tokens, c.embed_dim)
        h = ad.leaky_relu(self.bn0(h, training), c.leaky_slope)
        for block in self.blocks:
            h = block(h, n_tokens, 0, training, rng)
        h = h.reshape(b, gh, gw, c.embed_dim)
        for up, bn in zip(self.ups, self.bns):
            h = ad.leaky_relu(bn(up(h), training), c.leaky_slope)
        h = self.to_signal(h).reshape(b, c.seq_len, c.n_channels)
        bound = self.PREACTIVATION_BOUND[c.dtype]
        return ad.tanh(ad.clip(h, -bound, bound))


def generator_forward(generator, z, training=False, rng=None):
    return generator(z, training, rng)


def discriminator_forward(discriminator, x, training=False, rng=None):
    return discriminator(x, training, rng)


def realfake_probability(class_logits):
    """Real-vs-fake probability ``Z / (Z + 1)`` with ``Z = sum(exp(logits))``.

    Evaluated as ``sigmoid(logsumexp(logits))`` so large logits never
    overflow.
    """
    return ad.sigmoid(ad.logsumexp(class_logits, axis=-1))


def build_models(config, seed):
    """Fresh (generator, discriminator) pair, deterministic in ``seed``."""
    rng_g, rng_d = np.random.default_rng(seed).spawn(2)
    return Generator(config, rng_g), Discriminator(config, rng_d)
