"""Finite-difference gradient checks shared by the unit and acceptance tests.

Each case builds float64 inputs (at most 64 elements each) and a function of
tensors. The check contracts the output with fixed random weights, takes the
tape gradient, and compares it against central differences.
"""

import numpy as np

from spikegan import autodiff as ad
from spikegan.model import ModelConfig, build_models

STEP = 1e-5
TOLERANCE = 1e-4


#: denominator floor per unit of loss magnitude: central-difference roundoff
#: grows with |loss|, and some gradients (attention key biases, which softmax
#: ignores) are exactly zero analytically
FLOOR = 1e-6


def relative_error(analytic, numeric, floor=FLOOR):
    """Max abs difference over the larger of the two max-abs magnitudes."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(fn, arrays, step=STEP, seed=0, params=(), max_coords=64):
    """Max relative error over every input (and ``params``) of ``fn``.

    ``fn`` maps tensors to a tensor. ``params`` are extra leaf tensors that
    ``fn`` closes over (for example network weights); at most ``max_coords``
    randomly chosen coordinates of each are checked.
    """
    rng = np.random.default_rng(seed)
    leaves = [ad.Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    weights = rng.standard_normal(out.shape)

    def loss_value():
        return float(np.sum(fn(*leaves).data * weights))

    for p in list(params) + leaves:
        p.grad = None
    with ad.Tape() as tape:
        out = fn(*leaves)
        loss = ad.reduce_sum(out * ad.Tensor(weights))
    floor = FLOOR * max(1.0, abs(float(loss.data)))
    tape.backward(loss)

    worst = 0.0
    for t in leaves + list(params):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        numeric = np.zeros(len(coords))
        for n, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            numeric[n] = (up - down) / (2 * step)
        worst = max(worst, relative_error(analytic.reshape(-1)[coords], numeric, floor))
    return worst


def _away_from(x, points, gap=1e-2):
    # push samples off non-differentiable points
    for p in points:
        near = np.abs(x - p) < gap
        x = np.where(near, p + np.sign(x - p + 1e-300) * gap * 2, x)
    return x


def primitive_cases():
    """``{name: (arrays, fn)}`` covering every differentiable primitive."""
    rng = np.random.default_rng(1234)
    r = rng.standard_normal
    pos = lambda *s: rng.uniform(0.5, 2.0, s)
    onehot = np.eye(3)[[0, 2, 1, 1]]
    soft = rng.dirichlet(np.ones(3), 4)
    bn_run = lambda: ad.RunningStats(3)
    cases = {
        "add_broadcast": ([r((4, 3)), r(3)], lambda a, b: a + b),
        "sub": ([r((4, 3)), r((4, 3))], lambda a, b: a - b),
        "rsub_scalar": ([r(5)], lambda a: 2.0 - a),
        "mul_broadcast": ([r((2, 3, 4)), r((3, 1))], lambda a, b: a * b),
        "div": ([r((3, 4)), pos(3, 4)], lambda a, b: a / b),
        "rdiv_scalar": ([pos(6)], lambda a: 1.5 / a),
        "neg": ([r(6)], lambda a: -a),
        "matmul": ([r((3, 4)), r((4, 2))], lambda a, b: a @ b),
        "matmul_batched": ([r((2, 3, 4)), r((4, 5))], lambda a, b: a @ b),
        "reshape": ([r((2, 6))], lambda a: a.reshape(3, 4)),
        "transpose": ([r((2, 3, 4))], lambda a: a.transpose(2, 0, 1)),
        "concatenate": ([r((2, 3)), r((4, 3))], lambda a, b: ad.concatenate([a, b], axis=0)),
        "slice_basic": ([r((4, 5))], lambda a: a[1:3, ::2]),
        "slice_fancy_repeat": ([r(6)], lambda a: ad.slice_(a, np.array([0, 2, 2, 5]))),
        "roll": ([r((3, 5))], lambda a: ad.roll(a, 2, axis=1)),
        "reduce_sum_axis": ([r((3, 4))], lambda a: ad.reduce_sum(a, axis=0)),
        "reduce_sum_all": ([r((3, 4))], lambda a: ad.reduce_sum(a)),
        "reduce_mean_keepdims": ([r((3, 4))], lambda a: ad.reduce_mean(a, axis=1, keepdims=True)),
        "global_average_pool": ([r((2, 5, 3))], ad.global_average_pool),
        "leaky_relu": ([_away_from(r(20), [0.0])], lambda a: ad.leaky_relu(a, 0.2)),
        "tanh": ([r(10)], ad.tanh),
        "sigmoid": ([3 * r(10)], ad.sigmoid),
        "exp": ([r(10)], ad.exp),
        "log": ([pos(10)], ad.log),
        "clip": ([_away_from(2 * r(20), [-1.0, 1.0])], lambda a: ad.clip(a, -1.0, 1.0)),
        "logsumexp": ([r((4, 3))], lambda a: ad.logsumexp(a, axis=-1)),
        "softmax": ([r((4, 3))], lambda a: ad.softmax(a, axis=-1)),
        "log_softmax": ([r((4, 3))], ad.log_softmax),
        "cross_entropy": ([rng.dirichlet(np.ones(3), 4)], lambda p: ad.cross_entropy(p, soft)),
        "softmax_cross_entropy": ([r((4, 3))], lambda z: ad.softmax_cross_entropy(z, onehot)),
        "batch_norm_train": ([r((5, 3)), pos(3), r(3)],
                             lambda x, g, b: ad.batch_norm(x, g, b, bn_run(), training=True)),
        "batch_norm_eval": ([r((5, 3)), pos(3), r(3)],
                            lambda x, g, b: ad.batch_norm(x, g, b, bn_run(), training=False)),
        "layer_norm": ([r((2, 3, 5)), pos(5), r(5)], ad.layer_norm),
        "conv2d_transpose": ([r((1, 2, 3, 2)), r((4, 4, 2, 2))],
                             lambda x, k: ad.conv2d_transpose(x, k, 2)),
        "dropout_train": ([r((4, 6))],
                          lambda a: ad.dropout(a, 0.29, True, np.random.default_rng(5))),
        "attention": ([r((2, 4, 3)), r((2, 4, 3)), r((2, 4, 2))],
                      lambda q, k, v: ad.scaled_dot_product_attention(q, k, v)[0]),
        "tensor_mean_sum": ([r((3, 4))], lambda a: a.mean(axis=0) + a.sum(axis=0)),
    }
    return cases


TINY_CONFIG = dict(seq_len=8, n_channels=4, generator_grid=(2, 1), generator_channels=(3, 2), embed_dim=8,
                   num_heads=2, head_size=4, ff_dim=8, noise_dim=6, window_size=4, shift_size=2, num_blocks=2)


def network_cases():
    """Gradient checks of both full networks on a tiny configuration.

    Returns ``{name: (arrays, fn, params)}``. Training mode is used so batch
    normalization and dropout are on the path; dropout draws from a freshly
    seeded generator on every call, so the mask is fixed.
    """
    rng = np.random.default_rng(99)
    cases = {}
    for g_variant in ("transformer", "conv_only"):
        for d_variant in ("shifted_window", "plain_transformer"):
            cfg = ModelConfig(**TINY_CONFIG, generator_variant=g_variant, discriminator_variant=d_variant)
            gen, disc = build_models(cfg, 3)
            if d_variant == "shifted_window":
                cases[f"discriminator_{d_variant}"] = (
                    [rng.uniform(-1, 1, (2, 8, 4))],
                    lambda x, d=disc: d(x, training=True, rng=np.random.default_rng(7)),
                    disc.parameters(),
                )
            if d_variant == "plain_transformer" and g_variant == "transformer":
                cases["discriminator_plain_transformer"] = (
                    [rng.uniform(-1, 1, (2, 8, 4))],
                    lambda x, d=disc: d(x, training=False),
                    disc.parameters(),
                )
            if d_variant == "shifted_window":
                cases[f"generator_{g_variant}"] = (
                    [rng.standard_normal((2, 6))],
                    lambda z, g=gen: g(z, training=True, rng=np.random.default_rng(7)),
                    gen.parameters(),
                )
    return cases


def run_all():
    """``{case name: max relative error}`` for every primitive and network case."""
    errors = {}
    for name, (arrays, fn) in primitive_cases().items():
        errors[name] = check_gradients(fn, arrays)
    for name, (arrays, fn, params) in network_cases().items():
        errors[name] = check_gradients(fn, arrays, params=params)
    return errors
