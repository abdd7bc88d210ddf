"""Finite-difference checks for every differentiable layer type, run in
64-bit precision with dropout masks frozen."""
from __future__ import annotations

from functools import partial

import numpy as np

from .autodiff import grad_check as _grad_check
from .autodiff import nn, precision
from .autodiff import tensor as T
from .autodiff.tensor import Tensor
from .model.config import FcdnConfig
from .model.deit import VisionTransformer
from .model.distill import Projector, distillation_loss
from .model.image import bicubic_resize, normalize_and_stack


# float64 central differences; smaller steps amplify round-off on
# entries whose true gradient is zero (e.g. the attention key bias)
grad_check = partial(_grad_check, eps=1e-4)


def _leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _params(module, *extra):
    d = dict(module.named_parameters())
    for i, t in enumerate(extra):
        d[f"input{i}"] = t
    return d


def _check_conv(rng):
    conv = nn.Conv2d(2, 3, (1, 4), rng=rng)
    conv_same = nn.Conv2d(3, 2, (1, 5), padding="same", rng=rng)
    x = _leaf(rng, 2, 2, 3, 12)
    return grad_check(lambda: (conv_same(conv(x)) ** 2).sum(), _params(conv, x) | _params(conv_same))


def _check_bn(rng):
    bn = nn.BatchNorm2d(3)
    bn.gamma.data = rng.uniform(0.5, 1.5, 3)
    x = _leaf(rng, 4, 3, 2, 5)
    w = rng.standard_normal((4, 3, 2, 5))
    return grad_check(lambda: (bn(x) * w).sum(), _params(bn, x))


def _check_elu(rng):
    x = _leaf(rng, 3, 7)
    return grad_check(lambda: (T.elu(x) ** 2).sum(), [x])


def _check_pools(rng):
    x = _leaf(rng, 2, 2, 3, 17)
    pool, ada = nn.AvgPoolTime(4), nn.AdaptiveAvgPoolTime(1)
    w = rng.standard_normal((2, 2, 3, 1))
    return grad_check(lambda: (ada(T.elu(pool(x))) * w).sum(), [x])


def _check_dropout(rng):
    stream = nn.DropoutStream(3)
    stream.frozen = True
    drop = nn.Dropout(0.5, stream)
    x = _leaf(rng, 4, 6)
    return grad_check(lambda: (drop(x) ** 2).sum(), [x])


def _check_linear(rng):
    lin = nn.Linear(5, 3, rng=rng)
    lin.bias.data = rng.standard_normal(3)
    x = _leaf(rng, 4, 5)
    return grad_check(lambda: (T.tanh(lin(x)) ** 2).sum(), _params(lin, x))


def _check_layer_norm(rng):
    ln = nn.LayerNorm(6)
    ln.gamma.data = rng.uniform(0.5, 1.5, 6)
    ln.beta.data = rng.standard_normal(6)
    x = _leaf(rng, 3, 6)
    w = rng.standard_normal((3, 6))
    return grad_check(lambda: (ln(x) * w).sum(), _params(ln, x))


def _check_attention(rng):
    attn = nn.MultiHeadSelfAttention(8, 2, rng=rng)
    for p in attn.parameters():
        p.data = rng.standard_normal(p.data.shape) * 0.3
    x = _leaf(rng, 2, 5, 8)
    w = rng.standard_normal((2, 5, 8))
    return grad_check(lambda: (attn(x) * w).sum(), _params(attn, x))


def _check_patch_embed(rng):
    pe = nn.PatchEmbed(8, 4, 3, 5, rng=rng)
    x = _leaf(rng, 2, 3, 8, 8)
    w = rng.standard_normal((2, 4, 5))
    return grad_check(lambda: (pe(x) * w).sum(), _params(pe, x))


def _check_softmax_ce(rng):
    z = _leaf(rng, 5, 4, scale=2.0)
    y = rng.integers(0, 4, 5)
    return grad_check(lambda: T.cross_entropy(z, y), [z])


def _check_gelu(rng):
    x = _leaf(rng, 3, 7)
    return grad_check(lambda: (T.gelu(x) ** 2).sum(), [x])


def _check_bicubic(rng):
    x = _leaf(rng, 2, 5, 6)
    w = rng.standard_normal((2, 9, 7))
    return grad_check(lambda: (bicubic_resize(x, (9, 7)) * w).sum(), [x])


def _check_normalize(rng):
    maps = [_leaf(rng, 2, 4, 4) for _ in range(3)]
    w = rng.standard_normal((2, 3, 4, 4))
    return grad_check(lambda: (normalize_and_stack(maps)[0] * w).sum() / 255.0, maps)


def _check_distillation(rng):
    student = VisionTransformer(8, 4, 3, 8, 2, 2, 3, mlp_ratio=2.0, seed=1)
    teacher = VisionTransformer(8, 4, 3, 16, 2, 2, 3, mlp_ratio=2.0, distill_token=False, seed=2)
    proj = Projector(16, 8, 2, seed=3)
    img = rng.standard_normal((3, 3, 8, 8))
    y = np.array([0, 2, 1])
    with T.no_grad():
        tout = teacher(img)
    params = dict(student.named_parameters("student."))
    params.update(proj.named_parameters("proj."))

    def loss():
        return distillation_loss(student(img), tout, y, proj, alpha=1.0, beta=0.5).l_distill

    return grad_check(loss, params, n_samples=4)


CHECKS = {
    "conv": _check_conv,
    "batch_norm": _check_bn,
    "elu": _check_elu,
    "gelu": _check_gelu,
    "pools": _check_pools,
    "dropout_frozen": _check_dropout,
    "linear": _check_linear,
    "layer_norm": _check_layer_norm,
    "attention": _check_attention,
    "patch_embed": _check_patch_embed,
    "softmax_ce": _check_softmax_ce,
    "bicubic": _check_bicubic,
    "normalize_stack": _check_normalize,
    "distillation": _check_distillation,
}


def run_all(seed: int = 0) -> dict:
    """Max relative error per layer type."""
    out = {}
    with precision(np.float64):
        for name, fn in CHECKS.items():
            rng = np.random.default_rng([seed, len(name)])
            out[name] = float(fn(rng))
    return out


def run_model_check(cfg: FcdnConfig | None = None, seed: int = 0) -> float:
    """End-to-end check through a tiny network built from ``cfg``."""
    from .model.network import FcdnNetwork

    cfg = cfg or FcdnConfig.desk(conv_channels=(2, 3, 4), depth=1, embed_dim=8, heads=2, image_size=16,
                                 patch_size=8, n_channels=4)
    with precision(np.float64):
        net = FcdnNetwork(cfg, seed)
        net.stream.frozen = True
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 3, cfg.n_channels, cfg.min_input_length + 8))
        w = rng.uniform(0.2, 1.0, (3, cfg.n_channels))
        y = np.array([0, 1, 2]) % cfg.n_classes

        def loss():
            out, _ = net(x, w)
            return T.cross_entropy(out.logits_cls, y) + T.cross_entropy(out.logits_dist, y)

        return float(grad_check(loss, dict(net.named_parameters()), n_samples=3))
