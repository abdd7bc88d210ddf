"""Vision transformer with class and distillation tokens."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import nn
from ..autodiff import tensor as T


class Block(nn.Module):
    """Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim, heads, mlp_ratio=4.0, rng=None):
        super().__init__()
        hidden = int(round(dim * mlp_ratio))
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiHeadSelfAttention(dim, heads, rng=rng)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden, rng=rng, init_std=0.02)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim, rng=rng, init_std=0.02)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(self.act(self.fc1(self.norm2(x))))


@dataclass
class VitOutput:
    logits_cls: T.Tensor
    logits_dist: T.Tensor | None
    hidden: list = field(default_factory=list)
    attentions: list = field(default_factory=list)
    n_prefix: int = 1
    features: T.Tensor | None = None

    def logits(self, training: bool) -> T.Tensor:
        """Training: class head only. Eval: mean of both heads."""
        if training or self.logits_dist is None:
            return self.logits_cls
        return (self.logits_cls + self.logits_dist) * 0.5


class VisionTransformer(nn.Module):
    def __init__(self, image_size, patch_size, in_channels, dim, depth, heads, n_classes,
                 mlp_ratio=4.0, distill_token=True, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        dt = T.default_dtype()
        self.patch_embed = nn.PatchEmbed(image_size, patch_size, in_channels, dim, rng=rng)
        self.n_prefix = 2 if distill_token else 1
        n_tokens = self.patch_embed.n_patches + self.n_prefix
        self.cls_token = nn.Parameter((rng.standard_normal((1, 1, dim)) * 0.02).astype(dt))
        self.dist_token = (nn.Parameter((rng.standard_normal((1, 1, dim)) * 0.02).astype(dt))
                           if distill_token else None)
        self.pos_embed = nn.Parameter((rng.standard_normal((1, n_tokens, dim)) * 0.02).astype(dt))
        self.blocks = [Block(dim, heads, mlp_ratio, rng=rng) for _ in range(depth)]
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, n_classes, rng=rng, init_std=0.02)
        self.head_dist = nn.Linear(dim, n_classes, rng=rng, init_std=0.02) if distill_token else None
        self.dim = dim
        self.depth = depth

    def forward(self, img) -> VitOutput:
        x = self.patch_embed(img)
        b = x.shape[0]
        ones = np.ones((b, 1, 1), dtype=x.dtype)
        prefix = [self.cls_token * ones]
        if self.dist_token is not None:
            prefix.append(self.dist_token * ones)
        x = T.concat(prefix + [x], axis=1) + self.pos_embed
        hidden, attn = [], []
        for blk in self.blocks:
            x = blk(x)
            hidden.append(x)
            attn.append(blk.attn.attention)
        x = self.norm(x)
        logits = self.head(x[:, 0])
        logits_dist = self.head_dist(x[:, 1]) if self.head_dist is not None else None
        # normalized class (and distillation) token, the input of the heads
        features = x[:, :self.n_prefix].reshape(b, self.n_prefix * self.dim)
        return VitOutput(logits, logits_dist, hidden, attn, self.n_prefix, features)
