"""Network and training configuration with the paper and desk presets."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class FcdnConfig:
    n_channels: int = 16
    t_in: int = 250
    fs: float = 125.0
    conv_channels: tuple[int, int, int] = (4, 8, 16)
    conv_kernels: tuple[int, int, int] = (10, 10, 20)
    pool_kernel: int = 16
    image_size: int = 32
    patch_size: int = 8
    embed_dim: int = 64
    heads: int = 4
    depth: int = 4
    mlp_ratio: float = 2.0
    n_classes: int = 4
    dropout: float = 0.5
    share_conv_across_bands: bool = False
    # distillation
    use_teacher: bool = True
    teacher_width: int = 2
    alpha: float = 1.0
    beta: float = 0.5
    # training
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 200
    teacher_epochs: int | None = None
    early_stopping: bool = True
    patience: int = 20
    # front end
    filter_order: int = 30
    bands: tuple[str, ...] = ("delta", "theta", "alpha")
    use_fc: bool = True

    def __post_init__(self):
        for name in ("conv_channels", "conv_kernels", "bands"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.image_size % self.patch_size:
            raise ValueError("image size must be divisible by patch size")
        c = self.conv_channels
        if len(c) != 3 or not c[0] < c[1] < c[2]:
            raise ValueError("conv channel progression must be 3 strictly increasing widths")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.embed_dim % self.heads:
            raise ValueError("embed dim must be divisible by heads")
        if len(self.bands) != 3:
            raise ValueError("exactly three bands (delta, theta, alpha) are stacked")

    @classmethod
    def paper(cls, **overrides) -> "FcdnConfig":
        """Table-I sized network (64 ch, 1000 samples @ 250 Hz, 224 px)."""
        base = cls(
            n_channels=64, t_in=1000, fs=250.0,
            conv_channels=(40, 80, 160), conv_kernels=(20, 20, 40), pool_kernel=32,
            image_size=224, patch_size=16, embed_dim=192, heads=3, depth=12, mlp_ratio=4.0,
            lr=1e-4, epochs=200, patience=20,
        )
        return replace(base, **overrides)

    @classmethod
    def desk(cls, **overrides) -> "FcdnConfig":
        """Single-core sized network for synthetic experiments."""
        base = cls(conv_channels=(4, 8, 12), conv_kernels=(8, 8, 16), dropout=0.1, lr=3e-4,
                   epochs=20, teacher_epochs=5, patience=8)
        return replace(base, **overrides)

    @classmethod
    def preset(cls, name: str, **overrides) -> "FcdnConfig":
        if name == "paper":
            return cls.paper(**overrides)
        if name == "desk":
            return cls.desk(**overrides)
        raise ValueError(f"unknown preset {name!r}")

    @property
    def min_input_length(self) -> int:
        k1, k2, _ = self.conv_kernels
        return self.pool_kernel + (k1 - 1) + (k2 - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FcdnConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown FcdnConfig keys: {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


