"""Conv blocks, the band-stacked image pipeline and the model container."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import nn
from ..autodiff import tensor as T
from ..connectivity import ChannelWeights
from ..data import EegDataset, band_by_name
from ..dsp import band_split
from .config import FcdnConfig
from .deit import VisionTransformer, VitOutput
from .distill import Projector
from .image import bicubic_resize, normalize_and_stack

# layer names whose outputs are exported as conv features
FEATURE_LAYERS = ("bn1", "elu2", "elu3")


class ModelError(ValueError):
    pass


def build_conv_block(cfg: FcdnConfig, seed: int = 0, stream: nn.DropoutStream | None = None) -> nn.Sequential:
    """conv(linear)+BN -> conv+BN+ELU -> conv(same)+BN+ELU -> avgpool+drop+ELU
    -> adaptive pool to one time bin + drop."""
    rng = np.random.default_rng(seed)
    stream = stream or nn.DropoutStream(seed)
    c1, c2, c3 = cfg.conv_channels
    k1, k2, k3 = cfg.conv_kernels
    return nn.Sequential([
        ("conv1", nn.Conv2d(1, c1, (1, k1), rng=rng)),
        ("bn1", nn.BatchNorm2d(c1)),
        ("conv2", nn.Conv2d(c1, c2, (1, k2), rng=rng)),
        ("bn2", nn.BatchNorm2d(c2)),
        ("elu2", nn.ELU()),
        ("conv3", nn.Conv2d(c2, c3, (1, k3), padding="same", rng=rng)),
        ("bn3", nn.BatchNorm2d(c3)),
        ("elu3", nn.ELU()),
        ("pool1", nn.AvgPoolTime(cfg.pool_kernel)),
        ("drop1", nn.Dropout(cfg.dropout, stream)),
        ("elu4", nn.ELU()),
        ("pool2", nn.AdaptiveAvgPoolTime(1)),
        ("drop2", nn.Dropout(cfg.dropout, stream)),
    ])


def conv_block_forward(x, block: nn.Sequential, min_length: int | None = None, activations=None):
    """(B, 1, K, T) -> (B, C_out, K, 1)."""
    x = T.as_tensor(x)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ModelError(f"conv block expects (B, 1, K, T), got {x.shape}")
    if min_length is None:
        k1 = block.layers[0].kernel
        k2 = block.layers[2].kernel
        min_length = block.layers[block.names.index("pool1")].kernel + k1 + k2 - 2
    if x.shape[-1] < min_length:
        raise ModelError(f"input of {x.shape[-1]} samples is shorter than the receptive length {min_length}")
    return block(x, activations)


def standardize_pixels(img):
    """Map the 0-255 image range to [-1, 1] before patch embedding."""
    return (img * (1.0 / 255.0) - 0.5) * 2.0


class FcdnNetwork(nn.Module):
    """Per-band conv blocks feeding a band-stacked image transformer."""

    def __init__(self, cfg: FcdnConfig, seed: int = 0, embed_dim: int | None = None,
                 distill_token: bool = True):
        super().__init__()
        self.cfg = cfg
        self.stream = nn.DropoutStream(seed)
        n_blocks = 1 if cfg.share_conv_across_bands else 3
        self.conv_blocks = [build_conv_block(cfg, seed * 7 + i + 1, self.stream) for i in range(n_blocks)]
        dim = embed_dim or cfg.embed_dim
        self.vit = VisionTransformer(cfg.image_size, cfg.patch_size, 3, dim, cfg.depth, cfg.heads,
                                     cfg.n_classes, cfg.mlp_ratio, distill_token, seed=seed * 7 + 5)

    def block(self, b: int) -> nn.Sequential:
        return self.conv_blocks[0 if len(self.conv_blocks) == 1 else b]

    def forward(self, bands, weights, activations=None) -> tuple[VitOutput, np.ndarray]:
        bands = np.asarray(bands)
        if bands.ndim != 4 or bands.shape[1] != 3:
            raise ModelError(f"expected (B, 3, K, T) band tensor, got {bands.shape}")
        weights = np.asarray(weights, dtype=bands.dtype)
        if weights.shape != (3, bands.shape[2]):
            raise ModelError(f"weights shape {weights.shape} does not match {bands.shape[2]} channels")
        size = self.cfg.image_size
        maps = []
        for b in range(3):
            x = bands[:, b:b + 1] * weights[b][None, None, :, None]
            acts = {} if activations is not None else None
            y = conv_block_forward(x, self.block(b), self.cfg.min_input_length, acts)
            if activations is not None:
                for k, v in acts.items():
                    activations[f"band{b}.{k}"] = v
            y = y.reshape(y.shape[0], y.shape[1], y.shape[2])
            maps.append(bicubic_resize(y, (size, size)))
        img, degenerate = normalize_and_stack(maps)
        if activations is not None:
            activations["image"] = img
        return self.vit(standardize_pixels(img)), degenerate


def _as_band_batch(trial_bands) -> np.ndarray:
    if isinstance(trial_bands, (list, tuple)):
        if len(trial_bands) != 3:
            raise ModelError(f"expected 3 bands (delta, theta, alpha), got {len(trial_bands)}")
        arrs = [np.asarray(t) for t in trial_bands]
        arrs = [a.reshape(a.shape[-2:]) if a.ndim == 3 and a.shape[0] == 1 else a for a in arrs]
        x = np.stack(arrs, axis=-3)
    else:
        x = np.asarray(trial_bands)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != 3:
        raise ModelError(f"expected 3 bands per trial, got shape {x.shape}")
    return np.ascontiguousarray(x, dtype=T.default_dtype())


@dataclass
class FcdnModel:
    cfg: FcdnConfig
    student: FcdnNetwork
    weights: list | None = None
    teacher: FcdnNetwork | None = None
    projector: Projector | None = None
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: FcdnConfig, seed: int = 0, with_teacher: bool | None = None) -> "FcdnModel":
        with_teacher = cfg.use_teacher if with_teacher is None else with_teacher
        student = FcdnNetwork(cfg, seed)
        teacher = projector = None
        if with_teacher:
            tdim = cfg.embed_dim * cfg.teacher_width
            teacher = FcdnNetwork(cfg, seed + 1000, embed_dim=tdim, distill_token=False)
            projector = Projector(tdim, cfg.embed_dim, cfg.depth, seed=seed + 2000)
        return cls(cfg, student, None, teacher, projector, seed)

    @property
    def fitted(self) -> bool:
        return self.weights is not None

    def weight_matrix(self) -> np.ndarray:
        if self.weights is None:
            raise ModelError("channel weights are not fitted")
        return np.stack([w.w for w in self.weights]).astype(T.default_dtype())

    def set_weights(self, weights) -> None:
        weights = list(weights)
        if len(weights) != 3:
            raise ModelError("need one ChannelWeights per band")
        for w in weights:
            if w.w.size != self.cfg.n_channels:
                raise ModelError(f"{w.w.size} weights for {self.cfg.n_channels} channels")
        self.weights = weights

    def eval(self):
        self.student.eval()
        if self.teacher is not None:
            self.teacher.eval()
        return self

    def logits(self, bands, batch_size: int = 64) -> np.ndarray:
        """Eval-mode logits for a (N, 3, K, T) band array."""
        x = _as_band_batch(bands)
        self.student.eval()
        w = self.weight_matrix()
        out = []
        with T.no_grad():
            for s in range(0, x.shape[0], batch_size):
                res, _ = self.student(x[s:s + batch_size], w)
                out.append(res.logits(training=False).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.cfg.n_classes))

    def predict_proba(self, bands, batch_size: int = 64) -> np.ndarray:
        z = self.logits(bands, batch_size).astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, bands, batch_size: int = 64) -> np.ndarray:
        return np.argmax(self.logits(bands, batch_size), axis=1)


def fcdn_forward(model: FcdnModel, trial_bands, mode: str = "eval", activations=None):
    """Logits for one trial (3 x (1, K, T) or (3, K, T)) or a batch
    (B, 3, K, T). ``mode='eval'`` averages class and distillation heads."""
    if mode not in ("eval", "train"):
        raise ModelError(f"unknown mode {mode!r}")
    if not model.fitted:
        raise ModelError("model channel weights are not fitted")
    x = _as_band_batch(trial_bands)
    if x.shape[2] != model.cfg.n_channels:
        raise ModelError(f"expected {model.cfg.n_channels} channels, got {x.shape[2]}")
    net = model.student
    net.train(mode == "train")
    out, degenerate = net(x, model.weight_matrix(), activations)
    if activations is not None:
        activations["degenerate"] = degenerate
    return out.logits(training=(mode == "train"))


def prepare_bands(ds: EegDataset, cfg: FcdnConfig) -> np.ndarray:
    """Zero-phase band-pass ``ds`` into the configured bands: (N, 3, K, T)."""
    bands = [band_by_name(b) for b in cfg.bands]
    for b in bands:
        b.check_fs(ds.fs)
    split = band_split(ds, bands, cfg.filter_order)
    return np.ascontiguousarray(np.stack([s.trials for s in split], axis=1), dtype=np.float32)


def band_datasets(ds: EegDataset, bands_arr: np.ndarray, cfg: FcdnConfig) -> list[EegDataset]:
    return [ds.with_trials(bands_arr[:, i]) for i in range(bands_arr.shape[1])]


def uniform_weights(cfg: FcdnConfig) -> list[ChannelWeights]:
    return [ChannelWeights.uniform(cfg.n_channels, b) for b in cfg.bands]
