"""Training loop: channel weights from the training split, a wider teacher,
then the distilled student with early stopping on validation accuracy."""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.optim import AdamState, adam_step
from ..connectivity import weights_from_phases
from ..data import EegDataset, band_by_name
from ..dsp import analytic_phase
from .config import FcdnConfig
from .distill import distillation_loss
from .network import FcdnModel, FcdnNetwork, band_datasets, prepare_bands, uniform_weights

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    teacher_loss: list = field(default_factory=list)
    teacher_acc: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {k: (list(map(float, v)) if isinstance(v, list) else v) for k, v in vars(self).items()}


def data_hash(ds: EegDataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.trials).tobytes())
    h.update(np.ascontiguousarray(ds.labels).tobytes())
    h.update(repr((ds.fs, ds.montage.channel_names)).encode())
    return h.hexdigest()[:16]


def preprocessing_hash(cfg: FcdnConfig, fs: float, channel_names) -> str:
    """Identifies the front end a model expects its inputs to come from."""
    key = repr((float(fs), tuple(channel_names), cfg.filter_order, tuple(cfg.bands)))
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def fit_channel_weights(ds: EegDataset, bands_arr: np.ndarray, cfg: FcdnConfig):
    """Per-band normalized PLV strength from (banded) training trials."""
    out = []
    for name, bds in zip(cfg.bands, band_datasets(ds, bands_arr, cfg)):
        ph = analytic_phase(bds, band_by_name(name), order=cfg.filter_order)
        out.append(weights_from_phases(ph))
    return out


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


def _snapshot(net: FcdnNetwork):
    return ({k: p.data.copy() for k, p in net.named_parameters().items()},
            {k: v.copy() for k, v in net.named_buffers().items()})


def _restore(net: FcdnNetwork, snap) -> None:
    params, buffers = snap
    for k, p in net.named_parameters().items():
        p.data = params[k].copy()
    net.load_buffers(buffers)


def _accuracy(net: FcdnNetwork, x, y, weights, batch_size=64) -> float:
    if len(y) == 0:
        return float("nan")
    net.eval()
    hits = 0
    with T.no_grad():
        for s in range(0, len(y), batch_size):
            out, _ = net(x[s:s + batch_size], weights)
            hits += int((np.argmax(out.logits(training=False).data, axis=1) == y[s:s + batch_size]).sum())
    return hits / len(y)


def _check_finite(loss, epoch, step, what):
    v = float(loss.data)
    if not np.isfinite(v):
        raise TrainingError(f"non-finite {what} loss at epoch {epoch}, step {step}")
    return v


def _train_teacher(model: FcdnModel, x, y, weights, cfg: FcdnConfig, seed: int, hist: History):
    net = model.teacher
    params = net.named_parameters()
    opt = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([seed, 1])
    epochs = cfg.teacher_epochs if cfg.teacher_epochs is not None else cfg.epochs
    for epoch in range(epochs):
        net.train()
        losses, hits = [], 0
        for step, idx in enumerate(_batches(len(y), cfg.batch_size, rng)):
            if len(idx) < 2:
                continue
            out, _ = net(x[idx], weights)
            loss = T.cross_entropy(out.logits_cls, y[idx])
            losses.append(_check_finite(loss, epoch, step, "teacher"))
            hits += int((np.argmax(out.logits_cls.data, axis=1) == y[idx]).sum())
            net.zero_grad()
            loss.backward()
            adam_step(params, {k: p.grad for k, p in params.items()}, opt)
        hist.teacher_loss.append(float(np.mean(losses)) if losses else float("nan"))
        hist.teacher_acc.append(hits / len(y))
    net.eval()


def fit_fcdn(train: EegDataset, val: EegDataset | None, cfg: FcdnConfig, seed: int = 0,
             train_bands: np.ndarray | None = None, val_bands: np.ndarray | None = None,
             weights=None, verbose: bool = False):
    """Fit channel weights, teacher and student. Returns ``(model, history)``.

    ``train_bands``/``val_bands`` (N, 3, K, T) skip the band-pass when the
    caller already has them. ``weights`` overrides the learned channel
    weights (for example all-ones to disable the connectivity layer).
    """
    t0 = time.perf_counter()
    y = np.asarray(train.labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise TrainingError("training labels contain fewer than 2 classes")
    if train.n_channels != cfg.n_channels:
        raise TrainingError(f"config expects {cfg.n_channels} channels, data has {train.n_channels}")
    if y.max() >= cfg.n_classes:
        raise TrainingError(f"label {y.max()} outside the {cfg.n_classes} configured classes")
    xb = prepare_bands(train, cfg) if train_bands is None else np.asarray(train_bands, np.float32)
    if val is not None and val.n_trials:
        xv = prepare_bands(val, cfg) if val_bands is None else np.asarray(val_bands, np.float32)
        yv = np.asarray(val.labels, dtype=np.int64)
    else:
        xv, yv = None, None

    model = FcdnModel.create(cfg, seed)
    if weights is not None:
        model.set_weights(weights)
    elif cfg.use_fc:
        model.set_weights(fit_channel_weights(train, xb, cfg))
    else:
        model.set_weights(uniform_weights(cfg))
    w = model.weight_matrix()
    hist = History()

    if model.teacher is not None:
        _train_teacher(model, xb, y, w, cfg, seed, hist)

    net = model.student
    params = net.named_parameters("student.")
    if model.projector is not None:
        params.update(model.projector.named_parameters("projector."))
    opt = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([seed, 2])
    best, best_acc, stale = None, -1.0, 0
    for epoch in range(cfg.epochs):
        net.train()
        losses, hits = [], 0
        for step, idx in enumerate(_batches(len(y), cfg.batch_size, rng)):
            if len(idx) < 2:
                continue
            out, _ = net(xb[idx], w)
            if model.teacher is not None:
                with T.no_grad():
                    tout, _ = model.teacher(xb[idx], w)
                d = distillation_loss(out, tout, y[idx], model.projector, cfg.alpha, cfg.beta)
                # hard-label distillation on the distillation head
                loss = d.l_distill + T.cross_entropy(out.logits_dist, np.argmax(tout.logits_cls.data, axis=1))
            else:
                loss = T.cross_entropy(out.logits_cls, y[idx]) + T.cross_entropy(out.logits_dist, y[idx])
            losses.append(_check_finite(loss, epoch, step, "student"))
            hits += int((np.argmax(out.logits(training=False).data, axis=1) == y[idx]).sum())
            for p in params.values():
                p.grad = None
            loss.backward()
            adam_step(params, {k: p.grad for k, p in params.items()}, opt)
        hist.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        hist.train_acc.append(hits / len(y))
        acc = _accuracy(net, xv, yv, w) if xv is not None else hist.train_acc[-1]
        hist.val_acc.append(acc)
        if verbose:
            log.info("epoch %d loss %.4f train %.3f val %.3f", epoch, hist.train_loss[-1], hist.train_acc[-1], acc)
        if acc > best_acc:
            best_acc, best, stale = acc, _snapshot(net), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if cfg.early_stopping and stale >= cfg.patience:
                hist.stopped_early = True
                break
    if best is not None:
        _restore(net, best)
    net.eval()
    hist.seconds = time.perf_counter() - t0
    model.metadata = {
        "seed": int(seed),
        "epochs_run": len(hist.train_loss),
        "best_epoch": hist.best_epoch,
        "best_val_acc": float(best_acc),
        "train_hash": data_hash(train),
        "preprocessing_hash": preprocessing_hash(cfg, train.fs, train.montage.channel_names),
        "fs": float(train.fs),
        "channel_names": list(train.montage.channel_names),
        "class_names": list(train.class_names),
        "n_samples": int(train.n_samples),
        # wall time stays on the returned History so checkpoints are reproducible
        "history": {k: v for k, v in hist.to_dict().items() if k != "seconds"},
    }
    return model, hist
