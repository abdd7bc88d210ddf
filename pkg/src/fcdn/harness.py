"""Experiment orchestration: augmentation, splits, cross-validation, LOSO,
ablations, permutation testing and feature exports."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import tensor as T
from .data import EegDataset, concat_datasets, drop_channels
from .model import FcdnConfig, FcdnModel, fit_fcdn, prepare_bands

log = logging.getLogger(__name__)

STAGES = {
    "post-conv1": "bn1",
    "post-conv2": "elu2",
    "post-conv3": "elu3",
}
PRE_HEAD = "pre-head"


class HarnessError(ValueError):
    pass


# -- augmentation ------------------------------------------------------------

def augment_gaussian(ds: EegDataset, copies: int = 4, sigma_frac: float = 0.1, seed: int = 0) -> EegDataset:
    """Originals followed by ``copies`` noisy replicas of every trial.

    The noise on each channel of each trial is zero-mean Gaussian with std
    ``sigma_frac`` times that channel's std within the trial. Copy ``c`` of
    trial ``i`` sits at index ``c * n + i``.
    """
    if copies < 0:
        raise HarnessError("copies must be >= 0")
    if sigma_frac < 0:
        raise HarnessError("sigma_frac must be >= 0")
    if copies == 0:
        return ds
    rng = np.random.default_rng([seed, 7])
    x = ds.trials.astype(np.float64)
    sd = x.std(axis=2, keepdims=True)
    reps = [x]
    for _ in range(copies):
        reps.append(x + sigma_frac * sd * rng.standard_normal(x.shape))
    return replace(ds, trials=np.concatenate(reps, axis=0), labels=np.tile(ds.labels, copies + 1))


def augmentation_origin(n_trials: int, copies: int) -> np.ndarray:
    """Index of the original trial behind every row of an augmented set."""
    return np.tile(np.arange(n_trials), copies + 1)


# -- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    mode: str = "holdout"
    k: int = 5
    fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    paper_faithful_augmentation: bool = False
    copies: int = 4
    sigma_frac: float = 0.1

    def __post_init__(self):
        if self.mode not in ("holdout", "kfold", "loso"):
            raise HarnessError(f"unknown split mode {self.mode!r}")
        if self.mode == "kfold" and self.k < 3:
            raise HarnessError("k-fold needs k >= 3 (one part tests, the next validates)")
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1) > 1e-9 or min(self.fractions) < 0:
            raise HarnessError("split fractions must be three non-negative numbers summing to 1")
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))


@dataclass(frozen=True)
class Fold:
    index: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    name: str = ""


def _class_perms(labels, rng):
    labels = np.asarray(labels)
    return {c: rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)}


def make_splits(labels, plan: SplitPlan, subjects=None) -> list[Fold]:
    """Disjoint, class-stratified index sets.

    ``holdout`` returns one fold, ``kfold`` returns ``k`` folds where fold
    ``i`` tests on part ``i`` and validates on part ``i + 1``, and ``loso``
    takes a per-trial ``subjects`` array and holds out one subject per fold
    (validation drawn from the source subjects).
    """
    if isinstance(labels, EegDataset):
        labels = labels.labels
    labels = np.asarray(labels)
    rng = np.random.default_rng([plan.seed, 11])
    if plan.mode == "holdout":
        tr, va, te = [], [], []
        for c, idx in _class_perms(labels, rng).items():
            n = len(idx)
            n_tr = int(round(plan.fractions[0] * n))
            n_va = int(round(plan.fractions[1] * n))
            if n_tr < 1 or n - n_tr - n_va < 1:
                raise HarnessError(f"class {c} has too few trials ({n}) for a holdout split")
            tr.append(idx[:n_tr])
            va.append(idx[n_tr:n_tr + n_va])
            te.append(idx[n_tr + n_va:])
        return [Fold(0, *(np.sort(np.concatenate(p)) for p in (tr, va, te)), name="holdout")]
    if plan.mode == "kfold":
        k = plan.k
        part = np.empty(len(labels), dtype=np.int64)
        for c, idx in _class_perms(labels, rng).items():
            if len(idx) < k:
                raise HarnessError(f"class {c} has {len(idx)} trials, fewer than {k} folds")
            part[idx] = np.arange(len(idx)) % k
        folds = []
        for i in range(k):
            te = np.flatnonzero(part == i)
            va = np.flatnonzero(part == (i + 1) % k)
            tr = np.flatnonzero((part != i) & (part != (i + 1) % k))
            folds.append(Fold(i, tr, va, te, name=f"fold{i}"))
        return folds
    # loso
    if subjects is None:
        raise HarnessError("loso needs a per-trial subject array")
    subjects = np.asarray(subjects)
    ids = list(dict.fromkeys(subjects.tolist()))
    if len(ids) < 2:
        raise HarnessError("leave-one-subject-out needs at least 2 subjects")
    folds = []
    val_frac = plan.fractions[1] / max(plan.fractions[0] + plan.fractions[1], 1e-12)
    for i, sid in enumerate(ids):
        te = np.flatnonzero(subjects == sid)
        src = np.flatnonzero(subjects != sid)
        va = []
        for _, idx in _class_perms(labels[src], rng).items():
            va.append(src[idx[:int(round(val_frac * len(idx)))]])
        va = np.sort(np.concatenate(va)) if va else np.zeros(0, np.int64)
        tr = np.setdiff1d(src, va)
        folds.append(Fold(i, tr, va, te, name=str(sid)))
    return folds


# -- reports -----------------------------------------------------------------

@dataclass
class EvalReport:
    name: str
    fold_accuracies: list
    confusion: np.ndarray
    config_fingerprint: str = ""
    fold_errors: dict = field(default_factory=dict)
    ablation: dict | None = None
    p_value: float | None = None
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        acc = [a for a in self.fold_accuracies if a is not None]
        return float(np.mean(acc)) if acc else float("nan")

    @property
    def std(self) -> float:
        acc = [a for a in self.fold_accuracies if a is not None]
        return float(np.std(acc)) if acc else float("nan")

    @property
    def per_class_accuracy(self) -> list:
        c = np.asarray(self.confusion, dtype=np.float64)
        tot = c.sum(axis=1)
        return [float(c[i, i] / tot[i]) if tot[i] else float("nan") for i in range(len(c))]

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = {
            "name": self.name,
            "mean": self.mean,
            "std": self.std,
            "fold_accuracies": [None if a is None else float(a) for a in self.fold_accuracies],
            "confusion": np.asarray(self.confusion).astype(int).tolist(),
            "per_class_accuracy": self.per_class_accuracy,
            "config_fingerprint": self.config_fingerprint,
            "fold_errors": self.fold_errors,
            "ablation": self.ablation,
            "p_value": self.p_value,
            "extra": self.extra,
        }
        if include_runtime:
            d["runtime_s"] = self.runtime_s
        return d


def write_report_json(reports, path, include_runtime: bool = False) -> None:
    reports = reports if isinstance(reports, (list, tuple)) else [reports]
    payload = [r.to_dict(include_runtime) for r in reports]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_report_csv(reports, path) -> None:
    """Per-subject accuracy table: subject, mean, std, then one column per fold."""
    reports = reports if isinstance(reports, (list, tuple)) else [reports]
    n_folds = max((len(r.fold_accuracies) for r in reports), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "mean", "std"] + [f"fold{i}" for i in range(n_folds)])
        for r in reports:
            folds = ["" if a is None else f"{a:.4f}" for a in r.fold_accuracies]
            w.writerow([r.name, f"{r.mean:.4f}", f"{r.std:.4f}"] + folds)
        if len(reports) > 1:
            means = [r.mean for r in reports]
            w.writerow(["average", f"{np.mean(means):.4f}", f"{np.std(means):.4f}"] + [""] * n_folds)


# -- fitting -----------------------------------------------------------------

def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("FCDN_THREADS", "1")))
    except ValueError:
        return 1


def _confusion(y_true, y_pred, n_classes):
    c = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(c, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return c


def _run_fold(ds: EegDataset, fold: Fold, plan: SplitPlan, cfg: FcdnConfig, seed: int,
              augmented_source: bool):
    """Train on fold.train (augmenting it unless the source already is),
    return (accuracy, confusion, model)."""
    train = ds.subset(fold.train)
    if not augmented_source and plan.copies:
        train = augment_gaussian(train, plan.copies, plan.sigma_frac, seed=seed + 101 * fold.index)
    val = ds.subset(fold.val) if len(fold.val) else None
    test = ds.subset(fold.test)
    model, hist = fit_fcdn(train, val, cfg, seed=seed + fold.index)
    pred = model.predict(prepare_bands(test, cfg))
    acc = float((pred == test.labels).mean())
    return acc, _confusion(test.labels, pred, cfg.n_classes), model


def _fold_job(args):
    ds, fold, plan, cfg, seed, augmented = args
    try:
        acc, conf, _ = _run_fold(ds, fold, plan, cfg, seed, augmented)
        return fold.index, acc, conf, None
    except Exception as exc:  # reported per fold, the run continues
        log.warning("fold %s failed: %s", fold.name, exc)
        return fold.index, None, None, f"{type(exc).__name__}: {exc}"


def _config_for(ds: EegDataset, cfg: FcdnConfig) -> FcdnConfig:
    if cfg.n_channels != ds.n_channels or cfg.fs != ds.fs or cfg.n_classes != ds.n_classes:
        cfg = replace(cfg, n_channels=ds.n_channels, fs=float(ds.fs), n_classes=ds.n_classes,
                      t_in=ds.n_samples)
    return cfg


def _fingerprint(cfg: FcdnConfig, plan: SplitPlan, seed: int) -> str:
    key = json.dumps({"cfg": cfg.to_dict(), "plan": asdict(plan), "seed": seed}, sort_keys=True)
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def _run_folds(ds, folds, plan, cfg, seed, augmented, name) -> EvalReport:
    t0 = time.perf_counter()
    jobs = [(ds, f, plan, cfg, seed, augmented) for f in folds]
    workers = min(_n_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_fold_job, jobs))
    else:
        results = [_fold_job(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    conf = np.zeros((cfg.n_classes, cfg.n_classes), dtype=np.int64)
    accs, errors = [], {}
    for idx, acc, c, err in results:
        accs.append(acc)
        if err is not None:
            errors[folds[idx].name] = err
        else:
            conf += c
    return EvalReport(name, accs, conf, _fingerprint(cfg, plan, seed), errors,
                      runtime_s=time.perf_counter() - t0)


def run_cv(ds: EegDataset, plan: SplitPlan, cfg: FcdnConfig, seed: int = 0) -> EvalReport:
    """Holdout or stratified k-fold evaluation of one subject's data."""
    if plan.mode == "loso":
        raise HarnessError("use run_loso for leave-one-subject-out")
    cfg = _config_for(ds, cfg)
    augmented = False
    if plan.paper_faithful_augmentation and plan.copies:
        warnings.warn("augmenting before splitting puts noisy copies of test trials in training; "
                      "scores will be optimistic", stacklevel=2)
        ds = augment_gaussian(ds, plan.copies, plan.sigma_frac, seed=seed)
        augmented = True
    folds = make_splits(ds.labels, plan)
    return _run_folds(ds, folds, plan, cfg, seed, augmented, ds.subject_id)


def run_loso(subjects, cfg: FcdnConfig, seed: int = 0, plan: SplitPlan | None = None) -> list[EvalReport]:
    """One report per target subject, trained only on the other subjects.

    Channel weights, normalization statistics and early stopping all come
    from source-subject trials.
    """
    subjects = list(subjects)
    if len(subjects) < 2:
        raise HarnessError("leave-one-subject-out needs at least 2 subjects")
    plan = plan or SplitPlan(mode="loso", seed=seed)
    plan = replace(plan, mode="loso", paper_faithful_augmentation=False)
    pooled = concat_datasets(subjects, subject_id="pooled")
    sid = np.concatenate([np.full(s.n_trials, i) for i, s in enumerate(subjects)])
    cfg = _config_for(pooled, cfg)
    folds = make_splits(pooled.labels, plan, subjects=sid)
    reports = []
    for fold, subj in zip(folds, subjects):
        rep = _run_folds(pooled, [replace(fold, index=0)], plan, cfg, seed + 1000 * fold.index, False,
                         subj.subject_id)
        rep.name = subj.subject_id
        reports.append(rep)
    return reports


# -- ablation & statistics ---------------------------------------------------

def paired_permutation_test(acc_a, acc_b, n_perm: int = 10000, seed: int = 0, exact: bool | None = None) -> float:
    """Two-sided sign-flip test on the mean paired difference.

    With ``exact`` (the default whenever 2^n <= n_perm) every sign pattern
    is enumerated; otherwise ``n_perm - 1`` random patterns plus the
    identity are used. Ties with the observed statistic count as extreme.
    """
    a = np.asarray(acc_a, dtype=np.float64)
    b = np.asarray(acc_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise HarnessError("paired samples must be 1-D and of equal length")
    n = a.size
    if n < 2:
        raise HarnessError("need at least 2 pairs")
    if n_perm < 1:
        raise HarnessError("n_perm must be >= 1")
    d = a - b
    obs = abs(d.mean())
    if exact is None:
        exact = 2 ** n <= n_perm
    if exact:
        if n > 24:
            raise HarnessError("exact enumeration limited to 24 pairs")
        bits = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
        signs = 1 - 2 * bits
    else:
        rng = np.random.default_rng(seed)
        signs = rng.choice(np.array([-1, 1]), size=(n_perm, n))
        signs[0] = 1
    stats = np.abs((signs * d).mean(axis=1))
    tol = 1e-12 * max(1.0, obs)
    return float(np.count_nonzero(stats >= obs - tol) / len(stats))


ABLATIONS = ("no-fc", "no-occipital")


def run_ablation(data, cfg: FcdnConfig, mode: str, seed: int = 0, plan: SplitPlan | None = None,
                 n_perm: int = 10000) -> EvalReport:
    """Paired full vs ablated evaluation on identical splits.

    ``data`` is one dataset or a list of per-subject datasets (each
    evaluated separately; pairs are formed per fold and subject).
    """
    if mode not in ABLATIONS:
        raise HarnessError(f"unknown ablation {mode!r}; choose from {ABLATIONS}")
    plan = plan or SplitPlan(seed=seed)
    subjects = data if isinstance(data, (list, tuple)) else [data]
    full_acc, abl_acc = [], []
    conf = None
    t0 = time.perf_counter()
    errors = {}
    for s in subjects:
        full = run_cv(s, plan, cfg, seed)
        if mode == "no-fc":
            abl = run_cv(s, plan, replace(cfg, use_fc=False), seed)
        else:
            abl = run_cv(drop_channels(s, "occipital"), plan, cfg, seed)
        full_acc += full.fold_accuracies
        abl_acc += abl.fold_accuracies
        conf = full.confusion if conf is None else conf + full.confusion
        errors.update({f"{s.subject_id}:full:{k}": v for k, v in full.fold_errors.items()})
        errors.update({f"{s.subject_id}:ablated:{k}": v for k, v in abl.fold_errors.items()})
    pairs = [(f, a) for f, a in zip(full_acc, abl_acc) if f is not None and a is not None]
    fa = [p[0] for p in pairs]
    aa = [p[1] for p in pairs]
    p = paired_permutation_test(fa, aa, n_perm, seed) if len(pairs) >= 2 else None
    ablation = {
        "mode": mode,
        "full": fa,
        "ablated": aa,
        "full_mean": float(np.mean(fa)) if fa else None,
        "ablated_mean": float(np.mean(aa)) if aa else None,
        "delta": float(np.mean(fa) - np.mean(aa)) if pairs else None,
    }
    name = subjects[0].subject_id if len(subjects) == 1 else "pooled"
    return EvalReport(name, fa, conf, _fingerprint(cfg, plan, seed), errors, ablation, p,
                      runtime_s=time.perf_counter() - t0)


# -- feature export ----------------------------------------------------------

def _sketch(values: np.ndarray, dim: int, seed: int) -> np.ndarray:
    """Signed feature hashing: a fixed sparse random projection to ``dim``."""
    n, d = values.shape
    rng = np.random.default_rng([seed, d])
    bucket = rng.integers(0, dim, size=d)
    sign = rng.choice(np.array([-1.0, 1.0]), size=d)
    out = np.zeros((n, dim))
    for i in range(n):
        out[i] = np.bincount(bucket, weights=values[i] * sign, minlength=dim)
    return out


def stage_activations(model: FcdnModel, bands: np.ndarray, stage: str, batch_size: int = 32):
    """(N, D) activations at ``stage`` (bands concatenated) and the
    (N, 3, C, K) conv-block outputs used for channel topographies."""
    if stage not in STAGES and stage != PRE_HEAD:
        raise HarnessError(f"unknown stage {stage!r}; choose from {list(STAGES) + [PRE_HEAD]}")
    net = model.student
    net.eval()
    w = model.weight_matrix()
    rows, topo = [], []
    with T.no_grad():
        for s in range(0, len(bands), batch_size):
            acts = {}
            out, _ = net(bands[s:s + batch_size], w, acts)
            if stage == PRE_HEAD:
                rows.append(out.features.data.reshape(out.features.shape[0], -1))
            else:
                layer = STAGES[stage]
                rows.append(np.concatenate(
                    [acts[f"band{b}.{layer}"].data.reshape(acts[f"band{b}.{layer}"].shape[0], -1)
                     for b in range(3)], axis=1))
            topo.append(np.stack([acts[f"band{b}.drop2"].data[..., 0] for b in range(3)], axis=1))
    return np.concatenate(rows).astype(np.float64), np.concatenate(topo)


def export_features(model: FcdnModel, ds: EegDataset, stage: str, path, max_dim: int = 512,
                    seed: int = 0, topography_path=None) -> dict:
    """One CSV row per trial: label then the flattened activation.

    Rows wider than ``max_dim`` are reduced with a fixed seeded signed
    hashing projection, noted in the header. With ``topography_path`` the
    per-channel mean absolute conv-block output is written as
    ``channel,value`` rows.
    """
    if not model.fitted:
        raise HarnessError("model is not fitted")
    bands = prepare_bands(ds, model.cfg)
    feats, topo = stage_activations(model, bands, stage)
    dim = feats.shape[1]
    projected = dim > max_dim
    if projected:
        feats = _sketch(feats, max_dim, seed)
    with open(path, "w", newline="") as fh:
        fh.write(f"# stage={stage} dim={dim}"
                 + (f" projection=signed-hash to {max_dim} seed={seed}" if projected else "") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{i}" for i in range(feats.shape[1])])
        for lab, row in zip(ds.labels, feats):
            w.writerow([int(lab)] + [f"{v:.6g}" for v in row])
    info = {"rows": int(len(feats)), "dim": int(dim), "projected": bool(projected)}
    if topography_path is not None:
        per_channel = np.abs(topo).mean(axis=(0, 1, 2))
        with open(topography_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "value"])
            for ch, v in zip(ds.montage.channel_names, per_channel):
                w.writerow([ch, f"{v:.6g}"])
        info["topography_rows"] = int(len(per_channel))
    return info


def export_strengths(model: FcdnModel, path, channel_names) -> None:
    """Per-band channel weights as ``channel,<band>...`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel"] + list(model.cfg.bands))
        for i, ch in enumerate(channel_names):
            w.writerow([ch] + [f"{cw.w[i]:.6g}" for cw in model.weights])
