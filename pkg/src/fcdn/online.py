"""Pseudo-online replay: sliding windows over each trial, a frozen model
per window, fused trial decisions and run scoring."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import EegDataset
from .model import FcdnModel, prepare_bands
from .model.network import ModelError

CRITERIA = ("prob-average", "window-majority")
RUN_LABELS = ("Run I", "Run II", "Run III", "Run IV", "Run V", "Run VI")


class OnlineError(ValueError):
    pass


@dataclass(frozen=True)
class WindowPlan:
    window_s: float = 2.0
    overlap_frac: float = 0.5
    span: tuple = (0.0, 5.0)

    def __post_init__(self):
        if not 0 <= self.overlap_frac < 1:
            raise OnlineError("overlap must lie in [0, 1)")
        if self.window_s <= 0:
            raise OnlineError("window length must be positive")
        if self.span[1] - self.span[0] < self.window_s:
            raise OnlineError("window does not fit in the trial span")

    def n_windows(self, fs: float) -> int:
        n = int(round((self.span[1] - self.span[0]) * fs))
        return len(plan_windows(n, fs, self))


def plan_windows(n_samples: int, fs: float, plan: WindowPlan = WindowPlan()) -> list[tuple[int, int]]:
    """(start, end) sample ranges at hop = window * (1 - overlap); a final
    partial window is dropped."""
    win = int(round(plan.window_s * fs))
    hop = max(1, int(round(win * (1 - plan.overlap_frac))))
    if win < 1 or win > n_samples:
        raise OnlineError(f"window of {win} samples does not fit in {n_samples} samples")
    count = (n_samples - win) // hop + 1
    ranges = [(i * hop, i * hop + win) for i in range(count)]
    if not ranges:
        raise OnlineError("empty window plan")
    return ranges


def _softmax(z):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _argmax_flag(p):
    """Lowest index among exact maxima, plus whether there was a tie."""
    best = np.max(p)
    hits = np.flatnonzero(p == best)
    return int(hits[0]), bool(len(hits) > 1)


@dataclass
class TrialStream:
    probs: np.ndarray
    window_classes: np.ndarray
    fused: np.ndarray
    decision: int
    tie: bool
    windows: list


def window_probabilities(model: FcdnModel, window_bands: np.ndarray) -> np.ndarray:
    """Softmax of eval-mode logits for a single (3, K, W) window."""
    return _softmax(model.logits(window_bands[None], batch_size=1)[0])


def stream_trial(model: FcdnModel, trial_bands, fs: float, plan: WindowPlan = WindowPlan(),
                 raw_filter: bool = False) -> TrialStream:
    """Classify each window of one trial in order and fuse by averaging
    window probabilities.

    ``trial_bands`` is (3, K, S) band-passed data covering the plan span.
    With ``raw_filter`` it is instead a raw (K, S) trial and each window is
    band-passed on its own samples only.
    """
    x = np.asarray(trial_bands, dtype=np.float32)
    n = x.shape[-1]
    windows = plan_windows(n, fs, plan)
    win = windows[0][1] - windows[0][0]
    if win < model.cfg.min_input_length:
        raise OnlineError(f"window of {win} samples is shorter than the receptive length "
                          f"{model.cfg.min_input_length}")
    probs = []
    for s, e in windows:
        if raw_filter:
            xw = _filter_window(x[:, s:e], fs, model)
        else:
            xw = x[:, :, s:e]
        probs.append(window_probabilities(model, xw))
    probs = np.stack(probs)
    wcls = np.array([_argmax_flag(p)[0] for p in probs])
    fused = probs.mean(axis=0)
    decision, tie = _argmax_flag(fused)
    return TrialStream(probs, wcls, fused, decision, tie, windows)


def _filter_window(raw_window, fs, model):
    from .data import Montage

    k = raw_window.shape[0]
    ds = EegDataset("window", fs, Montage.from_names([f"c{i}" for i in range(k)]),
                    raw_window[None], np.zeros(1, dtype=np.int64), class_names=("x",))
    return prepare_bands(ds, model.cfg)[0]


@dataclass
class RunResult:
    run_index: int
    trial_indices: np.ndarray
    labels: np.ndarray
    decisions: np.ndarray
    window_classes: list
    probs: list
    success: np.ndarray
    criterion: str
    ties: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    success_by_criterion: dict = field(default_factory=dict)

    @property
    def n_success(self) -> int:
        return int(np.count_nonzero(self.success))

    @property
    def success_rate(self) -> float:
        return self.n_success / len(self.success) if len(self.success) else float("nan")

    def grid(self, n_classes: int) -> np.ndarray:
        """(n_classes, trials_per_class) success grid, trials in run order."""
        rows = [self.success[self.labels == c] for c in range(n_classes)]
        width = max((len(r) for r in rows), default=0)
        g = np.zeros((n_classes, width), dtype=bool)
        for c, r in enumerate(rows):
            g[c, :len(r)] = r
        return g

    def to_dict(self) -> dict:
        return {
            "run_index": self.run_index,
            "criterion": self.criterion,
            "trial_indices": self.trial_indices.tolist(),
            "labels": self.labels.tolist(),
            "decisions": self.decisions.tolist(),
            "window_classes": [np.asarray(w).tolist() for w in self.window_classes],
            "window_probs": [np.asarray(p).tolist() for p in self.probs],
            "success": self.success.astype(bool).tolist(),
            "ties": self.ties.astype(bool).tolist(),
            "success_rate": self.success_rate,
            "success_by_criterion": self.success_by_criterion,
        }


def _success(item, label, criterion, threshold, strict):
    if criterion == "prob-average":
        dec = item.decision if isinstance(item, TrialStream) else int(item)
        return dec == label
    wc = item.window_classes if isinstance(item, TrialStream) else np.asarray(item)
    frac = float(np.mean(np.asarray(wc) == label))
    return frac > threshold if strict else frac >= threshold


def score_run(decisions, labels, criterion: str = "prob-average", threshold: float = 0.75,
              strict: bool = False, run_index: int = 0, trial_indices=None) -> RunResult:
    """Success flags for one run.

    ``decisions`` holds :class:`TrialStream` objects, fused class indices
    (prob-average) or per-window class sequences (window-majority).
    """
    if criterion not in CRITERIA:
        raise OnlineError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
    decisions = list(decisions)
    labels = np.asarray(labels, dtype=np.int64)
    if len(decisions) != len(labels):
        raise OnlineError(f"{len(decisions)} decisions for {len(labels)} labels")
    success = np.array([_success(d, int(y), criterion, threshold, strict) for d, y in zip(decisions, labels)],
                       dtype=bool)
    streams = [d for d in decisions if isinstance(d, TrialStream)]
    if len(streams) == len(decisions):
        dec = np.array([d.decision for d in streams], dtype=np.int64)
        wcls = [d.window_classes for d in streams]
        probs = [d.probs for d in streams]
        ties = np.array([d.tie for d in streams], dtype=bool)
    else:
        dec = np.array([int(d) if np.isscalar(d) else _argmax_flag(np.bincount(np.asarray(d)))[0]
                        for d in decisions], dtype=np.int64)
        wcls = [np.atleast_1d(d) for d in decisions]
        probs = []
        ties = np.zeros(len(decisions), dtype=bool)
    idx = np.arange(len(labels)) if trial_indices is None else np.asarray(trial_indices)
    return RunResult(run_index, idx, labels, dec, wcls, probs, success, criterion, ties)


def sample_runs(labels, n_classes: int, n_runs: int = 3, per_class: int = 10, seed: int = 0):
    """Trial indices per run, grouped by class (class 0 first). Runs are
    disjoint when there are enough trials, otherwise sampled per run."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 13])
    perms = {}
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if len(idx) < per_class:
            raise OnlineError(f"class {c} has {len(idx)} trials, need {per_class} per run")
        perms[c] = rng.permutation(idx)
    runs = []
    for r in range(n_runs):
        chosen = []
        for c in range(n_classes):
            p = perms[c]
            if len(p) >= n_runs * per_class:
                chosen.append(p[r * per_class:(r + 1) * per_class])
            else:
                chosen.append(np.sort(rng.choice(p, per_class, replace=False)))
        runs.append(np.concatenate(chosen))
    return runs


def run_pseudo_online(model: FcdnModel, ds: EegDataset, n_runs: int = 3, trials_per_class_per_run: int = 10,
                      seed: int = 0, plan: WindowPlan = WindowPlan(), criterion: str = "prob-average",
                      threshold: float = 0.75, strict: bool = False, per_window_filter: bool = False):
    """Stream sampled held-out trials through a frozen model run by run.

    Each RunResult is scored with ``criterion``; ``success_by_criterion``
    carries the success rate under both fusion rules.
    """
    if criterion not in CRITERIA:
        raise OnlineError(f"unknown criterion {criterion!r}")
    fs = ds.fs
    s0 = ds.epoch_onset_sample + int(round(plan.span[0] * fs))
    s1 = ds.epoch_onset_sample + int(round(plan.span[1] * fs))
    if s0 < 0 or s1 > ds.n_samples:
        raise OnlineError(f"trials cover samples [0, {ds.n_samples}), span needs [{s0}, {s1})")
    runs_idx = sample_runs(ds.labels, model.cfg.n_classes, n_runs, trials_per_class_per_run, seed)
    needed = np.unique(np.concatenate(runs_idx))
    sub = ds.subset(needed)
    if per_window_filter:
        data = {int(i): ds.trials[i, :, s0:s1] for i in needed}
    else:
        bands = prepare_bands(sub, model.cfg)
        data = {int(i): bands[j, :, :, s0:s1] for j, i in enumerate(needed)}
    model.eval()
    cache = {}
    results = []
    for r, idx in enumerate(runs_idx):
        streams = []
        for i in idx:
            i = int(i)
            if i not in cache:
                try:
                    cache[i] = stream_trial(model, data[i], fs, plan, raw_filter=per_window_filter)
                except ModelError as exc:
                    raise OnlineError(str(exc)) from None
            streams.append(cache[i])
        labels = ds.labels[idx]
        res = score_run(streams, labels, criterion, threshold, strict, run_index=r, trial_indices=idx)
        for crit in CRITERIA:
            alt = score_run(streams, labels, crit, threshold, strict)
            res.success_by_criterion[crit] = alt.success_rate
        results.append(res)
    return results


def write_online_outputs(results, out_dir, n_classes: int, stem: str = "pseudo_online", meta=None) -> dict:
    """Per-run JSON, a success-rate table (runs as columns plus Average)
    and a class/trial success grid CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / f"{stem}.json",
        "table": out / f"{stem}_table.csv",
        "grid": out / f"{stem}_grid.csv",
    }
    payload = {"meta": meta or {}, "runs": [r.to_dict() for r in results]}
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    with open(paths["table"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = [RUN_LABELS[i] if i < len(RUN_LABELS) else f"Run {i + 1}" for i in range(len(results))]
        w.writerow(["criterion"] + names + ["Average"])
        crits = [results[0].criterion] + [c for c in CRITERIA if c != results[0].criterion] if results else []
        for crit in crits:
            rates = [r.success_by_criterion.get(crit, r.success_rate) for r in results]
            cells = []
            for r, rate in zip(results, rates):
                n = len(r.success)
                cells.append(f"{rate:.2f} ({int(round(rate * n))}/{n})")
            w.writerow([crit] + cells + [f"{np.mean(rates):.2f}"])
    with open(paths["grid"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "class", "trial_index", "success"])
        for r in results:
            g = r.grid(n_classes)
            for c in range(g.shape[0]):
                for t in range(g.shape[1]):
                    w.writerow([r.run_index + 1, c, c * g.shape[1] + t + 1, int(g[c, t])])
    return {k: str(v) for k, v in paths.items()}
