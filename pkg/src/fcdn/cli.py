"""Command-line entry point: ``fcdn <subcommand> [options]``.

Exit codes: 0 success, 1 validation error (bad flags, config, inputs),
2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

log = logging.getLogger("fcdn")

BAND_SUFFIXES = (".delta.fcdn", ".theta.fcdn", ".alpha.fcdn")
CONFIG_KEYS = {"seed", "preset", "model", "synth", "split", "online", "preprocess"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


# -- config handling -----------------------------------------------------------

def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _config_hash(resolved: dict) -> str:
    return hashlib.sha256(json.dumps(resolved, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _stamp(out_path, command: str, resolved: dict) -> str:
    """Write the resolved config and its hash next to an output artifact."""
    h = _config_hash(resolved)
    p = Path(out_path)
    target = p / "run.json" if p.is_dir() else p.with_name(p.name + ".run.json")
    target.write_text(json.dumps({"command": command, "config": resolved, "config_hash": h},
                                 indent=2, sort_keys=True, default=str) + "\n")
    return h


def _seed(args, cfg):
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


def _model_config(args, cfg, ds=None):
    from .model import FcdnConfig

    preset = args.preset or cfg.get("preset", "desk")
    mc = FcdnConfig.preset(preset, **cfg.get("model", {}))
    if ds is not None:
        mc = replace(mc, n_channels=ds.n_channels, fs=float(ds.fs), n_classes=ds.n_classes)
    return mc


# -- dataset helpers -------------------------------------------------------------

def _load(path):
    from .data import load_dataset

    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return load_dataset(p)


def _load_input(path):
    """A dataset file, or the delta file of a band triple. Returns
    ``(dataset, bands)`` with ``bands`` (N, 3, K, S) for band triples."""
    p = str(path)
    if p.endswith(BAND_SUFFIXES[0]):
        stem = p[: -len(BAND_SUFFIXES[0])]
        parts = [_load(stem + s) for s in BAND_SUFFIXES]
        bands = np.stack([d.trials for d in parts], axis=1)
        return parts[0], bands
    return _load(p), None


def _crop(ds, bands, window):
    """Keep ``window`` seconds relative to onset."""
    from .data import extract_epoch

    if window is None:
        return ds, bands
    start, end = window
    s0 = ds.epoch_onset_sample + int(round(start * ds.fs))
    s1 = ds.epoch_onset_sample + int(round(end * ds.fs))
    if s0 < 0 or s1 > ds.n_samples or s1 <= s0:
        raise ValueError(f"window {window} s is outside the epoch")
    out = extract_epoch(ds, start, end)
    if bands is not None:
        bands = np.ascontiguousarray(bands[..., s0:s1])
    return out, bands


# -- subcommands -------------------------------------------------------------------

def cmd_synth(args, cfg):
    from .data import Montage, save_dataset
    from .synth import SIGNATURE_SETS, SynthConfig, generate_subject

    seed = _seed(args, cfg)
    block = dict(cfg.get("synth", {}))
    preset = args.preset or cfg.get("preset", "desk")
    defaults = {"fs": 125.0} if preset == "desk" else {"fs": 250.0, "montage": list(Montage.standard_64().channel_names)}
    for k, v in defaults.items():
        block.setdefault(k, v)
    if args.signatures:
        block["preset"] = args.signatures
    if block.get("preset") and block["preset"] not in SIGNATURE_SETS:
        raise ValueError(f"unknown signature set {block['preset']!r}; choose from {sorted(SIGNATURE_SETS)}")
    for flag, key in (("n_subjects", "n_subjects"), ("trials_per_class", "trials_per_class")):
        if getattr(args, flag) is not None:
            block[key] = getattr(args, flag)
    block["seed"] = seed
    sc = SynthConfig.from_dict(block)
    out = Path(args.out or "synth_out")
    out.mkdir(parents=True, exist_ok=True)
    for s in range(sc.n_subjects):
        ds = generate_subject(sc, s)
        save_dataset(ds, out / f"{ds.subject_id}.fcdn")
    h = _stamp(out, "synth", json.loads(sc.to_json()))
    print(f"wrote {sc.n_subjects} subject files to {out} (config {h})")
    return 0


def cmd_preprocess(args, cfg):
    from .data import DEFAULT_BANDS, save_dataset
    from .dsp import _append_provenance, apply_zero_phase, design_bandpass, preprocess

    block = {"target_fs": 250.0, "notch_hz": 60.0, "notch_q": 30.0, "order": 30}
    extra = cfg.get("preprocess", {})
    unknown = set(extra) - set(block)
    if unknown:
        raise ValueError(f"unknown preprocess keys: {sorted(unknown)}")
    block.update(extra)
    if args.target_fs is not None:
        block["target_fs"] = args.target_fs
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    h = _config_hash(block)
    written = []
    for path in args.inputs:
        ds = _load(path)
        pre = preprocess(ds, block["target_fs"], block["notch_hz"], block["notch_q"])
        stem = Path(path).name
        stem = stem[:-5] if stem.endswith(".fcdn") else stem
        for band in DEFAULT_BANDS:
            bds = apply_zero_phase(pre, design_bandpass(band, pre.fs, int(block["order"])))
            bds = bds.with_trials(bds.trials, provenance=_append_provenance(bds, "preprocess", config_hash=h))
            target = out / f"{stem}.{band.name}.fcdn"
            save_dataset(bds, target)
            written.append(str(target))
    _stamp(out, "preprocess", block)
    print("\n".join(written))
    return 0


def cmd_plv(args, cfg):
    from .connectivity import channel_strength, normalize_weights, plv_matrix, plv_per_class, threshold_edges
    from .data import band_by_name
    from .dsp import analytic_phase

    ds = _load(args.input)
    band = band_by_name(args.band)
    ph = analytic_phase(ds, band, filter_first=not args.prefiltered)
    names = ds.montage.channel_names
    out = Path(args.out or f"plv_{band.name}.csv")
    mats = [("all", plv_matrix(ph, channel_names=names))]
    if args.per_class:
        for c, m in enumerate(plv_per_class(ph, ds.labels, ds.n_classes, channel_names=names)):
            mats.append((ds.class_names[c], m))
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset", "channel"] + list(names))
        for tag, m in mats:
            for i, ch in enumerate(names):
                w.writerow([tag, ch] + [f"{v:.6f}" for v in m.values[i]])
    plv = mats[0][1]
    strength = channel_strength(plv)
    weights = normalize_weights(strength, band.name, plv.fingerprint())
    summary = {
        "band": band.name,
        "strength": dict(zip(names, map(float, strength))),
        "weights": weights.to_dict(),
        "edges_above_tau": [(names[i], names[j], v) for i, j, v in threshold_edges(plv, args.tau)],
        "tau": args.tau,
    }
    Path(str(out) + ".summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _stamp(out, "plv", {"band": band.name, "tau": args.tau, "per_class": args.per_class,
                        "prefiltered": args.prefiltered, "input": str(args.input)})
    print(f"wrote {out}")
    return 0


def _train_val_split(labels, seed, val_frac=0.2):
    """Stratified train/validation indices; every class keeps at least one
    trial on each side."""
    rng = np.random.default_rng([seed, 17])
    tr, va = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if len(idx) < 2:
            raise ValueError(f"class {c} needs at least 2 trials to hold out validation data")
        n_val = min(max(1, int(round(val_frac * len(idx)))), len(idx) - 1)
        va.append(idx[:n_val])
        tr.append(idx[n_val:])
    return np.sort(np.concatenate(tr)), np.sort(np.concatenate(va))


def cmd_train(args, cfg):
    from .harness import augment_gaussian
    from .model import fit_fcdn, save_checkpoint

    seed = _seed(args, cfg)
    ds, bands = _crop(*_load_input(args.input), args.window)
    mc = _model_config(args, cfg, ds)
    if args.epochs is not None:
        mc = replace(mc, epochs=args.epochs)
    if args.no_early_stopping:
        mc = replace(mc, early_stopping=False)
    if args.val:
        val, vbands = _crop(*_load_input(args.val), args.window)
        train, tbands = ds, bands
    else:
        tr, va = _train_val_split(ds.labels, seed)
        train, val = ds.subset(tr), ds.subset(va)
        tbands = bands[tr] if bands is not None else None
        vbands = bands[va] if bands is not None else None
    if args.copies and tbands is None:
        train = augment_gaussian(train, args.copies, args.sigma_frac, seed)
    model, hist = fit_fcdn(train, val, mc, seed=seed, train_bands=tbands, val_bands=vbands)
    out = Path(args.out or "model.fcdnckp")
    save_checkpoint(model, out)
    _stamp(out, "train", {"model": mc.to_dict(), "seed": seed, "input": str(args.input),
                          "window": args.window, "copies": args.copies})
    print(json.dumps({"checkpoint": str(out), "best_val_acc": model.metadata["best_val_acc"],
                      "epochs_run": model.metadata["epochs_run"]}, sort_keys=True))
    return 0


def _check_hash(model, ds, force):
    from .model import preprocessing_hash

    want = model.metadata.get("preprocessing_hash")
    have = preprocessing_hash(model.cfg, ds.fs, ds.montage.channel_names)
    if want and want != have:
        if not force:
            raise ValueError(f"dataset preprocessing hash {have} does not match checkpoint {want}; "
                             "use --force to evaluate anyway")
        log.warning("preprocessing hash mismatch (%s vs %s) ignored by --force", have, want)
    return have


def cmd_eval(args, cfg):
    from .harness import EvalReport, _confusion, write_report_json
    from .model import load_checkpoint, prepare_bands

    model = load_checkpoint(args.checkpoint)
    ds, bands = _crop(*_load_input(args.input), args.window)
    _check_hash(model, ds, args.force)
    bands = prepare_bands(ds, model.cfg) if bands is None else bands
    pred = model.predict(bands)
    acc = float((pred == ds.labels).mean())
    rep = EvalReport(ds.subject_id, [acc], _confusion(ds.labels, pred, model.cfg.n_classes),
                     model.cfg.fingerprint())
    out = Path(args.out or "eval.json")
    write_report_json(rep, out)
    _stamp(out, "eval", {"checkpoint": str(args.checkpoint), "input": str(args.input), "window": args.window})
    print(json.dumps({"accuracy": acc, "n_trials": int(ds.n_trials)}))
    return 0


def _split_plan(args, cfg, seed, mode):
    from .harness import SplitPlan

    block = dict(cfg.get("split", {}))
    block.setdefault("mode", mode)
    if getattr(args, "k", None):
        block["k"] = args.k
    if getattr(args, "copies", None) is not None:
        block["copies"] = args.copies
    if getattr(args, "paper_faithful_augmentation", False):
        block["paper_faithful_augmentation"] = True
    block["seed"] = seed
    known = set(SplitPlan.__dataclass_fields__)
    if set(block) - known:
        raise ValueError(f"unknown split keys: {sorted(set(block) - known)}")
    return SplitPlan(**block)


def _write_reports(reports, out, command, resolved):
    from .harness import write_report_csv, write_report_json

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(reports, out / f"{command}.json")
    write_report_csv(reports, out / f"{command}.csv")
    _stamp(out, command, resolved)


def cmd_cv(args, cfg):
    from .harness import run_cv

    seed = _seed(args, cfg)
    plan = _split_plan(args, cfg, seed, "holdout" if args.holdout else "kfold")
    reports = []
    for path in args.inputs:
        ds, _ = _crop(_load(path), None, args.window)
        reports.append(run_cv(ds, plan, _model_config(args, cfg, ds), seed))
    _write_reports(reports, args.out or "cv_out", "cv",
                   {"plan": asdict(plan), "model": _model_config(args, cfg).to_dict(), "seed": seed})
    for r in reports:
        print(f"{r.name}: {r.mean:.4f} +/- {r.std:.4f}")
    return 0


def cmd_loso(args, cfg):
    from .harness import run_loso

    seed = _seed(args, cfg)
    if len(args.inputs) < 2:
        raise ValueError("loso needs at least 2 subject files")
    subjects = [_crop(_load(p), None, args.window)[0] for p in args.inputs]
    plan = _split_plan(args, cfg, seed, "loso")
    reports = run_loso(subjects, _model_config(args, cfg, subjects[0]), seed, plan)
    _write_reports(reports, args.out or "loso_out", "loso",
                   {"plan": asdict(plan), "model": _model_config(args, cfg).to_dict(), "seed": seed})
    for r in reports:
        print(f"{r.name}: {r.mean:.4f}")
    return 0


def cmd_ablate(args, cfg):
    from .harness import run_ablation

    seed = _seed(args, cfg)
    plan = _split_plan(args, cfg, seed, "holdout" if args.holdout else "kfold")
    subjects = [_crop(_load(p), None, args.window)[0] for p in args.inputs]
    rep = run_ablation(subjects if len(subjects) > 1 else subjects[0], _model_config(args, cfg, subjects[0]),
                       args.mode, seed, plan)
    _write_reports([rep], args.out or "ablate_out", "ablate",
                   {"plan": asdict(plan), "mode": args.mode, "model": _model_config(args, cfg).to_dict(),
                    "seed": seed})
    print(json.dumps(rep.ablation, sort_keys=True))
    return 0


def cmd_pseudo_online(args, cfg):
    from .model import load_checkpoint
    from .online import WindowPlan, run_pseudo_online, write_online_outputs

    seed = _seed(args, cfg)
    model = load_checkpoint(args.checkpoint)
    ds = _load(args.input)
    _check_hash(model, ds, args.force)
    block = dict(cfg.get("online", {}))
    if "span" in block:
        block["span"] = tuple(block["span"])
    plan = WindowPlan(**block)
    runs = run_pseudo_online(model, ds, args.runs, args.per_class, seed, plan, args.criterion,
                             args.threshold, args.strict, args.per_window_filter)
    resolved = {"plan": asdict(plan), "runs": args.runs, "per_class": args.per_class, "seed": seed,
                "criterion": args.criterion, "threshold": args.threshold, "strict": args.strict,
                "per_window_filter": args.per_window_filter, "checkpoint": str(args.checkpoint)}
    out = Path(args.out or "online_out")
    paths = write_online_outputs(runs, out, model.cfg.n_classes,
                                 meta={"config": resolved, "config_hash": _config_hash(resolved)})
    _stamp(out, "pseudo-online", resolved)
    for r in runs:
        print(f"run {r.run_index + 1}: {r.success_rate:.2f} ({r.n_success}/{len(r.success)})")
    print(json.dumps(paths, sort_keys=True))
    return 0


def cmd_psd(args, cfg):
    from .dsp import welch_psd

    ds = _load(args.input)
    out = Path(args.out or "psd.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "freq_hz", "power"])
        groups = [("all", ds)] + [(ds.class_names[c], ds.subset(np.flatnonzero(ds.labels == c)))
                                  for c in range(ds.n_classes) if np.any(ds.labels == c)]
        for tag, sub in groups:
            f, p = welch_psd(sub, args.channel, (args.fmin, args.fmax))
            for fi, pi in zip(f, p):
                w.writerow([tag, f"{fi:.4f}", f"{pi:.6g}"])
    _stamp(out, "psd", {"channel": args.channel, "fmin": args.fmin, "fmax": args.fmax, "input": str(args.input)})
    print(f"wrote {out}")
    return 0


def cmd_ersp(args, cfg):
    from .dsp import ersp

    ds = _load(args.input)
    if args.class_index is not None:
        ds = ds.subset(np.flatnonzero(ds.labels == args.class_index))
    res = ersp(ds, args.channel, (args.fmin, args.fmax), n_times=args.n_times)
    out = Path(args.out or "ersp.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz"] + [f"{t:.4f}" for t in res.times])
        for f, row in zip(res.freqs, res.db):
            w.writerow([f"{f:.4f}"] + [f"{v:.4f}" for v in row])
    _stamp(out, "ersp", {"channel": args.channel, "fmin": args.fmin, "fmax": args.fmax,
                         "n_times": args.n_times, "class_index": args.class_index, "input": str(args.input)})
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args, cfg):
    from .gradchecks import run_all, run_model_check
    from .model import FcdnConfig

    seed = _seed(args, cfg)
    res = run_all(seed)
    preset = args.preset or "desk"
    if preset == "desk":
        small = FcdnConfig.desk(conv_channels=(2, 3, 4), depth=1, embed_dim=8, heads=2, image_size=16,
                                patch_size=8, n_channels=4)
        res["fcdn_network"] = run_model_check(small, seed)
    worst = max(res.values())
    for k, v in res.items():
        print(f"{k:16s} {v:.3e}")
    print(f"max relative error {worst:.3e}")
    if args.out:
        Path(args.out).write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    return 0 if worst < 1e-4 else 2


def cmd_export_features(args, cfg):
    from .harness import export_features, export_strengths
    from .model import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    ds, _ = _crop(_load(args.input), None, args.window)
    _check_hash(model, ds, args.force)
    out = Path(args.out or f"features_{args.stage}.csv")
    info = export_features(model, ds, args.stage, out, args.max_dim, _seed(args, cfg), args.topography)
    if args.strengths:
        export_strengths(model, args.strengths, ds.montage.channel_names)
    _stamp(out, "export-features", {"stage": args.stage, "max_dim": args.max_dim, "checkpoint": str(args.checkpoint),
                                    "input": str(args.input), "window": args.window})
    print(json.dumps(info, sort_keys=True))
    return 0


# -- parser ----------------------------------------------------------------------

def _common(p, preset=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="global seed (u64)")
    if preset:
        p.add_argument("--preset", choices=("paper", "desk"), help="network/data preset")
    p.add_argument("--out", help="output path")
    p.add_argument("--force", action="store_true", help="override safety checks")


def _window(p, default=(0.0, 2.0)):
    p.add_argument("--window", type=float, nargs=2, metavar=("START", "END"), default=list(default),
                   help="seconds relative to onset kept for training/evaluation (default 0 2)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fcdn", description="Connectivity-weighted EEG decoding pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic subjects")
    _common(p)
    p.add_argument("--signatures", help="signature set: default, coupling-only, occipital-alpha")
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--trials-per-class", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="decimate, notch and split into band datasets")
    _common(p, preset=False)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--target-fs", type=float)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("plv", help="PLV matrix, strengths and weights for one band")
    _common(p, preset=False)
    p.add_argument("input")
    p.add_argument("--band", default="alpha", choices=("delta", "theta", "alpha"))
    p.add_argument("--prefiltered", action="store_true", help="input is already band-passed")
    p.add_argument("--per-class", action="store_true")
    p.add_argument("--tau", type=float, default=0.9)
    p.set_defaults(func=cmd_plv)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    _common(p)
    p.add_argument("input", help="dataset file or <stem>.delta.fcdn of a band triple")
    p.add_argument("--val")
    p.add_argument("--epochs", type=int)
    p.add_argument("--copies", type=int, default=0, help="Gaussian-noise copies of training trials")
    p.add_argument("--sigma-frac", type=float, default=0.1)
    p.add_argument("--no-early-stopping", action="store_true")
    _window(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("input")
    _window(p)
    p.set_defaults(func=cmd_eval)

    for name, fn, helptext in (("cv", cmd_cv, "k-fold or holdout evaluation per subject"),
                               ("ablate", cmd_ablate, "paired full vs ablated evaluation")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("inputs", nargs="+")
        p.add_argument("--k", type=int, help="folds (default 5)")
        p.add_argument("--holdout", action="store_true", help="60/20/20 holdout instead of k-fold")
        p.add_argument("--copies", type=int)
        p.add_argument("--paper-faithful-augmentation", action="store_true",
                       help="augment before splitting (optimistic)")
        _window(p)
        if name == "ablate":
            p.add_argument("--mode", required=True, choices=("no-fc", "no-occipital"))
        p.set_defaults(func=fn)

    p = sub.add_parser("loso", help="leave-one-subject-out evaluation")
    _common(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--copies", type=int)
    _window(p)
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("pseudo-online", help="sliding-window replay of held-out trials")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--criterion", default="prob-average", choices=("prob-average", "window-majority"))
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--strict", action="store_true", help="window fraction must exceed the threshold")
    p.add_argument("--per-window-filter", action="store_true")
    p.set_defaults(func=cmd_pseudo_online)

    p = sub.add_parser("psd", help="Welch power spectrum of one channel")
    _common(p, preset=False)
    p.add_argument("input")
    p.add_argument("--channel", required=True)
    p.add_argument("--fmin", type=float, default=0.1)
    p.add_argument("--fmax", type=float, default=60.0)
    p.set_defaults(func=cmd_psd)

    p = sub.add_parser("ersp", help="event-related spectral perturbation of one channel")
    _common(p, preset=False)
    p.add_argument("input")
    p.add_argument("--channel", required=True)
    p.add_argument("--fmin", type=float, default=0.5)
    p.add_argument("--fmax", type=float, default=50.0)
    p.add_argument("--n-times", type=int, default=400)
    p.add_argument("--class-index", type=int)
    p.set_defaults(func=cmd_ersp)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-features", help="per-trial activations at a network stage")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--stage", required=True, choices=("post-conv1", "post-conv2", "post-conv3", "pre-head"))
    p.add_argument("--max-dim", type=int, default=512)
    p.add_argument("--topography", help="also write per-channel mean |activation| CSV")
    p.add_argument("--strengths", help="also write per-band channel weights CSV")
    _window(p)
    p.set_defaults(func=cmd_export_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except (ValueError, KeyError, FileNotFoundError, UsageError) as exc:
        print(f"fcdn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"fcdn {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
