"""Epoched EEG datasets, electrode montages and the ``.fcdn`` container."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

DEFAULT_CLASS_NAMES = ("pick up cell phone", "pour water", "open door", "eat food")

MAGIC = b"FCDNSET1"
SCHEMA_VERSION = 1

# 64-channel 10-20 layout used by the paper preset
STANDARD_64 = (
    "Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7",
    "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    "FT7", "FC5", "FC3", "FC1", "FC2", "FC4", "FC6", "FT8",
    "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "T8", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4",
    "CP6", "TP8", "P7", "P5", "P3", "P1", "Pz", "P2",
    "P4", "P6", "P8", "PO7", "PO3", "POz", "PO4", "PO8",
    "O1", "Oz", "O2", "Iz", "FT9", "FT10", "TP9", "TP10",
)

# 16-channel subset used by the desk preset
DESK_16 = (
    "Fp1", "Fp2", "F3", "Fz", "F4", "C3", "Cz", "C4",
    "P3", "Pz", "P4", "PO7", "PO8", "O1", "Oz", "O2",
)

STANDARD_REGIONS = {
    "occipital": ("PO3", "PO4", "PO7", "PO8", "POz", "O1", "O2", "Oz", "Iz"),
    "prefrontal-ref": ("Fz",),
    "occipital-ref": ("Oz",),
}


class DatasetFormatError(ValueError):
    """Raised when a ``.fcdn`` file is malformed."""


@dataclass(frozen=True)
class Montage:
    channel_names: tuple[str, ...]
    region_sets: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        names = tuple(self.channel_names)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(
            self, "region_sets", {k: tuple(v) for k, v in dict(self.region_sets).items()}
        )
        if len(names) < 2:
            raise ValueError("a montage needs at least 2 channels")
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")
        known = set(names)
        for region, members in self.region_sets.items():
            missing = [m for m in members if m not in known]
            if missing:
                raise ValueError(f"region {region!r} references unknown channels {missing}")

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "Montage":
        """Build a montage whose standard regions are restricted to ``names``."""
        present = set(names)
        regions = {
            region: tuple(ch for ch in members if ch in present)
            for region, members in STANDARD_REGIONS.items()
        }
        return cls(tuple(names), regions)

    @classmethod
    def standard_64(cls) -> "Montage":
        return cls.from_names(STANDARD_64)

    @classmethod
    def desk_16(cls) -> "Montage":
        return cls.from_names(DESK_16)

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    def index(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise KeyError(f"channel {name!r} not in montage") from None

    def region(self, name: str) -> tuple[str, ...]:
        if name not in self.region_sets:
            raise KeyError(f"unknown region {name!r}")
        return self.region_sets[name]


@dataclass(frozen=True)
class BandDefinition:
    name: str
    f_min: float
    f_max: float

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max:
            raise ValueError(f"invalid band edges [{self.f_min}, {self.f_max}]")

    def check_fs(self, fs: float) -> None:
        if self.f_max >= fs / 2:
            raise ValueError(f"band {self.name} upper edge {self.f_max} Hz >= Nyquist {fs / 2} Hz")

    @property
    def center(self) -> float:
        return 0.5 * (self.f_min + self.f_max)


DELTA = BandDefinition("delta", 0.5, 4.0)
THETA = BandDefinition("theta", 4.0, 8.0)
ALPHA = BandDefinition("alpha", 8.0, 13.0)
DEFAULT_BANDS = (DELTA, THETA, ALPHA)


def band_by_name(name: str) -> BandDefinition:
    for band in DEFAULT_BANDS:
        if band.name == name:
            return band
    raise KeyError(f"unknown band {name!r}")


@dataclass(frozen=True)
class EegDataset:
    """Epoched trials, ``n_trials x K x S`` microvolts stored as float32."""

    subject_id: str
    fs: float
    montage: Montage
    trials: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    epoch_onset_sample: int = 0
    provenance: str = ""

    def __post_init__(self):
        trials = np.array(self.trials, dtype=np.float32, copy=True)
        if trials.ndim == 2 and trials.size == 0:
            trials = trials.reshape(0, self.montage.n_channels, 0)
        if trials.ndim != 3:
            raise ValueError(f"trials must be 3-D (n, K, S), got shape {trials.shape}")
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        trials.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "epoch_onset_sample", int(self.epoch_onset_sample))
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if trials.shape[1] != self.montage.n_channels:
            raise ValueError(
                f"trials have {trials.shape[1]} channels, montage has {self.montage.n_channels}"
            )
        if labels.shape[0] != trials.shape[0]:
            raise ValueError("one label per trial required")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ValueError("labels must lie in [0, n_classes)")

    @property
    def n_trials(self) -> int:
        return self.trials.shape[0]

    @property
    def n_channels(self) -> int:
        return self.trials.shape[1]

    @property
    def n_samples(self) -> int:
        return self.trials.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def with_trials(self, trials, **changes) -> "EegDataset":
        return replace(self, trials=trials, **changes)

    def subset(self, indices) -> "EegDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, trials=self.trials[idx], labels=self.labels[idx])

    def time_axis(self) -> np.ndarray:
        """Sample times in seconds relative to imagery onset."""
        return (np.arange(self.n_samples) - self.epoch_onset_sample) / self.fs


def concat_datasets(datasets: Sequence[EegDataset], subject_id: str | None = None) -> EegDataset:
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.montage.channel_names != first.montage.channel_names or ds.fs != first.fs:
            raise ValueError("datasets differ in montage or sampling rate")
        if ds.n_samples != first.n_samples or ds.epoch_onset_sample != first.epoch_onset_sample:
            raise ValueError("datasets differ in epoch layout")
    return replace(
        first,
        subject_id=subject_id or "+".join(ds.subject_id for ds in datasets),
        trials=np.concatenate([ds.trials for ds in datasets], axis=0),
        labels=np.concatenate([ds.labels for ds in datasets]),
    )


def save_dataset(ds: EegDataset, path) -> None:
    if not np.all(np.isfinite(ds.trials)):
        raise ValueError("refusing to save non-finite sample values")
    header = {
        "schema_version": SCHEMA_VERSION,
        "subject_id": ds.subject_id,
        "fs": ds.fs,
        "channel_names": list(ds.montage.channel_names),
        "class_names": list(ds.class_names),
        "labels": [int(v) for v in ds.labels],
        "n_trials": ds.n_trials,
        "samples_per_trial": ds.n_samples,
        "epoch_onset_sample": ds.epoch_onset_sample,
        "provenance": ds.provenance,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(ds.trials, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_dataset(path) -> EegDataset:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DatasetFormatError("bad magic")
    if len(raw) < 12:
        raise DatasetFormatError("truncated header")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise DatasetFormatError("truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"malformed header: {exc}") from None
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DatasetFormatError(f"unknown schema_version {header.get('schema_version')!r}")
    n = int(header["n_trials"])
    k = len(header["channel_names"])
    s = int(header["samples_per_trial"])
    if len(header["labels"]) != n:
        raise DatasetFormatError("header/payload size mismatch: label count != n_trials")
    payload = raw[12 + hlen:]
    expected = n * k * s * 4
    if len(payload) < expected:
        raise DatasetFormatError("truncated payload")
    if len(payload) > expected:
        raise DatasetFormatError("header/payload size mismatch")
    trials = np.frombuffer(payload, dtype="<f4").reshape(n, k, s)
    return EegDataset(
        subject_id=header["subject_id"],
        fs=header["fs"],
        montage=Montage.from_names(header["channel_names"]),
        trials=trials,
        labels=np.asarray(header["labels"], dtype=np.int64),
        class_names=tuple(header["class_names"]),
        epoch_onset_sample=header["epoch_onset_sample"],
        provenance=header["provenance"],
    )


def export_csv(ds: EegDataset, path) -> None:
    """Long-format debug dump: trial, channel, sample_index, value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "channel", "sample_index", "value"])
        for n in range(ds.n_trials):
            for k, name in enumerate(ds.montage.channel_names):
                for t, v in enumerate(ds.trials[n, k]):
                    writer.writerow([n, name, t, repr(float(v))])


def extract_epoch(ds: EegDataset, start_s: float, end_s: float, relative_to_onset: bool = True) -> EegDataset:
    """Slice ``[start_s, end_s)`` seconds out of every trial.

    The returned ``epoch_onset_sample`` keeps pointing at the imagery onset,
    so it may fall outside the new window (negative or >= S).
    """
    offset = ds.epoch_onset_sample if relative_to_onset else 0
    start = offset + int(round(start_s * ds.fs))
    stop = offset + int(round(end_s * ds.fs))
    if start < 0 or stop > ds.n_samples or stop <= start:
        raise ValueError(
            f"window [{start_s}, {end_s}) s maps to samples [{start}, {stop}) "
            f"outside trials of length {ds.n_samples}"
        )
    return replace(
        ds,
        trials=ds.trials[:, :, start:stop],
        epoch_onset_sample=ds.epoch_onset_sample - start,
    )


def drop_channels(ds: EegDataset, region: str) -> EegDataset:
    names = set(ds.montage.region(region))
    keep = [i for i, ch in enumerate(ds.montage.channel_names) if ch not in names]
    if len(keep) < 2:
        raise ValueError(f"dropping {region!r} would leave fewer than 2 channels")
    kept_names = [ds.montage.channel_names[i] for i in keep]
    regions = {r: tuple(ch for ch in m if ch not in names) for r, m in ds.montage.region_sets.items()}
    return replace(
        ds,
        montage=Montage(tuple(kept_names), regions),
        trials=ds.trials[:, keep, :],
    )
