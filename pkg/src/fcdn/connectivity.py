"""Phase-locking connectivity and the channel-weighting layer built on it."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import BandDefinition, EegDataset
from .dsp import PhaseTensor


@dataclass(frozen=True)
class PlvMatrix:
    values: np.ndarray
    band: BandDefinition | None
    n_trials: int
    n_timebins: int
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("PLV matrix must be square")
        if not np.allclose(v, v.T, atol=1e-12):
            raise ValueError("PLV matrix must be symmetric")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("PLV values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def upper_triangle(self) -> np.ndarray:
        iu = np.triu_indices(self.n_channels, k=1)
        return self.values[iu]

    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class ChannelWeights:
    w: np.ndarray
    band: str
    fingerprint: str = ""
    degenerate: bool = False

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size < 2:
            raise ValueError("channel weights must be a vector of length >= 2")
        if w.min() < 0 or w.max() > 1:
            raise ValueError("channel weights must lie in [0, 1]")
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, n_channels: int, band: str = "") -> "ChannelWeights":
        return cls(np.ones(n_channels), band, "uniform", degenerate=False)

    def to_dict(self) -> dict:
        return {
            "w": [float(v) for v in self.w],
            "band": self.band,
            "fingerprint": self.fingerprint,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelWeights":
        return cls(np.asarray(d["w"]), d["band"], d.get("fingerprint", ""), d.get("degenerate", False))


def plv_matrix(phases: PhaseTensor, trim: int | None = None, channel_names=()) -> PlvMatrix:
    """Modulus of the trial- and time-averaged phase-difference phasor.

    ``trim`` samples are dropped from each end of the time axis before
    averaging; by default the filter length recorded on ``phases``.
    """
    ph = np.asarray(phases.phases, dtype=np.float64)
    if ph.ndim != 3:
        raise ValueError("phases must be (n_trials, K, T)")
    if not np.all(np.isfinite(ph)):
        raise ValueError("non-finite phases")
    n, k, t = ph.shape
    trim = phases.edge_samples if trim is None else int(trim)
    if t - 2 * trim < 1:
        trim = 0
    if trim:
        ph = ph[:, :, trim:t - trim]
    if n < 1 or ph.shape[2] < 1:
        raise ValueError("need at least one trial and one time bin")
    flat = np.ascontiguousarray(ph.transpose(1, 0, 2).reshape(k, -1))
    values = kernels.plv_pairs(flat)
    values = 0.5 * (values + values.T)
    np.fill_diagonal(values, 1.0)
    return PlvMatrix(values, phases.band, n, ph.shape[2], tuple(channel_names))


def plv_per_class(phases: PhaseTensor, labels, n_classes: int, trim=None, channel_names=()):
    labels = np.asarray(labels)
    out = []
    for c in range(n_classes):
        sel = labels == c
        sub = PhaseTensor(phases.phases[sel], phases.band, phases.fs, phases.edge_samples)
        out.append(plv_matrix(sub, trim, channel_names))
    return out


def channel_strength(plv: PlvMatrix) -> np.ndarray:
    """Per-channel node strength, self-pairs excluded."""
    v = plv.values.copy()
    np.fill_diagonal(v, 0.0)
    return v.sum(axis=0)


def normalize_weights(strength, band: str = "", fingerprint: str = "") -> ChannelWeights:
    """Min-max scale strengths to [0, 1]; all-equal strengths give all-ones.

    Results are rounded to 12 decimals so strengths given as decimals map to
    decimal-exact weights (0.8 - 0.6 is not 0.2 in binary).
    """
    s = np.asarray(strength, dtype=np.float64)
    if s.size < 2:
        raise ValueError("need at least 2 channels")
    lo, hi = s.min(), s.max()
    if hi - lo <= 0:
        return ChannelWeights(np.ones_like(s), band, fingerprint, degenerate=True)
    w = np.clip(np.round((s - lo) / (hi - lo), 12), 0.0, 1.0)
    return ChannelWeights(w, band, fingerprint)


def weights_from_phases(phases: PhaseTensor, trim=None) -> ChannelWeights:
    plv = plv_matrix(phases, trim)
    band = phases.band.name if phases.band else ""
    return normalize_weights(channel_strength(plv), band, plv.fingerprint())


def apply_channel_weights(ds: EegDataset, w: ChannelWeights) -> EegDataset:
    if w.w.size != ds.n_channels:
        raise ValueError(f"{w.w.size} weights for {ds.n_channels} channels")
    return ds.with_trials(ds.trials * w.w.astype(np.float32)[None, :, None])


def plv_pearson_cc(a: PlvMatrix, b: PlvMatrix) -> float:
    """Pearson r between the strict upper triangles of two PLV matrices."""
    if a.n_channels != b.n_channels:
        raise ValueError("PLV matrices differ in size")
    if a.band is not None and b.band is not None and a.band != b.band:
        raise ValueError("PLV matrices are for different bands")
    x, y = a.upper_triangle(), b.upper_triangle()
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((dx * dx).sum()), np.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise ValueError("zero-variance PLV vector")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


def threshold_edges(plv: PlvMatrix, tau: float = 0.9):
    """Off-diagonal pairs with PLV strictly above ``tau``, strongest first."""
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    iu, ju = np.triu_indices(plv.n_channels, k=1)
    vals = plv.values[iu, ju]
    keep = vals > tau
    edges = [(int(i), int(j), float(v)) for i, j, v in zip(iu[keep], ju[keep], vals[keep])]
    edges.sort(key=lambda e: (-e[2], e[0], e[1]))
    return edges
