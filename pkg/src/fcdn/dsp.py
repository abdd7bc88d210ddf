"""Signal conditioning and spectral analysis for epoched EEG."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal as sps

from . import kernels
from .data import BandDefinition, EegDataset

DEFAULT_ORDER = 30


@dataclass(frozen=True)
class FirFilter:
    taps: np.ndarray
    band: BandDefinition | None
    fs: float
    window: str = "hamming"

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if not np.all(np.isfinite(taps)):
            raise ValueError("non-finite filter taps")
        object.__setattr__(self, "taps", taps)

    @property
    def order(self) -> int:
        return self.taps.size - 1

    def response(self, freqs) -> np.ndarray:
        """Complex single-pass frequency response at ``freqs`` Hz."""
        n = np.arange(self.taps.size)
        w = 2 * np.pi * np.asarray(freqs, dtype=np.float64)[:, None] / self.fs
        return (self.taps[None, :] * np.exp(-1j * w * n[None, :])).sum(axis=1)


@dataclass(frozen=True)
class PhaseTensor:
    """Instantaneous phase, ``n_trials x K x T`` radians in (-pi, pi]."""

    phases: np.ndarray
    band: BandDefinition | None
    fs: float
    edge_samples: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.phases)):
            raise ValueError("non-finite phases")


def _append_provenance(ds: EegDataset, step: str, **params) -> str:
    entry = json.dumps({"step": step, **params}, sort_keys=True)
    return f"{ds.provenance}\n{entry}" if ds.provenance else entry


def _sinc_lowpass(cutoff_hz: float, fs: float, n_taps: int) -> np.ndarray:
    m = (n_taps - 1) / 2
    n = np.arange(n_taps) - m
    fc = cutoff_hz / fs
    return 2 * fc * np.sinc(2 * fc * n)


def design_lowpass(cutoff_hz: float, fs: float, order: int) -> FirFilter:
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError("cutoff outside (0, fs/2)")
    taps = _sinc_lowpass(cutoff_hz, fs, order + 1) * np.hamming(order + 1)
    taps /= taps.sum()
    return FirFilter(taps, None, fs)


def design_bandpass(band: BandDefinition, fs: float, order: int = DEFAULT_ORDER) -> FirFilter:
    """Hamming-windowed sinc band-pass with ``order + 1`` symmetric taps.

    Taps are scaled so the single-pass gain at the band centre is 1. At
    short orders the low bands have little stop-band attenuation; that is
    a property of the design, not something corrected here.
    """
    if order < 2:
        raise ValueError("filter order must be >= 2")
    if not 0 < band.f_min < band.f_max < fs / 2:
        raise ValueError(f"band [{band.f_min}, {band.f_max}] Hz outside (0, {fs / 2}) Hz")
    n_taps = order + 1
    ideal = _sinc_lowpass(band.f_max, fs, n_taps) - _sinc_lowpass(band.f_min, fs, n_taps)
    taps = ideal * np.hamming(n_taps)
    taps = 0.5 * (taps + taps[::-1])
    filt = FirFilter(taps, band, fs)
    gain = abs(filt.response([band.center])[0])
    return FirFilter(taps / gain, band, fs)


def zero_phase_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Forward-backward FIR along the last axis with odd reflection padding."""
    x = np.asarray(x, dtype=np.float64)
    pad = taps.size
    n = x.shape[-1]
    if n <= 3 * pad:
        raise ValueError(f"signal of {n} samples too short for {pad}-tap zero-phase filtering")
    flat = x.reshape(-1, n)
    padded = np.pad(flat, ((0, 0), (pad, pad)), mode="reflect", reflect_type="odd")
    y = kernels.fir_filter(padded, taps)
    y = kernels.fir_filter(np.ascontiguousarray(y[:, ::-1]), taps)[:, ::-1]
    return np.ascontiguousarray(y[:, pad:pad + n]).reshape(x.shape)


def apply_zero_phase(ds: EegDataset, filt: FirFilter) -> EegDataset:
    if abs(filt.fs - ds.fs) > 1e-9:
        raise ValueError(f"filter designed for {filt.fs} Hz, data at {ds.fs} Hz")
    if ds.n_trials == 0:
        return ds
    out = zero_phase_filter(ds.trials, filt.taps)
    prov = _append_provenance(
        ds, "zero_phase_fir", band=filt.band.name if filt.band else "lowpass", order=filt.order
    )
    return ds.with_trials(out, provenance=prov)


def resample_decimate(ds: EegDataset, factor: int) -> EegDataset:
    """Anti-alias (zero-phase FIR, cutoff 0.8 x new Nyquist) and keep every
    ``factor``-th sample."""
    if int(factor) != factor or factor < 1:
        raise ValueError("decimation factor must be a positive integer")
    factor = int(factor)
    if factor == 1:
        return ds
    new_fs = ds.fs / factor
    remainder = ds.n_samples % factor
    usable = ds.n_samples - remainder
    if usable // factor < 2:
        raise ValueError("decimation would leave fewer than 2 samples")
    lp = design_lowpass(0.8 * new_fs / 2, ds.fs, order=20 * factor)
    trials = ds.trials[:, :, :usable]
    if ds.n_trials:
        trials = zero_phase_filter(trials, lp.taps)
    onset = ds.epoch_onset_sample
    if onset % factor:
        raise ValueError("epoch onset is not aligned to the decimation factor")
    prov = _append_provenance(ds, "decimate", factor=factor, dropped_samples=remainder)
    return ds.with_trials(
        trials[:, :, ::factor], fs=new_fs, epoch_onset_sample=onset // factor, provenance=prov
    )


def notch_filter(ds: EegDataset, f0: float = 60.0, q: float = 30.0) -> EegDataset:
    """Second-order IIR notch run forward and backward."""
    if not 0 < f0 < ds.fs / 2:
        raise ValueError(f"notch frequency {f0} Hz outside (0, Nyquist={ds.fs / 2})")
    b, a = sps.iirnotch(f0, q, fs=ds.fs)
    out = ds.trials
    if ds.n_trials:
        out = sps.filtfilt(b, a, ds.trials.astype(np.float64), axis=-1, padtype="odd")
    return ds.with_trials(out, provenance=_append_provenance(ds, "notch", f0=f0, q=q))


def analytic_signal(x: np.ndarray) -> np.ndarray:
    """Analytic signal along the last axis via one-sided spectrum doubling."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    spec = np.fft.fft(x, axis=-1)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    return np.fft.ifft(spec * h, axis=-1)


def analytic_phase(
    ds: EegDataset,
    band: BandDefinition | None = None,
    filter_first: bool = False,
    order: int = DEFAULT_ORDER,
) -> PhaseTensor:
    """Instantaneous phase of every trial/channel.

    With ``filter_first`` the band-pass is applied here; otherwise ``ds``
    is assumed to be band-limited already. ``edge_samples`` records the
    filter length so PLV can skip the edge transients.
    """
    if not np.all(np.isfinite(ds.trials)):
        raise ValueError("non-finite input")
    if filter_first:
        if band is None:
            raise ValueError("filter_first requires a band")
        ds = apply_zero_phase(ds, design_bandpass(band, ds.fs, order))
    phases = np.angle(analytic_signal(ds.trials))
    return PhaseTensor(phases, band, ds.fs, edge_samples=order + 1)


def _segments(x: np.ndarray, seg: int, hop: int) -> np.ndarray:
    starts = np.arange(0, x.shape[-1] - seg + 1, hop)
    return np.stack([x[..., s:s + seg] for s in starts], axis=-2)


def welch_psd(ds: EegDataset, channel: str, f_range=(0.1, 60.0), segment_s: float = 2.0,
              overlap_frac: float = 0.5):
    """Hamming-windowed averaged periodogram over all segments of all trials.

    Returns ``(freqs, power)`` in Hz and uV^2/Hz, restricted to ``f_range``.
    """
    k = ds.montage.index(channel)
    seg = int(round(segment_s * ds.fs))
    if seg < 2 or seg > ds.n_samples:
        raise ValueError(f"segment of {seg} samples does not fit trials of {ds.n_samples}")
    if not 0 <= overlap_frac < 1:
        raise ValueError("overlap_frac must lie in [0, 1)")
    hop = max(1, int(round(seg * (1 - overlap_frac))))
    freqs = np.fft.rfftfreq(seg, 1 / ds.fs)
    keep = (freqs >= f_range[0]) & (freqs <= f_range[1])
    if not keep.any():
        raise ValueError(f"empty frequency range {f_range}")
    x = ds.trials[:, k, :].astype(np.float64)
    segs = _segments(x, seg, hop).reshape(-1, seg)
    segs = segs - segs.mean(axis=-1, keepdims=True)
    win = np.hamming(seg)
    spec = np.abs(np.fft.rfft(segs * win, axis=-1)) ** 2 / (ds.fs * (win ** 2).sum())
    if seg % 2 == 0:
        spec[:, 1:-1] *= 2
    else:
        spec[:, 1:] *= 2
    return freqs[keep], spec.mean(axis=0)[keep]


@dataclass(frozen=True)
class ErspResult:
    times: np.ndarray
    freqs: np.ndarray
    db: np.ndarray  # (n_freqs, n_times)


def ersp(ds: EegDataset, channel: str, f_range=(0.5, 50.0), n_times: int = 400,
         baseline=(-0.5, 0.0), window_s: float = 1.0) -> ErspResult:
    """Trial-averaged STFT power in dB relative to the mean baseline power.

    Window centres are spread evenly over the epoch so there are exactly
    ``n_times`` columns; baseline columns are those centred in ``baseline``.
    """
    k = ds.montage.index(channel)
    win_len = int(round(window_s * ds.fs))
    if win_len > ds.n_samples:
        raise ValueError("ERSP window longer than the trial")
    half = win_len // 2
    centres = np.round(np.linspace(half, ds.n_samples - win_len + half, n_times)).astype(int)
    times = (centres - ds.epoch_onset_sample) / ds.fs
    base = (times >= baseline[0]) & (times <= baseline[1])
    if not base.any():
        raise ValueError(f"epoch has no window centred in the baseline span {baseline} s")
    nfft = max(win_len, int(2 ** np.ceil(np.log2(2 * ds.fs))))
    freqs = np.fft.rfftfreq(nfft, 1 / ds.fs)
    keep = (freqs >= f_range[0]) & (freqs <= f_range[1])
    if not keep.any():
        raise ValueError(f"empty frequency range {f_range}")
    x = ds.trials[:, k, :].astype(np.float64)
    win = np.hamming(win_len)
    starts = centres - half
    frames = np.stack([x[:, s:s + win_len] for s in starts], axis=1)  # n, T, win
    frames = frames - frames.mean(axis=-1, keepdims=True)
    power = np.abs(np.fft.rfft(frames * win, n=nfft, axis=-1)) ** 2
    power = power.mean(axis=0).T[keep]  # F, T
    ref = power[:, base].mean(axis=1, keepdims=True)
    tiny = np.finfo(np.float64).tiny
    db = 10 * np.log10(np.maximum(power, tiny) / np.maximum(ref, tiny))
    return ErspResult(times, freqs[keep], db)


def band_split(ds: EegDataset, bands, order: int = DEFAULT_ORDER) -> list[EegDataset]:
    """One zero-phase band-passed copy of ``ds`` per band."""
    return [apply_zero_phase(ds, design_bandpass(b, ds.fs, order)) for b in bands]


def preprocess(ds: EegDataset, target_fs: float = 250.0, notch_hz: float | None = 60.0,
               notch_q: float = 30.0) -> EegDataset:
    """Decimate to ``target_fs`` (integer factors only) and apply the mains notch."""
    if ds.fs > target_fs:
        ratio = ds.fs / target_fs
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"fs {ds.fs} is not an integer multiple of {target_fs}")
        ds = resample_decimate(ds, int(round(ratio)))
    if notch_hz is not None and notch_hz < ds.fs / 2:
        ds = notch_filter(ds, notch_hz, notch_q)
    return replace(ds)
