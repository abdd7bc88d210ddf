"""Seeded class-conditional synthetic EEG.

Each trial is pink background + white noise + band-limited oscillators.
Coupled channel pairs share one narrowband carrier; the second channel
receives it rotated by a phase lag plus per-trial von Mises jitter whose
concentration grows with the coupling strength, so the phase-locking
value between the pair is controlled directly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import DEFAULT_BANDS, DEFAULT_CLASS_NAMES, EegDataset, Montage, band_by_name


@dataclass(frozen=True)
class OscillatorSpec:
    channels: tuple[str, ...]
    band: str
    center_freq: float
    amplitude: float
    bandwidth: float = 1.0
    onset_gated: bool = True
    # extra per-trial log-normal amplitude spread, independent per channel
    trial_jitter: float = 0.0


@dataclass(frozen=True)
class CouplingSpec:
    channel_a: str
    channel_b: str
    band: str
    strength: float
    phase_lag: float = 0.0
    amplitude: float = 5.0
    center_freq: float | None = None
    bandwidth: float = 1.0


@dataclass(frozen=True)
class ClassSignature:
    class_index: int
    oscillators: tuple[OscillatorSpec, ...] = ()
    couplings: tuple[CouplingSpec, ...] = ()
    background_noise_sigma: float = 2.0
    pink_noise_gain: float = 8.0

    def __post_init__(self):
        for osc in self.oscillators:
            band = band_by_name(osc.band)
            if not band.f_min <= osc.center_freq <= band.f_max:
                raise ValueError(f"{osc.center_freq} Hz outside band {osc.band}")
            if osc.amplitude < 0:
                raise ValueError("oscillator amplitude must be >= 0")
        for cp in self.couplings:
            band_by_name(cp.band)
            if not 0.0 <= cp.strength <= 1.0:
                raise ValueError("coupling strength must lie in [0, 1]")
            if cp.amplitude < 0:
                raise ValueError("coupling amplitude must be >= 0")
            if cp.center_freq is not None:
                band = band_by_name(cp.band)
                if not band.f_min <= cp.center_freq <= band.f_max:
                    raise ValueError(f"{cp.center_freq} Hz outside band {cp.band}")

    def channels(self) -> set[str]:
        chans = {c for o in self.oscillators for c in o.channels}
        chans |= {c for cp in self.couplings for c in (cp.channel_a, cp.channel_b)}
        return chans


@dataclass(frozen=True)
class SynthConfig:
    signatures: tuple[ClassSignature, ...]
    montage: Montage = field(default_factory=Montage.desk_16)
    n_subjects: int = 15
    trials_per_class: int = 50
    fs: float = 250.0
    epoch_start_s: float = -1.0
    epoch_end_s: float = 5.0
    subject_variability: float = 0.0
    trial_variability: float = 0.25
    onset_ramp_s: float = 0.2
    seed: int = 0
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self):
        if self.trials_per_class < 1:
            raise ValueError("trials_per_class must be >= 1")
        if self.epoch_start_s > -0.5 or self.epoch_end_s <= 0:
            raise ValueError("epoch must cover the [-0.5, 0] s baseline and some imagery")
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def to_json(self) -> str:
        d = asdict(self)
        d["montage"] = {"channel_names": list(self.montage.channel_names)}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__) - {"preset"}
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        preset = d.pop("preset", None)
        if "signatures" in d:
            d["signatures"] = tuple(_signature_from_dict(s) for s in d["signatures"])
        else:
            d["signatures"] = SIGNATURE_SETS[preset or "default"]()
        if "montage" in d:
            m = d["montage"]
            names = m["channel_names"] if isinstance(m, dict) else m
            d["montage"] = Montage.from_names(names)
        if "class_names" in d:
            d["class_names"] = tuple(d["class_names"])
        return cls(**d)


def _signature_from_dict(d: dict) -> ClassSignature:
    d = dict(d)
    d["oscillators"] = tuple(
        OscillatorSpec(**{**o, "channels": tuple(o["channels"])}) for o in d.get("oscillators", ())
    )
    d["couplings"] = tuple(CouplingSpec(**c) for c in d.get("couplings", ()))
    return ClassSignature(**d)


def default_paper_signatures() -> tuple[ClassSignature, ...]:
    """Four classes sharing frontal delta (Fz) and occipital alpha (Oz),
    each with its own frontal-occipital coupling and one class-specific
    channel. Amplitudes are tuning constants for the 16-channel desk
    montage: classes separate well but overlap trial to trial."""
    common = (
        OscillatorSpec(("Fz",), "delta", 2.0, 6.0),
        OscillatorSpec(("Oz",), "alpha", 10.0, 6.0),
    )
    amp = 5.0
    spec = [
        (CouplingSpec("Fz", "O1", "alpha", 0.9, 0.3, amp, 10.0), OscillatorSpec(("Fp1",), "delta", 2.5, amp)),
        (CouplingSpec("Fz", "O2", "theta", 0.9, 0.3, amp, 6.0), OscillatorSpec(("Fp2",), "delta", 2.5, amp)),
        (CouplingSpec("Oz", "F3", "alpha", 0.9, -0.3, amp, 11.0), OscillatorSpec(("PO7",), "theta", 6.0, amp)),
        (CouplingSpec("Oz", "F4", "theta", 0.9, -0.3, amp, 6.5), OscillatorSpec(("PO8",), "theta", 6.0, amp)),
    ]
    return tuple(
        ClassSignature(c, oscillators=common + (osc,), couplings=(cp,))
        for c, (cp, osc) in enumerate(spec)
    )


def coupling_only_signatures() -> tuple[ClassSignature, ...]:
    """Classes with identical per-channel power spectra that differ only in
    which channel pair shares a phase-locked alpha carrier. The other pairs
    carry independent alpha of the same amplitude, band and frequency, so
    only the phase relation between channels identifies the class. Large
    unlocked alpha on six more channels is a distractor that connectivity
    weighting can suppress."""
    pairs = [("F3", "P3"), ("F4", "P4"), ("C3", "PO7"), ("C4", "PO8")]
    amp = 5.0
    distract = OscillatorSpec(
        ("Fp1", "Fp2", "Cz", "Pz", "O1", "O2"), "alpha", 10.0, 7.0,
        onset_gated=False, trial_jitter=0.8,
    )
    out = []
    for c, (a, b) in enumerate(pairs):
        unlocked = tuple(ch for i, pr in enumerate(pairs) if i != c for ch in pr)
        out.append(ClassSignature(
            c,
            oscillators=(distract, OscillatorSpec(unlocked, "alpha", 10.0, amp)),
            couplings=(CouplingSpec(a, b, "alpha", 0.95, 0.0, amp, 10.0),),
        ))
    return tuple(out)


def occipital_alpha_signatures() -> tuple[ClassSignature, ...]:
    """Classes carried by occipital alpha topography (which occipital
    channel phase-locks to Oz), plus a faint frontal theta cue."""
    occ = ["O1", "O2", "PO7", "PO8"]
    front = ["Fp1", "Fp2", "F3", "F4"]
    return tuple(
        ClassSignature(
            c,
            oscillators=(
                OscillatorSpec(("Fz",), "delta", 2.0, 6.0),
                OscillatorSpec((front[c],), "theta", 6.0, 1.5),
            ),
            couplings=(CouplingSpec("Oz", occ[c], "alpha", 0.9, 0.2, 8.0, 10.0),),
        )
        for c in range(4)
    )


SIGNATURE_SETS = {
    "default": default_paper_signatures,
    "coupling-only": coupling_only_signatures,
    "occipital-alpha": occipital_alpha_signatures,
}


def jitter_concentration(strength: float) -> float:
    """von Mises concentration for a coupling strength; 1 maps to infinity."""
    if strength >= 1.0:
        return np.inf
    return 8.0 * strength / (1.0 - strength)


def _narrowband(rng, n_rows: int, n: int, fs: float, f0: float, bw: float) -> np.ndarray:
    """Complex analytic narrowband noise with unit mean power per row."""
    freqs = np.fft.fftfreq(n, 1 / fs)
    shape = np.exp(-0.5 * ((freqs - f0) / (bw / 2)) ** 2)
    shape[freqs <= 0] = 0.0
    white = rng.standard_normal((n_rows, n)) + 1j * rng.standard_normal((n_rows, n))
    z = np.fft.ifft(np.fft.fft(white, axis=-1) * shape, axis=-1)
    power = np.mean(np.abs(z) ** 2, axis=-1, keepdims=True)
    return z / np.sqrt(np.maximum(power, 1e-300))


def _pink(rng, n_rows: int, n: int) -> np.ndarray:
    white = rng.standard_normal((n_rows, n))
    spec = np.fft.rfft(white, axis=-1)
    f = np.arange(spec.shape[-1], dtype=np.float64)
    scale = np.zeros_like(f)
    scale[1:] = 1.0 / np.sqrt(f[1:])
    x = np.fft.irfft(spec * scale, n=n, axis=-1)
    x -= x.mean(axis=-1, keepdims=True)
    return x / np.maximum(x.std(axis=-1, keepdims=True), 1e-300)


def _check_nyquist(cfg: SynthConfig) -> None:
    nyq = cfg.fs / 2
    for sig in cfg.signatures:
        for osc in sig.oscillators:
            if osc.center_freq + osc.bandwidth >= nyq or band_by_name(osc.band).f_max >= nyq:
                raise ValueError(f"oscillator at {osc.center_freq} Hz exceeds Nyquist {nyq} Hz")
        for cp in sig.couplings:
            f0 = cp.center_freq or band_by_name(cp.band).center
            if f0 + cp.bandwidth >= nyq or band_by_name(cp.band).f_max >= nyq:
                raise ValueError(f"coupling at {f0} Hz exceeds Nyquist {nyq} Hz")


def generate_subject(cfg: SynthConfig, subject_index: int) -> EegDataset:
    if len(cfg.signatures) != cfg.n_classes:
        raise ValueError(f"{len(cfg.signatures)} signatures for {cfg.n_classes} classes")
    if sorted(s.class_index for s in cfg.signatures) != list(range(cfg.n_classes)):
        raise ValueError("signature class indices must cover 0..n_classes-1")
    _check_nyquist(cfg)
    for sig in cfg.signatures:
        for ch in sig.channels():
            cfg.montage.index(ch)

    rng = np.random.default_rng([cfg.seed, subject_index])
    fs = cfg.fs
    onset = int(round(-cfg.epoch_start_s * fs))
    n_samp = onset + int(round(cfg.epoch_end_s * fs))
    k = cfg.montage.n_channels
    t = (np.arange(n_samp) - onset) / fs
    ramp = np.clip(t / cfg.onset_ramp_s, 0.0, 1.0) if cfg.onset_ramp_s > 0 else (t >= 0).astype(float)
    envelope = 0.5 - 0.5 * np.cos(np.pi * ramp)

    # subject-level multiplicative jitter, one draw per (class, component, channel)
    sv = cfg.subject_variability

    def subj_gain(size=None):
        return np.exp(sv * rng.standard_normal(size)) if sv > 0 else np.ones(size or ())

    subject_params = []
    for sig in sorted(cfg.signatures, key=lambda s: s.class_index):
        osc_gains = [subj_gain(len(o.channels)) for o in sig.oscillators]
        cp_gains = [(subj_gain(2), float(np.clip(cp.strength * subj_gain(), 0.0, 1.0))) for cp in sig.couplings]
        subject_params.append((sig, osc_gains, cp_gains))

    labels = np.repeat(np.arange(cfg.n_classes), cfg.trials_per_class)
    labels = labels[rng.permutation(labels.size)]
    trials = np.zeros((labels.size, k, n_samp))
    tv = cfg.trial_variability

    for n, label in enumerate(labels):
        sig, osc_gains, cp_gains = subject_params[label]
        x = trials[n]
        if sig.pink_noise_gain > 0:
            x += sig.pink_noise_gain * _pink(rng, k, n_samp)
        if sig.background_noise_sigma > 0:
            x += sig.background_noise_sigma * rng.standard_normal((k, n_samp))
        for osc, gains in zip(sig.oscillators, osc_gains):
            idx = [cfg.montage.index(ch) for ch in osc.channels]
            z = _narrowband(rng, len(idx), n_samp, fs, osc.center_freq, osc.bandwidth)
            spread = np.exp((tv + osc.trial_jitter) * rng.standard_normal(len(idx)))
            env = envelope if osc.onset_gated else 1.0
            x[idx] += (osc.amplitude * gains * spread)[:, None] * np.real(z) * env
        for cp, (gains, strength) in zip(sig.couplings, cp_gains):
            ia, ib = cfg.montage.index(cp.channel_a), cfg.montage.index(cp.channel_b)
            f0 = cp.center_freq if cp.center_freq is not None else band_by_name(cp.band).center
            z = _narrowband(rng, 1, n_samp, fs, f0, cp.bandwidth)[0]
            kappa = jitter_concentration(strength)
            if np.isinf(kappa):
                jitter = 0.0
            elif kappa == 0:
                jitter = rng.uniform(-np.pi, np.pi)
            else:
                jitter = rng.vonmises(0.0, kappa)
            amp = cp.amplitude * np.exp(tv * rng.standard_normal())
            x[ia] += amp * gains[0] * np.real(z) * envelope
            x[ib] += amp * gains[1] * np.real(z * np.exp(1j * (cp.phase_lag + jitter))) * envelope

    prov = json.dumps(
        {"generator": "fcdn.synth", "seed": cfg.seed, "subject_index": subject_index,
         "config_hash": config_hash(cfg)},
        sort_keys=True,
    )
    return EegDataset(
        subject_id=f"S{subject_index + 1:02d}",
        fs=fs,
        montage=cfg.montage,
        trials=trials,
        labels=labels,
        class_names=cfg.class_names,
        epoch_onset_sample=onset,
        provenance=prov,
    )


def config_hash(cfg: SynthConfig) -> str:
    import hashlib

    return hashlib.sha256(cfg.to_json().encode()).hexdigest()[:16]


def generate_all(cfg: SynthConfig) -> list[EegDataset]:
    return [generate_subject(cfg, i) for i in range(cfg.n_subjects)]


def signature_channels(sig: ClassSignature, band: str) -> set[str]:
    """Channels where ``sig`` places power in ``band``."""
    chans = {c for o in sig.oscillators if o.band == band for c in o.channels}
    chans |= {c for cp in sig.couplings if cp.band == band for c in (cp.channel_a, cp.channel_b)}
    return chans


__all__ = [
    "ClassSignature",
    "CouplingSpec",
    "OscillatorSpec",
    "SynthConfig",
    "DEFAULT_BANDS",
    "coupling_only_signatures",
    "default_paper_signatures",
    "generate_all",
    "generate_subject",
    "jitter_concentration",
    "occipital_alpha_signatures",
    "signature_channels",
]
