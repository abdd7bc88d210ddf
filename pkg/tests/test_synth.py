import numpy as np
import pytest

from conftest import small_synth
from fcdn.data import extract_epoch
from fcdn.dsp import welch_psd
from fcdn.synth import (SIGNATURE_SETS, ClassSignature, CouplingSpec, OscillatorSpec, SynthConfig,
                        config_hash, generate_subject, jitter_concentration)


class TestGenerator:
    def test_shapes_and_balance(self, tiny_raw):
        assert tiny_raw.trials.shape == (24, 16, 375)
        assert tiny_raw.epoch_onset_sample == 125
        np.testing.assert_array_equal(np.bincount(tiny_raw.labels), [6, 6, 6, 6])

    def test_deterministic_per_seed(self):
        a = generate_subject(small_synth(seed=5), 1)
        b = generate_subject(small_synth(seed=5), 1)
        c = generate_subject(small_synth(seed=6), 1)
        assert a.trials.tobytes() == b.trials.tobytes()
        assert a.trials.tobytes() != c.trials.tobytes()
        assert a.provenance == b.provenance

    def test_subjects_differ(self):
        cfg = small_synth()
        assert generate_subject(cfg, 0).trials.tobytes() != generate_subject(cfg, 1).trials.tobytes()

    def test_nyquist_rejected(self):
        with pytest.raises(ValueError, match="Nyquist"):
            generate_subject(small_synth(fs=20.0), 0)

    def test_signature_count_checked(self):
        cfg = SynthConfig(signatures=SIGNATURE_SETS["default"]()[:3], trials_per_class=1)
        with pytest.raises(ValueError):
            generate_subject(cfg, 0)

    def test_invalid_oscillator(self):
        with pytest.raises(ValueError):
            OscillatorSpec(("Oz",), "alpha", 10.0, 1.0) and ClassSignature(
                0, (OscillatorSpec(("Oz",), "alpha", 20.0, 1.0),))
        with pytest.raises(ValueError):
            ClassSignature(0, couplings=(CouplingSpec("O1", "O2", "alpha", 1.5),))

    def test_config_hash_tracks_config(self):
        assert config_hash(small_synth()) == config_hash(small_synth())
        assert config_hash(small_synth()) != config_hash(small_synth(seed=1))

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValueError):
            SynthConfig.from_dict({"nope": 1})
        cfg = SynthConfig.from_dict({"preset": "coupling-only", "trials_per_class": 2})
        assert cfg.trials_per_class == 2


class TestCoupling:
    def test_strength_one_is_locked(self):
        assert np.isinf(jitter_concentration(1.0))
        assert jitter_concentration(0.0) == 0.0

    def test_coupled_pair_has_high_plv(self):
        from fcdn.connectivity import plv_matrix
        from fcdn.data import band_by_name
        from fcdn.dsp import analytic_phase

        sig = tuple(ClassSignature(c, couplings=(CouplingSpec("C3", "C4", "alpha", 1.0, 0.5, 20.0),),
                                   background_noise_sigma=0.5, pink_noise_gain=0.5) for c in range(4))
        cfg = SynthConfig(signatures=sig, fs=125.0, epoch_start_s=-1, epoch_end_s=3, trials_per_class=3)
        ds = extract_epoch(generate_subject(cfg, 0), 0.5, 3.0)
        plv = plv_matrix(analytic_phase(ds, band_by_name("alpha"), filter_first=True))
        i, j = ds.montage.index("C3"), ds.montage.index("C4")
        assert plv.values[i, j] > 0.9
        assert plv.values[i, ds.montage.index("Fp1")] < 0.5


class TestSignatures:
    def test_occipital_alpha_power(self):
        ds = extract_epoch(generate_subject(small_synth(tpc=10, signatures="occipital-alpha"), 0), 0.0, 2.0)
        f, p_oz = welch_psd(ds, "Oz", (8, 13), segment_s=1.0)
        f, p_fz = welch_psd(ds, "Fz", (8, 13), segment_s=1.0)
        assert p_oz.mean() > 2 * p_fz.mean()

    def test_coupling_only_equal_power(self):
        from fcdn.data import ALPHA
        from fcdn.dsp import analytic_phase
        from fcdn.connectivity import plv_per_class

        ds = extract_epoch(generate_subject(small_synth(tpc=60, signatures="coupling-only"), 0), 0.0, 2.0)
        power = np.log(np.mean(ds.trials.astype(np.float64) ** 2, axis=-1))
        by_class = np.stack([power[ds.labels == c].mean(0) for c in range(4)])
        # class means of per-channel log power agree to within sampling noise
        se = power.std(0) / np.sqrt(60)
        assert np.all(by_class.max(0) - by_class.min(0) < 5 * se)
        mats = plv_per_class(analytic_phase(ds, ALPHA), ds.labels, 4)
        pairs = [("F3", "P3"), ("F4", "P4"), ("C3", "PO7"), ("C4", "PO8")]
        for c, m in enumerate(mats):
            vals = [m.values[ds.montage.index(a), ds.montage.index(b)] for a, b in pairs]
            assert int(np.argmax(vals)) == c and vals[c] > 2 * max(np.delete(vals, c))

    def test_coupling_only_weights_suppress_distractors(self):
        from fcdn.connectivity import weights_from_phases
        from fcdn.data import ALPHA
        from fcdn.dsp import analytic_phase

        ds = extract_epoch(generate_subject(small_synth(tpc=120, signatures="coupling-only"), 0), 0.0, 2.0)
        w = weights_from_phases(analytic_phase(ds, ALPHA)).w
        idx = ds.montage.index
        pair = [idx(c) for c in ("F3", "P3", "F4", "P4", "C3", "PO7", "C4", "PO8")]
        distract = [idx(c) for c in ("Fp1", "Fp2", "Cz", "Pz", "O1", "O2")]
        assert w[pair].mean() > 2 * w[distract].mean()

    @pytest.mark.parametrize("name", sorted(SIGNATURE_SETS))
    def test_sets_build(self, name):
        sigs = SIGNATURE_SETS[name]()
        assert sorted(s.class_index for s in sigs) == [0, 1, 2, 3]
