"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal
summary (see ``conftest.py``). Slow criteria carry the ``slow`` marker so
``pytest -m "not slow"`` gives a quick pass; the full run includes them.
"""
import time

import numpy as np
import pytest

from fcdn.autodiff import tensor as T
from fcdn.connectivity import PlvMatrix, normalize_weights, plv_matrix, plv_pearson_cc
from fcdn.data import ALPHA, DEFAULT_BANDS, EegDataset, Montage, extract_epoch, load_dataset, save_dataset
from fcdn.dsp import PhaseTensor, apply_zero_phase, design_bandpass, notch_filter
from fcdn.gradchecks import run_all
from fcdn.harness import SplitPlan, make_splits, run_ablation, run_cv, write_report_json
from fcdn.model import FcdnConfig, FcdnModel, FcdnNetwork, fit_fcdn, load_checkpoint, save_checkpoint
from fcdn.model import network as netmod
from fcdn.model.checkpoint import checkpoint_bytes
from fcdn.model.image import bicubic_resize
from fcdn.model.network import fcdn_forward, prepare_bands, uniform_weights
from fcdn.online import plan_windows, score_run, stream_trial
from fcdn.synth import SIGNATURE_SETS, SynthConfig, generate_subject

from conftest import record
from test_model import tiny_cfg

# single-subject experiment settings
FS = 125.0
ABLATION_TPC = 200
ABLATION_SEEDS = (0, 1, 2)


def _subject(signatures="default", tpc=200, seed=0, **kw):
    sc = SynthConfig(signatures=SIGNATURE_SETS[signatures](), fs=FS, epoch_start_s=-1.0, epoch_end_s=2.0,
                     trials_per_class=tpc, seed=seed, **kw)
    return extract_epoch(generate_subject(sc, 0), 0.0, 2.0)


def _holdout(ds, seed):
    (fold,) = make_splits(ds.labels, SplitPlan(seed=seed))
    return ds.subset(fold.train), ds.subset(fold.val), ds.subset(fold.test)


def _test_accuracy(model, test):
    return float((model.predict(prepare_bands(test, model.cfg)) == test.labels).mean())


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


class TestCriterion01ShapeChain:
    def test_paper_preset_shapes(self, monkeypatch):
        t0 = time.perf_counter()
        cfg = FcdnConfig.paper()
        net = FcdnNetwork(cfg, 0).eval()
        resized = []

        def spy(x, size):
            out = bicubic_resize(x, size)
            resized.append(out.shape)
            return out

        monkeypatch.setattr(netmod, "bicubic_resize", spy)
        x = np.random.default_rng(0).standard_normal((1, 3, 64, 1000)).astype(np.float32)
        acts = {}
        with T.no_grad():
            out, _ = net(x, np.ones((3, 64)), acts)
        got = [acts["band0.conv1"].shape[1:], acts["band0.conv2"].shape[1:], acts["band0.conv3"].shape[1:],
               acts["band0.pool1"].shape[1:], acts["band0.pool2"].shape[1:], resized[0][1:],
               acts["image"].shape[2:] + acts["image"].shape[1:2], out.logits_cls.shape]
        want = [(40, 64, 981), (80, 64, 962), (160, 64, 962), (160, 64, 30), (160, 64, 1), (224, 224),
                (224, 224, 3), (1, 4)]
        elapsed = time.perf_counter() - t0
        ok = got == want and elapsed < 30.0
        record(1, ok, f"shapes {'match' if got == want else got}; {elapsed:.1f} s")
        assert got == want
        assert elapsed < 30.0


class TestCriterion02Gradients:
    def test_every_layer_type(self):
        t0 = time.perf_counter()
        errs = run_all(0)
        elapsed = time.perf_counter() - t0
        worst = max(errs, key=errs.get)
        required = {"conv", "batch_norm", "elu", "pools", "dropout_frozen", "linear", "layer_norm", "attention",
                    "patch_embed", "softmax_ce", "distillation"}
        ok = required <= set(errs) and errs[worst] < 1e-4 and elapsed < 120
        record(2, ok, f"max rel err {errs[worst]:.2e} ({worst}); {elapsed:.1f} s")
        assert required <= set(errs)
        assert errs[worst] < 1e-4
        assert elapsed < 120


class TestCriterion03Plv:
    @staticmethod
    def _plv(ph):
        return plv_matrix(PhaseTensor(np.asarray(ph, dtype=np.float64), ALPHA, 250.0)).values

    def test_oracle_suite(self):
        r = np.random.default_rng(3)
        same = self._plv(np.repeat(r.uniform(-np.pi, np.pi, (4, 1, 300)), 3, axis=1))
        t = np.arange(1000) / 250.0
        lag = self._plv(np.angle(np.exp(1j * np.stack([2 * np.pi * 10 * t, 2 * np.pi * 10 * t - 1.1])))[None])
        indep = self._plv(r.uniform(-np.pi, np.pi, (10, 2, 500)))  # N*T = 5000
        ph = r.uniform(-np.pi, np.pi, (3, 4, 50))
        brute = np.zeros((4, 4))
        for a in range(4):
            for b in range(4):
                brute[a, b] = abs(sum(np.exp(1j * (ph[i, a, s] - ph[i, b, s])) for i in range(3) for s in range(50))
                                  / 150)
        got = self._plv(ph)
        checks = {
            "identical": np.abs(same - 1.0).max() <= 1e-9,
            "lag": lag[0, 1] > 0.99,
            "independent": indep[0, 1] < 0.05,
            "brute": np.abs(got - brute).max() <= 1e-10,
            "symmetric": np.array_equal(got, got.T) and np.array_equal(np.diag(got), np.ones(4)),
        }
        record(3, all(checks.values()), ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()))
        assert all(checks.values()), checks


class TestCriterion04Weights:
    def test_min_max_and_degenerate(self):
        w = normalize_weights([0.6, 0.8, 1.0])
        flat = normalize_weights([0.7, 0.7, 0.7])
        ok = (w.w.tolist() == [0.0, 0.5, 1.0] and not w.degenerate
              and flat.degenerate and flat.w.tolist() == [1.0, 1.0, 1.0])
        record(4, ok, f"weights {w.w.tolist()}; degenerate fallback {flat.w.tolist()} flagged {flat.degenerate}")
        assert w.w.tolist() == [0.0, 0.5, 1.0] and not w.degenerate
        assert flat.degenerate and flat.w.tolist() == [1.0, 1.0, 1.0]


class TestCriterion05Bicubic:
    def test_constant_and_ramp(self):
        r = np.random.default_rng(5)
        const_ok, ramp_err = True, 0.0
        for h, w in [(4, 4), (5, 9), (16, 3)]:
            for size in [(7, 7), (224, 224), (3, 11), (32, 17)]:
                c = np.full((1, h, w), 3.25)
                const_ok &= bool(np.all(bicubic_resize(c, size).data == 3.25))
                a, b, k = r.uniform(-2, 2, 3)
                yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
                ramp = (a * yy + b * xx + k)[None]
                ho, wo = size
                ys = (np.arange(ho) + 0.5) * h / ho - 0.5
                xs = (np.arange(wo) + 0.5) * w / wo - 0.5
                want = a * ys[:, None] + b * xs[None, :] + k
                ramp_err = max(ramp_err, float(np.abs(bicubic_resize(ramp, size).data[0] - want).max()))
        ok = const_ok and ramp_err < 1e-5
        record(5, ok, f"constant exact {const_ok}; ramp max abs err {ramp_err:.1e}")
        assert const_ok
        assert ramp_err < 1e-5


@pytest.mark.slow
class TestCriterion06Decoding:
    def test_desk_holdout(self):
        ds = _subject(tpc=200, seed=0)
        train, val, test = _holdout(ds, seed=0)
        cfg = FcdnConfig.desk()
        t0, c0 = time.perf_counter(), time.process_time()
        model, _ = fit_fcdn(train, val, cfg, seed=0)
        acc = _test_accuracy(model, test)
        wall, cpu = time.perf_counter() - t0, time.process_time() - c0
        again, _ = fit_fcdn(train, val, cfg, seed=0)
        same = checkpoint_bytes(model) == checkpoint_bytes(again)
        ok = acc >= 0.80 and cpu <= 600 and same
        record(6, ok, f"test acc {acc:.3f} on {test.n_trials} trials; cpu {cpu:.0f} s (wall {wall:.0f} s); "
                      f"rerun identical {same}")
        assert acc >= 0.80
        assert cpu <= 600
        assert same


def _ablation(signatures, mode):
    full, ablated = [], []
    for seed in ABLATION_SEEDS:
        ds = _subject(signatures, tpc=ABLATION_TPC, seed=seed)
        rep = run_ablation(ds, FcdnConfig.desk(), mode, seed, SplitPlan(seed=seed, copies=0))
        full.append(rep.ablation["full_mean"])
        ablated.append(rep.ablation["ablated_mean"])
    return np.array(full), np.array(ablated)


@pytest.mark.slow
class TestCriterion07FcAblation:
    def test_fc_not_worse_on_coupling_only(self):
        full, ablated = _ablation("coupling-only", "no-fc")
        ok = full.mean() >= ablated.mean()
        record(7, ok, f"with FC {np.round(full, 3).tolist()} mean {full.mean():.3f}; "
                      f"without {np.round(ablated, 3).tolist()} mean {ablated.mean():.3f}")
        assert full.mean() >= ablated.mean()


@pytest.mark.slow
class TestCriterion08OccipitalAblation:
    def test_dropping_occipital_hurts(self):
        full, ablated = _ablation("occipital-alpha", "no-occipital")
        ok = full.mean() > ablated.mean()
        record(8, ok, f"full {np.round(full, 3).tolist()} mean {full.mean():.3f}; "
                      f"no occipital {np.round(ablated, 3).tolist()} mean {ablated.mean():.3f}")
        assert full.mean() > ablated.mean()


class TestCriterion09PseudoOnline:
    def test_windows_fusion_and_table(self):
        cfg = tiny_cfg()
        model = FcdnModel.create(cfg, 0, with_teacher=False)
        model.set_weights(uniform_weights(cfg))
        sc = SynthConfig(signatures=SIGNATURE_SETS["default"](), fs=FS, epoch_start_s=-1.0, epoch_end_s=5.0,
                         trials_per_class=1, seed=0)
        ds = generate_subject(sc, 0)
        s0 = ds.epoch_onset_sample
        n_windows = len(plan_windows(int(5 * FS), FS))
        exact = True
        for trial in prepare_bands(ds, cfg):
            span = trial[:, :, s0:s0 + int(5 * FS)]
            stream = stream_trial(model, span, FS)
            probs = []
            for s, e in plan_windows(span.shape[-1], FS):
                with T.no_grad():
                    z = fcdn_forward(model, span[:, :, s:e], "eval").data[0].astype(np.float64)
                p = np.exp(z - z.max())
                probs.append(p / p.sum())
            exact &= bool(np.array_equal(stream.fused, np.mean(np.stack(probs), axis=0)))
        labels = np.repeat(np.arange(4), 10)
        decisions = labels.copy()
        wrong = [0, 1, 12, 13, 24, 25, 36, 37]
        decisions[wrong] = (decisions[wrong] + 1) % 4
        r = score_run(decisions, labels)
        ok = n_windows == 4 and exact and (r.n_success, len(r.success)) == (32, 40) and r.success_rate == 0.80
        record(9, ok, f"{n_windows} windows; fused bit-exact {exact}; score {r.n_success}/{len(r.success)} "
                      f"= {r.success_rate:.2f}")
        assert n_windows == 4
        assert exact
        assert (r.n_success, len(r.success), r.success_rate) == (32, 40, 0.80)


class TestCriterion10Pearson:
    def test_self_and_textbook(self):
        r = np.random.default_rng(10)
        ph = r.uniform(-np.pi, np.pi, (3, 6, 80))
        ph[:, 1] = ph[:, 0] + 0.1 * r.standard_normal((3, 80))
        m = plv_matrix(PhaseTensor(ph, ALPHA, 250.0))
        self_cc = plv_pearson_cc(m, m)
        x = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
        y = np.array([0.2, 0.4, 0.5, 0.4, 0.5, 0.4])

        def as_plv(v):
            mat = np.eye(4)
            mat[np.triu_indices(4, 1)] = v
            return PlvMatrix(np.maximum(mat, mat.T), None, 1, 1)

        got = plv_pearson_cc(as_plv(x), as_plv(y))
        dx, dy = x - x.mean(), y - y.mean()
        textbook = float((dx * dy).sum() / np.sqrt((dx ** 2).sum() * (dy ** 2).sum()))
        ok = f"{self_cc:.4f}" == "1.0000" and abs(got - textbook) <= 1e-12
        record(10, ok, f"self CC {self_cc:.4f}; toy {got:.12f} vs textbook {textbook:.12f}")
        assert f"{self_cc:.4f}" == "1.0000"
        assert abs(got - textbook) <= 1e-12


@pytest.mark.slow
class TestCriterion11Chance:
    def test_shuffled_labels(self):
        ds = _subject(tpc=50, seed=11)
        shuffled = ds.with_trials(ds.trials, labels=np.random.default_rng(11).permutation(ds.labels))
        train, val, test = _holdout(shuffled, seed=11)
        model, _ = fit_fcdn(train, val, FcdnConfig.desk(), seed=11)
        acc = _test_accuracy(model, test)
        sd = np.sqrt(0.25 * 0.75 / test.n_trials)
        ok = abs(acc - 0.25) <= 3 * sd
        record(11, ok, f"shuffled-label acc {acc:.3f} on {test.n_trials} trials; bound 0.25 +/- {3 * sd:.3f}")
        assert abs(acc - 0.25) <= 3 * sd


class TestCriterion12Determinism:
    def test_bytes_and_round_trips(self, tmp_path):
        sc = SynthConfig(signatures=SIGNATURE_SETS["default"](), fs=FS, epoch_start_s=-1.0, epoch_end_s=2.0,
                         trials_per_class=6, seed=12)
        for tag in "ab":
            save_dataset(generate_subject(sc, 0), tmp_path / f"{tag}.fcdn")
        data_same = (tmp_path / "a.fcdn").read_bytes() == (tmp_path / "b.fcdn").read_bytes()
        ds = extract_epoch(load_dataset(tmp_path / "a.fcdn"), 0.0, 2.0)
        cfg = tiny_cfg(epochs=1, teacher_epochs=1)
        for tag in "ab":
            model, _ = fit_fcdn(ds, None, cfg, seed=12)
            save_checkpoint(model, tmp_path / f"{tag}.ckp")
        ckpt_same = (tmp_path / "a.ckp").read_bytes() == (tmp_path / "b.ckp").read_bytes()
        plan = SplitPlan(mode="kfold", k=3, copies=1, seed=12)
        for tag in "ab":
            write_report_json(run_cv(ds, plan, cfg, seed=12), tmp_path / f"{tag}.json")
        report_same = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

        raw = generate_subject(sc, 0)
        save_dataset(raw, tmp_path / "r.fcdn")
        back = load_dataset(tmp_path / "r.fcdn")
        data_rt = (back.trials.tobytes() == raw.trials.tobytes() and np.array_equal(back.labels, raw.labels)
                   and back.fs == raw.fs and back.montage == raw.montage)
        loaded = load_checkpoint(tmp_path / "a.ckp")
        ckpt_rt = checkpoint_bytes(loaded) == (tmp_path / "a.ckp").read_bytes()
        x = prepare_bands(ds, cfg)[:4]
        pred_rt = np.array_equal(loaded.predict_proba(x), load_checkpoint(tmp_path / "b.ckp").predict_proba(x))
        checks = {"dataset bytes": data_same, "checkpoint bytes": ckpt_same, "report bytes": report_same,
                  "dataset round trip": data_rt, "checkpoint round trip": ckpt_rt and pred_rt}
        record(12, all(checks.values()), ", ".join(f"{k} {'ok' if v else 'FAIL'}" for k, v in checks.items()))
        assert all(checks.values()), checks


class TestCriterion13Filters:
    def test_notch_and_band_selectivity(self):
        fs, order = 250.0, 30
        t = np.arange(int(8 * fs)) / fs
        mont = Montage.from_names(["a", "b"])

        def tone(f):
            x = np.broadcast_to(np.sin(2 * np.pi * f * t), (1, 2, t.size)).copy()
            return EegDataset("T", fs, mont, x, np.zeros(1, int))

        inner = slice(int(fs), -int(fs))
        notch_ratio = _rms(notch_filter(tone(60.0)).trials[0, 0, inner]) / _rms(np.sin(2 * np.pi * 60 * t))
        ratios = {}
        for band in DEFAULT_BANDS:
            filt = design_bandpass(band, fs, order)
            centre = _rms(apply_zero_phase(tone(band.center), filt).trials[0, 0, inner])
            far = _rms(apply_zero_phase(tone(band.center * 8), filt).trials[0, 0, inner])
            ratios[band.name] = centre / far
        ok = notch_ratio < 0.05 and all(v > 5 for v in ratios.values())
        record(13, ok, f"notch residual {notch_ratio:.3%}; centre/far RMS "
                       + ", ".join(f"{k} {v:.1f}x" for k, v in ratios.items()))
        assert notch_ratio < 0.05
        assert all(v > 5 for v in ratios.values()), ratios
