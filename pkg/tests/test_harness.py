import csv
import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fcdn.harness import (EvalReport, HarnessError, SplitPlan, augment_gaussian, augmentation_origin,
                          export_features, export_strengths, make_splits, paired_permutation_test,
                          run_ablation, run_cv, run_loso, write_report_csv, write_report_json)
from fcdn.model import fit_fcdn
from test_model import tiny_cfg


def _check_partition(fold, n):
    parts = [set(fold.train.tolist()), set(fold.val.tolist()), set(fold.test.tolist())]
    assert not (parts[0] & parts[1]) and not (parts[0] & parts[2]) and not (parts[1] & parts[2])
    assert set().union(*parts) == set(range(n))


class TestSplits:
    def test_holdout_stratified(self):
        labels = np.repeat(np.arange(4), 50)
        (fold,) = make_splits(labels, SplitPlan(seed=3))
        _check_partition(fold, 200)
        for part, n in ((fold.train, 30), (fold.val, 10), (fold.test, 10)):
            np.testing.assert_array_equal(np.bincount(labels[part]), [n] * 4)

    @given(st.integers(3, 6), st.integers(0, 2 ** 31), st.integers(6, 15))
    def test_kfold_properties(self, k, seed, per_class):
        labels = np.repeat(np.arange(3), per_class)
        folds = make_splits(labels, SplitPlan(mode="kfold", k=k, seed=seed))
        assert len(folds) == k
        tested = np.concatenate([f.test for f in folds])
        assert sorted(tested.tolist()) == list(range(labels.size))
        for f in folds:
            _check_partition(f, labels.size)
            counts = np.bincount(labels[f.test], minlength=3)
            assert counts.max() - counts.min() <= 1

    def test_loso_validation_from_sources(self):
        labels = np.tile(np.repeat(np.arange(2), 5), 3)
        subjects = np.repeat(np.arange(3), 10)
        folds = make_splits(labels, SplitPlan(mode="loso"), subjects=subjects)
        for i, f in enumerate(folds):
            assert set(subjects[f.test]) == {i}
            assert i not in set(subjects[f.val]) | set(subjects[f.train])
            _check_partition(f, 30)

    def test_deterministic(self):
        labels = np.repeat(np.arange(4), 10)
        a = make_splits(labels, SplitPlan(mode="kfold", seed=9))
        b = make_splits(labels, SplitPlan(mode="kfold", seed=9))
        assert all(np.array_equal(x.test, y.test) for x, y in zip(a, b))

    def test_errors(self):
        with pytest.raises(HarnessError):
            SplitPlan(mode="random")
        with pytest.raises(HarnessError):
            SplitPlan(mode="kfold", k=2)
        with pytest.raises(HarnessError):
            SplitPlan(fractions=(0.5, 0.5, 0.5))
        with pytest.raises(HarnessError):
            make_splits(np.repeat(np.arange(2), 3), SplitPlan(mode="kfold", k=5))
        with pytest.raises(HarnessError):
            make_splits(np.zeros(4, int), SplitPlan(mode="loso"))


class TestAugmentation:
    def test_layout_and_scale(self, tiny_ds):
        out = augment_gaussian(tiny_ds, copies=2, sigma_frac=0.1, seed=0)
        n = tiny_ds.n_trials
        assert out.n_trials == 3 * n
        np.testing.assert_array_equal(out.trials[:n], tiny_ds.trials)
        np.testing.assert_array_equal(out.labels, np.tile(tiny_ds.labels, 3))
        noise = out.trials[n:2 * n] - tiny_ds.trials
        ratio = noise.std(axis=-1) / tiny_ds.trials.std(axis=-1)
        assert abs(np.median(ratio) - 0.1) < 0.02
        np.testing.assert_array_equal(augmentation_origin(n, 2), np.tile(np.arange(n), 3))

    def test_seeded(self, tiny_ds):
        a = augment_gaussian(tiny_ds, 1, seed=5).trials
        assert a.tobytes() == augment_gaussian(tiny_ds, 1, seed=5).trials.tobytes()


class TestPermutation:
    def _oracle(self, a, b):
        d = np.asarray(a) - np.asarray(b)
        obs = abs(d.mean())
        hits = [abs((np.array(s) * d).mean()) >= obs - 1e-12 for s in itertools.product([1, -1], repeat=len(d))]
        return np.mean(hits)

    def test_frozen_example(self):
        a, b = [.8, .7, .9, .6, .75], [.7, .72, .8, .55, .7]
        assert paired_permutation_test(a, b) == 0.125  # 4 of 32 sign patterns

    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=8))
    def test_exact_matches_enumeration(self, pairs):
        a, b = zip(*pairs)
        assert paired_permutation_test(a, b) == pytest.approx(self._oracle(a, b))

    def test_random_mode_close_to_exact(self):
        r = np.random.default_rng(0)
        a, b = r.uniform(size=12), r.uniform(size=12)
        exact = paired_permutation_test(a, b, exact=True)
        approx = paired_permutation_test(a, b, n_perm=20000, exact=False, seed=1)
        assert abs(exact - approx) < 0.02

    def test_identical_samples(self):
        assert paired_permutation_test([0.5, 0.6], [0.5, 0.6]) == 1.0

    def test_errors(self):
        with pytest.raises(HarnessError):
            paired_permutation_test([1.0], [0.0])
        with pytest.raises(HarnessError):
            paired_permutation_test([1.0, 2.0], [0.0])


class TestReports:
    def _rep(self):
        return EvalReport("S01", [0.5, 0.75, None], np.eye(4, dtype=int), "fp", {"fold2": "boom"}, runtime_s=3.0)

    def test_stats_skip_failed_folds(self):
        r = self._rep()
        assert r.mean == pytest.approx(0.625)
        assert r.std == pytest.approx(np.std([0.5, 0.75]))

    def test_json_excludes_runtime(self, tmp_path):
        write_report_json([self._rep()], tmp_path / "r.json")
        d = json.loads((tmp_path / "r.json").read_text())[0]
        assert "runtime_s" not in d and d["fold_errors"] == {"fold2": "boom"}
        write_report_json([self._rep()], tmp_path / "t.json", include_runtime=True)
        assert json.loads((tmp_path / "t.json").read_text())[0]["runtime_s"] == 3.0

    def test_csv(self, tmp_path):
        write_report_csv([self._rep(), EvalReport("S02", [1.0, 1.0, 1.0], np.eye(4, dtype=int), "fp")],
                         tmp_path / "r.csv")
        rows = list(csv.reader(open(tmp_path / "r.csv")))
        assert rows[0][:3] == ["subject", "mean", "std"]
        assert rows[-1][0] == "average"


class TestProtocols:
    CFG = tiny_cfg(epochs=1, teacher_epochs=1)

    def test_cv_deterministic_and_leak_free(self, tiny_ds, tmp_path):
        plan = SplitPlan(mode="kfold", k=3, copies=1, seed=0)
        a = run_cv(tiny_ds, plan, self.CFG, seed=0)
        b = run_cv(tiny_ds, plan, self.CFG, seed=0)
        write_report_json(a, tmp_path / "a.json")
        write_report_json(b, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert len(a.fold_accuracies) == 3 and a.confusion.sum() == tiny_ds.n_trials

    def test_paper_faithful_warns(self, tiny_ds):
        with pytest.warns(UserWarning, match="optimistic"):
            run_cv(tiny_ds, SplitPlan(mode="kfold", k=3, copies=1, paper_faithful_augmentation=True),
                   self.CFG, seed=0)

    def test_parallel_matches_serial(self, tiny_ds, monkeypatch):
        plan = SplitPlan(mode="kfold", k=3, copies=0)
        serial = run_cv(tiny_ds, plan, self.CFG, seed=1)
        monkeypatch.setenv("FCDN_THREADS", "2")
        par = run_cv(tiny_ds, plan, self.CFG, seed=1)
        assert serial.to_dict() == par.to_dict()

    def test_loso(self, tiny_ds):
        s2 = tiny_ds.with_trials(tiny_ds.trials[::-1].copy(), subject_id="S02", labels=tiny_ds.labels[::-1].copy())
        reps = run_loso([tiny_ds, s2], self.CFG, seed=0, plan=SplitPlan(mode="loso", copies=0))
        assert [r.name for r in reps] == ["S01", "S02"]
        assert all(r.confusion.sum() == 24 for r in reps)

    def test_ablation_pairs(self, tiny_ds):
        rep = run_ablation(tiny_ds, self.CFG, "no-occipital", seed=0, plan=SplitPlan(mode="kfold", k=3, copies=0))
        ab = rep.ablation
        assert len(ab["full"]) == len(ab["ablated"]) == 3 and rep.p_value is not None
        assert ab["delta"] == pytest.approx(ab["full_mean"] - ab["ablated_mean"])
        with pytest.raises(HarnessError):
            run_ablation(tiny_ds, self.CFG, "no-theta")

    def test_fold_failure_recorded(self, tiny_ds, monkeypatch):
        import fcdn.harness as h
        real = h.fit_fcdn

        def flaky(train, val, cfg, seed=0, **kw):
            if seed == 1:
                raise RuntimeError("boom")
            return real(train, val, cfg, seed=seed, **kw)

        monkeypatch.setattr(h, "fit_fcdn", flaky)
        rep = run_cv(tiny_ds, SplitPlan(mode="kfold", k=3, copies=0), self.CFG, seed=0)
        assert rep.fold_accuracies[1] is None and rep.fold_accuracies[0] is not None
        assert rep.fold_errors == {"fold1": "RuntimeError: boom"}
        assert rep.confusion.sum() == tiny_ds.n_trials - 8


class TestExport:
    @pytest.fixture(scope="class")
    @classmethod
    def model(cls, tiny_ds):
        return fit_fcdn(tiny_ds, None, tiny_cfg(epochs=1, use_teacher=False), seed=0)[0]

    @pytest.mark.parametrize("stage", ["post-conv1", "post-conv2", "post-conv3", "pre-head"])
    def test_stages(self, model, tiny_ds, tmp_path, stage):
        info = export_features(model, tiny_ds, stage, tmp_path / "f.csv", max_dim=64,
                               topography_path=tmp_path / "t.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0].startswith(f"# stage={stage}")
        assert len(lines) == 2 + tiny_ds.n_trials
        assert len(lines[1].split(",")) == 1 + min(info["dim"], 64)
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 17

    def test_projection_deterministic(self, model, tiny_ds, tmp_path):
        export_features(model, tiny_ds, "post-conv1", tmp_path / "a.csv", max_dim=16)
        export_features(model, tiny_ds, "post-conv1", tmp_path / "b.csv", max_dim=16)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_strengths(self, model, tiny_ds, tmp_path):
        export_strengths(model, tmp_path / "s.csv", tiny_ds.montage.channel_names)
        rows = list(csv.reader(open(tmp_path / "s.csv")))
        assert rows[0] == ["channel", "delta", "theta", "alpha"] and len(rows) == 17

    def test_unknown_stage(self, model, tiny_ds, tmp_path):
        with pytest.raises((HarnessError, KeyError, ValueError)):
            export_features(model, tiny_ds, "post-conv9", tmp_path / "f.csv")
