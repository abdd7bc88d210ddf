import csv
import json
from dataclasses import replace

import pytest

from fcdn.cli import main
from fcdn.data import load_dataset, save_dataset

CFG = {"seed": 3, "synth": {"n_subjects": 2, "trials_per_class": 6},
       "model": {"epochs": 1, "teacher_epochs": 1, "depth": 1, "embed_dim": 16, "heads": 2,
                 "image_size": 16, "patch_size": 8},
       "split": {"k": 3, "copies": 0}}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.json").write_text(json.dumps(CFG))
    assert main(["synth", "--config", str(d / "cfg.json"), "--out", str(d / "syn")]) == 0
    assert main(["train", str(d / "syn" / "S01.fcdn"), "--config", str(d / "cfg.json"),
                 "--out", str(d / "m.ckp")]) == 0
    return d


def _run(work, *args):
    return main([*args, "--config", str(work / "cfg.json")])


class TestPipeline:
    def test_synth_outputs(self, work):
        ds = load_dataset(work / "syn" / "S02.fcdn")
        assert ds.n_trials == 24 and ds.fs == 125.0
        stamp = json.loads((work / "syn" / "run.json").read_text())
        assert stamp["command"] == "synth" and len(stamp["config_hash"]) == 16

    def test_synth_deterministic(self, work, tmp_path):
        assert _run(work, "synth", "--out", str(tmp_path / "again")) == 0
        for name in ("S01.fcdn", "S02.fcdn", "run.json"):
            assert (tmp_path / "again" / name).read_bytes() == (work / "syn" / name).read_bytes()

    def test_train_stamp(self, work, capsys):
        assert (work / "m.ckp").exists() and (work / "m.ckp.run.json").exists()

    def test_eval(self, work):
        out = work / "ev.json"
        assert _run(work, "eval", str(work / "m.ckp"), str(work / "syn" / "S02.fcdn"), "--out", str(out)) == 0
        (rep,) = json.loads(out.read_text())
        assert sum(map(sum, rep["confusion"])) == 24 and "runtime_s" not in rep

    def test_preprocess_then_train_on_bands(self, work):
        pre = work / "pre"
        assert _run(work, "preprocess", str(work / "syn" / "S01.fcdn"), "--out", str(pre)) == 0
        names = sorted(p.name for p in pre.glob("*.fcdn"))
        assert names == ["S01.alpha.fcdn", "S01.delta.fcdn", "S01.theta.fcdn"]
        assert load_dataset(pre / "S01.alpha.fcdn").fs == 125.0  # never upsampled
        assert _run(work, "train", str(pre / "S01.delta.fcdn"), "--out", str(work / "mb.ckp")) == 0

    def test_hash_mismatch_refused(self, work):
        ds = load_dataset(work / "syn" / "S02.fcdn")
        save_dataset(replace(ds, fs=100.0), work / "other_fs.fcdn")
        args = ["eval", str(work / "m.ckp"), str(work / "other_fs.fcdn"), "--out", str(work / "x.json")]
        assert _run(work, *args) == 1
        assert _run(work, *args, "--force") == 0

    def test_cv_and_ablate(self, work):
        assert _run(work, "cv", str(work / "syn" / "S01.fcdn"), "--out", str(work / "cv")) == 0
        rep = json.loads((work / "cv" / "cv.json").read_text())
        assert len(rep[0]["fold_accuracies"]) == 3
        assert _run(work, "ablate", str(work / "syn" / "S01.fcdn"), "--mode", "no-fc",
                    "--out", str(work / "abl")) == 0
        rep = json.loads((work / "abl" / "ablate.json").read_text())
        assert "p_value" in rep[0]

    def test_loso(self, work):
        syn = work / "syn"
        assert _run(work, "loso", str(syn / "S01.fcdn"), str(syn / "S02.fcdn"), "--out", str(work / "loso")) == 0
        rows = list(csv.reader(open(work / "loso" / "loso.csv")))
        assert [r[0] for r in rows[1:]] == ["S01", "S02", "average"]

    def test_pseudo_online(self, work):
        out = work / "on"
        assert _run(work, "pseudo-online", str(work / "m.ckp"), str(work / "syn" / "S02.fcdn"),
                    "--runs", "2", "--per-class", "2", "--out", str(out)) == 0
        assert any(out.iterdir())

    def test_plv(self, work):
        out = work / "plv.csv"
        assert _run(work, "plv", str(work / "syn" / "S01.fcdn"), "--band", "alpha", "--out", str(out)) == 0
        rows = list(csv.reader(open(out)))
        assert rows[0][:2] == ["subset", "channel"] and len(rows) == 17
        summary = json.loads((work / "plv.csv.summary.json").read_text())
        assert summary

    def test_psd_and_ersp(self, work):
        syn = str(work / "syn" / "S01.fcdn")
        assert _run(work, "psd", syn, "--channel", "Oz", "--out", str(work / "psd.csv")) == 0
        head = open(work / "psd.csv").readline().strip()
        assert head == "class,freq_hz,power"
        assert _run(work, "ersp", syn, "--channel", "Oz", "--n-times", "50", "--out", str(work / "ersp.csv")) == 0
        assert (work / "ersp.csv").stat().st_size > 0
        assert _run(work, "psd", syn, "--channel", "Nope", "--out", str(work / "p2.csv")) == 1

    def test_export_features(self, work, capsys):
        assert _run(work, "export-features", str(work / "m.ckp"), str(work / "syn" / "S01.fcdn"),
                    "--stage", "pre-head", "--strengths", str(work / "s.csv"), "--out", str(work / "f.csv")) == 0
        info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert info["rows"] == 24 and info["dim"] > 0
        assert (work / "s.csv").exists()

    def test_gradcheck(self, tmp_path, capsys):
        assert main(["gradcheck", "--out", str(tmp_path / "g.json")]) == 0
        assert max(json.loads((tmp_path / "g.json").read_text()).values()) < 1e-4


class TestExitCodes:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_missing_argument(self):
        assert main(["train"]) == 1

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"wat": 1}')
        assert main(["synth", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 1

    def test_malformed_config(self, tmp_path):
        (tmp_path / "bad.json").write_text("{nope")
        assert main(["synth", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["plv", str(tmp_path / "none.fcdn"), "--out", str(tmp_path / "p.csv")]) == 1

    def test_corrupt_dataset(self, tmp_path):
        (tmp_path / "bad.fcdn").write_bytes(b"FCDNSET1garbage")
        assert main(["plv", str(tmp_path / "bad.fcdn"), "--out", str(tmp_path / "p.csv")]) == 1

    def test_internal_error_is_2(self, tmp_path, monkeypatch):
        import fcdn.gradchecks as gc

        def boom(*a, **k):
            raise RuntimeError("unexpected")

        monkeypatch.setattr(gc, "run_all", boom)
        assert main(["gradcheck"]) == 2
