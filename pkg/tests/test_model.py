import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fcdn.autodiff import Tensor, precision
from fcdn.autodiff import tensor as T
from fcdn.connectivity import ChannelWeights
from fcdn.model import (CheckpointError, DistillError, FcdnConfig, FcdnModel, FcdnNetwork, ModelError, Projector,
                        VisionTransformer, bicubic_resize, checkpoint_bytes, cubic_kernel, distillation_loss,
                        fcdn_forward, fit_fcdn, load_checkpoint, normalize_and_stack, prepare_bands, read_header,
                        resize_matrix, save_checkpoint, uniform_weights)
from fcdn.model.checkpoint import MAGIC


def tiny_cfg(**kw):
    base = dict(conv_channels=(2, 3, 4), conv_kernels=(4, 4, 8), pool_kernel=8, image_size=16, patch_size=8,
                embed_dim=16, heads=2, depth=2, epochs=2, teacher_epochs=1, batch_size=8)
    base.update(kw)
    return FcdnConfig.desk(**base)


def keys_oracle(img, h_out, w_out, a=-0.5):
    """Per-pixel separable cubic convolution, half-pixel grid; interior only."""
    def k(s):
        s = abs(s)
        if s <= 1:
            return (a + 2) * s ** 3 - (a + 3) * s ** 2 + 1
        if s < 2:
            return a * s ** 3 - 5 * a * s ** 2 + 8 * a * s - 4 * a
        return 0.0

    h_in, w_in = img.shape
    out = np.full((h_out, w_out), np.nan)
    for i in range(h_out):
        y = (i + 0.5) * h_in / h_out - 0.5
        y0 = int(np.floor(y))
        for j in range(w_out):
            x = (j + 0.5) * w_in / w_out - 0.5
            x0 = int(np.floor(x))
            if y0 - 1 < 0 or y0 + 2 >= h_in or x0 - 1 < 0 or x0 + 2 >= w_in:
                continue
            acc = 0.0
            for m in range(-1, 3):
                for n in range(-1, 3):
                    acc += img[y0 + m, x0 + n] * k(y - (y0 + m)) * k(x - (x0 + n))
            out[i, j] = acc
    return out


class TestConfig:
    def test_paper_preset(self):
        c = FcdnConfig.paper()
        assert (c.n_channels, c.t_in, c.fs) == (64, 1000, 250.0)
        assert c.conv_channels == (40, 80, 160) and c.conv_kernels == (20, 20, 40)
        assert (c.image_size, c.patch_size, c.embed_dim, c.heads, c.depth) == (224, 16, 192, 3, 12)

    def test_desk_preset(self):
        c = FcdnConfig.desk()
        assert (c.n_channels, c.fs, c.t_in, c.image_size, c.embed_dim, c.depth) == (16, 125.0, 250, 32, 64, 4)

    @pytest.mark.parametrize("bad", [dict(image_size=30, patch_size=8), dict(conv_channels=(4, 4, 8)),
                                     dict(n_classes=1), dict(embed_dim=10, heads=4), dict(bands=("alpha",))])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            FcdnConfig.desk(**bad)

    def test_dict_round_trip_and_fingerprint(self):
        c = tiny_cfg()
        assert FcdnConfig.from_dict(c.to_dict()) == c
        assert c.fingerprint() != tiny_cfg(lr=1.0).fingerprint()
        with pytest.raises((ValueError, TypeError)):
            FcdnConfig.from_dict({**c.to_dict(), "bogus": 1})

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            FcdnConfig.preset("laptop")


class TestBicubic:
    def test_kernel_values(self):
        np.testing.assert_allclose(cubic_kernel([0, 1, 2, 0.5]), [1, 0, 0, 0.5625])

    @pytest.mark.parametrize("size", [(9, 7), (16, 16), (13, 21)])
    def test_interior_matches_loop_oracle(self, rng, size):
        img = rng.standard_normal((5, 6))
        with precision(np.float64):
            out = bicubic_resize(Tensor(img), size).data
        ref = keys_oracle(img, *size)
        m = ~np.isnan(ref)
        assert m.sum() > 0
        np.testing.assert_allclose(out[m], ref[m], atol=1e-12)

    @given(st.integers(2, 12), st.integers(2, 12), st.integers(1, 40), st.integers(1, 40),
           st.floats(-1e3, 1e3))
    def test_constant_exact(self, h, w, ho, wo, c):
        x = np.full((h, w), c, dtype=np.float32)
        assert np.all(bicubic_resize(Tensor(x), (ho, wo)).data == np.float32(c))

    @given(st.integers(2, 10), st.integers(2, 10), st.integers(1, 64), st.integers(1, 64),
           st.floats(-2, 2), st.floats(-2, 2))
    def test_ramp_reproduced(self, h, w, ho, wo, a, b):
        yy, xx = np.mgrid[0:h, 0:w]
        img = (a * yy / h + b * xx / w).astype(np.float32)
        out = bicubic_resize(Tensor(img), (ho, wo)).data
        yo = (np.arange(ho) + 0.5) * h / ho - 0.5
        xo = (np.arange(wo) + 0.5) * w / wo - 0.5
        ref = a * yo[:, None] / h + b * xo[None, :] / w
        assert np.max(np.abs(out - ref)) < 1e-5

    def test_matrix_consistent(self, rng):
        x = rng.standard_normal((4, 6))
        with precision(np.float64):
            out = bicubic_resize(Tensor(x), (10, 5)).data
        np.testing.assert_allclose(out, resize_matrix(4, 10) @ x @ resize_matrix(6, 5).T, atol=1e-12)

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            bicubic_resize(Tensor(np.ones((1, 5))), (4, 4))
        with pytest.raises(ValueError):
            bicubic_resize(Tensor(np.full((3, 3), np.nan)), (4, 4))


class TestNormalizeStack:
    def test_range_and_flags(self, rng):
        maps = [Tensor(rng.standard_normal((2, 4, 4))) for _ in range(2)] + [Tensor(np.ones((2, 4, 4)))]
        img, flags = normalize_and_stack(maps)
        assert img.shape == (2, 3, 4, 4)
        for b in range(2):
            for c in range(2):
                assert img.data[b, c].min() == 0 and img.data[b, c].max() == pytest.approx(255, rel=1e-6)
        np.testing.assert_array_equal(flags, [[False, False, True]] * 2)
        assert np.all(img.data[:, 2] == 0)

    def test_single_map_squeezed(self, rng):
        img, flags = normalize_and_stack([Tensor(rng.standard_normal((3, 3)))] * 3)
        assert img.shape == (3, 3, 3) and flags.shape == (3,)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            normalize_and_stack([Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 3)))])


class TestNetwork:
    def test_desk_shapes(self, rng):
        cfg = FcdnConfig.desk()
        net = FcdnNetwork(cfg, 0).eval()
        acts = {}
        with T.no_grad():
            out, deg = net(rng.standard_normal((2, 3, 16, 250)).astype(np.float32), np.ones((3, 16)), acts)
        assert acts["band0.bn1"].shape == (2, 4, 16, 243)
        assert acts["band0.elu3"].shape == (2, 12, 16, 236)
        assert acts["band2.drop2"].shape == (2, 12, 16, 1)
        assert acts["image"].shape == (2, 3, 32, 32)
        assert out.logits_cls.shape == (2, 4) and deg.shape == (2, 3)

    def test_eval_logits_average_heads(self, rng):
        cfg = tiny_cfg()
        model = FcdnModel.create(cfg, 0, with_teacher=False)
        model.set_weights(uniform_weights(cfg))
        x = rng.standard_normal((2, 3, 16, 40)).astype(np.float32)
        with T.no_grad():
            z = fcdn_forward(model, x, "eval").data
            out, _ = model.student.eval()(x, model.weight_matrix())
        np.testing.assert_allclose(z, 0.5 * (out.logits_cls.data + out.logits_dist.data), rtol=1e-6)
        np.testing.assert_allclose(model.predict_proba(x).sum(1), 1.0)

    def test_accepts_list_of_bands(self, rng):
        cfg = tiny_cfg()
        model = FcdnModel.create(cfg, 0, with_teacher=False)
        model.set_weights(uniform_weights(cfg))
        x = rng.standard_normal((3, 16, 40)).astype(np.float32)
        with T.no_grad():
            a = fcdn_forward(model, [x[0:1], x[1:2], x[2:3]]).data
            b = fcdn_forward(model, x).data
        np.testing.assert_array_equal(a, b)

    def test_input_checks(self, rng):
        cfg = tiny_cfg()
        model = FcdnModel.create(cfg, 0, with_teacher=False)
        with pytest.raises(ModelError):
            fcdn_forward(model, np.zeros((3, 16, 40)))  # weights not fitted
        model.set_weights(uniform_weights(cfg))
        with pytest.raises(ModelError):
            fcdn_forward(model, np.zeros((3, 16, cfg.min_input_length - 1)))
        with pytest.raises(ModelError):
            fcdn_forward(model, np.zeros((3, 15, 40)))
        with pytest.raises(ModelError):
            fcdn_forward(model, np.zeros((2, 16, 40)))
        with pytest.raises(ModelError):
            model.set_weights([ChannelWeights.uniform(15)] * 3)

    def test_min_input_length(self):
        assert FcdnConfig.paper().min_input_length == 32 + 19 + 19
        assert tiny_cfg().min_input_length == 8 + 3 + 3

    def test_zero_input(self):
        # biases and BN shifts survive, so logits are not the head biases;
        # the output is the same for every sample and every electrode
        net = FcdnNetwork(tiny_cfg(), 0).eval()
        acts = {}
        with T.no_grad():
            out, _ = net(np.zeros((2, 3, 16, 40), np.float32), np.ones((3, 16)), acts)
        post = acts["band0.drop2"].data
        np.testing.assert_array_equal(post, np.broadcast_to(post[:, :, :1], post.shape))
        z = out.logits_cls.data
        assert np.all(np.isfinite(z)) and np.array_equal(z[0], z[1])

    def test_channel_weight_zero_silences_channel(self, rng):
        cfg = tiny_cfg()
        net = FcdnNetwork(cfg, 0).eval()
        x = rng.standard_normal((1, 3, 16, 40)).astype(np.float32)
        w = np.ones((3, 16))
        w[:, 5] = 0
        acts = {}
        with T.no_grad():
            net(x, w, acts)
            x2 = x.copy()
            x2[:, :, 5] += 100.0
            acts2 = {}
            net(x2, w, acts2)
        np.testing.assert_array_equal(acts["image"].data, acts2["image"].data)

    def test_seeded_init_deterministic(self):
        a = FcdnNetwork(tiny_cfg(), 3).named_parameters()
        b = FcdnNetwork(tiny_cfg(), 3).named_parameters()
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)


class TestDistillation:
    def _vits(self, dt=16):
        s = VisionTransformer(8, 4, 3, 8, 2, 2, 3, mlp_ratio=2.0, seed=1)
        t = VisionTransformer(8, 4, 3, dt, 2, 2, 3, mlp_ratio=2.0, distill_token=False, seed=2)
        return s, t

    def test_q_is_a_distribution(self, rng):
        s, t = self._vits()
        img = rng.standard_normal((2, 3, 8, 8))
        d = distillation_loss(s(img), t(img), np.array([0, 1]), Projector(16, 8, 2))
        assert d.q.sum() == pytest.approx(1.0) and np.all(d.q > 0)
        assert np.all((d.sims >= 0) & (d.sims <= 2))

    def test_identical_states_give_zero_similarity_term(self, rng):
        s = VisionTransformer(8, 4, 3, 8, 2, 2, 3, mlp_ratio=2.0, seed=1)
        img = rng.standard_normal((2, 3, 8, 8))
        out = s(img)
        d = distillation_loss(out, out, np.array([0, 1]), Projector(8, 8, 2))
        assert float(d.similarity_term.data) == pytest.approx(0.0, abs=1e-6)
        assert float(d.l_distill.data) == pytest.approx(float(d.l_cls.data), rel=1e-6)

    def test_errors(self, rng):
        s, t = self._vits()
        img = rng.standard_normal((2, 3, 8, 8))
        y = np.array([0, 1])
        with pytest.raises(DistillError):
            distillation_loss(s(img), None, y)
        with pytest.raises(DistillError):
            distillation_loss(s(img), t(img), y)  # width differs, no projector
        deep = VisionTransformer(8, 4, 3, 8, 3, 2, 3, mlp_ratio=2.0, seed=2)
        with pytest.raises(DistillError):
            distillation_loss(s(img), deep(img), y, Projector(8, 8, 3))

    def test_projector_identity_init(self):
        p = Projector(8, 8, 2)
        np.testing.assert_array_equal(p.maps[0].weight.data, np.eye(8))


class TestTrainingAndCheckpoint:
    @pytest.fixture(scope="class")
    @classmethod
    def fitted(cls, tiny_ds):
        cfg = tiny_cfg()
        tr, va = tiny_ds.subset(np.arange(16)), tiny_ds.subset(np.arange(16, 24))
        return fit_fcdn(tr, va, cfg, seed=4), (tr, va, cfg)

    def test_history_and_metadata(self, fitted):
        (model, hist), _ = fitted
        assert len(hist.val_acc) == 2 and len(hist.teacher_acc) == 1
        for k in ("train_hash", "preprocessing_hash", "best_epoch", "channel_names"):
            assert k in model.metadata
        assert model.teacher is not None and model.fitted

    def test_deterministic_bytes(self, fitted):
        (model, _), (tr, va, cfg) = fitted
        again, _ = fit_fcdn(tr, va, cfg, seed=4)
        assert checkpoint_bytes(model) == checkpoint_bytes(again)

    def test_round_trip(self, fitted, tmp_path, tiny_ds):
        (model, _), (_, _, cfg) = fitted
        save_checkpoint(model, tmp_path / "m.ckp")
        back = load_checkpoint(tmp_path / "m.ckp")
        assert checkpoint_bytes(back) == (tmp_path / "m.ckp").read_bytes()
        x = prepare_bands(tiny_ds, cfg)[:5]
        np.testing.assert_array_equal(model.logits(x), back.logits(x))
        hdr = read_header(tmp_path / "m.ckp")
        assert hdr["format_version"] == 1 and hdr["has_teacher"]

    def test_layout(self, fitted, tmp_path):
        (model, _), _ = fitted
        raw = checkpoint_bytes(model)
        assert raw[:8] == MAGIC
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12:12 + hlen])
        assert list(header) == sorted(header)

    @pytest.mark.parametrize("mutate, msg", [
        (lambda r: b"NOTACKPT" + r[8:], "magic"),
        (lambda r: r[:11], "truncated"),
        (lambda r: r[:12] + b"}" + r[13:], "corrupt"),
        (lambda r: r[:-8], "payload"),
    ])
    def test_corruption(self, fitted, tmp_path, mutate, msg):
        (model, _), _ = fitted
        (tmp_path / "bad.ckp").write_bytes(mutate(checkpoint_bytes(model)))
        with pytest.raises(CheckpointError, match=msg):
            load_checkpoint(tmp_path / "bad.ckp")

    def test_single_class_rejected(self, tiny_ds):
        from fcdn.model import TrainingError

        one = tiny_ds.subset(np.flatnonzero(tiny_ds.labels == 0))
        with pytest.raises(TrainingError):
            fit_fcdn(one, None, tiny_cfg(), seed=0)

    def test_uniform_weights_override(self, tiny_ds):
        cfg = tiny_cfg(epochs=1, use_teacher=False)
        model, _ = fit_fcdn(tiny_ds, None, cfg, seed=0, weights=uniform_weights(cfg))
        np.testing.assert_array_equal(model.weight_matrix(), 1.0)
