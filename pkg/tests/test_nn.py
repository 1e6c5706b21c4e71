import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densitynet.gradcheck import check_primitives, numeric_gradient, relative_error
from densitynet.nn.blocks import DenseBlock, ResidualBlock, SEBlock
from densitynet.nn.checkpoint import load_checkpoint, save_checkpoint
from densitynet.nn.layers import (
    BatchNorm2d,
    Conv2d,
    DepthwiseConv2d,
    ReLU,
    ShapeError,
    softmax,
)
from densitynet.nn.model import ModelSpec, build_model, default_specs

from oracles import naive_conv2d


def tiny_spec(family="residual", **kw):
    kw.setdefault("input_size", (32, 64))
    return ModelSpec(family, kw.pop("stage_blocks", (1, 1)), kw.pop("base_channels", 8), **kw)


class TestPrimitives:
    def test_relu_example(self):
        np.testing.assert_array_equal(ReLU().forward(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])

    def test_softmax_symmetric(self):
        np.testing.assert_array_equal(softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]])

    def test_softmax_extreme_logits(self):
        p = softmax(np.array([[1000.0, -1000.0]]))
        assert np.all(np.isfinite(p)) and p[0, 0] == 1.0

    @pytest.mark.parametrize("k,s,p,h,w", [(3, 1, 1, 7, 9), (3, 2, 1, 8, 7), (1, 2, 0, 6, 6),
                                           (4, 4, 0, 12, 8), (8, 4, 2, 16, 20), (3, 1, 1, 1, 1),
                                           (3, 2, 1, 2, 3), (5, 3, 2, 11, 10)])
    def test_conv_matches_naive(self, k, s, p, h, w):
        rng = np.random.default_rng(k * 100 + s)
        conv = Conv2d(3, 4, k, s, p, rng)
        x = rng.standard_normal((2, 3, h, w))
        ref = naive_conv2d(x, conv.params["weight"], s, p)
        np.testing.assert_allclose(conv.forward(x), ref, atol=1e-12)

    @pytest.mark.parametrize("s", [1, 2])
    def test_depthwise_matches_naive(self, s):
        rng = np.random.default_rng(s)
        dw = DepthwiseConv2d(3, 3, s, 1, rng)
        x = rng.standard_normal((2, 3, 9, 8))
        wt = dw.params["weight"]  # (C, k, k)
        ref = np.concatenate([naive_conv2d(x[:, c:c + 1], wt[c:c + 1, None], s, 1) for c in range(3)], axis=1)
        np.testing.assert_allclose(dw.forward(x), ref, atol=1e-12)

    def test_conv_wrong_channels(self):
        with pytest.raises(ShapeError):
            Conv2d(3, 4, 3, 1, 1).forward(np.zeros((1, 2, 5, 5)))

    def test_batchnorm_eval_is_affine(self):
        bn = BatchNorm2d(3)
        bn.buffers["running_mean"][:] = [0.5, -1.0, 2.0]
        bn.buffers["running_var"][:] = [4.0, 1.0, 0.25]
        bn.params["gamma"][:] = [2.0, 1.0, 3.0]
        x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
        expected = (x - bn.buffers["running_mean"][None, :, None, None]) \
            / np.sqrt(bn.buffers["running_var"][None, :, None, None] + bn.eps) \
            * bn.params["gamma"][None, :, None, None]
        np.testing.assert_allclose(bn.forward(x, training=False), expected, atol=1e-12)

    def test_batchnorm_train_statistics(self):
        x = np.random.default_rng(1).standard_normal((4, 2, 5, 5)) * 3 + 1
        y = BatchNorm2d(2).forward(x, training=True)
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-3)

    def test_finite_difference_suite(self):
        results = check_primitives(instances=3, seed=5)
        assert len(results) >= 15
        for r in results:
            assert r.passed, r.describe()

    def test_relative_error_helper(self):
        assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
        v = np.array([1.0, -2.0])
        g = numeric_gradient(lambda: float(np.sum(v ** 2)), v, 1e-5)
        np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-8)


class TestSEBlock:
    def test_zero_channel_stays_zero(self):
        se = SEBlock(4, 2, np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((2, 4, 5, 5))
        x[:, 2] = 0.0
        y = se.forward(x)
        assert y.shape == x.shape
        assert np.all(y[:, 2] == 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 4))
    def test_attenuates_strictly(self, seed, channels, reduction):
        rng = np.random.default_rng(seed)
        se = SEBlock(channels, reduction, rng)
        x = rng.standard_normal((2, channels, 3, 4))
        y = se.forward(x)
        nz = x != 0
        assert np.all(np.abs(y[nz]) < np.abs(x[nz]))

    def test_bypass_is_plain_block(self):
        blk = ResidualBlock(4, 4, 1, 2, np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((2, 4, 6, 6))
        blk.se.bypass = True
        y = blk.forward(x)
        plain = np.maximum(blk.bn2.forward(blk.conv2.forward(np.maximum(blk.bn1.forward(blk.conv1.forward(x)), 0)))
                           + x, 0)
        np.testing.assert_allclose(y, plain, atol=1e-12)

    def test_wrong_channels(self):
        with pytest.raises(ShapeError):
            SEBlock(4).forward(np.zeros((1, 3, 2, 2)))


class TestModel:
    def test_dense_channel_arithmetic(self):
        blk = DenseBlock(16, 3, 8)
        assert blk.out_channels == 40
        assert blk.forward(np.zeros((2, 16, 4, 4))).shape == (2, 40, 4, 4)

    def test_param_count_by_hand(self):
        spec = ModelSpec("residual", (1,), 8)
        # stem conv 8*1*8*8, stem bn 2*8; block conv 8*8*3*3 twice, bn 2*8 twice;
        # SE hidden 8//4=2: fc1 8*2+2, fc2 2*8+8; head 8*2+2
        expected = 512 + 16 + 2 * 576 + 2 * 16 + 18 + 24 + 18
        assert expected == 1772
        assert build_model(spec).num_parameters() == expected

    def test_same_seed_same_parameters(self):
        a, b = build_model(tiny_spec()), build_model(tiny_spec())
        for k, v in a.parameters().items():
            np.testing.assert_array_equal(v, b.parameters()[k])
        c = build_model(tiny_spec(seed=1))
        assert any(not np.array_equal(v, c.parameters()[k]) for k, v in a.parameters().items())

    @pytest.mark.parametrize("spec", default_specs(), ids=lambda s: s.name)
    def test_default_specs_logits_and_probabilities(self, spec):
        model = build_model(spec).eval()
        x = np.random.default_rng(0).random((3, 1, 256, 128))
        logits = model.forward(x)
        assert logits.shape == (3, 2)
        np.testing.assert_array_equal(logits, model.forward(x))
        np.testing.assert_allclose(softmax(logits).sum(axis=1), 1.0, atol=1e-6)

    def test_every_family_has_attention(self):
        for fam in ("residual", "dense", "inverted_bottleneck"):
            assert build_model(tiny_spec(fam)).se_blocks()

    def test_mode_required(self):
        with pytest.raises(RuntimeError, match="mode"):
            build_model(tiny_spec()).forward(np.zeros((2, 1, 64, 32)))

    def test_wrong_input_channels(self):
        with pytest.raises(ShapeError):
            build_model(tiny_spec()).eval().forward(np.zeros((2, 3, 64, 32)))

    def test_dropout_only_in_training(self):
        model = build_model(tiny_spec(dropout=0.5))
        x = np.random.default_rng(0).random((4, 1, 64, 32))
        model.train()
        model.reseed_dropout(1)
        a = model.forward(x)
        model.reseed_dropout(2)
        b = model.forward(x)
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("bad", [dict(family="vit"), dict(dropout=0.1), dict(stage_blocks=()),
                                     dict(num_classes=3), dict(stem_kernel=2, stem_stride=4)])
    def test_invalid_spec(self, bad):
        kw = dict(family="residual")
        kw.update(bad)
        with pytest.raises(ValueError):
            ModelSpec(**kw)


class TestCheckpoint:
    def test_round_trip_and_bytes(self, tmp_path):
        model = build_model(tiny_spec("dense"))
        model.buffers()[next(iter(model.buffers()))][:] = 0.25
        save_checkpoint(tmp_path / "a.ckpt", model, {"note": "x"})
        save_checkpoint(tmp_path / "b.ckpt", model, {"note": "x"})
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        back, meta = load_checkpoint(tmp_path / "a.ckpt")
        assert meta == {"note": "x"} and back.mode == "eval" and back.spec == model.spec
        x = np.random.default_rng(0).random((2, 1, 64, 32))
        np.testing.assert_array_equal(back.forward(x), model.eval().forward(x))

    def test_float32_round_trip(self, tmp_path):
        model = build_model(tiny_spec(), dtype=np.float32)
        save_checkpoint(tmp_path / "m.ckpt", model)
        back, _ = load_checkpoint(tmp_path / "m.ckpt")
        assert back.dtype == np.float32

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"nope" + b"\0" * 20)
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x.ckpt")
