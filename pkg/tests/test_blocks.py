import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smalltarget import ops
from smalltarget.blocks import (CARG, ESTD, Backbone, BlockConfig, ConfigError, ESTVSSBlock,
                                InputProjection, SqueezeExcite, VisionClueMerge, scale_depth,
                                scale_width)
from smalltarget.nn import initialize_all_stats
from smalltarget.tensor import Parameter, Tensor

from conftest import analytic_grad, fd_grad, max_rel


def _gradcheck(module, x, rng, tol=1e-4):
    w = rng.standard_normal(module(x).shape)
    fn = lambda: ops.sum(ops.mul(module(x), Tensor(w)))
    ps = [x] + module.parameters()
    a = np.concatenate([g.ravel() for g in analytic_grad(fn, ps)])
    f = np.concatenate([g.ravel() for g in fd_grad(fn, ps)])
    return max_rel(a, f)


class TestInputProjection:
    def test_identity_conv_eval(self, rng):
        proj = InputProjection(3)
        proj.conv.weight.data[...] = np.eye(3).reshape(3, 3, 1, 1)
        proj.bn.initialize_stats()
        proj.bn.stats.eps = 0.0
        proj.eval()
        x = rng.standard_normal((1, 3, 4, 4))
        np.testing.assert_allclose(proj(Tensor(x)).data, x / (1 + np.exp(-x)), rtol=1e-5)

    def test_zero_conv(self, rng):
        proj = InputProjection(2)
        proj.conv.weight.data[...] = 0
        proj.bn.beta.data[:] = [0.4, -1.0]
        out = proj(Tensor(rng.standard_normal((2, 2, 3, 3)))).data
        beta = np.array([0.4, -1.0])
        np.testing.assert_allclose(out[0, :, 0, 0], beta / (1 + np.exp(-beta)), rtol=1e-5)

    def test_gradient(self, rng, f64):
        assert _gradcheck(InputProjection(3, rng), Parameter(rng.standard_normal((2, 3, 3, 3))), rng) < 1e-4


class TestESTD:
    def test_se_uniform_input_equal_weights(self, rng):
        se = SqueezeExcite(8, rng=rng)
        x = np.broadcast_to(np.full((1, 8, 1, 1), 0.7), (1, 8, 3, 3)).copy()
        se(Tensor(x))
        # equal descriptors do not imply equal outputs through unequal fc rows,
        # but equal fc rows must give equal weights
        se.fc2.weight.data[...] = se.fc2.weight.data[0]
        se.fc2.bias.data[...] = se.fc2.bias.data[0]
        se(Tensor(x))
        assert np.ptp(se.last_weights) == 0

    def test_zero_final_conv(self, rng):
        estd = ESTD(4, rng=rng)
        estd.conv3.weight.data[...] = 0
        out = estd(Tensor(rng.standard_normal((1, 4, 3, 3)))).data
        np.testing.assert_allclose(out, np.broadcast_to(estd.conv3.bias.data.reshape(1, 4, 1, 1), out.shape))

    def test_gradient(self, rng, f64):
        assert _gradcheck(ESTD(8, rng=rng), Parameter(rng.standard_normal((2, 8, 3, 3))), rng) < 1e-4


class TestCARG:
    def test_constant_input_same_descriptors(self, rng):
        carg = CARG(4, rng=rng, shared_branches=True)
        x = Tensor(np.full((1, 4, 5, 5), 0.3))
        # the depthwise conv pads with zeros, so feed the gate a constant map directly
        carg.channel_attention(x)
        np.testing.assert_allclose(carg.last["x_out_avgpool"], carg.last["x_out_maxpool"], rtol=1e-6)

    def test_zero_branch_weights(self, rng):
        carg = CARG(4, rng=rng)
        for mlp in (carg.avg_mlp, carg.max_mlp):
            for p in mlp.parameters():
                p.data[...] = 0
        att = carg.channel_attention(Tensor(rng.standard_normal((2, 4, 3, 3)))).data
        np.testing.assert_array_equal(att, 0.5)

    def test_constant_spatial_attention(self, rng):
        carg = CARG(4, spatial_kernel=1, rng=rng)
        att = carg.spatial_attention(Tensor(np.full((1, 4, 5, 5), -0.2))).data
        assert np.ptp(att) == 0

    def test_hot_pixel_localizes(self, rng):
        carg = CARG(4, spatial_kernel=1, rng=rng)
        carg.spatial.weight.data[...] = [[[[0.0]], [[1.0]]]]  # respond to the channel max only
        x = np.zeros((1, 4, 6, 6))
        x[0, 2, 4, 1] = 5.0
        att = carg.spatial_attention(Tensor(x)).data[0, 0]
        assert np.unravel_index(att.argmax(), att.shape) == (4, 1)
        assert (att[np.arange(6) != 4].max() < att[4, 1])

    @pytest.mark.parametrize("k", [1, 3, 7])
    def test_kernel_choices(self, rng, k):
        carg = CARG(4, spatial_kernel=k, rng=rng)
        assert carg(Tensor(rng.standard_normal((1, 4, 8, 8)))).shape == (1, 4, 8, 8)

    def test_bad_kernel(self):
        with pytest.raises(ConfigError):
            CARG(4, spatial_kernel=5)

    def test_forced_open_gates(self, rng):
        carg = CARG(4, rng=rng)
        carg.force_channel = carg.force_spatial = 1.0
        x = Tensor(rng.standard_normal((1, 4, 5, 5)))
        np.testing.assert_allclose(carg(x).data, carg.dwconv(x).data + x.data, rtol=1e-6)

    def test_forced_closed_gates(self, rng):
        carg = CARG(4, rng=rng)
        carg.force_channel = carg.force_spatial = 0.0
        x = rng.standard_normal((1, 4, 5, 5))
        np.testing.assert_array_equal(carg(Tensor(x)).data, x)

    def test_gradient(self, rng, f64):
        carg = CARG(8, spatial_kernel=3, rng=rng)
        assert _gradcheck(carg, Parameter(rng.standard_normal((2, 8, 5, 5))), rng) < 1e-4


class TestESTVSSBlock:
    def test_ss2d_switch_leaves_local_path(self, rng):
        block = ESTVSSBlock(8, 4, rng=rng)
        block.ss2d_enabled = False
        x = Tensor(rng.standard_normal((1, 8, 4, 4)))
        p = block.proj(x)
        expect = ops.add(block.carg(block.estd(p)), x).data
        np.testing.assert_allclose(block(x).data, expect, rtol=1e-6)

    def test_plain_vss_form(self, rng):
        block = ESTVSSBlock(4, 2, use_estd=False, use_carg=False, rng=rng)
        x = Tensor(rng.standard_normal((1, 4, 3, 3)))
        expect = block.ss2d_norm(block.ss2d(block.proj(x))).data + x.data
        np.testing.assert_allclose(block(x).data, expect, rtol=1e-6)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.sampled_from([4, 8]),
           st.integers(1, 6), st.integers(1, 6))
    def test_shape_preserved(self, seed, n, c, h, w):
        rng = np.random.default_rng(seed)
        block = ESTVSSBlock(c, 2, rng=rng)
        assert block(Tensor(rng.standard_normal((n, c, h, w)))).shape == (n, c, h, w)

    def test_gradient_at_16x16(self, rng, f64):
        block = ESTVSSBlock(8, 2, rng=rng)
        x = Parameter(rng.standard_normal((1, 8, 16, 16)))
        w = rng.standard_normal(x.shape)
        fn = lambda: ops.sum(ops.mul(block(x), Tensor(w)))
        ps = [x] + block.parameters()
        grads = analytic_grad(fn, ps)
        # directional derivatives along random unit directions over all tensors
        for _ in range(3):
            vs = [rng.standard_normal(p.shape) for p in ps]
            norm = np.sqrt(sum((v * v).sum() for v in vs))
            vs = [v / norm for v in vs]
            base = [p.data.copy() for p in ps]
            for p, b, v in zip(ps, base, vs):
                p.data = b + 1e-6 * v
            up = fn().item()
            for p, b, v in zip(ps, base, vs):
                p.data = b - 1e-6 * v
            down = fn().item()
            for p, b in zip(ps, base):
                p.data = b
            analytic = sum((g * v).sum() for g, v in zip(grads, vs))
            assert abs(analytic - (up - down) / 2e-6) / abs(analytic) < 1e-4

    def test_eval_output_finite_after_training_steps(self, rng):
        block = ESTVSSBlock(8, 4, rng=rng)
        for _ in range(3):
            block(Tensor(rng.uniform(0, 1, (2, 8, 6, 6))))
        block.eval()
        assert np.isfinite(block(Tensor(rng.uniform(0, 1, (1, 8, 6, 6)))).data).all()


class TestVisionClueMerge:
    def test_sub_pixels_become_channels(self):
        x = ops.space_to_depth(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
        np.testing.assert_array_equal(x.data.ravel(), [1.0, 3.0, 2.0, 4.0])

    def test_selector_conv_recovers_sub_pixels(self, rng):
        c = 3
        merge = VisionClueMerge(c, rng=rng)
        merge.conv.weight.data[...] = np.eye(4 * c)[:2 * c].reshape(2 * c, 4 * c, 1, 1)
        merge.conv.bias.data[...] = 0
        x = rng.standard_normal((1, c, 4, 6))
        out = merge(Tensor(x)).data
        np.testing.assert_allclose(out[:, :c], x[:, :, 0::2, 0::2], rtol=1e-6)
        np.testing.assert_allclose(out[:, c:], x[:, :, 1::2, 0::2], rtol=1e-6)

    def test_halves_spatial_dims(self, rng):
        out = VisionClueMerge(4, rng=rng)(Tensor(rng.standard_normal((2, 4, 8, 6))))
        assert out.shape == (2, 8, 4, 3)


class TestBackbone:
    def test_scaling_rules(self):
        cfg = BlockConfig()
        assert cfg.blocks() == [1, 2, 2, 1]
        assert scale_width(256, 0.25) == 64
        assert scale_depth(1, 0.1) == 1

    def test_feature_strides(self, rng):
        bb = Backbone(BlockConfig(width_scale=0.0625, ssm_state_dim=2))
        feats = bb(Tensor(rng.uniform(0, 1, (1, 6, 128, 128))))
        assert [f.shape[2] for f in feats] == [16, 8, 4]
        assert [f.shape[1] for f in feats] == bb.out_channels

    def test_validation(self):
        with pytest.raises(ConfigError):
            BlockConfig(width_scale=0.0).validate()
        with pytest.raises(ConfigError):
            BlockConfig(spatial_kernel=2).validate()

    def test_eval_after_stats_initialized(self, rng):
        bb = Backbone(BlockConfig(width_scale=0.0625, ssm_state_dim=2))
        initialize_all_stats(bb)
        bb.eval()
        feats = bb(Tensor(rng.uniform(0, 1, (1, 6, 64, 64))))
        assert all(np.isfinite(f.data).all() for f in feats)


class TestAttentionRanges:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 50.0))
    def test_gates_in_open_unit_interval(self, seed, mag):
        rng = np.random.default_rng(seed)
        c = int(rng.choice([4, 8]))
        x = Tensor((rng.standard_normal((1, c, 5, 5)) * mag).astype(np.float32))
        se = SqueezeExcite(c, rng=rng)
        carg = CARG(c, spatial_kernel=int(rng.choice([1, 3, 7])), rng=rng)
        assert se(x).shape == x.shape and carg(x).shape == x.shape
        for v in (se.last_weights, carg.last["x_channelattention"], carg.last["x_spatialattention"]):
            assert ((v > 0) & (v < 1)).all()
