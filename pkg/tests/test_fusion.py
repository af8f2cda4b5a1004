import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smalltarget import ops
from smalltarget.fusion import (MEPF, REFERENCE_PARAM_COUNT, AlignmentError, ConcatFusion,
                                MaskGenerator, ModalFactor, MultispectralPair, feature_fuse,
                                mepf_param_count, split)
from smalltarget.nn import Conv2d
from smalltarget.tensor import Parameter, ShapeError, Tensor

from conftest import analytic_grad, fd_grad, max_rel


def _zero(module):
    for p in module.parameters():
        p.data[...] = 0


class TestSplit:
    def test_inverse_of_concat(self, rng):
        rgb, ir = rng.uniform(0, 1, (2, 3, 4, 4)), rng.uniform(0, 1, (2, 3, 4, 4))
        a, b = split(ops.concat([Tensor(rgb), Tensor(ir)], 1))
        np.testing.assert_array_equal(a.data, rgb)
        np.testing.assert_array_equal(b.data, ir)

    def test_zero_input(self):
        a, b = split(Tensor(np.zeros((1, 6, 2, 2))))
        assert not a.data.any() and not b.data.any()

    def test_index_bookkeeping(self, rng):
        x = rng.standard_normal((2, 6, 3, 5))
        a, b = split(Tensor(x))
        for c in range(3):
            np.testing.assert_array_equal(a.data[:, c], x[:, c])
            np.testing.assert_array_equal(b.data[:, c], x[:, 3 + c])

    def test_rejects_wrong_channels(self):
        with pytest.raises(ShapeError):
            split(Tensor(np.zeros((1, 5, 2, 2))))


class TestMaskGenerator:
    def test_zero_weights_half(self, rng):
        g = MaskGenerator()
        _zero(g)
        np.testing.assert_array_equal(g(Tensor(rng.uniform(0, 1, (1, 3, 5, 5)))).data, 0.5)

    def test_receptive_field_5x5(self):
        g = MaskGenerator(rng=np.random.default_rng(3))
        for p in g.parameters():
            p.data[...] = np.abs(p.data) + 0.05  # positive weights: no cancellation through relu
        base = np.zeros((1, 3, 11, 11))
        poked = base.copy()
        poked[0, 1, 5, 5] = 1.0
        diff = np.abs(g(Tensor(poked)).data - g(Tensor(base)).data).max(axis=1)[0]
        rows, cols = np.nonzero(diff > 0)
        assert (rows.min(), rows.max(), cols.min(), cols.max()) == (3, 7, 3, 7)

    def test_wrong_channels(self):
        with pytest.raises(ShapeError):
            MaskGenerator()(Tensor(np.zeros((1, 4, 3, 3))))


class TestFeatureFuse:
    @pytest.mark.parametrize("mval,factor", [(0.0, 1.0), (1.0, 2.0), (0.5, 1.5)])
    def test_constant_mask(self, rng, mval, factor):
        conv = Conv2d(3, 3, 3, rng=rng)
        x = np.full((1, 3, 4, 4), 0.5) + 0.1 * rng.standard_normal((1, 3, 4, 4))
        out = feature_fuse(Tensor(x), Tensor(np.full(x.shape, mval)), conv).data
        np.testing.assert_allclose(out, conv(Tensor(factor * x)).data, rtol=1e-5, atol=1e-6)


class TestModalFactor:
    def test_zero_weights_half(self, rng):
        m = ModalFactor()
        _zero(m)
        np.testing.assert_array_equal(m(Tensor(rng.standard_normal((2, 6, 3, 3)))).data, 0.5)

    def test_uniform_descriptor(self):
        consts = np.arange(6.0)
        z = Tensor(np.broadcast_to(consts.reshape(1, 6, 1, 1), (1, 6, 4, 4)).copy())
        np.testing.assert_array_equal(ModalFactor().descriptor(z).data[0], consts)

    def test_swap_permutes_descriptor(self, rng):
        z = rng.standard_normal((1, 6, 3, 3))
        swapped = np.concatenate([z[:, 3:], z[:, :3]], 1)
        m = ModalFactor()
        d, ds = m.descriptor(Tensor(z)).data[0], m.descriptor(Tensor(swapped)).data[0]
        np.testing.assert_array_equal(ds, np.concatenate([d[3:], d[:3]]))


class TestMEPF:
    def test_forced_unit_factor(self, rng):
        mepf = MEPF(rng=rng)
        x = Tensor(rng.uniform(0, 1, (1, 6, 6, 6)))
        mepf.force_factor = 1.0
        _, _, out_rgb, out_ir = mepf.branches(x)
        np.testing.assert_allclose(mepf(x).data, np.concatenate([out_rgb.data, out_ir.data], 1))

    def test_zero_factor_channel(self, rng):
        mepf = MEPF(rng=rng)
        mepf.modal.fc2.weight.data[2] = 0
        mepf.modal.fc2.bias.data[2] = -1e4  # the gate bottoms out at the smallest normal float
        out = mepf(Tensor(rng.uniform(0, 1, (1, 6, 5, 5)))).data
        np.testing.assert_allclose(out[:, 2], 0.0, atol=1e-30)
        assert np.abs(out[:, 3]).max() > 1e-3
        mepf.force_factor = 0.0
        assert not mepf(Tensor(rng.uniform(0, 1, (1, 6, 5, 5)))).data.any()

    def test_parameter_budget(self):
        count = MEPF().num_parameters()
        assert count == mepf_param_count() == 549
        assert count <= 2000
        assert count - REFERENCE_PARAM_COUNT == -1101

    def test_param_names_unique(self):
        names = [n for n, _ in MEPF().named_parameters()]
        assert len(names) == len(set(names))
        assert "maskgen_rgb.conv1.weight" in names

    def test_shape_and_gradient(self, rng, f64):
        mepf = MEPF(rng=rng)
        for p in mepf.parameters():
            p.data = p.data.astype(np.float64)
        x = Parameter(rng.uniform(0, 1, (2, 6, 4, 4)))
        assert mepf(x).shape == (2, 6, 4, 4)
        w = rng.standard_normal((2, 6, 4, 4))
        fn = lambda: ops.sum(ops.mul(mepf(x), Tensor(w)))
        ps = [x] + mepf.parameters()
        a = np.concatenate([g.ravel() for g in analytic_grad(fn, ps)])
        f = np.concatenate([g.ravel() for g in fd_grad(fn, ps)])
        assert max_rel(a, f) < 1e-4

    def test_fuse_pair(self, rng):
        pair = MultispectralPair(rng.uniform(0, 1, (3, 8, 8)), rng.uniform(0, 1, (3, 8, 8)))
        out = MEPF(rng=rng).fuse(pair)
        assert out.shape == (1, 6, 8, 8)
        np.testing.assert_array_equal(ConcatFusion().fuse(pair).data, pair.stacked().data)

    def test_unregistered_pair_refused(self, rng):
        pair = MultispectralPair(rng.uniform(0, 1, (3, 4, 4)), rng.uniform(0, 1, (3, 4, 4)),
                                 registered=False)
        with pytest.raises(AlignmentError):
            MEPF().fuse(pair)

    def test_pair_validation(self):
        with pytest.raises(ShapeError):
            MultispectralPair(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
        with pytest.raises(ValueError):
            MultispectralPair(np.full((3, 4, 4), 1.5), np.zeros((3, 4, 4)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 9), st.integers(2, 9))
    def test_mask_and_factor_ranges(self, seed, h, w):
        rng = np.random.default_rng(seed)
        mepf = MEPF(rng=rng)
        out = mepf(Tensor(rng.uniform(0, 1, (1, 6, h, w))))
        assert out.shape == (1, 6, h, w)
        for m in (*mepf.last_masks, mepf.last_factor):
            assert ((m > 0) & (m < 1)).all()
