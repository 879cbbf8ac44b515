import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simprune.tensor import (
    ActivationKind,
    BnParams,
    ConvKernel,
    DenseHead,
    LayerBlock,
    ModelGraph,
    NumericalError,
    PoolSpec,
    ShapeError,
    Tensor4,
    activation,
    apply_activation,
    bn_forward,
    block_forward,
    conv2d,
    model_forward,
)


def naive_conv(x, w, stride, padding):
    """Sextuple-loop reference convolution, (C,H,W,B) in / out.

    Written independently of the production path: padding by copy, explicit
    accumulation in float64, no im2col.
    """
    c_in, h, wd, b = x.shape
    c_out, _, k, _ = w.shape
    padded = np.zeros((c_in, h + 2 * padding, wd + 2 * padding, b), dtype=np.float64)
    padded[:, padding : padding + h, padding : padding + wd, :] = x
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, h_out, w_out, b), dtype=np.float64)
    for co in range(c_out):
        for ci in range(c_in):
            for i in range(h_out):
                for j in range(w_out):
                    for ki in range(k):
                        for kj in range(k):
                            out[co, i, j, :] += (
                                w[co, ci, ki, kj]
                                * padded[ci, i * stride + ki, j * stride + kj, :]
                            )
    return out


def rand_tensor(rng, c, h, w, b):
    return Tensor4(rng.standard_normal((c, h, w, b)).astype(np.float32))


class TestTensor4:
    def test_layout_properties(self):
        t = Tensor4(np.zeros((2, 3, 4, 5), dtype=np.float32))
        assert (t.channels, t.height, t.width, t.batch) == (2, 3, 4, 5)
        assert t.channel_size == 3 * 4 * 5

    def test_channel_view_is_readonly(self):
        t = Tensor4(np.ones((2, 2, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            t.channel(0)[0, 0, 0] = 3.0

    def test_wrong_rank_rejected(self):
        with pytest.raises(ShapeError) as exc:
            Tensor4(np.zeros((2, 2, 2), dtype=np.float32))
        assert exc.value.dimension == "data"


class TestConvKernel:
    def test_default_padding_preserves_size(self):
        k = ConvKernel(np.zeros((1, 1, 3, 3), dtype=np.float32))
        assert k.padding == 1
        assert k.output_size(8, 8) == (8, 8)

    def test_explicit_geometry(self):
        k = ConvKernel(np.zeros((2, 1, 3, 3), dtype=np.float32), stride=2, padding=0)
        assert k.output_size(9, 9) == (4, 4)

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            ConvKernel(np.zeros((1, 1, 3, 2), dtype=np.float32))

    def test_rejects_bad_stride_and_padding(self):
        with pytest.raises(ShapeError):
            ConvKernel(np.zeros((1, 1, 3, 3), dtype=np.float32), stride=0)
        with pytest.raises(ShapeError):
            ConvKernel(np.zeros((1, 1, 3, 3), dtype=np.float32), padding=-1)

    def test_empty_output_rejected(self):
        k = ConvKernel(np.zeros((1, 1, 5, 5), dtype=np.float32), padding=0)
        with pytest.raises(ShapeError):
            k.output_size(4, 4)


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rand_tensor(rng, 3, 5, 5, 2)
        w = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        out = conv2d(x, ConvKernel(w, padding=0))
        assert np.array_equal(out.data, x.data)

    def test_zero_kernel(self):
        rng = np.random.default_rng(1)
        x = rand_tensor(rng, 2, 4, 4, 3)
        out = conv2d(x, ConvKernel(np.zeros((4, 2, 3, 3), dtype=np.float32)))
        assert not out.data.any()

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rand_tensor(rng, 2, 4, 4, 1)
        w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        got = conv2d(x, ConvKernel(w)).data
        want = naive_conv(x.data, w, stride=1, padding=1)
        assert np.abs(got - want).max() <= 1e-5

    def test_matches_oracle_strided_unpadded(self):
        rng = np.random.default_rng(3)
        x = rand_tensor(rng, 3, 7, 9, 2)
        w = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
        got = conv2d(x, ConvKernel(w, stride=2, padding=0)).data
        want = naive_conv(x.data, w, stride=2, padding=0)
        assert got.shape == want.shape
        assert np.abs(got - want).max() <= 1e-5

    def test_channel_mismatch_names_dimension(self):
        x = Tensor4(np.zeros((2, 4, 4, 1), dtype=np.float32))
        k = ConvKernel(np.zeros((1, 3, 3, 3), dtype=np.float32))
        with pytest.raises(ShapeError) as exc:
            conv2d(x, k)
        assert exc.value.dimension == "in_channels"

    @settings(max_examples=40, deadline=None)
    @given(
        c_in=st.integers(1, 4),
        c_out=st.integers(1, 4),
        k=st.integers(1, 4),
        size=st.integers(4, 8),
        batch=st.integers(1, 3),
        stride=st.integers(1, 2),
        pad=st.integers(0, 2),
        seed=st.integers(0, 2**31),
    )
    def test_oracle_equivalence_property(self, c_in, c_out, k, size, batch, stride, pad, seed):
        if (size + 2 * pad - k) < 0:
            return
        rng = np.random.default_rng(seed)
        x = rand_tensor(rng, c_in, size, size, batch)
        w = rng.standard_normal((c_out, c_in, k, k)).astype(np.float32)
        got = conv2d(x, ConvKernel(w, stride=stride, padding=pad)).data
        want = naive_conv(x.data, w, stride=stride, padding=pad)
        assert np.abs(got - want).max() <= 1e-5


class TestBnForward:
    def test_two_value_channel(self):
        x = Tensor4(np.array([1.0, 3.0], dtype=np.float32).reshape(1, 1, 2, 1))
        bn = BnParams(gamma=[1.0], beta=[0.0], eps=1e-12)
        out = bn_forward(x, bn)
        assert np.allclose(out.data.ravel(), [-1.0, 1.0], atol=1e-5)

    def test_zero_gamma_collapses_to_beta(self):
        rng = np.random.default_rng(4)
        x = rand_tensor(rng, 2, 3, 3, 4)
        out = bn_forward(x, BnParams(gamma=[0.0, 0.0], beta=[5.0, -1.0]))
        assert np.allclose(out.channel(0), 5.0)
        assert np.allclose(out.channel(1), -1.0)

    def test_output_moments(self):
        rng = np.random.default_rng(5)
        x = Tensor4((rng.standard_normal((3, 8, 8, 64)) * 2.0).astype(np.float32))
        out = bn_forward(x, BnParams(gamma=[2.0, 2.0, 2.0], beta=[5.0, 5.0, 5.0], eps=1e-5))
        for c in range(3):
            vals = out.channel(c).astype(np.float64)
            assert abs(vals.mean() - 5.0) / 5.0 <= 1e-3
            assert abs(vals.var() - 4.0) / 4.0 <= 1e-3

    def test_zero_variance_channel_is_legal(self):
        x = Tensor4(np.full((1, 2, 2, 2), 7.0, dtype=np.float32))
        out = bn_forward(x, BnParams(gamma=[3.0], beta=[1.0]))
        assert np.allclose(out.data, 1.0)  # (x - mu) == 0 everywhere

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_nonfinite_production_raises(self):
        # gamma is a legal float32; the normalized outlier (|dev|/sigma ~ 1.73)
        # scaled by it exceeds float32 range, which must surface as an error
        x = Tensor4(np.array([0.0, 0.0, 0.0, 1e30], dtype=np.float32).reshape(1, 1, 4, 1))
        bn = BnParams(gamma=[3e38], beta=[0.0])
        with pytest.raises(NumericalError):
            bn_forward(x, bn)

    def test_size_mismatch(self):
        x = Tensor4(np.zeros((2, 2, 2, 2), dtype=np.float32))
        with pytest.raises(ShapeError) as exc:
            bn_forward(x, BnParams(gamma=[1.0], beta=[0.0]))
        assert exc.value.dimension == "gamma"


class TestActivation:
    def test_relu(self):
        x = Tensor4(np.array([-1.0, 0.0, 2.0], dtype=np.float32).reshape(1, 1, 3, 1))
        assert np.array_equal(
            activation(x, ActivationKind.RELU).data.ravel(), [0.0, 0.0, 2.0]
        )

    def test_sigmoid_at_zero(self):
        x = Tensor4(np.zeros((1, 1, 1, 1), dtype=np.float32))
        assert activation(x, ActivationKind.SIGMOID).data.ravel()[0] == 0.5

    def test_sigmoid_extremes_stay_finite(self):
        x = np.array([-1e4, 1e4], dtype=np.float64)
        out = apply_activation(x, ActivationKind.SIGMOID)
        assert np.isfinite(out).all()
        assert out[0] == 0.0 and out[1] == 1.0

    def test_identity_returns_same_tensor(self):
        x = Tensor4(np.ones((1, 1, 1, 1), dtype=np.float32))
        assert activation(x, ActivationKind.IDENTITY) is x


class TestBlocksAndModel:
    def _block(self, rng, c_in=2, c_out=3, act=ActivationKind.RELU):
        return LayerBlock(
            conv=ConvKernel(rng.standard_normal((c_out, c_in, 3, 3)).astype(np.float32)),
            bn=BnParams(
                gamma=rng.uniform(0.5, 1.5, c_out).astype(np.float32),
                beta=rng.uniform(-1, 1, c_out).astype(np.float32),
            ),
            act=act,
        )

    def test_block_forward_is_composition(self):
        rng = np.random.default_rng(6)
        block = self._block(rng)
        x = rand_tensor(rng, 2, 6, 6, 4)
        stages = block_forward(x, block)
        pre = conv2d(x, block.conv)
        post = bn_forward(pre, block.bn)
        act = activation(post, block.act)
        assert np.array_equal(stages.pre_bn.data, pre.data)
        assert np.array_equal(stages.post_bn.data, post.data)
        assert np.array_equal(stages.post_act.data, act.data)

    def test_zero_kernel_zero_beta_relu(self):
        block = LayerBlock(
            conv=ConvKernel(np.zeros((2, 1, 3, 3), dtype=np.float32)),
            bn=BnParams(gamma=[1.0, 1.0], beta=[0.0, 0.0]),
        )
        x = Tensor4(np.random.default_rng(7).standard_normal((1, 4, 4, 2)).astype(np.float32))
        assert not block_forward(x, block).post_act.data.any()

    def test_bn_size_validated(self):
        with pytest.raises(ShapeError) as exc:
            LayerBlock(
                conv=ConvKernel(np.zeros((4, 1, 3, 3), dtype=np.float32)),
                bn=BnParams(gamma=[1.0, 1.0, 1.0], beta=[0.0, 0.0, 0.0]),
            )
        assert "gamma" in str(exc.value)

    def test_chain_validation(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ShapeError) as exc:
            ModelGraph(blocks=(self._block(rng, 2, 3), self._block(rng, 4, 2)))
        assert exc.value.dimension == "in_channels"

    def test_empty_model_rejected(self):
        with pytest.raises(ShapeError):
            ModelGraph(blocks=())

    def test_head_feature_count_validated(self):
        rng = np.random.default_rng(9)
        block = self._block(rng, 2, 3)
        with pytest.raises(ShapeError) as exc:
            ModelGraph(
                blocks=(block,),
                head=DenseHead(weights=np.zeros((10, 999), dtype=np.float32)),
                input_height=6,
                input_width=6,
            )
        assert exc.value.dimension == "head.in_features"

    def test_model_forward_chains_blocks(self):
        rng = np.random.default_rng(10)
        model = ModelGraph(blocks=(self._block(rng, 2, 3), self._block(rng, 3, 2)))
        x = rand_tensor(rng, 2, 8, 8, 4)
        acts = model_forward(x, model)
        assert len(acts) == 2
        again = block_forward(acts[0].post_act, model.blocks[1])
        assert np.array_equal(acts[1].post_act.data, again.post_act.data)

    def test_pooled_model_rejected_by_forward(self):
        rng = np.random.default_rng(11)
        block = LayerBlock(
            conv=ConvKernel(rng.standard_normal((3, 2, 3, 3)).astype(np.float32)),
            bn=BnParams(gamma=np.ones(3), beta=np.zeros(3)),
            pool=PoolSpec("max", 2),
        )
        model = ModelGraph(blocks=(block,))
        with pytest.raises(ShapeError) as exc:
            model_forward(Tensor4(np.zeros((2, 8, 8, 1), dtype=np.float32)), model)
        assert exc.value.dimension == "pool"

    def test_output_geometry_tracks_pools(self):
        rng = np.random.default_rng(12)
        b1 = LayerBlock(
            conv=ConvKernel(rng.standard_normal((3, 2, 3, 3)).astype(np.float32)),
            bn=BnParams(gamma=np.ones(3), beta=np.zeros(3)),
            pool=PoolSpec("max", 2),
        )
        b2 = LayerBlock(
            conv=ConvKernel(rng.standard_normal((4, 3, 3, 3)).astype(np.float32)),
            bn=BnParams(gamma=np.ones(4), beta=np.zeros(4)),
            pool=PoolSpec("avg", 2),
        )
        model = ModelGraph(blocks=(b1, b2), input_height=16, input_width=16)
        assert model.output_geometry() == [(8, 8), (4, 4)]
        assert model.has_pooling()
