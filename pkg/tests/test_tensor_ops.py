import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpnet import ConfigError, FormatError, Lcg64, ShapeError, Tensor, ops
from dpnet.tensor import load_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes


def rand(shape, seed=0, low=-1.0, high=1.0, dtype=np.float64):
    return Tensor(Lcg64(seed).uniform(shape, low, high).astype(dtype))


class TestRng:
    def test_vectorized_matches_sequential(self):
        a, b = Lcg64(42), Lcg64(42)
        seq = [a.next_u64() for _ in range(10_000)]
        assert list(b.fill_u64(10_000)) == seq

    def test_uniform_range_and_determinism(self):
        u = Lcg64(7).uniform((1000,), -2.0, 3.0)
        assert u.min() >= -2.0 and u.max() < 3.0
        assert np.array_equal(u, Lcg64(7).uniform((1000,), -2.0, 3.0))


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        m = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert np.array_equal(ops.matmul(eye, m).data, m.data)

    def test_zero_annihilator(self):
        a = Tensor(np.array([[1.0, 2.0]]))
        b = Tensor(np.array([[0.0], [0.0]]))
        assert np.array_equal(ops.matmul(a, b).data, np.array([[0.0]]))

    def test_against_triple_loop(self):
        a = rand((5, 7), seed=42)
        b = rand((7, 3), seed=43)
        ref = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(7):
                    ref[i, j] += a.data[i, k] * b.data[k, j]
        assert np.allclose(ops.matmul(a, b).data, ref, rtol=1e-13, atol=0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(5, 7\).*\(8, 3\)"):
            ops.matmul(rand((5, 7)), rand((8, 3)))

    def test_batched(self):
        a = rand((2, 4, 3), seed=1)
        b = rand((3, 5), seed=2)
        out = ops.matmul(a, b)
        assert out.shape == (2, 4, 5)
        assert np.allclose(out.data[1], a.data[1] @ b.data)


class TestConv2d:
    def test_pointwise_permutation(self):
        x = rand((1, 4, 3, 3), seed=3)
        w = np.zeros((4, 4, 1, 1))
        perm = [2, 0, 3, 1]  # output channel o reads input channel perm[o]
        for o, src in enumerate(perm):
            w[o, src, 0, 0] = 1.0
        y = ops.conv2d(x, Tensor(w))
        for o, src in enumerate(perm):
            assert np.array_equal(y.data[:, o], x.data[:, src])

    def test_depthwise_all_ones_sums(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        y = ops.conv2d(x, w, padding=1, groups=1).data[0, 0]
        assert y[1, 1] == 9
        for corner in (y[0, 0], y[0, 2], y[2, 0], y[2, 2]):
            assert corner == 4
        for edge in (y[0, 1], y[1, 0], y[1, 2], y[2, 1]):
            assert edge == 6

    def test_stride2_output_shape(self):
        x = rand((1, 1, 40, 40))
        y = ops.conv2d(x, rand((1, 1, 3, 3)), stride=2, padding=1)
        assert y.shape == (1, 1, 20, 20)

    def test_depthwise_identity_kernel(self):
        x = rand((2, 6, 5, 4), seed=9)
        w = Tensor(np.ones((6, 1, 1, 1)))
        y = ops.conv2d(x, w, groups=6)
        assert np.array_equal(y.data, x.data)

    def test_grouped_against_naive_loops(self):
        x = rand((2, 4, 5, 5), seed=11)
        w = rand((6, 2, 3, 3), seed=12)
        bias = rand((6,), seed=13)
        y = ops.conv2d(x, w, bias, stride=2, padding=1, groups=2)
        n, cout, ho, wo = y.shape
        ref = np.zeros(y.shape)
        cin_g, cout_g = 2, 3
        for b in range(n):
            for o in range(cout):
                g = o // cout_g
                for i in range(ho):
                    for j in range(wo):
                        acc = bias.data[o]
                        for c in range(cin_g):
                            for u in range(3):
                                for v in range(3):
                                    ii, jj = i * 2 + u - 1, j * 2 + v - 1
                                    if 0 <= ii < 5 and 0 <= jj < 5:
                                        acc += (
                                            x.data[b, g * cin_g + c, ii, jj]
                                            * w.data[o, c, u, v]
                                        )
                        ref[b, o, i, j] = acc
        assert np.allclose(y.data, ref, atol=1e-12)

    def test_indivisible_groups_rejected(self):
        with pytest.raises(ConfigError, match="groups"):
            ops.conv2d(rand((1, 6, 4, 4)), rand((6, 2, 1, 1)), groups=4)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ShapeError, match="exceeds"):
            ops.conv2d(rand((1, 1, 2, 2)), rand((1, 1, 5, 5)), padding=1)


class TestSoftmax:
    def test_uniform(self):
        y = ops.softmax(Tensor(np.zeros(3)), axis=0)
        assert np.allclose(y.data, [1 / 3] * 3)

    def test_reference_values(self):
        x = np.array([1.0, 2.0, 3.0])
        expected = np.exp(x) / np.exp(x).sum()
        assert np.allclose(ops.softmax(Tensor(x), axis=0).data, expected, rtol=1e-14)

    def test_shift_invariance(self):
        x = rand((4, 5), seed=2)
        shifted = Tensor(x.data + 137.25)
        a = ops.softmax(x, axis=1).data
        b = ops.softmax(shifted, axis=1).data
        assert np.allclose(a, b, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 4), st.integers(1, 6))
    def test_slices_sum_to_one(self, seed, rows, cols):
        x = Tensor(Lcg64(seed).uniform((rows, cols), -30.0, 30.0).astype(np.float32))
        y = ops.softmax(x, axis=-1)
        assert np.all(y.data > 0)
        assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)


class TestSigmoid:
    def test_zero_is_half(self):
        assert ops.sigmoid(Tensor(np.array([0.0]))).item() == 0.5

    def test_saturation(self):
        assert abs(ops.sigmoid(Tensor(np.array([50.0]))).item() - 1.0) < 1e-6

    def test_reference_values(self):
        x = rand((100,), seed=5, low=-20, high=20)
        expected = 1.0 / (1.0 + np.exp(-x.data))
        assert np.allclose(ops.sigmoid(x).data, expected, rtol=1e-14)

    def test_antisymmetry(self):
        x = rand((50,), seed=6, low=-10, high=10)
        a = ops.sigmoid(x).data
        b = ops.sigmoid(Tensor(-x.data)).data
        assert np.allclose(a, 1.0 - b, atol=1e-15)

    def test_range_open_interval(self):
        x = Tensor(np.array([-1e4, 0.0, 1e4], dtype=np.float64))
        y = ops.sigmoid(x).data
        assert np.all(y > 0) and np.all(y < 1)


class TestLayernorm:
    def _affine(self, c, dtype=np.float64):
        return ops.ones(c, dtype), ops.zeros(c, dtype)

    def test_three_point_slice(self):
        x = np.array([1.0, 2.0, 3.0])
        g, b = self._affine(3)
        got = ops.layernorm(Tensor(x), g, b).data
        var = ((x - 2.0) ** 2).mean()
        expected = (x - 2.0) / np.sqrt(var + 1e-5)
        assert np.allclose(got, expected, rtol=1e-14)
        assert np.allclose(got, [-1.2247, 0.0, 1.2247], atol=1e-4)

    def test_constant_slice_maps_to_zero(self):
        g, b = self._affine(3)
        got = ops.layernorm(Tensor(np.array([5.0, 5.0, 5.0])), g, b).data
        assert np.array_equal(got, np.zeros(3))

    def test_zero_gain_projects_to_bias(self):
        x = rand((2, 4), seed=8)
        beta = rand((4,), seed=9)
        got = ops.layernorm(x, ops.zeros(4, np.float64), beta).data
        assert np.allclose(got, np.broadcast_to(beta.data, (2, 4)))

    def test_normalizes_mean_and_variance(self):
        x = rand((6, 32), seed=10, low=-3, high=5)
        g, b = self._affine(32)
        y = ops.layernorm(x, g, b).data
        assert np.all(np.abs(y.mean(axis=-1)) < 1e-6)
        assert np.allclose(y.var(axis=-1), 1.0, atol=1e-4)


class TestGlobalAvgPool:
    def test_constant_preserved(self):
        y = ops.global_avg_pool(Tensor(np.full((2, 3, 4, 5), 2.75)))
        assert np.allclose(y.data, 2.75)

    def test_hand_mean(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert ops.global_avg_pool(x).item() == 2.5

    def test_output_shape(self):
        assert ops.global_avg_pool(rand((3, 7, 5, 9))).shape == (3, 7, 1, 1)


class TestBilinearResize:
    def test_constant_preserved_exactly(self):
        x = Tensor(np.full((1, 2, 3, 3), 1.3, dtype=np.float64))
        for th, tw in ((7, 5), (2, 2), (1, 9)):
            y = ops.bilinear_resize(x, th, tw)
            assert np.array_equal(y.data, np.full((1, 2, th, tw), 1.3))

    def test_2x2_to_4x4_half_pixel_values(self):
        x = np.array([[[[0.0, 2.0], [4.0, 6.0]]]])
        got = ops.bilinear_resize(Tensor(x), 4, 4).data[0, 0]
        ref = np.zeros((4, 4))
        for i in range(4):
            si = max((i + 0.5) * 2 / 4 - 0.5, 0.0)
            i0 = min(int(np.floor(si)), 1)
            i1 = min(i0 + 1, 1)
            li = si - i0
            for j in range(4):
                sj = max((j + 0.5) * 2 / 4 - 0.5, 0.0)
                j0 = min(int(np.floor(sj)), 1)
                j1 = min(j0 + 1, 1)
                lj = sj - j0
                top = (1 - lj) * x[0, 0, i0, j0] + lj * x[0, 0, i0, j1]
                bot = (1 - lj) * x[0, 0, i1, j0] + lj * x[0, 0, i1, j1]
                ref[i, j] = (1 - li) * top + li * bot
        assert np.allclose(got, ref, atol=1e-12)

    def test_shape_doubling(self):
        assert ops.bilinear_resize(rand((1, 3, 20, 20)), 40, 40).shape == (1, 3, 40, 40)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 6))
    def test_stays_in_input_range(self, seed, th, tw):
        x = rand((1, 2, 3, 4), seed=seed, low=-5, high=5)
        y = ops.bilinear_resize(x, th, tw).data
        assert y.min() >= x.data.min() - 1e-12
        assert y.max() <= x.data.max() + 1e-12


class TestChannelShuffle:
    def test_smallest_case(self):
        x = np.zeros((1, 4, 1, 1))
        x[0, :, 0, 0] = [1.0, 2.0, 3.0, 4.0]  # a b c d
        y = ops.channel_shuffle(Tensor(x), 2).data[0, :, 0, 0]
        assert list(y) == [1.0, 3.0, 2.0, 4.0]  # a c b d

    def test_inverse_law(self):
        x = rand((2, 12, 3, 3), seed=4)
        y = ops.channel_shuffle(ops.channel_shuffle(x, 3), 4)
        assert np.array_equal(y.data, x.data)

    def test_single_group_is_identity(self):
        x = rand((1, 6, 2, 2), seed=5)
        assert np.array_equal(ops.channel_shuffle(x, 1).data, x.data)

    def test_is_permutation_of_channel_slices(self):
        x = rand((1, 8, 3, 3), seed=6)
        y = ops.channel_shuffle(x, 4)
        orig = sorted(map(tuple, x.data[0].reshape(8, -1)))
        new = sorted(map(tuple, y.data[0].reshape(8, -1)))
        assert orig == new

    def test_indivisible_rejected(self):
        with pytest.raises(ConfigError, match="divisible"):
            ops.channel_shuffle(rand((1, 6, 2, 2)), 4)


class TestChannelSplitConcat:
    def test_two_channel_split(self):
        x = rand((1, 2, 2, 2), seed=7)
        a, b = ops.channel_split(x)
        assert np.array_equal(a.data, x.data[:, :1])
        assert np.array_equal(b.data, x.data[:, 1:])

    def test_round_trip_bitwise(self):
        x = rand((2, 8, 3, 5), seed=8)
        a, b = ops.channel_split(x)
        back = ops.concat([a, b], axis=1)
        assert np.array_equal(back.data, x.data)

    def test_odd_channels_rejected(self):
        with pytest.raises(ConfigError, match="even"):
            ops.channel_split(rand((1, 3, 2, 2)))


class TestElementwise:
    def test_additive_and_multiplicative_identity(self):
        x = rand((3, 4), seed=1)
        assert np.array_equal(ops.add(x, 0.0).data, x.data)
        assert np.array_equal(ops.mul(x, 1.0).data, x.data)

    def test_broadcast_row_scaling(self):
        x = rand((5, 3), seed=2)
        s = rand((5, 1), seed=3)
        y = ops.mul(s, x)
        assert np.allclose(y.data, s.data * x.data)

    def test_incompatible_shapes_rejected(self):
        with pytest.raises(ShapeError):
            ops.add(rand((3, 4)), rand((3, 5)))
        with pytest.raises(ShapeError, match="rank"):
            ops.add(rand((3, 4)), rand((4,)))

    def test_batchnorm_identity(self):
        x = rand((2, 3, 4, 4), seed=4)
        c = 3
        y = ops.batchnorm_inference(
            x,
            ops.zeros(c, np.float64),
            ops.ones(c, np.float64),
            ops.ones(c, np.float64),
            ops.zeros(c, np.float64),
            eps=0.0,
        )
        assert np.array_equal(y.data, x.data)

    def test_dtype_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="dtype"):
            ops.add(rand((2, 2), dtype=np.float32), rand((2, 2), dtype=np.float64))

    def test_maximum_minimum(self):
        a = rand((10,), seed=5)
        b = rand((10,), seed=6)
        assert np.array_equal(ops.maximum(a, b).data, np.maximum(a.data, b.data))
        assert np.array_equal(ops.minimum(a, b).data, np.minimum(a.data, b.data))

    def test_atan2_safe_at_origin(self):
        y = ops.atan2(Tensor(np.array([0.0, 1.0, 0.0])), Tensor(np.array([0.0, 0.0, 2.0])))
        assert np.allclose(y.data, [0.0, np.pi / 2, 0.0])


class TestDeterminism:
    def test_pipeline_bitwise_reproducible(self):
        def run():
            x = rand((2, 8, 6, 6), seed=123, dtype=np.float32)
            w = rand((8, 8, 3, 3), seed=124, dtype=np.float32)
            y = ops.conv2d(x, w, padding=1)
            y = ops.softmax(ops.reshape(y, (2, 8, 36)), axis=-1)
            return ops.sigmoid(y).data.tobytes()

        assert run() == run()


class TestDumpFormat:
    def test_round_trip(self, tmp_path):
        for dtype in (np.float32, np.float64):
            t = rand((2, 3, 4, 5), seed=9, dtype=dtype)
            path = tmp_path / f"t_{np.dtype(dtype).name}.dpnt"
            save_tensor(t, path)
            back = load_tensor(path)
            assert back.dtype == t.dtype
            assert back.shape == t.shape
            assert np.array_equal(back.data, t.data)

    def test_scalar_and_1d(self, tmp_path):
        t = Tensor(np.array(3.5, dtype=np.float64))
        assert tensor_from_bytes(tensor_to_bytes(t)).item() == 3.5

    def test_truncated_rejected(self):
        blob = tensor_to_bytes(rand((4, 4)))
        with pytest.raises(FormatError):
            tensor_from_bytes(blob[:-3])

    def test_bad_magic_rejected(self):
        blob = b"XXXX" + tensor_to_bytes(rand((2,)))[4:]
        with pytest.raises(FormatError, match="magic"):
            tensor_from_bytes(blob)

    def test_trailing_bytes_rejected(self):
        blob = tensor_to_bytes(rand((2,))) + b"\x00"
        with pytest.raises(FormatError):
            tensor_from_bytes(blob)
