"""Forward-semantics oracles for the tensor ops."""

import numpy as np
import pytest

from fuseseg import tensor as T
from fuseseg.errors import ContractError, DegenerateInputError, DimensionError


def _t(arr, dtype=np.float64):
    return T.Tensor(np.asarray(arr), dtype=dtype)


# ---------------------------------------------------------------- conv3d

def test_conv3d_zero_input_gives_bias():
    x = _t(np.zeros((2, 3, 3, 3)))
    rng = np.random.default_rng(0)
    w = _t(rng.standard_normal((3, 2, 3, 3, 3)))
    b = _t([1.0, -2.0, 0.5])
    out = T.conv3d(x, w, b, stride=1, padding=1)
    assert out.shape == (3, 3, 3, 3)
    for c, v in enumerate((1.0, -2.0, 0.5)):
        assert np.all(out.data[c] == v)


def test_conv3d_identity_kernel():
    rng = np.random.default_rng(1)
    x = _t(rng.standard_normal((3, 4, 5, 6)))
    w = np.zeros((3, 3, 1, 1, 1))
    for i in range(3):
        w[i, i, 0, 0, 0] = 1.0
    out = T.conv3d(x, _t(w), None, stride=1, padding=0)
    assert np.array_equal(out.data, x.data)


def test_conv3d_ones_window_counts():
    # all-ones 3^3 input, all-ones 3^3 kernel, same padding: each output
    # voxel counts the in-bounds window size
    x = _t(np.ones((1, 3, 3, 3)))
    w = _t(np.ones((1, 1, 3, 3, 3)))
    out = T.conv3d(x, w, None, stride=1, padding=1)
    assert out.data[0, 1, 1, 1] == 27.0
    assert out.data[0, 0, 0, 0] == 8.0
    assert out.data[0, 0, 0, 1] == 12.0
    assert out.data[0, 0, 1, 1] == 18.0


def test_conv3d_stride2_extents():
    x = _t(np.ones((1, 8, 8, 8)))
    w = _t(np.ones((2, 1, 3, 3, 3)))
    out = T.conv3d(x, w, None, stride=2, padding=1)
    assert out.shape == (2, 4, 4, 4)


def test_conv3d_errors():
    x = _t(np.ones((2, 4, 4, 4)))
    w_badc = _t(np.ones((1, 3, 3, 3, 3)))
    with pytest.raises(DimensionError):
        T.conv3d(x, w_badc, None, 1, 1)
    w_even = _t(np.ones((1, 2, 2, 2, 2)))
    with pytest.raises(DimensionError):
        T.conv3d(x, w_even, None, 1, 0)
    with pytest.raises(ContractError):
        T.conv3d(x, _t(np.ones((1, 2, 3, 3, 3))), None, 3, 1)
    # 5^3 kernel on a 4^3 input with no padding has no output voxels
    with pytest.raises(DimensionError):
        T.conv3d(x, _t(np.ones((1, 2, 5, 5, 5))), None, 1, 0)


# ---------------------------------------------------------- instance_norm

def test_instance_norm_standardizes():
    rng = np.random.default_rng(2)
    x = _t(rng.standard_normal((3, 4, 4, 4)) * 5 + 2)
    g = _t(np.ones(3))
    b = _t(np.zeros(3))
    out = T.instance_norm(x, g, b).data
    for c in range(3):
        assert abs(out[c].mean()) < 1e-10
        assert abs(out[c].var() - 1.0) < 1e-4


def test_instance_norm_constant_gives_beta():
    x = _t(np.full((2, 3, 3, 3), 7.0))
    out = T.instance_norm(x, _t([1.0, 1.0]), _t([0.25, -1.0])).data
    assert np.allclose(out[0], 0.25) and np.allclose(out[1], -1.0)


def test_instance_norm_two_voxel_oracle():
    # x = [0, 2], eps = 0: mean 1, population std 1, output [-1, 1]
    x = _t(np.array([0.0, 2.0]).reshape(1, 1, 1, 2))
    out = T.instance_norm(x, _t([1.0]), _t([0.0]), eps=0.0).data
    assert np.allclose(out.reshape(-1), [-1.0, 1.0], atol=1e-12)


def test_instance_norm_rejects_single_voxel():
    x = _t(np.ones((2, 1, 1, 1)))
    with pytest.raises(DegenerateInputError):
        T.instance_norm(x, _t(np.ones(2)), _t(np.zeros(2)))


# ------------------------------------------------------------ activations

def test_leaky_relu_values():
    x = _t([0.0, -2.0, 3.0])
    out = T.leaky_relu(x, 0.01).data
    assert out[0] == 0.0
    assert np.isclose(out[1], -0.02)
    assert out[2] == 3.0


def test_sigmoid_values():
    x = _t([0.0, np.log(3.0)])
    out = T.sigmoid(x).data
    assert out[0] == 0.5
    assert abs(out[1] - 0.75) < 1e-12


def test_sigmoid_strict_open_interval():
    # float64 saturates to exactly 1.0 near x ~ 37, so probe inside that
    x = _t([-30.0, -8.0, 0.0, 8.0, 30.0])
    out = T.sigmoid(x).data
    assert np.all(out > 0.0) and np.all(out < 1.0)


# ----------------------------------------------------- up/down sampling

def test_upsample2x_replicates():
    x = _t(np.array(5.0).reshape(1, 1, 1, 1))
    out = T.upsample2x(x)
    assert out.shape == (1, 2, 2, 2)
    assert np.all(out.data == 5.0)


def test_upsample_then_pool_is_identity():
    rng = np.random.default_rng(3)
    x = _t(rng.standard_normal((2, 3, 2, 4)))
    back = T.avg_pool2x(T.upsample2x(x))
    assert np.array_equal(back.data, x.data)


def test_avg_pool_blocks():
    x = np.zeros((1, 2, 2, 2))
    x[0, :, :, :] = np.arange(8).reshape(2, 2, 2)
    out = T.avg_pool2x(_t(x))
    assert out.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == 3.5


def test_avg_pool_odd_extent_rejected():
    with pytest.raises(DimensionError):
        T.avg_pool2x(_t(np.ones((1, 3, 2, 2))))


def test_global_avg_pool():
    x = np.zeros((2, 1, 1, 2))
    x[0] = 4.0
    x[1, 0, 0, 0] = 1.0
    x[1, 0, 0, 1] = 3.0
    out = T.global_avg_pool(_t(x))
    assert out.shape == (2,)
    assert out.data[0] == 4.0 and out.data[1] == 2.0


# -------------------------------------------------------- fully_connected

def test_fully_connected_oracles():
    x = _t([1.0, 2.0])
    zero_w = _t(np.zeros((3, 2)))
    b3 = _t([1.0, -1.0, 2.0])
    assert np.array_equal(T.fully_connected(x, zero_w, b3).data, b3.data)

    eye = _t(np.eye(2))
    z2 = _t(np.zeros(2))
    assert np.array_equal(T.fully_connected(x, eye, z2).data, x.data)

    w = _t([[1.0, 1.0], [0.0, 3.0]])
    b = _t([0.0, 1.0])
    assert np.array_equal(T.fully_connected(x, w, b).data, [3.0, 7.0])


def test_fully_connected_shape_mismatch():
    with pytest.raises(DimensionError):
        T.fully_connected(_t([1.0, 2.0, 3.0]), _t(np.ones((2, 2))), _t(np.zeros(2)))


# ---------------------------------------------------------------- concat

def test_concat_channels_order_and_roundtrip():
    rng = np.random.default_rng(4)
    a = _t(rng.standard_normal((2, 3, 3, 3)))
    b = _t(rng.standard_normal((2, 3, 3, 3)))
    cat = T.concat_channels([a, b])
    assert cat.shape == (4, 3, 3, 3)
    assert np.array_equal(cat.data[:2], a.data)
    assert np.array_equal(cat.data[2:], b.data)
    assert np.array_equal(T.narrow(cat, 0, 0, 2).data, a.data)
    assert np.array_equal(T.narrow(cat, 0, 2, 2).data, b.data)

    single = T.concat_channels([a])
    assert np.array_equal(single.data, a.data)


def test_concat_channels_spatial_mismatch():
    a = _t(np.ones((1, 2, 2, 2)))
    b = _t(np.ones((1, 2, 2, 3)))
    with pytest.raises(DimensionError):
        T.concat_channels([a, b])


# --------------------------------------------------------------- softmax

def test_softmax_equal_logits():
    x = _t(np.zeros((4, 2, 2, 2)))
    out = T.softmax_channels(x).data
    assert np.allclose(out, 0.25, atol=1e-15)


def test_softmax_shift_invariance():
    # integer-valued logits and an integer per-voxel shift keep the
    # max-subtraction exact, so the outputs match bitwise
    rng = np.random.default_rng(5)
    x = rng.integers(-3, 4, (3, 2, 2, 2)).astype(np.float64)
    shift = rng.integers(-8, 9, (1, 2, 2, 2)).astype(np.float64)
    a = T.softmax_channels(_t(x)).data
    b = T.softmax_channels(_t(x + shift)).data
    assert np.array_equal(a, b)


def test_softmax_two_channel_oracle():
    x = np.zeros((2, 1, 1, 1))
    x[1] = np.log(3.0)
    out = T.softmax_channels(_t(x)).data.reshape(-1)
    assert np.allclose(out, [0.25, 0.75], atol=1e-12)


def test_softmax_sums_to_one():
    rng = np.random.default_rng(6)
    x = _t(rng.standard_normal((5, 3, 4, 2)) * 10)
    out = T.softmax_channels(x).data
    assert np.all(np.abs(out.sum(axis=0) - 1.0) < 1e-6)


# ------------------------------------------------- reductions and shapes

def test_sum_mean_match_numpy():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 4, 5))
    for axis in (None, 0, 1, 2):
        for keep in (False, True):
            s = T.tsum(_t(x), axis=axis, keepdims=keep).data
            m = T.tmean(_t(x), axis=axis, keepdims=keep).data
            assert np.allclose(s, x.sum(axis=axis, keepdims=keep), atol=1e-12)
            assert np.allclose(m, x.mean(axis=axis, keepdims=keep), atol=1e-12)


def test_narrow_bounds():
    x = _t(np.arange(12.0).reshape(3, 4))
    got = T.narrow(x, 1, 1, 2).data
    assert np.array_equal(got, x.data[:, 1:3])
    with pytest.raises(DimensionError):
        T.narrow(x, 1, 3, 2)
    with pytest.raises(DimensionError):
        T.narrow(x, 2, 0, 1)


def test_reshape_checks_size():
    x = _t(np.arange(6.0))
    assert T.reshape(x, (2, 3)).shape == (2, 3)
    with pytest.raises(DimensionError):
        T.reshape(x, (4, 2))


def test_broadcast_arithmetic_matches_numpy():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((3, 1, 4))
    b = rng.standard_normal((1, 5, 4))
    assert np.allclose((_t(a) + _t(b)).data, a + b)
    assert np.allclose((_t(a) - _t(b)).data, a - b)
    assert np.allclose((_t(a) * _t(b)).data, a * b)
    assert np.allclose((_t(a) / _t(np.abs(b) + 1.0)).data, a / (np.abs(b) + 1.0))


def test_elementwise_unaries():
    x = np.array([0.25, 1.0, 4.0])
    assert np.allclose(T.texp(_t(x)).data, np.exp(x))
    assert np.allclose(T.tlog(_t(x)).data, np.log(x))
    assert np.allclose(T.tsqrt(_t(x)).data, np.sqrt(x))
    assert np.allclose(T.tabs(_t(x - 2.0)).data, np.abs(x - 2.0))
    assert np.allclose(T.clamp_min(_t(x), 0.5).data, np.maximum(x, 0.5))


def test_forward_determinism_bitwise():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 4, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3, 3))

    def run():
        h = T.conv3d(_t(x), _t(w), None, 1, 1)
        h = T.leaky_relu(h, 0.01)
        return T.softmax_channels(h).data

    assert np.array_equal(run(), run())
