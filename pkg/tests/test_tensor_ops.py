"""Forward oracles and gradient checks for the tensor ops."""
import numpy as np
import pytest

from app.errors import ConfigurationError
from app.tensor import (
    ConvSpec,
    Parameter,
    Tensor,
    activate,
    backward,
    concat_channels,
    conv2d,
    crop_spatial,
    dense,
    elementwise,
    global_avg_pool,
    max_pool2,
    mse_loss,
    pixel_shuffle,
    pixel_unshuffle,
    split_channels,
)


def conv_oracle(x, w, b, dilation, padding):
    """Direct summation over every output position and tap."""
    batch, cin, height, width = x.shape
    cout, _, kh, kw = w.shape
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = height + 2 * padding - dilation * (kh - 1)
    out_w = width + 2 * padding - dilation * (kw - 1)
    out = np.zeros((batch, cout, out_h, out_w))
    for n in range(batch):
        for o in range(cout):
            for r in range(out_h):
                for c in range(out_w):
                    total = b[o]
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                total += w[o, ci, i, j] * padded[n, ci, r + i * dilation, c + j * dilation]
                    out[n, o, r, c] = total
    return out


def pool_oracle(x):
    batch, channels, height, width = x.shape
    out = np.zeros((batch, channels, (height + 1) // 2, (width + 1) // 2))
    for r in range(out.shape[2]):
        for c in range(out.shape[3]):
            rows = [min(2 * r, height - 1), min(2 * r + 1, height - 1)]
            cols = [min(2 * c, width - 1), min(2 * c + 1, width - 1)]
            out[:, :, r, c] = np.max(x[:, :, rows][:, :, :, cols].reshape(batch, channels, -1), axis=-1)
    return out


def shuffle_oracle(x, r):
    """Index map: out[b, c, r*h + i, r*w + j] = x[b, c*r*r + i*r + j, h, w]."""
    batch, channels, height, width = x.shape
    c_out = channels // (r * r)
    out = np.zeros((batch, c_out, height * r, width * r))
    for c in range(c_out):
        for i in range(r):
            for j in range(r):
                out[:, c, i::r, j::r] = x[:, c * r * r + i * r + j]
    return out


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


@pytest.mark.parametrize("trial", range(50))
def test_conv2d_matches_direct_summation(trial):
    local = np.random.default_rng(trial)
    dilation = 2 if trial % 2 else 1
    kernel = int(local.choice([1, 3]))
    spec = ConvSpec.same(int(local.integers(1, 4)), int(local.integers(1, 4)), kernel, dilation=dilation)
    x = local.standard_normal((int(local.integers(1, 3)), spec.in_channels,
                               int(local.integers(4, 8)), int(local.integers(4, 8))))
    w = local.standard_normal(spec.weight_shape)
    b = local.standard_normal(spec.out_channels)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), spec)
    assert out.shape == x.shape[:1] + (spec.out_channels,) + x.shape[2:]
    assert rel_err(out.data, conv_oracle(x, w, b, dilation, spec.padding)) < 1e-6


@pytest.mark.parametrize("trial", range(50))
def test_max_pool2_matches_oracle(trial):
    local = np.random.default_rng(100 + trial)
    x = local.standard_normal((2, 3, int(local.integers(2, 9)), int(local.integers(2, 9))))
    assert rel_err(max_pool2(Tensor(x)).data, pool_oracle(x)) < 1e-6


@pytest.mark.parametrize("trial", range(50))
def test_global_avg_pool_and_dense_match_oracles(trial):
    local = np.random.default_rng(200 + trial)
    x = local.standard_normal((3, 5, 4, 6))
    pooled = global_avg_pool(Tensor(x)).data
    expected = np.array([[x[n, c].sum() / 24.0 for c in range(5)] for n in range(3)])
    assert rel_err(pooled, expected) < 1e-6

    w = local.standard_normal((5, 7))
    b = local.standard_normal(7)
    out = dense(Tensor(pooled), Tensor(w), Tensor(b)).data
    looped = np.array([[sum(pooled[n, i] * w[i, m] for i in range(5)) + b[m] for m in range(7)]
                       for n in range(3)])
    assert rel_err(out, looped) < 1e-6


@pytest.mark.parametrize("trial", range(50))
def test_pixel_shuffle_matches_index_map(trial):
    local = np.random.default_rng(300 + trial)
    r = int(local.choice([2, 3]))
    x = local.standard_normal((2, r * r * int(local.integers(1, 4)), 3, 4))
    assert rel_err(pixel_shuffle(Tensor(x), r).data, shuffle_oracle(x, r)) < 1e-6


def test_pixel_unshuffle_inverts_shuffle(rng):
    x = rng.standard_normal((2, 8, 5, 3))
    assert np.array_equal(pixel_unshuffle(pixel_shuffle(Tensor(x), 2), 2).data, x)


def test_max_pool2_tie_goes_to_first_in_row_major_order():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    loss = mse_loss(max_pool2(x), np.zeros((1, 1, 1, 1)))
    backward(loss)
    assert x.grad[0, 0, 0, 0] != 0
    assert np.count_nonzero(x.grad) == 1


def test_max_pool2_odd_extent_replicates_edge():
    x = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
    out = max_pool2(Tensor(x)).data
    np.testing.assert_array_equal(out[0, 0], [[4, 5], [7, 8]])


def test_shape_errors_are_configuration_errors():
    with pytest.raises(ConfigurationError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), None, ConvSpec.same(3, 1))
    with pytest.raises(ConfigurationError):
        pixel_shuffle(Tensor(np.zeros((1, 3, 2, 2))), 2)
    with pytest.raises(ConfigurationError):
        dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), None)
    with pytest.raises(ConfigurationError):
        elementwise(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 3))), "mul", broadcast="channel_scalar")
    with pytest.raises(ConfigurationError):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), None,
               ConvSpec(in_channels=1, out_channels=1, kernel=(5, 5)))


def test_sigmoid_range_and_relu(rng):
    x = Tensor(rng.standard_normal((4, 4)) * 5)
    s = activate(x, "sigmoid").data
    assert np.all((s > 0) & (s < 1))
    np.testing.assert_array_equal(activate(x, "relu").data, np.maximum(x.data, 0))
    assert activate(x, "linear") is x


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_sigmoid_stays_open_when_saturated(dtype):
    x = Tensor(np.array([[40.0, -800.0, 1e3, -1e3]]), dtype=dtype)
    s = activate(x, "sigmoid").data
    assert s.dtype == dtype
    assert np.all((s > 0) & (s < 1))
    assert s[0, 0] == s[0, 2] == 1 - np.finfo(dtype).epsneg
    assert s[0, 1] == s[0, 3] == np.finfo(dtype).tiny


def test_split_inverts_concat(rng):
    parts = [Tensor(rng.standard_normal((2, c, 3, 3))) for c in (1, 4, 2)]
    joined = concat_channels(parts)
    assert joined.shape == (2, 7, 3, 3)
    for original, piece in zip(parts, split_channels(joined, [1, 4, 2])):
        np.testing.assert_array_equal(original.data, piece.data)


# gradient checks, one per op


def test_conv2d_gradients(grad_check, rng):
    for dilation in (1, 2):
        spec = ConvSpec.same(2, 3, 3, dilation=dilation)
        leaves = [Tensor(rng.standard_normal((2, 2, 6, 5)), requires_grad=True),
                  Parameter(rng.standard_normal(spec.weight_shape)),
                  Parameter(rng.standard_normal(3))]
        assert grad_check(lambda t: conv2d(t[0], t[1], t[2], spec), leaves) < 1e-4


def test_max_pool2_gradients(grad_check, rng):
    for shape in ((2, 2, 6, 6), (1, 2, 5, 7)):
        leaves = [Tensor(rng.standard_normal(shape), requires_grad=True)]
        assert grad_check(lambda t: max_pool2(t[0]), leaves) < 1e-4


def test_pixel_shuffle_and_unshuffle_gradients(grad_check, rng):
    leaves = [Tensor(rng.standard_normal((1, 8, 3, 3)), requires_grad=True)]
    assert grad_check(lambda t: pixel_shuffle(t[0], 2), leaves) < 1e-4
    leaves = [Tensor(rng.standard_normal((1, 2, 4, 6)), requires_grad=True)]
    assert grad_check(lambda t: pixel_unshuffle(t[0], 2), leaves) < 1e-4


def test_pool_dense_and_activation_gradients(grad_check, rng):
    leaves = [Tensor(rng.standard_normal((2, 4, 3, 3)), requires_grad=True)]
    assert grad_check(lambda t: global_avg_pool(t[0]), leaves) < 1e-4
    leaves = [Tensor(rng.standard_normal((3, 4)), requires_grad=True),
              Parameter(rng.standard_normal((4, 5))), Parameter(rng.standard_normal(5))]
    assert grad_check(lambda t: dense(t[0], t[1], t[2]), leaves) < 1e-4
    for kind in ("relu", "sigmoid"):
        leaves = [Tensor(rng.standard_normal((3, 5)) + 0.05, requires_grad=True)]
        assert grad_check(lambda t: activate(t[0], kind), leaves) < 1e-4


def test_elementwise_concat_split_crop_gradients(grad_check, rng):
    a = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    assert grad_check(lambda t: elementwise(t[0], t[1], "mul", broadcast="channel_scalar"), [a, b]) < 1e-4
    c = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    assert grad_check(lambda t: elementwise(t[0], t[1], "mul"), [a, c]) < 1e-4
    assert grad_check(lambda t: elementwise(t[0], t[1], "add"), [a, c]) < 1e-4
    assert grad_check(lambda t: concat_channels([t[0], t[1]]), [a, c]) < 1e-4
    assert grad_check(lambda t: split_channels(t[0], [1, 2])[1], [a]) < 1e-4
    assert grad_check(lambda t: crop_spatial(t[0], 3, 2), [a]) < 1e-4


def test_mse_loss_gradient(grad_check, rng):
    target = rng.standard_normal((2, 1, 3, 3))
    leaves = [Tensor(rng.standard_normal((2, 1, 3, 3)), requires_grad=True)]
    # projection of a scalar output: still checks d(mse)/d(prediction)
    assert grad_check(lambda t: mse_loss(t[0], target), leaves) < 1e-4
