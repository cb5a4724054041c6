import numpy as np
import pytest

from gaitstrip.modules.errors import (
    ChannelMismatchError,
    KernelExtentError,
    ParameterError,
    ShapeMismatchError,
)
from gaitstrip.modules.nn_ops import (
    ConvKernel,
    LinearMap,
    canonical_padding,
    conv3d,
    leaky_relu,
    linear_apply,
    maxpool3d,
)
from gaitstrip.modules.tensor import Tensor


def _naive_conv3d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, c, t, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    pt, ph, pw = (kt - 1) // 2, (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    out = np.zeros((n, o, t, h, wd))
    for ti in range(t):
        for hi in range(h):
            for wi in range(wd):
                patch = xp[:, :, ti : ti + kt, hi : hi + kh, wi : wi + kw]
                out[:, :, ti, hi, wi] = np.einsum("ncijk,ocijk->no", patch, w) + b
    return out


def test_canonical_padding():
    assert canonical_padding((3, 3, 3)) == (1, 1, 1)
    assert canonical_padding((1, 3, 3)) == (0, 1, 1)
    assert canonical_padding((3, 1, 3)) == (1, 0, 1)


def test_kernel_rejects_even_extents_and_bad_padding():
    with pytest.raises(KernelExtentError):
        ConvKernel.of(np.zeros((1, 1, 2, 3, 3)))
    with pytest.raises(KernelExtentError):
        ConvKernel(weights=Tensor(np.zeros((1, 1, 3, 3, 3))), bias=Tensor([0.0]), padding=(0, 0, 0))
    with pytest.raises(ShapeMismatchError):
        ConvKernel.of(np.zeros((2, 1, 3, 3, 3)), np.zeros(3))


def test_ones_kernel_counts_neighbours():
    out = conv3d(Tensor.ones(1, 1, 3, 3, 3), ConvKernel.of(np.ones((1, 1, 3, 3, 3)))).numpy()
    assert out[0, 0, 1, 1, 1] == 27.0
    assert out[0, 0, 0, 0, 0] == 8.0
    assert out[0, 0, 0, 1, 1] == 18.0


def test_identity_kernel_is_identity(rng):
    x = Tensor(rng.standard_normal((1, 3, 4, 5, 6)))
    np.testing.assert_array_equal(conv3d(x, ConvKernel.identity(3)).numpy(), x.numpy())


def test_zero_kernel_gives_bias(rng):
    k = ConvKernel.of(np.zeros((2, 3, 3, 3, 3)), [1.5, -2.0])
    out = conv3d(Tensor(rng.standard_normal((1, 3, 2, 4, 4))), k).numpy()
    np.testing.assert_array_equal(out[0, 0], np.full((2, 4, 4), 1.5, np.float32))
    np.testing.assert_array_equal(out[0, 1], np.full((2, 4, 4), -2.0, np.float32))


@pytest.mark.parametrize("extents", [(3, 3, 3), (1, 3, 3), (3, 1, 3), (3, 3, 1), (1, 1, 1)])
def test_conv3d_matches_direct_loop(rng, extents):
    x = rng.standard_normal((2, 3, 3, 5, 4)).astype(np.float32)
    w = rng.standard_normal((2, 3, *extents)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    out = conv3d(Tensor(x), ConvKernel.of(w, b)).numpy()
    assert out.shape == (2, 2, 3, 5, 4)
    np.testing.assert_allclose(out, _naive_conv3d(x, w, b), rtol=1e-5, atol=1e-5)


def test_conv3d_is_linear(rng):
    k = ConvKernel.of(rng.standard_normal((2, 2, 3, 3, 3)))
    a = rng.standard_normal((1, 2, 3, 4, 4))
    b = rng.standard_normal((1, 2, 3, 4, 4))
    lhs = conv3d(Tensor(2.0 * a + b), k).numpy()
    rhs = 2.0 * conv3d(Tensor(a), k).numpy() + conv3d(Tensor(b), k).numpy()
    np.testing.assert_allclose(lhs, rhs, atol=1e-4)


def test_conv3d_errors():
    k = ConvKernel.zeros(2, 3, (3, 3, 3))
    assert k.param_count == 2 * 3 * 27 + 2
    with pytest.raises(ChannelMismatchError):
        conv3d(Tensor.ones(1, 2, 3, 3, 3), k)
    with pytest.raises(ShapeMismatchError):
        conv3d(Tensor.ones(3, 3, 3, 3), k)


def test_maxpool_halves_spatial_extent():
    x = Tensor(np.arange(2 * 4 * 6).reshape(1, 1, 2, 4, 6))
    out = maxpool3d(x, (1, 2, 2), (1, 2, 2))
    assert out.shape == (1, 1, 2, 2, 3)
    assert out.numpy()[0, 0, 0, 0, 0] == 7.0
    assert out.numpy()[0, 0, 1, 1, 2] == 47.0


def test_maxpool_odd_extent_drops_remainder():
    out = maxpool3d(Tensor.ones(1, 2, 3, 5, 7), (1, 2, 2), (1, 2, 2))
    assert out.shape == (1, 2, 3, 2, 3)


def test_maxpool_errors():
    with pytest.raises(ShapeMismatchError):
        maxpool3d(Tensor.ones(1, 1, 1, 1, 4), (1, 2, 2), (1, 2, 2))
    with pytest.raises(ParameterError):
        maxpool3d(Tensor.ones(1, 1, 2, 4, 4), (1, 2, 2), (1, 0, 2))


def test_leaky_relu():
    out = leaky_relu(Tensor([-2.0, 0.0, 3.0]), 0.01).numpy()
    np.testing.assert_allclose(out, [-0.02, 0.0, 3.0], rtol=1e-6)
    np.testing.assert_array_equal(leaky_relu(Tensor([-2.0, 1.0]), 0.0).numpy(), [0.0, 1.0])
    with pytest.raises(ParameterError):
        leaky_relu(Tensor([1.0]), 1.0)
    with pytest.raises(ParameterError):
        leaky_relu(Tensor([1.0]), -0.1)


def test_linear_apply():
    m = LinearMap.of([[1.0, 2.0], [0.0, -1.0], [0.5, 0.5]], [0.0, 1.0, -1.0])
    assert (m.d_out, m.d_in, m.param_count) == (3, 2, 9)
    np.testing.assert_allclose(linear_apply(Tensor([3.0, 4.0]), m).numpy(), [11.0, -3.0, 2.5])
    with pytest.raises(ShapeMismatchError):
        linear_apply(Tensor([1.0, 2.0, 3.0]), m)
