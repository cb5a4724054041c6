import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaitstrip.modules.errors import (
    AxisError,
    ParameterError,
    RankMismatchError,
    ShapeMismatchError,
)
from gaitstrip.modules.tensor import (
    Tensor,
    concat,
    elementwise_add,
    pad_zero,
    power_mean,
    reduce_max,
    slice_region,
)

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, width=32)
non_negative = st.floats(min_value=0.0, max_value=10.0, allow_nan=False, width=32)


def test_tensor_is_read_only():
    t = Tensor([[1, 2], [3, 4]])
    assert t.shape == (2, 2)
    assert t.numpy().dtype == np.float32
    with pytest.raises(ValueError, match="read-only"):
        t.numpy()[0, 0] = 5.0


def test_tensor_rejects_zero_extent_and_scalars():
    with pytest.raises(ShapeMismatchError):
        Tensor(np.zeros((2, 0)))
    with pytest.raises(RankMismatchError):
        Tensor(3.0)


def test_add_identity_and_definition():
    b = Tensor([[1.5, -2.0], [0.25, 7.0]])
    np.testing.assert_array_equal(elementwise_add(Tensor.zeros(2, 2), b).numpy(), b.numpy())
    np.testing.assert_array_equal(
        elementwise_add(Tensor([1, 2]), Tensor([3, 4])).numpy(),
        [4, 6],
    )


def test_add_self_doubles(rng):
    a = Tensor(rng.standard_normal((4, 3)))
    np.testing.assert_array_equal(elementwise_add(a, a).numpy(), 2 * a.numpy())


def test_add_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeMismatchError, match=r"\(2, 2\).*\(2, 3\)"):
        elementwise_add(Tensor.zeros(2, 2), Tensor.zeros(2, 3))


def test_pad_zero_examples():
    np.testing.assert_array_equal(pad_zero(Tensor([5]), [(1, 1)]).numpy(), [0, 5, 0])
    x = Tensor.ones(2, 2)
    np.testing.assert_array_equal(pad_zero(x, [(0, 0), (0, 0)]).numpy(), x.numpy())
    padded = pad_zero(x, [(0, 0), (1, 0)])
    assert padded.shape == (2, 3)
    np.testing.assert_array_equal(padded.numpy()[:, 0], [0, 0])


def test_pad_zero_errors():
    with pytest.raises(RankMismatchError):
        pad_zero(Tensor.ones(2, 2), [(1, 1)])
    with pytest.raises(ParameterError):
        pad_zero(Tensor.ones(2), [(-1, 0)])


@given(
    arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite),
    st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=2, max_size=2),
)
@settings(max_examples=50, deadline=None)
def test_pad_then_slice_is_bit_exact(x, pads):
    t = Tensor(x)
    padded = pad_zero(t, pads)
    starts = [before for before, _ in pads]
    stops = [before + d for (before, _), d in zip(pads, t.shape, strict=True)]
    back = slice_region(padded, starts, stops)
    assert back.numpy().tobytes() == t.numpy().tobytes()


def test_reduce_max_examples():
    np.testing.assert_array_equal(reduce_max(Tensor([[1, 5], [3, 2]]), 0).numpy(), [3, 5])
    x = Tensor(np.arange(6).reshape(2, 1, 3))
    np.testing.assert_array_equal(reduce_max(x, 1).numpy(), x.numpy()[:, 0, :])
    assert reduce_max(x, 1, keepdims=True).shape == (2, 1, 3)


def test_reduce_max_axis_out_of_range():
    with pytest.raises(AxisError):
        reduce_max(Tensor.ones(2, 2), 2)


@given(
    arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 4)), elements=finite),
    st.randoms(use_true_random=False),
)
@settings(max_examples=50, deadline=None)
def test_reduce_max_ignores_order(x, random):
    perm = list(range(x.shape[0]))
    random.shuffle(perm)
    np.testing.assert_array_equal(
        reduce_max(Tensor(x), 0).numpy(),
        reduce_max(Tensor(x[perm]), 0).numpy(),
    )


def test_power_mean_examples():
    x = Tensor([1, 2, 3, 4])
    assert power_mean(x, 0, 1.0).numpy()[0] == pytest.approx(2.5, abs=1e-6)
    assert power_mean(x, 0, 100.0).numpy()[0] == pytest.approx(3.945, abs=0.01)
    for p in (1.0, 2.0, 6.5, 64.0):
        np.testing.assert_array_equal(power_mean(Tensor([7.5, 7.5, 7.5]), 0, p).numpy(), [7.5])


def test_power_mean_high_precision_oracle():
    # mean(x^100)^(1/100) evaluated with Python integers
    exact = (sum(v**100 for v in (1, 2, 3, 4)) / 4) ** (1 / 100)
    assert power_mean(Tensor([1, 2, 3, 4]), 0, 100.0).numpy()[0] == pytest.approx(exact, rel=1e-6)


def test_power_mean_rejects_small_p():
    with pytest.raises(ParameterError):
        power_mean(Tensor([1, 2]), 0, 0.5)


def test_power_mean_clamps_before_powers():
    out = power_mean(Tensor([-3.0, -1.0]), 0, 6.5).numpy()
    assert np.isfinite(out).all()
    assert out[0] == pytest.approx(1e-6)


def test_power_mean_p1_matches_mean(rng):
    x = Tensor(rng.uniform(0.01, 10, size=(1000, 5)))
    mean = x.numpy().astype(np.float64).mean(axis=1)
    np.testing.assert_allclose(power_mean(x, 1, 1.0).numpy(), mean, atol=1e-6)


def test_power_mean_monotone_in_p(rng):
    x = Tensor(rng.uniform(0, 10, size=(1000, 6)))
    curves = [power_mean(x, 1, p).numpy().astype(np.float64) for p in (1, 2, 4, 8)]
    for lo, hi in zip(curves, curves[1:], strict=False):
        assert np.all(hi >= lo * (1 - 1e-6))


def test_power_mean_high_p_approaches_max(rng):
    x = Tensor(rng.uniform(0, 10, size=(1000, 3)))
    top = reduce_max(x, 1).numpy()
    gem = power_mean(x, 1, 64.0).numpy()
    assert np.all(gem <= top * (1 + 1e-6))
    assert np.all(gem >= 0.98 * top)


@given(arrays(np.float32, st.integers(1, 8), elements=non_negative))
@settings(max_examples=100, deadline=None)
def test_power_mean_between_mean_and_max(x):
    t = Tensor(x)
    gem = float(power_mean(t, 0, 6.5).numpy()[0])
    clamped = np.maximum(x.astype(np.float64), 1e-6)
    assert gem <= clamped.max() * (1 + 1e-6)
    assert gem >= clamped.mean() * (1 - 1e-6)


def test_concat_checks_other_axes():
    out = concat([Tensor.ones(2, 3), Tensor.zeros(1, 3)], axis=0)
    assert out.shape == (3, 3)
    with pytest.raises(ShapeMismatchError):
        concat([Tensor.ones(2, 3), Tensor.ones(2, 4)], axis=0)
