import numpy as np
import pytest

from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from hypothesis.strategies import floats, integers, tuples

from twostream.errors import (
    BadConfigError,
    BadLabelError,
    EmptyVectorError,
    NonfiniteFunctionError,
    ShapeMismatchError,
)
from twostream.gradcheck import CHECKS, TOLERANCE, failures, run_gradient_suite
from twostream.tensor import (
    Tensor,
    conv2d_3x3,
    cross_entropy,
    finite_diff_check,
    no_grad,
    softmax,
)


def conv_oracle(x, kernels, bias):
    h, w, _ = x.shape
    out = np.tile(bias, (h, w, 1)).astype(float)
    for i in range(h):
        for j in range(w):
            for dy in range(3):
                for dx in range(3):
                    y, xx = i + dy - 1, j + dx - 1
                    if 0 <= y < h and 0 <= xx < w:
                        out[i, j] += x[y, xx] @ kernels[dy, dx]
    return out


@pytest.mark.parametrize('seed', range(1, 21))
def test_gradient_suite(seed):
    results = run_gradient_suite(seed)
    assert set(results) == set(CHECKS)
    assert failures(results) == [], results


def test_failures_flags_large_and_nan_errors():
    assert failures({'a': 1e-9, 'b': 2 * TOLERANCE, 'c': float('nan')}) == ['b', 'c']


def test_backward_accumulates_shared_parents():
    x = Tensor([1.5, -2.0], requires_grad=True)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_backward_repeated_accumulates_into_leaf():
    x = Tensor([3.0], requires_grad=True)
    (x * 2.0).sum().backward()
    (x * 2.0).sum().backward()
    np.testing.assert_allclose(x.grad, [4.0])


def test_only_leaves_keep_gradients():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x.tanh()
    y.sum().backward()
    assert x.grad is not None
    assert y.grad is None


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).exp()
    assert not y.requires_grad
    y.sum().backward()
    assert x.grad is None


def test_broadcast_mismatch_raises_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


def test_matmul_matches_numpy(rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))
    np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, a @ b, atol=1e-12)


def test_matmul_inner_dimension_mismatch():
    with pytest.raises(ShapeMismatchError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_softmax_empty_vector():
    with pytest.raises(EmptyVectorError):
        softmax(np.zeros((0,)))


def test_softmax_is_shift_invariant():
    x = np.array([1000.0, 1001.0, 1002.0])
    np.testing.assert_allclose(softmax(x).data, softmax(x - 1000.0).data, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(arrays(float, tuples(integers(1, 4), integers(1, 6)), elements=floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    p = softmax(x, axis=-1).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_cross_entropy_of_uniform_probabilities():
    probs = Tensor(np.full((2, 4), 0.25))
    assert cross_entropy(probs, [0, 3]).item() == pytest.approx(np.log(4))


def test_cross_entropy_clips_zero_probability():
    probs = Tensor([[0.0, 1.0]])
    assert cross_entropy(probs, [0]).item() == pytest.approx(-np.log(1e-12))


@pytest.mark.parametrize('labels', [[2], [-1]])
def test_cross_entropy_bad_label(labels):
    with pytest.raises(BadLabelError):
        cross_entropy(Tensor([[0.5, 0.5]]), labels)


def test_cross_entropy_label_count_mismatch():
    with pytest.raises(ShapeMismatchError):
        cross_entropy(Tensor(np.full((3, 2), 0.5)), [0, 1])


def test_conv_matches_nested_loops(rng):
    x = rng.normal(size=(4, 5, 3))
    kernels = rng.normal(size=(3, 3, 3, 2))
    bias = rng.normal(size=2)
    np.testing.assert_allclose(
        conv2d_3x3(x, kernels, bias).data, conv_oracle(x, kernels, bias), atol=1e-12
    )


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeMismatchError):
        conv2d_3x3(np.ones((3, 3, 2)), np.ones((3, 3, 4, 1)), np.zeros(1))


def test_finite_diff_check_of_a_quadratic():
    x = Tensor([0.3, -1.2, 2.0])
    assert finite_diff_check(lambda t: (t * t).sum(), x) <= 1e-8


def test_finite_diff_check_detects_a_wrong_gradient():
    x = Tensor([0.5, 1.0])
    # detach drops the tape, so the analytic gradient is zero
    assert finite_diff_check(lambda t: (t.detach() * t.detach()).sum(), x) > 0.5


def test_finite_diff_check_rejects_bad_eps():
    with pytest.raises(BadConfigError):
        finite_diff_check(lambda t: t.sum(), Tensor([1.0]), eps=0.0)


def test_finite_diff_check_rejects_nonfinite_function():
    with pytest.raises(NonfiniteFunctionError):
        with np.errstate(over='ignore'):
            finite_diff_check(lambda t: (t * 1000.0).exp().sum(), Tensor([1.0]))


def test_softmax_of_log_three():
    np.testing.assert_allclose(softmax(np.array([np.log(3.0), 0.0])).data, [0.75, 0.25], atol=1e-15)


def test_cross_entropy_of_minority_class():
    probs = Tensor([[0.75, 0.25]])
    assert cross_entropy(probs, [1]).item() == pytest.approx(np.log(4.0), abs=1e-12)


def test_zero_kernel_conv_gives_bias(rng):
    x = rng.normal(size=(4, 3, 2))
    bias = np.array([0.5, -1.0, 2.0])
    out = conv2d_3x3(x, np.zeros((3, 3, 2, 3)), bias).data
    np.testing.assert_array_equal(out, np.broadcast_to(bias, (4, 3, 3)))


def test_identity_kernel_conv_gives_input(rng):
    x = rng.normal(size=(5, 4, 3))
    kernels = np.zeros((3, 3, 3, 3))
    kernels[1, 1] = np.eye(3)
    np.testing.assert_allclose(conv2d_3x3(x, kernels, np.zeros(3)).data, x, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(integers(0, 2**32 - 1), integers(1, 8), integers(1, 8), integers(1, 4), integers(1, 4))
def test_random_convs_match_nested_loops(seed, h, w, c_in, c_out):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(h, w, c_in))
    kernels = rng.normal(size=(3, 3, c_in, c_out))
    bias = rng.normal(size=c_out)
    np.testing.assert_allclose(
        conv2d_3x3(x, kernels, bias).data, conv_oracle(x, kernels, bias), atol=1e-12
    )


def test_finite_diff_check_of_a_constant():
    x = Tensor([0.3, -1.2, 2.0])
    assert finite_diff_check(lambda t: (t * 0.0).sum() + 2.0, x) == 0.0
