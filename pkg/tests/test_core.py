import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from texdistill.core import AdamW, NonFiniteError, Tensor, no_grad, poly_lr, precision
from texdistill.core import functional as F
from texdistill.gradsuite import TOLERANCE, run_suite

finite = st.floats(-10, 10, allow_nan=False, width=64)


def test_relu_example():
    np.testing.assert_array_equal(F.relu(Tensor(np.array([-1.0, 2.0]))).data, [0.0, 2.0])


@given(arrays(np.float64, (3, 5), elements=finite))
def test_cosine_self_similarity_is_one(v):
    v[np.linalg.norm(v, axis=1) < 1e-3] = 1.0
    out = F.cosine_similarity(Tensor(v), Tensor(v.copy()), axis=1).data
    np.testing.assert_allclose(out, 1.0, atol=1e-12)


def test_identity_kernel_conv_is_identity(rng):
    x = rng.standard_normal((2, 3, 6, 7))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    with precision(np.float64):
        out = F.conv2d(Tensor(x), Tensor(w), padding=1).data
    np.testing.assert_allclose(out, x, atol=1e-12)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(3, 2\)|\(3, 2\).*\(2, 3\)"):
        F.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_backward_sum_and_square():
    with precision(np.float64):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        F.sum(x).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])
        y = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        F.sum(y * y).backward()
        np.testing.assert_allclose(y.grad, [2.0, 4.0])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def _param(values, grad):
    p = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
    p.grad = np.array(grad, dtype=np.float64)
    return p


def test_adamw_zero_grad_zero_decay_is_noop():
    p = _param([1.0, -2.0], [0.0, 0.0])
    AdamW([p], lr=1e-3, weight_decay=0.0).step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_first_step_is_signed_lr():
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    lr, eps = 1e-3, 1e-8
    g = np.array([0.3, -2.0, 1e-3])
    p = _param([0.0, 0.0, 0.0], g)
    AdamW([p], lr=lr, eps=eps, weight_decay=0.0).step()
    np.testing.assert_allclose(p.data, -lr * g / (np.abs(g) + eps), rtol=1e-12)
    np.testing.assert_allclose(p.data, -lr * np.sign(g), rtol=1e-4)


def test_adamw_decay_only_scales():
    p = _param([2.0, -4.0], [0.0, 0.0])
    AdamW([p], lr=0.01, weight_decay=0.1).step()
    np.testing.assert_allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.01 * 0.1), rtol=1e-12)


def test_adamw_rejects_nan_grad():
    p = _param([1.0], [np.nan])
    with pytest.raises(NonFiniteError, match="non-finite gradient"):
        AdamW([p]).step()


def test_adamw_skips_untouched_params():
    p = Tensor(np.array([3.0]), requires_grad=True)
    AdamW([p], lr=0.1, weight_decay=0.5).step()
    assert p.data[0] == 3.0


def test_poly_lr_examples():
    assert poly_lr(0, 100) == 1e-4
    assert poly_lr(100, 100) == 0.0
    assert poly_lr(50, 100) == pytest.approx(1e-4 * 0.5 ** 0.9, rel=1e-12)
    assert poly_lr(50, 100) == pytest.approx(5.359e-5, abs=1e-8)
    with pytest.raises(ValueError):
        poly_lr(0, 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_is_a_distribution(x):
    p = F.softmax(Tensor(x), axis=1).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_cumsum_last_is_total(x):
    c = F.cumsum(Tensor(x), axis=1).data
    np.testing.assert_allclose(c[:, -1], x.sum(axis=1), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 17), st.integers(1, 17))
def test_blur_resample_shapes(h, w):
    x = Tensor(np.random.default_rng(h * 31 + w).standard_normal((1, 2, h, w)))
    down = F.downsample2x_blur(x)
    assert down.shape[-2:] == (-(-h // 2), -(-w // 2))
    up = F.upsample2x_smooth(down, (h, w))
    assert up.shape == x.shape
    np.testing.assert_array_equal(up.data, F.upsample2x_smooth(F.downsample2x_blur(x), (h, w)).data)


_SUITE = run_suite()


@pytest.mark.parametrize("name,err", _SUITE, ids=[n for n, _ in _SUITE])
def test_gradient_suite(name, err):
    assert err <= TOLERANCE
