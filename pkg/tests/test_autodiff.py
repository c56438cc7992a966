"""Gradient and semantics checks for the autodiff engine."""

from __future__ import annotations

import numpy as np
import pytest

from avpyramid import autodiff as ad
from avpyramid.autodiff import Tensor

from gradcheck import check_gradients


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_add_mul_broadcast_values():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([10.0, 20.0])
    out = a * b + b
    np.testing.assert_allclose(out.data, [[20.0, 60.0], [40.0, 100.0]])


def test_matmul_requires_2d():
    a = Tensor(np.ones(3))
    b = Tensor(np.ones((3, 3)))
    with pytest.raises(ValueError):
        ad.matmul(a, b)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((5, 7)))
    y = ad.softmax(x)
    np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(5), atol=1e-12)


def test_masked_softmax_exact_zeros():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((4, 4)))
    mask = np.eye(4, dtype=bool) | np.eye(4, k=1, dtype=bool)
    y = ad.softmax(x, mask=mask)
    assert (y.data[~mask] == 0.0).all()
    np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(4), atol=1e-12)


def test_masked_softmax_rejects_empty_row():
    x = Tensor(np.zeros((2, 3)))
    mask = np.array([[True, False, False], [False, False, False]])
    with pytest.raises(ValueError):
        ad.softmax(x, mask=mask)


def test_masked_softmax_ignores_large_disallowed_scores():
    # A huge score outside the mask must not overflow or leak weight.
    x = Tensor(np.array([[0.0, 1e9, 1.0]]))
    mask = np.array([[True, False, True]])
    y = ad.softmax(x, mask=mask)
    assert np.isfinite(y.data).all()
    assert y.data[0, 1] == 0.0


def test_shift_zero_pads():
    x = Tensor(np.arange(8.0).reshape(4, 2))
    fwd = ad.shift(x, 1, axis=0)
    back = ad.shift(x, -2, axis=0)
    np.testing.assert_allclose(fwd.data, [[0, 0], [0, 1], [2, 3], [4, 5]])
    np.testing.assert_allclose(back.data, [[4, 5], [6, 7], [0, 0], [0, 0]])


def test_layer_norm_rows_standardized():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((6, 9)))
    gain = Tensor(np.ones(9))
    bias = Tensor(np.zeros(9))
    y = ad.layer_norm(x, gain, bias)
    np.testing.assert_allclose(y.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.data.var(axis=-1), 1.0, rtol=1e-6)


def test_stack_last_pairs():
    a = Tensor(np.ones((3, 2)))
    b = Tensor(2 * np.ones((3, 2)))
    s = ad.stack_last_pairs([a, b], axis=-2)
    assert s.shape == (3, 2, 2)
    np.testing.assert_allclose(s.data[:, 0], 1.0)
    np.testing.assert_allclose(s.data[:, 1], 2.0)


def test_backward_accumulates_through_reuse():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1 = 7
    out = ad.tsum(y)
    out.backward()
    np.testing.assert_allclose(x.grad, [7.0])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_composite_expression_gradients(seed):
    rng = np.random.default_rng(seed)
    a = _rand(rng, 4, 3)
    w = _rand(rng, 3, 5)
    b = _rand(rng, 5)
    gain = _rand(rng, 5)
    bias = _rand(rng, 5)

    def forward() -> float:
        h = ad.relu(a @ w + b)
        h = ad.layer_norm(h, gain, bias)
        h = ad.sigmoid(h)
        mask = np.tril(np.ones((4, 4), dtype=bool))
        att = ad.softmax(h @ ad.swapaxes(h, -1, -2), mask=mask)
        out = att @ h
        cat = ad.concat([out, h], axis=-1)
        return ad.tmean(ad.mul(cat, cat)).item()

    loss_tensors = [("a", a), ("w", w), ("b", b), ("gain", gain), ("bias", bias)]
    # Analytic pass
    h = ad.relu(a @ w + b)
    h = ad.layer_norm(h, gain, bias)
    h = ad.sigmoid(h)
    mask = np.tril(np.ones((4, 4), dtype=bool))
    att = ad.softmax(h @ ad.swapaxes(h, -1, -2), mask=mask)
    out = att @ h
    cat = ad.concat([out, h], axis=-1)
    loss = ad.tmean(ad.mul(cat, cat))
    loss.backward()
    check_gradients(forward, loss_tensors)


def test_shift_clip_exp_log_gradients():
    rng = np.random.default_rng(7)
    x = _rand(rng, 5, 3)

    def forward() -> float:
        h = ad.shift(x, 2, axis=0) + ad.shift(x, -1, axis=0)
        p = ad.sigmoid(h)
        p = ad.clip(p, 1e-7, 1.0 - 1e-7)
        return ad.tsum(ad.tlog(p) + ad.texp(ad.tsqrt(p))).item()

    h = ad.shift(x, 2, axis=0) + ad.shift(x, -1, axis=0)
    p = ad.sigmoid(h)
    p = ad.clip(p, 1e-7, 1.0 - 1e-7)
    loss = ad.tsum(ad.tlog(p) + ad.texp(ad.tsqrt(p)))
    loss.backward()
    check_gradients(forward, [("x", x)])


def test_getitem_gradient_scatters():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    out = ad.tsum(x[0, 1:] * 2.0 + x[1, 1:])
    out.backward()
    np.testing.assert_allclose(x.grad, [[0, 2, 2], [0, 1, 1]])


def test_dropout_identity_at_rate_zero_and_scaling():
    rng = np.random.default_rng(3)
    x = Tensor(np.ones((1000,)), requires_grad=True)
    assert ad.dropout(x, 0.0, rng) is x
    y = ad.dropout(x, 0.4, np.random.default_rng(5))
    kept = y.data != 0.0
    np.testing.assert_allclose(y.data[kept], 1.0 / 0.6)
    assert 0.5 < kept.mean() < 0.7
