"""数值核心测试：各层前向结果、解析梯度 vs 有限差分、BN、损失、优化器"""

import math

import numpy as np
import pytest

from common.errors import DataFormatError, InvariantError, SelectionError, ShapeError
from numeric.gradcheck import finite_diff_gradcheck, relative_error
from numeric.layers import (
    GLOBAL_AVG,
    MAXPOOL2,
    batchnorm,
    batchnorm_backward,
    conv2d,
    conv2d_backward,
    dense,
    dense_backward,
    relu,
    relu_backward,
    spatial_reduce,
    spatial_reduce_backward,
)
from numeric.losses import softmax_cross_entropy
from numeric.optimizer import cosine_lr, sgd_momentum_step
from numeric.parameters import ParameterStore

GRAD_TOL = 1e-4
GRAD_EPS = 1e-5


# ============================================================
# 前向：手算用例
# ============================================================
def test_conv_identity_kernel_returns_input(rng):
    x = rng.standard_normal((2, 1, 5, 5))
    y, _ = conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(y, x)


def test_conv_ones_kernel_center_value():
    x = np.ones((1, 1, 2, 2))
    y, _ = conv2d(x, np.ones((1, 1, 3, 3)), np.zeros(1), pad=1)
    assert y.shape == (1, 1, 2, 2)
    assert y[0, 0, 0, 0] == 4.0


def test_conv_full_selection_matches_unrestricted(rng):
    x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
    k = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    y_full, _ = conv2d(x, k, b, in_sel=range(3), out_sel=range(5), pad=1)
    y_none, _ = conv2d(x, k, b, pad=1)
    np.testing.assert_array_equal(y_full, y_none)


def test_conv_partial_selection_uses_sub_block(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    in_sel, out_sel = [2, 0], [3, 1]
    y, _ = conv2d(x, k, b, in_sel=in_sel, out_sel=out_sel, pad=1)
    sub_k = k[np.ix_(out_sel, in_sel)]
    ref, _ = conv2d(x, sub_k, b[out_sel], pad=1)
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_conv_rejects_bad_selection(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    k = rng.standard_normal((4, 3, 3, 3))
    with pytest.raises(SelectionError):
        conv2d(x, k, np.zeros(4), in_sel=[0, 3])
    with pytest.raises(SelectionError):
        conv2d(x, k, np.zeros(4), in_sel=[1, 1])
    with pytest.raises(ShapeError):
        conv2d(x, k, np.zeros(4), in_sel=[0, 1, 2])


def test_dense_hand_values():
    y, _ = dense(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), np.array([5.0]))
    assert y.tolist() == [[16.0]]
    x = np.array([[0.5, -1.5, 2.0]])
    y, _ = dense(x, np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(y, x)


def test_relu_and_global_avg():
    y, _ = relu(np.array([-1.0, 0.0, 2.0]))
    assert y.tolist() == [0.0, 0.0, 2.0]
    y, _ = spatial_reduce(np.full((2, 3, 4, 4), 1.25), GLOBAL_AVG)
    np.testing.assert_array_equal(y, np.full((2, 3, 1, 1), 1.25))


def test_maxpool_rejects_odd_size(rng):
    with pytest.raises(ShapeError):
        spatial_reduce(rng.standard_normal((1, 1, 5, 4)), MAXPOOL2)


# ============================================================
# 梯度校验
# ============================================================
def test_gradcheck_linear_is_exact(rng):
    a = rng.standard_normal((3, 4))

    def op(x):
        return float((a * x).sum()), [a.copy()]

    assert finite_diff_gradcheck(op, [rng.standard_normal((3, 4))], eps=1e-4) < 1e-6


def test_gradcheck_rejects_bad_inputs(rng):
    def op(x):
        return float(x.sum()), [np.ones_like(x)]

    with pytest.raises(ValueError):
        finite_diff_gradcheck(op, [rng.standard_normal(3)], eps=1e-2)
    with pytest.raises(ValueError):
        finite_diff_gradcheck(op, [rng.standard_normal(3).astype(np.float32)])


def test_relative_error_of_identical_arrays_is_zero(rng):
    a = rng.standard_normal(10)
    assert relative_error(a, a.copy()) == 0.0


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (1, 0)])
def test_conv_gradcheck_partial_selections(rng, stride, pad):
    in_sel, out_sel = [2, 0], [3, 1, 0]
    proj = rng.standard_normal((2, 3, 7, 7))

    def op(x, k, b):
        y, cache = conv2d(x, k, b, in_sel=in_sel, out_sel=out_sel, stride=stride, pad=pad)
        r = proj[:, :, : y.shape[2], : y.shape[3]]
        kg, bg = np.zeros_like(k), np.zeros_like(b)
        dx = conv2d_backward(r, cache, kg, bg)
        return float((y * r).sum()), [dx, kg, bg]

    inputs = [rng.standard_normal((2, 2, 7, 7)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)]
    assert finite_diff_gradcheck(op, inputs, eps=GRAD_EPS) < GRAD_TOL


def test_conv_backward_leaves_unselected_entries_zero(rng):
    k = rng.standard_normal((4, 3, 3, 3))
    y, cache = conv2d(rng.standard_normal((1, 2, 5, 5)), k, np.zeros(4), in_sel=[2, 0], out_sel=[3, 1], pad=1)
    kg = np.zeros_like(k)
    conv2d_backward(np.ones_like(y), cache, kg, np.zeros(4))
    mask = np.zeros(k.shape, dtype=bool)
    mask[np.ix_([3, 1], [2, 0])] = True
    assert np.all(kg[~mask] == 0.0)
    assert np.all(kg[mask] != 0.0)


def test_dense_gradcheck_partial_selection(rng):
    in_sel = [4, 1, 2]
    proj = rng.standard_normal((3, 5))

    def op(x, w, b):
        y, cache = dense(x, w, b, in_sel=in_sel)
        wg, bg = np.zeros_like(w), np.zeros_like(b)
        dx = dense_backward(proj, cache, wg, bg)
        return float((y * proj).sum()), [dx, wg, bg]

    inputs = [rng.standard_normal((3, 3)), rng.standard_normal((5, 6)), rng.standard_normal(5)]
    assert finite_diff_gradcheck(op, inputs, eps=GRAD_EPS) < GRAD_TOL


def test_batchnorm_train_gradcheck(rng):
    proj = rng.standard_normal((3, 2, 4, 4))

    def op(x, scale, shift):
        y, cache = batchnorm(x, scale, shift, np.zeros(2), np.ones(2), "train")
        sg, hg = np.zeros_like(scale), np.zeros_like(shift)
        dx = batchnorm_backward(proj, cache, sg, hg)
        return float((y * proj).sum()), [dx, sg, hg]

    inputs = [rng.standard_normal((3, 2, 4, 4)) * 2.0 + 0.5, rng.uniform(0.5, 1.5, 2), rng.standard_normal(2)]
    assert finite_diff_gradcheck(op, inputs, eps=GRAD_EPS) < GRAD_TOL


def test_batchnorm_eval_gradcheck(rng):
    proj = rng.standard_normal((2, 3, 2, 2))
    running_mean, running_var = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)

    def op(x, scale, shift):
        y, cache = batchnorm(x, scale, shift, running_mean, running_var, "eval")
        sg, hg = np.zeros_like(scale), np.zeros_like(shift)
        dx = batchnorm_backward(proj, cache, sg, hg)
        return float((y * proj).sum()), [dx, sg, hg]

    inputs = [rng.standard_normal((2, 3, 2, 2)), rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)]
    assert finite_diff_gradcheck(op, inputs, eps=GRAD_EPS) < GRAD_TOL


def test_maxpool_gradcheck_with_spaced_values(rng):
    # 相邻取值间隔 0.01，差分扰动不会改变最大值位置
    x = (rng.permutation(2 * 2 * 4 * 4).reshape(2, 2, 4, 4) * 0.01).astype(np.float64)
    proj = rng.standard_normal((2, 2, 2, 2))

    def op(x):
        y, cache = spatial_reduce(x, MAXPOOL2)
        return float((y * proj).sum()), [spatial_reduce_backward(proj, cache)]

    assert finite_diff_gradcheck(op, [x], eps=GRAD_EPS) < GRAD_TOL


def test_global_avg_gradcheck(rng):
    proj = rng.standard_normal((2, 3, 1, 1))

    def op(x):
        y, cache = spatial_reduce(x, GLOBAL_AVG)
        return float((y * proj).sum()), [spatial_reduce_backward(proj, cache)]

    assert finite_diff_gradcheck(op, [rng.standard_normal((2, 3, 4, 4))], eps=GRAD_EPS) < GRAD_TOL


def test_relu_gradcheck_away_from_kink(rng):
    x = np.sign(rng.standard_normal(20)) * rng.uniform(0.5, 1.5, 20)
    proj = rng.standard_normal(20)

    def op(x):
        y, mask = relu(x)
        return float((y * proj).sum()), [relu_backward(proj, mask)]

    assert finite_diff_gradcheck(op, [x], eps=GRAD_EPS) < 1e-6


def test_softmax_xent_gradcheck(rng):
    labels = [0, 3, 2, 3]

    def op(logits):
        _, loss, grad = softmax_cross_entropy(logits, labels)
        return loss, [grad]

    assert finite_diff_gradcheck(op, [rng.standard_normal((4, 5))], eps=GRAD_EPS) < GRAD_TOL


# ============================================================
# 批归一化
# ============================================================
def test_batchnorm_normalized_input_is_near_identity(rng):
    x = rng.standard_normal((8, 2, 4, 4))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    y, _ = batchnorm(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "train")
    assert np.max(np.abs(y - x)) < 1e-4


def test_batchnorm_constant_input_gives_shift():
    shift = np.array([0.5, -1.5])
    y, _ = batchnorm(np.full((2, 2, 3, 3), 2.0), np.array([1.3, 0.7]), shift, np.zeros(2), np.ones(2), "train")
    np.testing.assert_array_equal(y, np.broadcast_to(shift[None, :, None, None], y.shape))


def test_batchnorm_running_stats_update(rng):
    x = rng.standard_normal((4, 2, 3, 3)) + 3.0
    running_mean, running_var = np.zeros(2), np.ones(2)
    batchnorm(x, np.ones(2), np.zeros(2), running_mean, running_var, "train")
    np.testing.assert_allclose(running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))

    before = (running_mean.copy(), running_var.copy())
    batchnorm(x, np.ones(2), np.zeros(2), running_mean, running_var, "eval")
    np.testing.assert_array_equal(running_mean, before[0])
    np.testing.assert_array_equal(running_var, before[1])


def test_batchnorm_rejects_single_value_batch():
    with pytest.raises(ShapeError):
        batchnorm(np.ones((1, 2, 1, 1)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "train")


# ============================================================
# 损失
# ============================================================
def test_softmax_xent_uniform_logits():
    probs, loss, _ = softmax_cross_entropy(np.zeros((2, 10)), [3, 7])
    np.testing.assert_allclose(probs, 0.1)
    assert loss == pytest.approx(math.log(10))


def test_softmax_xent_saturated_logit():
    logits = np.zeros((1, 4))
    logits[0, 2] = 1000.0
    _, loss, _ = softmax_cross_entropy(logits, [2])
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_softmax_xent_errors():
    with pytest.raises(InvariantError):
        softmax_cross_entropy(np.array([[0.0, np.nan]]), [0])
    with pytest.raises(DataFormatError):
        softmax_cross_entropy(np.zeros((1, 3)), [3])
    with pytest.raises(ShapeError):
        softmax_cross_entropy(np.zeros((2, 3)), [0])


# ============================================================
# 优化器
# ============================================================
def _store(value: float) -> ParameterStore:
    store = ParameterStore(np.float64)
    store.add("w", np.array([value]))
    return store


def test_sgd_plain_step():
    store = _store(1.0)
    store.grad("w")[...] = 0.5
    assert sgd_momentum_step(store, lr=0.1, momentum=0.0, weight_decay=0.0) == 1
    assert store["w"][0] == pytest.approx(0.95)
    assert store.grads["w"][0] == 0.0


def test_sgd_zero_grad_keeps_weight():
    store = _store(2.0)
    for _ in range(5):
        store.grad("w")
        sgd_momentum_step(store, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert store["w"][0] == 2.0


def test_sgd_two_momentum_steps_match_recurrence():
    store = _store(1.0)
    w, v = 1.0, 0.0
    for g in (0.5, -0.25):
        store.grad("w")[...] = g
        sgd_momentum_step(store, lr=0.1, momentum=0.9, weight_decay=0.01)
        v = 0.9 * v + g + 0.01 * w
        w = w - 0.1 * v
    assert store["w"][0] == w
    assert store.velocity["w"][0] == v


def test_sgd_skips_untouched_parameters():
    store = ParameterStore(np.float64)
    store.add("a", np.array([1.0]))
    store.add("b", np.array([1.0]))
    store.velocity["b"][...] = 0.3
    store.grad("a")[...] = 1.0
    assert sgd_momentum_step(store, lr=0.1, momentum=0.9, weight_decay=0.1) == 1
    assert store["b"][0] == 1.0
    assert store.velocity["b"][0] == 0.3


def test_cosine_lr_endpoints():
    assert cosine_lr(0, 10, 0.05) == pytest.approx(0.05)
    assert cosine_lr(5, 10, 0.05) == pytest.approx(0.025)
    assert cosine_lr(10, 10, 0.05, 0.001) == pytest.approx(0.001)
    assert cosine_lr(3, 0, 0.05) == 0.05


def test_parameter_store_accumulate_and_fingerprint():
    store = ParameterStore(np.float64)
    store.add("k", np.zeros((2, 3)))
    store.accumulate("k", np.ones((1, 2)), np.ix_([1], [0, 2]))
    assert store.grads["k"].tolist() == [[0.0, 0.0, 0.0], [1.0, 0.0, 1.0]]
    assert "k" in store.touched
    fp = store.fingerprint()
    assert store.copy().fingerprint() == fp
    store.weights["k"][0, 0] = 1.0
    assert store.fingerprint() != fp
