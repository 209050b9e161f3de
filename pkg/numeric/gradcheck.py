"""
gradcheck.py - 有限差分梯度校验

用中心差分 (f(x+eps) − f(x−eps)) / 2eps 逐元素估计梯度，
与解析梯度比较，返回最大相对误差（分母取 max(|a|, |b|, 1e-8)）。
"""

from typing import Callable, List, Sequence, Tuple

import numpy as np

from common.errors import InvariantError

EPS_RANGE = (1e-7, 1e-4)

# op(*inputs) -> (标量损失, 与 inputs 一一对应的解析梯度列表)
OpUnderTest = Callable[..., Tuple[float, List[np.ndarray]]]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """逐元素相对误差的最大值"""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def numerical_gradient(func: Callable[[], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """对 x 原地扰动做中心差分

    Args:
        func: 无参函数，读取 x 的当前值并返回标量
        x: 被扰动的 float64 数组（结束后恢复原值）
        eps: 步长

    Returns:
        np.ndarray: 与 x 同形状的数值梯度
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = func()
        flat[i] = orig - eps
        f_minus = func()
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise InvariantError(f"有限差分中出现非有限值（元素 {i}）")
        grad.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def finite_diff_gradcheck(op_under_test: OpUnderTest, inputs: Sequence[np.ndarray], eps: float = 1e-6) -> float:
    """解析梯度 vs 中心差分

    Args:
        op_under_test: op(*inputs) 返回 (loss, grads)，grads 与 inputs 对应；
            某项梯度为 None 表示跳过该输入
        inputs: float64 输入数组
        eps: 差分步长，范围 [1e-7, 1e-4]

    Returns:
        float: 所有被检查输入上的最大相对误差
    """
    if not EPS_RANGE[0] <= eps <= EPS_RANGE[1]:
        raise ValueError(f"eps 应在 {EPS_RANGE} 内，实际 {eps}")
    arrays = [np.array(a, dtype=np.float64, copy=True) for a in inputs]
    for a in inputs:
        if np.asarray(a).dtype != np.float64:
            raise ValueError("梯度校验要求 float64 输入")

    loss, analytic = op_under_test(*arrays)
    if not np.isfinite(loss):
        raise InvariantError("被测运算返回非有限损失")

    worst = 0.0
    for x, g in zip(arrays, analytic):
        if g is None:
            continue
        numeric = numerical_gradient(lambda: float(op_under_test(*arrays)[0]), x, eps)
        worst = max(worst, relative_error(np.asarray(g, dtype=np.float64), numeric))
    return worst
