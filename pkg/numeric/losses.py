"""
losses.py - 损失函数模块

数值稳定（减最大值）的 softmax 与 softmax 交叉熵。
"""

from typing import Sequence, Tuple

import numpy as np

from common.errors import DataFormatError, InvariantError, ShapeError


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """按行 softmax，先减去最大值防止溢出"""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: Sequence[int]) -> Tuple[np.ndarray, float, np.ndarray]:
    """softmax 交叉熵

    Args:
        logits: [B × C]
        labels: 长度 B 的类别编号，取值 [0, C)

    Returns:
        (probs, loss, grad_logits):
            probs 每行和为 1；loss 为平均负对数似然；
            grad_logits = (probs − onehot) / B

    Raises:
        InvariantError: logits 含非有限值
        DataFormatError: 标签越界
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits 必须是 2 维，实际 {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise InvariantError("logits 含 NaN 或 Inf")
    b, c = logits.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size != b:
        raise ShapeError(f"标签数 {y.size} 与 batch 大小 {b} 不一致")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise DataFormatError(f"标签越界: 允许范围 [0, {c})")

    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    denom = e.sum(axis=1, keepdims=True)
    probs = e / denom
    rows = np.arange(b)
    log_likelihood = z[rows, y] - np.log(denom[:, 0])
    loss = float(-log_likelihood.mean())

    grad = probs.copy()
    grad[rows, y] -= 1
    grad /= b
    return probs, loss, grad.astype(logits.dtype, copy=False)
