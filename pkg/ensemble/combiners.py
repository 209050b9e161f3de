"""
combiners.py - 子网络输出组合

两种组合方式，输入既可以是单个样本的 O [N × C]，也可以是一批 [B × N × C]：
1. averaging ：各子网络 softmax 输出取平均
2. stacking  ：每个类别一组私有权重：out_c = Σ_n W[c, n] · O[n, c]
"""

import numpy as np

from common.errors import ShapeError

AVERAGING = "averaging"
STACKING = "stacking"


def _as_outputs(outputs: np.ndarray) -> np.ndarray:
    o = np.asarray(outputs)
    if o.ndim not in (2, 3):
        raise ShapeError(f"子网络输出必须是 [N × C] 或 [B × N × C]，实际 {o.shape}")
    if o.shape[-2] == 0 or o.shape[-1] == 0:
        raise ShapeError("子网络输出为空")
    return o


def average_combine(outputs: np.ndarray) -> np.ndarray:
    """对子网络维度取平均

    Args:
        outputs: [N × C] 或 [B × N × C]

    Returns:
        np.ndarray: [C] 或 [B × C]
    """
    o = _as_outputs(outputs)
    return o.mean(axis=-2)


def stacking_combine(outputs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """按类别加权组合，只计算 W·O 的对角线，不构造 C × C 矩阵

    Args:
        outputs: [N × C] 或 [B × N × C]
        weights: W [C × N]

    Returns:
        np.ndarray: [C] 或 [B × C]
    """
    o = _as_outputs(outputs)
    w = np.asarray(weights)
    n, c = o.shape[-2:]
    if w.shape != (c, n):
        raise ShapeError(f"堆叠权重形状 {w.shape} 与输出 N={n}, C={c} 不匹配（应为 {(c, n)}）")
    if o.ndim == 2:
        return np.einsum("cn,nc->c", w, o)
    return np.einsum("cn,bnc->bc", w, o)


def predict_labels(probs: np.ndarray) -> np.ndarray:
    """最后一维 argmax；并列时取较小的类别编号（np.argmax 的行为）"""
    return np.argmax(np.asarray(probs), axis=-1)

