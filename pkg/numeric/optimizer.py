"""
optimizer.py - 优化器模块

带动量的 SGD 以及余弦学习率调度。
"""

import math

from numeric.parameters import ParameterStore


def sgd_momentum_step(store: ParameterStore, lr: float, momentum: float, weight_decay: float) -> int:
    """执行一步带动量与权重衰减的 SGD

    v ← momentum·v + grad + weight_decay·w
    w ← w − lr·v

    只更新本轮收到过梯度的参数；更新后清零全部梯度缓冲区。

    Args:
        store: 参数存储
        lr: 学习率
        momentum: 动量系数
        weight_decay: L2 权重衰减系数

    Returns:
        int: 实际更新的参数个数
    """
    updated = 0
    for name in sorted(store.touched):
        w = store.weights[name]
        v = store.velocity[name]
        g = store.grads[name]
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * w
        w -= lr * v
        updated += 1
    store.zero_grad()
    return updated


def cosine_lr(epoch: int, total_epochs: int, lr: float, lr_min: float = 0.0) -> float:
    """余弦退火学习率：从 lr 平滑下降到 lr_min

    Args:
        epoch: 当前 epoch（从 0 开始）
        total_epochs: 总 epoch 数
        lr: 初始学习率
        lr_min: 最终学习率

    Returns:
        float: 当前 epoch 的学习率
    """
    if total_epochs <= 0:
        return lr
    progress = min(max(epoch, 0), total_epochs) / total_epochs
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * progress))
