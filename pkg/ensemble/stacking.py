"""
stacking.py - 堆叠组合器训练

子网络训练完成后冻结，只训练 W [C × N]：每个类别一组私有权重，共 N·C 个参数。
W 初始化为 1/N（此时与 averaging 完全等价），以 softmax(diag(W·O)) 的交叉熵
为目标做小批量 SGD。子网络权重在整个过程中只读。
"""

from typing import Optional, Sequence

import numpy as np

from channels.plan import SubNetworkPlan
from common.errors import DataFormatError, InvariantError, ShapeError
from common.rng import substream
from ensemble.combiners import stacking_combine
from ensemble.evaluator import collect_softmax
from numeric.losses import softmax, softmax_cross_entropy


class StackingCombiner:
    """堆叠权重

    Attributes:
        weights (np.ndarray): W [C × N]，float64
    """

    def __init__(self, n_subnets: int, num_classes: int, weights: Optional[np.ndarray] = None):
        if weights is None:
            weights = np.full((num_classes, n_subnets), 1.0 / n_subnets)
        w = np.array(weights, dtype=np.float64, copy=True)
        if w.shape != (num_classes, n_subnets):
            raise ShapeError(f"堆叠权重形状 {w.shape}，期望 {(num_classes, n_subnets)}")
        self.weights = w

    @classmethod
    def from_array(cls, weights: np.ndarray) -> "StackingCombiner":
        c, n = np.asarray(weights).shape
        return cls(n, c, weights)

    @property
    def num_params(self) -> int:
        return int(self.weights.size)

    def combine(self, outputs: np.ndarray) -> np.ndarray:
        return stacking_combine(outputs, self.weights)

    def predict_proba(self, outputs: np.ndarray) -> np.ndarray:
        """对 diag(W·O) 再做一次 softmax，得到概率分布"""
        return softmax(self.combine(outputs))


def fit_stacking(
    combiner: StackingCombiner,
    outputs: np.ndarray,
    labels: np.ndarray,
    epochs: int = 5,
    lr: float = 0.1,
    batch_size: int = 128,
    seed: int = 0,
) -> list:
    """在固定的子网络输出上训练堆叠权重

    Args:
        combiner: 待训练的组合器（原地更新）
        outputs: [M × N × C] 子网络 softmax 输出
        labels: [M]
        epochs: 训练轮数，0 表示保持均匀权重
        lr: 学习率
        batch_size: 批大小
        seed: 打乱顺序所用种子

    Returns:
        list[float]: 每个 epoch 的平均损失
    """
    o = np.asarray(outputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if o.ndim != 3 or o.shape[0] == 0:
        raise DataFormatError("堆叠训练数据为空")
    if o.shape[0] != y.size:
        raise ShapeError(f"输出样本数 {o.shape[0]} 与标签数 {y.size} 不一致")

    history = []
    for epoch in range(epochs):
        order = substream(seed, "stacking", epoch).permutation(o.shape[0])
        total = 0.0
        for start in range(0, order.size, batch_size):
            idx = order[start:start + batch_size]
            ob = o[idx]
            z = stacking_combine(ob, combiner.weights)
            _, loss, grad = softmax_cross_entropy(z, y[idx])
            # dL/dW[c, n] = Σ_b dz[b, c] · O[b, n, c]
            combiner.weights -= lr * np.einsum("bc,bnc->cn", grad, ob)
            total += loss * idx.size
        if not np.all(np.isfinite(combiner.weights)):
            raise InvariantError("堆叠权重出现非有限值，请降低学习率")
        history.append(total / o.shape[0])
    return history


def train_stacking(
    net,
    plans: Sequence[SubNetworkPlan],
    dataset,
    epochs: int = 5,
    lr: float = 0.1,
    batch_size: int = 128,
    seed: int = 0,
    verbose: bool = True,
) -> StackingCombiner:
    """冻结子网络，训练堆叠权重

    Args:
        net: IntraEnsembleNet（只做 eval 前向）
        plans: 子网络方案
        dataset: 带 images / labels 的归一化数据集

    Returns:
        StackingCombiner
    """
    if len(dataset.labels) == 0:
        raise DataFormatError("堆叠训练集为空")
    combiner = StackingCombiner(len(plans), net.arch.num_classes)
    if verbose:
        print(f"[Stacking] 🚀 训练堆叠权重: N={len(plans)}, C={net.arch.num_classes}, epochs={epochs}, lr={lr}")
    outputs = collect_softmax(net, plans, dataset.images, batch_size)
    history = fit_stacking(combiner, outputs, dataset.labels, epochs, lr, batch_size, seed)
    if verbose and history:
        print(f"[Stacking] ✅ 完成，最终损失 {history[-1]:.4f}")
    return combiner
