"""
evaluator.py - 集成评估

一次前向拿到全部 N 个子网络的 softmax 输出，然后计算：
    - 每个子网络的准确率
    - averaging 组合准确率（始终给出）
    - stacking 组合准确率（提供堆叠权重时）
    - 一致度 S

评估可以按 batch 切分到线程池并行，各 batch 的计算与串行时完全相同，
结果按原顺序拼接，因此与线程数无关。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from channels.plan import SubNetworkPlan
from common.errors import ConfigError, ShapeError
from ensemble.combiners import AVERAGING, STACKING, average_combine, predict_labels, stacking_combine
from ensemble.similarity import SimilarityReport, similarity


@dataclass
class EvaluationResult:
    """评估结果

    Attributes:
        per_subnet_acc: 各子网络准确率
        ensemble_acc: 所选组合方式的准确率
        averaging_acc: averaging 准确率
        stacking_acc: stacking 准确率（无堆叠权重时为 None）
        similarity: 一致度
        combiner: 组合方式
    """

    per_subnet_acc: List[float]
    ensemble_acc: float
    averaging_acc: float
    similarity: SimilarityReport
    combiner: str = AVERAGING
    stacking_acc: Optional[float] = None
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "combiner": self.combiner,
            "per_subnet_acc": list(self.per_subnet_acc),
            "ensemble_acc": self.ensemble_acc,
            "averaging_acc": self.averaging_acc,
            "stacking_acc": self.stacking_acc,
            **self.similarity.as_dict(),
            "params": dict(self.params),
        }


def _batch_outputs(net, plans: Sequence[SubNetworkPlan], x: np.ndarray) -> np.ndarray:
    return np.stack([net.predict_proba(plan, x) for plan in plans], axis=1)


def collect_softmax(
    net,
    plans: Sequence[SubNetworkPlan],
    images: np.ndarray,
    batch_size: int = 256,
    workers: int = 1,
) -> np.ndarray:
    """eval 模式下收集所有子网络的 softmax 输出

    Args:
        net: IntraEnsembleNet
        plans: 子网络方案
        images: [M × C × H × W] 已归一化的图像
        batch_size: 批大小
        workers: 线程数，按 batch 分片

    Returns:
        np.ndarray: [M × N × C]
    """
    if images.ndim != 4 or tuple(images.shape[1:]) != tuple(net.arch.input_shape):
        raise ShapeError(f"数据集图像形状 {images.shape[1:]} 与网络输入 {net.arch.input_shape} 不一致")
    if not plans:
        raise ShapeError("没有子网络方案")
    m = images.shape[0]
    spans = [(s, min(s + batch_size, m)) for s in range(0, m, batch_size)]

    def run(span):
        return _batch_outputs(net, plans, images[span[0]:span[1]])

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(span) for span in spans]
    if not parts:
        return np.zeros((0, len(plans), net.arch.num_classes), dtype=net.dtype)
    return np.concatenate(parts, axis=0)


def summarize_outputs(
    outputs: np.ndarray,
    labels: np.ndarray,
    stacking_weights: Optional[np.ndarray] = None,
    combiner: str = AVERAGING,
) -> EvaluationResult:
    """由 [M × N × C] 输出计算全部指标"""
    o = np.asarray(outputs)
    y = np.asarray(labels, dtype=np.int64)
    if o.shape[0] != y.size:
        raise ShapeError(f"输出样本数 {o.shape[0]} 与标签数 {y.size} 不一致")
    per_subnet_pred = predict_labels(o)  # [M × N]
    per_subnet_acc = [float((per_subnet_pred[:, i] == y).mean()) for i in range(o.shape[1])]
    averaging_acc = float((predict_labels(average_combine(o)) == y).mean())

    stacking_acc = None
    if stacking_weights is not None:
        stacking_acc = float((predict_labels(stacking_combine(o, stacking_weights)) == y).mean())
    if combiner == STACKING and stacking_acc is None:
        raise ShapeError("stacking 组合需要堆叠权重")
    ensemble_acc = stacking_acc if combiner == STACKING else averaging_acc

    return EvaluationResult(
        per_subnet_acc=per_subnet_acc,
        ensemble_acc=ensemble_acc,
        averaging_acc=averaging_acc,
        stacking_acc=stacking_acc,
        similarity=similarity(per_subnet_pred.T),
        combiner=combiner,
    )


def evaluate_ensemble(
    net,
    plans: Sequence[SubNetworkPlan],
    combiner: str,
    dataset,
    stacking_weights: Optional[np.ndarray] = None,
    batch_size: int = 256,
    workers: int = 1,
    verbose: bool = False,
) -> EvaluationResult:
    """评估集成

    Args:
        net: IntraEnsembleNet
        plans: 子网络方案
        combiner: 'averaging' 或 'stacking'
        dataset: 带 images / labels 的归一化数据集
        stacking_weights: W [C × N]，combiner 为 stacking 时必需
        batch_size: 批大小
        workers: 评估线程数

    Returns:
        EvaluationResult
    """
    if combiner not in (AVERAGING, STACKING):
        raise ConfigError(f"未知的组合方式: {combiner}")
    weights = getattr(stacking_weights, "weights", stacking_weights)
    outputs = collect_softmax(net, plans, dataset.images, batch_size, workers)
    result = summarize_outputs(outputs, dataset.labels, weights, combiner)
    result.params = net.parameter_count(weights if combiner == STACKING else None)
    if verbose:
        accs = ", ".join(f"{a:.4f}" for a in result.per_subnet_acc)
        print(
            f"[Evaluator] 子网络准确率 [{accs}] | {combiner} {result.ensemble_acc:.4f} | "
            f"S={result.similarity.s:.4f} ({result.similarity.k}/{result.similarity.m})"
        )
    return result
