"""
similarity.py - 子网络一致度

S = K / M：M 个评估样本中，所有子网络预测类别完全相同的样本数 K 所占比例。
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from common.errors import ShapeError


@dataclass(frozen=True)
class SimilarityReport:
    """一致度统计

    Attributes:
        k: 所有子网络预测一致的样本数
        m: 评估样本数
        s: k / m
    """

    k: int
    m: int
    s: float

    def as_dict(self) -> dict:
        return {"K": self.k, "M": self.m, "S": self.s}


def similarity(predictions: Sequence[Sequence[int]]) -> SimilarityReport:
    """计算一致度

    Args:
        predictions: [N × M] 整数矩阵，第 i 行是子网络 i 在每个样本上的预测类别

    Returns:
        SimilarityReport

    Raises:
        ShapeError: 行长度不一致或没有样本
    """
    rows = [np.asarray(r, dtype=np.int64).reshape(-1) for r in predictions]
    if not rows:
        raise ShapeError("预测矩阵为空（没有子网络）")
    m = rows[0].size
    if any(r.size != m for r in rows):
        raise ShapeError(f"预测矩阵行长度不一致: {[r.size for r in rows]}")
    if m == 0:
        raise ShapeError("预测矩阵没有样本")
    mat = np.stack(rows)
    k = int(np.all(mat == mat[0], axis=0).sum())
    return SimilarityReport(k, m, k / m)
