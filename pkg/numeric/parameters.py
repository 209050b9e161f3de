"""
parameters.py - 参数存储模块

ParameterStore 保存一组具名的权重张量，以及同形状的梯度累加缓冲区
和动量缓冲区。所有子网络共享同一个 store，反向传播只向被选中的
索引位置累加梯度。
"""

import hashlib
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from common.errors import ShapeError


class ParameterStore:
    """具名参数存储

    Attributes:
        weights (dict): 参数名 → 权重张量
        grads (dict): 参数名 → 梯度累加缓冲区（与权重同形状）
        velocity (dict): 参数名 → 动量缓冲区
        touched (set): 自上次优化步以来收到过梯度的参数名
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.weights: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.velocity: Dict[str, np.ndarray] = {}
        self.touched = set()

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        """注册一个新参数

        Args:
            name: 参数名，须唯一
            value: 初始值，会被复制并转换为 store 的 dtype

        Returns:
            np.ndarray: store 内部持有的权重数组
        """
        if name in self.weights:
            raise ValueError(f"参数名重复: {name}")
        w = np.array(value, dtype=self.dtype, copy=True)
        self.weights[name] = w
        self.grads[name] = np.zeros_like(w)
        self.velocity[name] = np.zeros_like(w)
        return w

    def __contains__(self, name: str) -> bool:
        return name in self.weights

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[name]

    def __len__(self) -> int:
        return len(self.weights)

    def names(self) -> Iterator[str]:
        return iter(self.weights)

    def grad(self, name: str) -> np.ndarray:
        """取出梯度缓冲区并标记该参数本轮已被写入"""
        self.touched.add(name)
        return self.grads[name]

    def accumulate(self, name: str, delta: np.ndarray, index: Optional[Tuple] = None) -> None:
        """向梯度缓冲区累加（+=）

        Args:
            name: 参数名
            delta: 梯度增量
            index: 可选的索引元组（如 np.ix_ 结果），只写入这些位置
        """
        buf = self.grad(name)
        if index is None:
            if delta.shape != buf.shape:
                raise ShapeError(f"{name} 梯度形状 {delta.shape} 与参数 {buf.shape} 不一致")
            buf += delta
        else:
            buf[index] += delta

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)
        self.touched.clear()

    def num_elements(self, prefix: str = "") -> int:
        return int(sum(w.size for n, w in self.weights.items() if n.startswith(prefix)))

    def fingerprint(self) -> str:
        """权重内容的 sha256 摘要，用于冻结校验"""
        h = hashlib.sha256()
        for name in sorted(self.weights):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(self.weights[name]).tobytes())
        return h.hexdigest()

    def copy(self) -> "ParameterStore":
        other = ParameterStore(self.dtype)
        for name in self.weights:
            other.weights[name] = self.weights[name].copy()
            other.grads[name] = self.grads[name].copy()
            other.velocity[name] = self.velocity[name].copy()
        other.touched = set(self.touched)
        return other
