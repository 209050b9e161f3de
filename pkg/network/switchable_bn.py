"""
switchable_bn.py - 可切换批归一化（S-BN）

每个 BN 层为每个子网络维护一个独立槽位：私有的 scale/shift（可训练）
与滑动均值/方差（统计量），槽位大小等于该子网络在该层保留的通道数。
子网络 i 的前向/反向只读写槽位 (layer, i)，其他槽位保持不变。
"""

import hashlib
from typing import Dict, Iterable, Tuple

import numpy as np

from common.errors import PlanError
from numeric.layers import batchnorm, batchnorm_backward
from numeric.parameters import ParameterStore


def slot_name(layer: str, subnet_id: int, field: str) -> str:
    return f"{layer}.s{subnet_id}.{field}"


class SwitchableBNBank:
    """S-BN 槽位集合

    Attributes:
        params (ParameterStore): 所有槽位的 scale / shift 及其梯度、动量
        stats (dict): 槽位名 → 滑动均值 / 滑动方差
        sizes (dict): (layer, subnet_id) → 槽位大小
    """

    def __init__(self, dtype=np.float32):
        self.params = ParameterStore(dtype)
        self.stats: Dict[str, np.ndarray] = {}
        self.sizes: Dict[Tuple[str, int], int] = {}
        self.channels: Dict[str, int] = {}

    def add_slot(self, layer: str, subnet_id: int, size: int, full_channels: int) -> None:
        """新增一个槽位：scale=1, shift=0, 均值 0, 方差 1

        Args:
            layer: BN 层名
            subnet_id: 子网络编号
            size: 槽位大小（该子网络在此层保留的通道数）
            full_channels: 该层完整通道数 c
        """
        if (layer, subnet_id) in self.sizes:
            raise PlanError(f"S-BN 槽位重复: {layer} / 子网络 {subnet_id}")
        if not 1 <= size <= full_channels:
            raise PlanError(f"{layer}: 槽位大小 {size} 超出 [1, {full_channels}]")
        self.channels[layer] = full_channels
        dtype = self.params.dtype
        self.params.add(slot_name(layer, subnet_id, "scale"), np.ones(size, dtype=dtype))
        self.params.add(slot_name(layer, subnet_id, "shift"), np.zeros(size, dtype=dtype))
        self.stats[slot_name(layer, subnet_id, "running_mean")] = np.zeros(size, dtype=dtype)
        self.stats[slot_name(layer, subnet_id, "running_var")] = np.ones(size, dtype=dtype)
        self.sizes[(layer, subnet_id)] = size

    def has_slot(self, layer: str, subnet_id: int) -> bool:
        return (layer, subnet_id) in self.sizes

    def subnet_ids(self) -> Iterable[int]:
        return sorted({sid for _, sid in self.sizes})

    def slot_arrays(self, layer: str, subnet_id: int) -> Dict[str, np.ndarray]:
        """槽位内全部数组（用于隔离性检查与检查点）"""
        return {
            "scale": self.params[slot_name(layer, subnet_id, "scale")],
            "shift": self.params[slot_name(layer, subnet_id, "shift")],
            "running_mean": self.stats[slot_name(layer, subnet_id, "running_mean")],
            "running_var": self.stats[slot_name(layer, subnet_id, "running_var")],
        }

    def forward(self, layer: str, subnet_id: int, x: np.ndarray, mode: str) -> Tuple[np.ndarray, dict]:
        """用槽位 (layer, subnet_id) 做批归一化"""
        if not self.has_slot(layer, subnet_id):
            raise PlanError(f"没有 S-BN 槽位: {layer} / 子网络 {subnet_id}")
        s = self.slot_arrays(layer, subnet_id)
        return batchnorm(x, s["scale"], s["shift"], s["running_mean"], s["running_var"], mode)

    def backward(
        self, layer: str, subnet_id: int, grad_y: np.ndarray, cache: dict, param_scale: float = 1.0
    ) -> np.ndarray:
        """反向传播，scale / shift 梯度（乘以 param_scale）只写入该槽位"""
        return batchnorm_backward(
            grad_y,
            cache,
            scale_grad=self.params.grad(slot_name(layer, subnet_id, "scale")),
            shift_grad=self.params.grad(slot_name(layer, subnet_id, "shift")),
            param_scale=param_scale,
        )

    def num_trainable(self) -> int:
        return self.params.num_elements()

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.params.fingerprint().encode("ascii"))
        for name in sorted(self.stats):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(self.stats[name]).tobytes())
        return h.hexdigest()
