"""
arch.py - 网络结构定义

ArchSpec 描述一个按顺序排列的层列表（conv / bn / relu / maxpool2 / global_avg / dense），
并推导每层的输入输出通道数。默认结构 IENet-mini：

    conv3×3(32)-BN-ReLU → conv3×3(32)-BN-ReLU → maxpool2 →
    conv3×3(64)-BN-ReLU → conv3×3(64)-BN-ReLU → maxpool2 →
    conv3×3(128)-BN-ReLU → global_avg → dense(C)

width_mult 对所有卷积通道统一缩放，用于构造更宽/更窄的版本。
"""

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from common.errors import PlanError

CONV = "conv"
BN = "bn"
RELU = "relu"
MAXPOOL2 = "maxpool2"
GLOBAL_AVG = "global_avg"
DENSE = "dense"

LAYER_KINDS = (CONV, BN, RELU, MAXPOOL2, GLOBAL_AVG, DENSE)


@dataclass(frozen=True)
class LayerSpec:
    """单层描述

    Attributes:
        name: 层名（唯一）
        kind: 层类型
        out_channels: 卷积输出通道数（仅 conv）
        kernel: 卷积核边长（仅 conv，奇数）
        stride: 卷积步长
        pad: 卷积零填充
    """

    name: str
    kind: str
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class ArchSpec:
    """网络结构

    Attributes:
        name: 结构名（注册表中的键）
        layers: 有序层列表
        input_shape: 输入 (C, H, W)
        num_classes: 类别数 C
        width_mult: 通道缩放系数
    """

    name: str
    layers: Tuple[LayerSpec, ...]
    input_shape: Tuple[int, int, int]
    num_classes: int
    width_mult: float = 1.0
    _table: List[dict] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self._table.extend(self._resolve())

    # ============================================================
    # 结构推导
    # ============================================================
    def _resolve(self) -> List[dict]:
        """推导每层的输入/输出通道和空间尺寸，同时做一致性检查"""
        c, h, w = self.input_shape
        if min(c, h, w) < 1:
            raise PlanError(f"输入形状非法: {self.input_shape}")
        if self.num_classes < 2:
            raise PlanError(f"类别数至少为 2，实际 {self.num_classes}")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise PlanError("层名重复")

        table = []
        last_conv: Optional[str] = None
        dense_seen = 0
        for i, layer in enumerate(self.layers):
            if layer.kind not in LAYER_KINDS:
                raise PlanError(f"{layer.name}: 未知层类型 {layer.kind}")
            if dense_seen:
                raise PlanError("分类头必须是最后一层")
            entry = {"desc": layer, "in": c, "source": last_conv}
            if layer.kind == CONV:
                if layer.out_channels < 1:
                    raise PlanError(f"{layer.name}: 通道数为 0")
                if layer.kernel < 1 or layer.kernel % 2 == 0:
                    raise PlanError(f"{layer.name}: 卷积核边长必须为正奇数")
                h = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
                w = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
                if h < 1 or w < 1:
                    raise PlanError(f"{layer.name}: 输出尺寸非法")
                c = layer.out_channels
                last_conv = layer.name
            elif layer.kind == BN:
                prev = self.layers[i - 1] if i > 0 else None
                if prev is None or prev.kind != CONV:
                    raise PlanError(f"{layer.name}: BN 必须紧跟卷积层")
            elif layer.kind == MAXPOOL2:
                if h % 2 or w % 2:
                    raise PlanError(f"{layer.name}: maxpool2 输入尺寸 {h}×{w} 不是偶数")
                h, w = h // 2, w // 2
            elif layer.kind == GLOBAL_AVG:
                h, w = 1, 1
            elif layer.kind == DENSE:
                if h != 1 or w != 1:
                    raise PlanError("分类头之前必须先做 global_avg")
                dense_seen += 1
                c = self.num_classes
            entry.update({"out": c, "hw": (h, w)})
            table.append(entry)
        if dense_seen != 1:
            raise PlanError("结构中必须恰好有一个分类头")
        return table

    # ============================================================
    # 查询接口
    # ============================================================
    def table(self) -> List[dict]:
        return list(self._table)

    def conv_layers(self) -> List[Tuple[str, int, int, int]]:
        """[(层名, c_in, c_out, k)]"""
        return [(e["desc"].name, e["in"], e["out"], e["desc"].kernel) for e in self._table if e["desc"].kind == CONV]

    def recombinable_layers(self) -> List[Tuple[str, int]]:
        """可重组层：各卷积层的输出通道 [(层名, c)]"""
        return [(name, c_out) for name, _, c_out, _ in self.conv_layers()]

    def bn_layers(self) -> List[Tuple[str, str, int]]:
        """[(BN 层名, 所属卷积层名, 通道数)]"""
        return [(e["desc"].name, e["source"], e["in"]) for e in self._table if e["desc"].kind == BN]

    def dense_layer(self) -> Tuple[str, int, int]:
        """(层名, d_in, d_out)"""
        e = next(e for e in self._table if e["desc"].kind == DENSE)
        return e["desc"].name, e["in"], e["out"]

    def input_source(self, layer_name: str) -> Optional[str]:
        """某层输入通道来自哪个卷积层（None 表示网络输入）"""
        for e in self._table:
            if e["desc"].name == layer_name:
                return e["source"]
        raise PlanError(f"结构中没有层 {layer_name}")

    def arch_hash(self) -> str:
        """结构摘要（16 位十六进制），用于检查点与方案匹配校验"""
        parts = [self.name, repr(tuple(self.input_shape)), str(self.num_classes), repr(float(self.width_mult))]
        for l in self.layers:
            parts.append(f"{l.name}:{l.kind}:{l.out_channels}:{l.kernel}:{l.stride}:{l.pad}")
        return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()[:16]


# ============================================================
# 预置结构
# ============================================================
def _scaled(c: int, width_mult: float) -> int:
    return max(1, int(round(c * width_mult)))


def _conv_block(idx: int, channels: int) -> List[LayerSpec]:
    return [
        LayerSpec(f"conv{idx}", CONV, out_channels=channels, kernel=3, stride=1, pad=1),
        LayerSpec(f"bn{idx}", BN),
        LayerSpec(f"relu{idx}", RELU),
    ]


def ienet_mini(input_shape=(1, 28, 28), num_classes: int = 10, width_mult: float = 1.0) -> ArchSpec:
    """IENet-mini 默认结构"""
    widths = [_scaled(c, width_mult) for c in (32, 32, 64, 64, 128)]
    layers = _conv_block(1, widths[0]) + _conv_block(2, widths[1]) + [LayerSpec("pool1", MAXPOOL2)]
    layers += _conv_block(3, widths[2]) + _conv_block(4, widths[3]) + [LayerSpec("pool2", MAXPOOL2)]
    layers += _conv_block(5, widths[4]) + [LayerSpec("gap", GLOBAL_AVG), LayerSpec("fc", DENSE)]
    return ArchSpec("ienet-mini", tuple(layers), tuple(input_shape), num_classes, width_mult)


def ienet_tiny(input_shape=(1, 8, 8), num_classes: int = 3, width_mult: float = 1.0) -> ArchSpec:
    """两层卷积（4 → 6 通道）的小结构，用于梯度校验与快速冒烟"""
    layers = _conv_block(1, _scaled(4, width_mult)) + [LayerSpec("pool1", MAXPOOL2)]
    layers += _conv_block(2, _scaled(6, width_mult)) + [LayerSpec("gap", GLOBAL_AVG), LayerSpec("fc", DENSE)]
    return ArchSpec("ienet-tiny", tuple(layers), tuple(input_shape), num_classes, width_mult)


ARCH_REGISTRY: Dict[str, callable] = {
    "ienet-mini": ienet_mini,
    "ienet-tiny": ienet_tiny,
}


def build_arch(name: str, input_shape, num_classes: int, width_mult: float = 1.0) -> ArchSpec:
    """按名称构造结构"""
    key = name.strip().lower()
    if key not in ARCH_REGISTRY:
        raise PlanError(f"未知结构: {name}（可选: {', '.join(ARCH_REGISTRY)}）")
    return ARCH_REGISTRY[key](tuple(input_shape), num_classes, width_mult)
