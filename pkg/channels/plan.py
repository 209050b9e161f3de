"""
plan.py - 子网络方案

SubNetworkPlan 记录一个子网络在每个可重组层上使用的通道。方案在训练开始前
一次性采样并冻结，整个训练周期内不变。

使用方法：
    from channels.plan import build_plan
    plans = build_plan(arch, [0.9, 0.9, 0.9, 1.0], "rc", seed=0)
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from channels.recombination import (
    FULL,
    ChannelSelection,
    get_sampler,
    identity_selection,
    kept_count,
    normalize_kind,
)
from common.errors import PlanError
from common.rng import substream
from network.arch import ArchSpec


@dataclass(frozen=True)
class SubNetworkPlan:
    """一个子网络的完整通道方案

    Attributes:
        subnet_id: 子网络编号（同时决定 S-BN 槽位）
        width: 宽度比例 w_i
        kind: 重组方式（宽度 1.0 时恒为 full）
        selections: 每个可重组层一个 ChannelSelection，按结构顺序排列
        arch_hash: 生成方案时所用结构的摘要
    """

    subnet_id: int
    width: float
    kind: str
    selections: Tuple[ChannelSelection, ...]
    arch_hash: str

    def selection(self, layer_id: str) -> ChannelSelection:
        for sel in self.selections:
            if sel.layer_id == layer_id:
                return sel
        raise PlanError(f"子网络 {self.subnet_id} 的方案中没有层 {layer_id}")

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {sel.layer_id: sel.as_array() for sel in self.selections}

    def is_identity(self) -> bool:
        return self.kind == FULL


def validate_widths(widths: Sequence[float]) -> List[float]:
    """宽度列表校验：非空，每项在 (0, 1] 内"""
    ws = [float(w) for w in widths]
    if not ws:
        raise PlanError("宽度列表为空")
    for w in ws:
        if not 0.0 < w <= 1.0:
            raise PlanError(f"宽度比例必须在 (0, 1] 内，实际 {w}")
    return ws


def make_plan(arch: ArchSpec, subnet_id: int, width: float, kind: str, seed: int) -> SubNetworkPlan:
    """采样单个子网络方案，每层使用独立的随机子流 (seed, subnet_id, layer_id)"""
    kind = normalize_kind(kind)
    if width == 1.0:
        kind = FULL
    elif kind == FULL:
        raise PlanError(f"full 方式只能搭配宽度 1.0，子网络 {subnet_id} 宽度为 {width}")
    sampler = get_sampler(kind)
    selections = []
    for layer_id, c in arch.recombinable_layers():
        if c < 1:
            raise PlanError(f"{layer_id}: 通道数为 0")
        if kind == FULL:
            sel = identity_selection(c, layer_id)
        else:
            sel = sampler(c, width, substream(seed, subnet_id, layer_id), layer_id=layer_id)
        selections.append(sel)
    return SubNetworkPlan(subnet_id, width, kind, tuple(selections), arch.arch_hash())


def build_plan(arch: ArchSpec, widths: Sequence[float], kind: str, seed: int) -> List[SubNetworkPlan]:
    """为每个宽度生成一个子网络方案

    Args:
        arch: 网络结构
        widths: 宽度比例列表，长度即子网络个数 N
        kind: 重组方式 rc / ro / sc / full
        seed: 全局种子

    Returns:
        list[SubNetworkPlan]: 与 widths 一一对应；宽度 1.0 的子网络为恒等方案
    """
    ws = validate_widths(widths)
    return [make_plan(arch, i, w, kind, seed) for i, w in enumerate(ws)]


def validate_plans(plans: Sequence[SubNetworkPlan], arch: ArchSpec) -> None:
    """检查方案与结构匹配：摘要一致、层齐全、每层通道数 == kept_count"""
    h = arch.arch_hash()
    layers = arch.recombinable_layers()
    for plan in plans:
        if plan.arch_hash != h:
            raise PlanError(f"子网络 {plan.subnet_id} 的方案不是为该结构生成的")
        if len(plan.selections) != len(layers):
            raise PlanError(f"子网络 {plan.subnet_id} 的方案层数与结构不符")
        for sel, (layer_id, c) in zip(plan.selections, layers):
            if sel.layer_id != layer_id:
                raise PlanError(f"子网络 {plan.subnet_id}: 期望层 {layer_id}，实际 {sel.layer_id}")
            sel.validate(c)
            if len(sel) != kept_count(c, plan.width):
                raise PlanError(f"子网络 {plan.subnet_id} 层 {layer_id} 通道数与宽度 {plan.width} 不符")


# ============================================================
# 多样性诊断
# ============================================================
def _conv_index_sets(plan: SubNetworkPlan, arch: ArchSpec) -> List[Tuple[set, set, int]]:
    """每个卷积层的 (输出通道集, 输入通道集, k·k)"""
    out = []
    for name, c_in, _, k in arch.conv_layers():
        source = arch.input_source(name)
        in_set = set(range(c_in)) if source is None else set(plan.selection(source).indices)
        out.append((set(plan.selection(name).indices), in_set, k * k))
    return out


def pairwise_overlap(a: SubNetworkPlan, b: SubNetworkPlan, arch: ArchSpec) -> float:
    """两个子网络共同使用的卷积核元素占二者并集的比例（Jaccard）

    每层使用的核元素为 (out_sel × in_sel × k × k)，交集与并集在所有卷积层上求和。
    """
    h = arch.arch_hash()
    if a.arch_hash != h or b.arch_hash != h:
        raise PlanError("方案与结构不匹配，无法比较")
    inter = 0
    union = 0
    for (oa, ia, kk), (ob, ib, _) in zip(_conv_index_sets(a, arch), _conv_index_sets(b, arch)):
        size_a = len(oa) * len(ia) * kk
        size_b = len(ob) * len(ib) * kk
        both = len(oa & ob) * len(ia & ib) * kk
        inter += both
        union += size_a + size_b - both
    return inter / union if union else 1.0


def plan_diversity(plans: Sequence[SubNetworkPlan], arch: ArchSpec) -> pd.DataFrame:
    """所有子网络两两重叠度矩阵"""
    labels = [f"s{p.subnet_id}" for p in plans]
    mat = np.ones((len(plans), len(plans)))
    for i in range(len(plans)):
        for j in range(i + 1, len(plans)):
            mat[i, j] = mat[j, i] = pairwise_overlap(plans[i], plans[j], arch)
    return pd.DataFrame(mat, index=labels, columns=labels)
