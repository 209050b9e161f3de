"""
recombination.py - 随机通道重组采样器

提供 3 种通道重组方式（外加恒等全选），统一接口 sampler(c, w, rng) -> ChannelSelection：
1. random_cut       (RC)：随机切掉一段连续通道，保留两侧
2. random_offset    (RO)：从随机偏移开始保留一段连续通道
3. shuffle_channel  (SC)：随机选取通道子集并打乱顺序
4. full                 ：宽度 1.0 时的恒等选择

每个子网络的每一层都独立采样，通道数由 kept_count 决定。
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from common.errors import PlanError

# ============================================================
# 重组方式常量
# ============================================================
RANDOM_CUT = "random_cut"
RANDOM_OFFSET = "random_offset"
SHUFFLE_CHANNEL = "shuffle_channel"
FULL = "full"

KIND_ALIASES = {
    "rc": RANDOM_CUT,
    "ro": RANDOM_OFFSET,
    "sc": SHUFFLE_CHANNEL,
    "full": FULL,
    RANDOM_CUT: RANDOM_CUT,
    RANDOM_OFFSET: RANDOM_OFFSET,
    SHUFFLE_CHANNEL: SHUFFLE_CHANNEL,
}

KIND_SHORT = {RANDOM_CUT: "rc", RANDOM_OFFSET: "ro", SHUFFLE_CHANNEL: "sc", FULL: "full"}


@dataclass(frozen=True)
class ChannelSelection:
    """某一层中子网络使用的有序通道索引

    Attributes:
        layer_id: 层名
        indices: 有序通道索引（SC 下顺序有意义，下游按此顺序取权重）
    """

    layer_id: str
    indices: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)

    def validate(self, total: int) -> None:
        if not self.indices:
            raise PlanError(f"{self.layer_id}: 选择集为空")
        if len(set(self.indices)) != len(self.indices):
            raise PlanError(f"{self.layer_id}: 选择集存在重复索引")
        if min(self.indices) < 0 or max(self.indices) >= total:
            raise PlanError(f"{self.layer_id}: 索引超出 [0, {total})")


def normalize_kind(kind: str) -> str:
    """把 'rc' / 'random_cut' 等写法统一为标准名称"""
    key = str(kind).strip().lower()
    if key not in KIND_ALIASES:
        raise PlanError(f"未知的通道重组方式: {kind}（可选: rc, ro, sc, full）")
    return KIND_ALIASES[key]


def kept_count(c: int, w: float) -> int:
    """子网络在 c 通道层中保留的通道数：round(w·c)，四舍五入（.5 进位），至少为 1

    Args:
        c: 层的总通道数（≥ 1）
        w: 宽度比例，(0, 1]
    """
    if c < 1:
        raise PlanError(f"通道数必须 ≥ 1，实际 {c}")
    if not 0.0 < w <= 1.0:
        raise PlanError(f"宽度比例必须在 (0, 1] 内，实际 {w}")
    # 1e-9 吸收 0.45·10 = 4.4999… 这类浮点误差
    return max(1, min(c, int(math.floor(w * c + 0.5 + 1e-9))))


def identity_selection(c: int, layer_id: str = "") -> ChannelSelection:
    return ChannelSelection(layer_id, tuple(range(c)))


# ============================================================
# 确定性公式（t 给定）
# ============================================================
def random_cut_indices(c: int, n: int, t: int) -> Tuple[int, ...]:
    """切掉 [t, t+pc) 后剩余的通道，pc = c − n"""
    pc = c - n
    if pc > 0 and not 0 <= t < c - pc:
        raise PlanError(f"RC 切口位置 t={t} 超出 [0, {c - pc})")
    return tuple(range(0, t)) + tuple(range(t + pc, c))


def random_offset_indices(c: int, n: int, t: int) -> Tuple[int, ...]:
    """从偏移 t 开始的连续 n 个通道"""
    if not 0 <= t <= c - n:
        raise PlanError(f"RO 偏移 t={t} 超出 [0, {c - n}]")
    return tuple(range(t, t + n))


# ============================================================
# 采样器
# ============================================================
def sample_random_cut(c: int, w: float, rng: np.random.Generator, layer_id: str = "") -> ChannelSelection:
    """随机切除（RC）

    切掉长度 pc = c − kept_count(c, w) 的连续块 [t, t+pc)，
    t 在 [0, c − pc) 上均匀采样；w = 1.0 时返回恒等选择。
    """
    n = kept_count(c, w)
    pc = c - n
    if pc == 0:
        return identity_selection(c, layer_id)
    t = int(rng.integers(0, c - pc))
    return ChannelSelection(layer_id, random_cut_indices(c, n, t))


def sample_random_offset(c: int, w: float, rng: np.random.Generator, layer_id: str = "") -> ChannelSelection:
    """随机偏移（RO）

    保留连续通道 [t, t+n)，t 在 [0, c − n] 上均匀采样；w = 1.0 时 t 必为 0。
    """
    n = kept_count(c, w)
    t = int(rng.integers(0, c - n + 1))
    return ChannelSelection(layer_id, random_offset_indices(c, n, t))


def sample_shuffle(c: int, w: float, rng: np.random.Generator, layer_id: str = "") -> ChannelSelection:
    """通道洗牌（SC）：整体随机置换后截取前 n 个，顺序保留"""
    n = kept_count(c, w)
    perm = rng.permutation(c)[:n]
    return ChannelSelection(layer_id, tuple(int(i) for i in perm))


def sample_full(c: int, w: float, rng: np.random.Generator, layer_id: str = "") -> ChannelSelection:
    if w != 1.0:
        raise PlanError(f"full 方式只能搭配宽度 1.0，实际 {w}")
    return identity_selection(c, layer_id)


# ============================================================
# 采样器注册表
# ============================================================
Sampler = Callable[..., ChannelSelection]

ALL_SAMPLERS: Dict[str, Sampler] = {
    RANDOM_CUT: sample_random_cut,
    RANDOM_OFFSET: sample_random_offset,
    SHUFFLE_CHANNEL: sample_shuffle,
    FULL: sample_full,
}


def get_sampler(kind: str) -> Sampler:
    """根据名称（支持 rc/ro/sc 简写）取得采样器"""
    return ALL_SAMPLERS[normalize_kind(kind)]
