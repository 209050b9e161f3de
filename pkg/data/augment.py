"""
augment.py - 训练数据增强

作用在已归一化的 float batch [B × C × H × W] 上，依次执行：
    零填充 pad 后随机裁剪回原尺寸 → 以 hflip_prob 概率水平翻转 → cutout
填充值与 cutout 区域都写 0.0（归一化空间中的 0）。
所有随机量从传入的 rng 一次性抽取，同一 rng 状态得到同一结果。
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from common.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class AugmentPolicy:
    """增强策略

    Attributes:
        pad: 每边零填充像素数
        hflip_prob: 水平翻转概率
        cutout_size: cutout 方块边长
        crop / flip / cutout: 各步骤开关
    """

    pad: int = 4
    hflip_prob: float = 0.5
    cutout_size: int = 16
    crop: bool = True
    flip: bool = True
    cutout: bool = True

    def validate(self, shape: Tuple[int, ...]) -> None:
        h, w = shape[-2:]
        if self.pad < 0:
            raise ConfigError(f"pad 不能为负: {self.pad}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError(f"翻转概率必须在 [0, 1] 内: {self.hflip_prob}")
        if self.cutout and not 0 < self.cutout_size <= min(h, w):
            raise ConfigError(f"cutout 边长 {self.cutout_size} 超出图像边长 {min(h, w)}")

    @property
    def enabled(self) -> bool:
        return self.crop or self.flip or self.cutout


def disabled_policy() -> AugmentPolicy:
    return AugmentPolicy(crop=False, flip=False, cutout=False)


def default_policy_for(shape: Tuple[int, ...], cutout: bool = True) -> AugmentPolicy:
    """按图像边长给出默认策略：32 边长 cutout 16，28 边长 cutout 8，更小的图像取边长的 1/4"""
    side = min(shape[-2:])
    if side >= 32:
        size = 16
    elif side >= 16:
        size = 8
    else:
        size = max(1, side // 4)
    return AugmentPolicy(pad=4 if side >= 16 else 1, hflip_prob=0.5, cutout_size=size, cutout=cutout)


def apply_cutout(img: np.ndarray, cy: int, cx: int, size: int, fill: float = 0.0) -> np.ndarray:
    """把以 (cy, cx) 为中心、边长 size 的方块（在边界处截断）置为 fill，原地修改

    Args:
        img: [C × H × W]
    """
    h, w = img.shape[-2:]
    y1 = min(max(cy - size // 2, 0), h)
    y2 = min(max(cy - size // 2 + size, 0), h)
    x1 = min(max(cx - size // 2, 0), w)
    x2 = min(max(cx - size // 2 + size, 0), w)
    img[..., y1:y2, x1:x2] = fill
    return img


def augment_batch(batch: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """对一个 batch 做增强，返回新数组（形状、dtype 不变）"""
    if batch.ndim != 4:
        raise ShapeError(f"增强输入必须是 [B×C×H×W]，实际 {batch.shape}")
    policy.validate(batch.shape)
    out = batch.copy()
    if not policy.enabled:
        return out
    b, _, h, w = batch.shape
    p = policy.pad

    # 随机量一次性抽取，顺序固定
    offsets = rng.integers(0, 2 * p + 1, size=(b, 2))
    flips = rng.random(b) < policy.hflip_prob
    centers = np.stack([rng.integers(0, h, size=b), rng.integers(0, w, size=b)], axis=1)

    if policy.crop and p > 0:
        padded = np.pad(batch, ((0, 0), (0, 0), (p, p), (p, p)), mode="constant", constant_values=0.0)
        for i in range(b):
            dy, dx = offsets[i]
            out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    if policy.flip:
        out[flips] = out[flips][..., ::-1]
    if policy.cutout:
        for i in range(b):
            apply_cutout(out[i], int(centers[i, 0]), int(centers[i, 1]), policy.cutout_size)
    return out
