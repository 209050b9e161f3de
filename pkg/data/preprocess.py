"""
preprocess.py - 预处理模块

归一化、通道统计、分层确定性划分与批次索引生成。
"""

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from common.errors import ConfigError, DataFormatError, ShapeError
from common.rng import substream
from data.dataset_loader import ImageDataset


@dataclass
class NormalizedDataset:
    """归一化后的数据集

    Attributes:
        images: float32 [M × C × H × W]
        labels: int64 [M]
        class_count: 类别数
        name: 名称
        mean / std: 使用的每通道归一化常数
    """

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""
    mean: Tuple[float, ...] = ()
    std: Tuple[float, ...] = ()

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: Sequence[int]) -> "NormalizedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return NormalizedDataset(self.images[idx], self.labels[idx], self.class_count, self.name, self.mean, self.std)


def compute_channel_stats(ds: ImageDataset) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """每通道均值与标准差（像素先除以 255）"""
    if len(ds) == 0:
        raise DataFormatError(f"{ds.name}: 空数据集无法计算统计量")
    x = ds.images.astype(np.float64) / 255.0
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    return tuple(float(v) for v in mean), tuple(float(v) for v in std)


def normalize(ds: ImageDataset, mean: Sequence[float], std: Sequence[float]) -> NormalizedDataset:
    """x' = (x / 255 − mean) / std，逐通道

    Raises:
        ShapeError: mean / std 长度与通道数不符
        DataFormatError: std 非正
    """
    c = ds.images.shape[1]
    m = np.asarray(mean, dtype=np.float64).reshape(-1)
    s = np.asarray(std, dtype=np.float64).reshape(-1)
    if m.size != c or s.size != c:
        raise ShapeError(f"{ds.name}: 归一化常数长度 mean={m.size}, std={s.size}，图像通道数 {c}")
    if np.any(s <= 0):
        raise DataFormatError(f"{ds.name}: std 必须为正，实际 {tuple(s)}")
    x = (ds.images.astype(np.float64) / 255.0 - m[None, :, None, None]) / s[None, :, None, None]
    return NormalizedDataset(
        x.astype(np.float32), ds.labels.copy(), ds.class_count, ds.name, tuple(m.tolist()), tuple(s.tolist())
    )


def deterministic_split(ds: ImageDataset, fractions: Sequence[float], seed: int) -> List[ImageDataset]:
    """按类别分层的确定性划分

    每个类别内部按 seed 打乱后取连续片段，片段大小为 floor(fraction · 该类样本数)；
    各划分再按 seed 打乱顺序。

    Args:
        ds: 数据集
        fractions: 各划分比例，均为正且总和 ≤ 1
        seed: 种子

    Returns:
        list[ImageDataset]

    Raises:
        DataFormatError: 某个划分没有分到某个类别的样本
    """
    if len(ds) == 0:
        raise DataFormatError(f"{ds.name}: 空数据集无法划分")
    fr = [float(f) for f in fractions]
    if not fr or any(f <= 0 for f in fr) or sum(fr) > 1.0 + 1e-9:
        raise DataFormatError(f"划分比例必须为正且总和不超过 1，实际 {fr}")

    parts: List[List[np.ndarray]] = [[] for _ in fr]
    for cls in np.unique(ds.labels):
        members = np.flatnonzero(ds.labels == cls)
        members = members[substream(seed, "split", int(cls)).permutation(members.size)]
        start = 0
        for i, f in enumerate(fr):
            count = int(np.floor(f * members.size + 1e-9))
            if count == 0:
                raise DataFormatError(f"{ds.name}: 划分 {i} 没有分到类别 {int(cls)} 的样本")
            parts[i].append(members[start:start + count])
            start += count

    out = []
    for i, chunks in enumerate(parts):
        idx = np.concatenate(chunks)
        idx = idx[substream(seed, "split-order", i).permutation(idx.size)]
        out.append(ds.subset(idx, f"{ds.name}[{i}]"))
    return out


def iterate_batches(n: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[np.ndarray]:
    """生成批次索引；给出 rng 时先打乱"""
    if batch_size < 1:
        raise ConfigError(f"batch_size 必须为正，实际 {batch_size}")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
