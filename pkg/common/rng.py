"""
rng.py - 随机数流管理

所有随机性都从一个整数种子派生，按 (seed, 各级标识) 生成独立子流，
新增一个子网络或一层不会扰动其他子流的取值。
"""

import zlib
from typing import Union

import numpy as np


def _key_part(part: Union[int, str]) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"随机流标识必须非负: {part}")
    return int(part)


def substream(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """派生一个确定性的随机子流

    Args:
        seed: 全局种子
        *keys: 子流标识（整数或字符串，字符串经 crc32 映射）

    Returns:
        np.random.Generator: 对同一组 (seed, keys) 总是产生相同序列
    """
    entropy = [_key_part(seed)] + [_key_part(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
