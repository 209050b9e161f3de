"""pytest 公共夹具：小结构、小合成数据集、随机数发生器"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from data.dataset_loader import make_synthetic_dataset
from data.preprocess import compute_channel_stats, normalize
from network.arch import ienet_tiny


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    """conv(1→4) → pool → conv(4→6) → gap → dense(3)，输入 1×8×8"""
    return ienet_tiny((1, 8, 8), 3)


@pytest.fixture
def tiny_raw():
    return make_synthetic_dataset(48, class_count=3, shape=(1, 8, 8), seed=0, name="tiny")


@pytest.fixture
def tiny_dataset(tiny_raw):
    mean, std = compute_channel_stats(tiny_raw)
    return normalize(tiny_raw, mean, std)
