"""
dataset_loader.py - 数据集读取模块

支持的小图像数据集二进制格式：
- IDX（MNIST / Fashion-MNIST），可为 .gz 压缩
- CIFAR-10 二进制（每条 1 字节标签 + 3072 字节像素，R/G/B 三个平面）
- CIFAR-100 二进制（每条 2 字节标签：粗类、细类 + 3072 字节像素，使用细类）
另外提供对应的写出函数与一个合成数据集，便于在没有下载数据时冒烟测试。

数据目录默认取环境变量 IENET_DATA_DIR（可写在 .env 中）。
"""

import gzip
import os
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv

from common.errors import ConfigError, DataFormatError
from common.rng import substream

load_dotenv()

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_IMAGE_BYTES = 3 * 32 * 32
CIFAR10_RECORD = 1 + CIFAR_IMAGE_BYTES
CIFAR100_RECORD = 2 + CIFAR_IMAGE_BYTES

DATASET_NAMES = ("fashion-mnist", "mnist", "cifar10", "cifar100", "synthetic")


@dataclass
class ImageDataset:
    """原始图像数据集

    Attributes:
        images: uint8 [M × C × H × W]
        labels: int64 [M]
        class_count: 类别数
        name: 数据集名称
    """

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.ndim != 4:
            raise DataFormatError(f"{self.name}: 图像数组必须是 4 维 [M×C×H×W]，实际 {self.images.shape}")
        if self.images.shape[0] != self.labels.size:
            raise DataFormatError(f"{self.name}: 图像数 {self.images.shape[0]} 与标签数 {self.labels.size} 不一致")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataFormatError(f"{self.name}: 标签超出 [0, {self.class_count})")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "ImageDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return ImageDataset(self.images[idx], self.labels[idx], self.class_count, name or self.name)


# ============================================================
# IDX
# ============================================================
def _read_bytes(path: str) -> bytes:
    if not os.path.isfile(path):
        raise DataFormatError(f"数据文件不存在: {path}")
    opener = gzip.open if path.endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except (OSError, EOFError) as e:
        raise DataFormatError(f"读取 {path} 失败: {e}")


def load_idx(images_path: str, labels_path: str, class_count: int = 10, name: str = "idx") -> ImageDataset:
    """读取一对 IDX 图像/标签文件

    Args:
        images_path: 图像文件（魔数 0x00000803，大端）
        labels_path: 标签文件（魔数 0x00000801，大端）
        class_count: 类别数
        name: 数据集名称

    Returns:
        ImageDataset: 灰度图像，C=1

    Raises:
        DataFormatError: 魔数错误、文件截断、图像与标签数量不一致
    """
    raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise DataFormatError(f"{images_path}: 文件头被截断")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{images_path}: 图像魔数 0x{magic:08x}，期望 0x{IDX_IMAGES_MAGIC:08x}")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise DataFormatError(f"{images_path}: 文件长度 {len(raw)}，按文件头应为 {expected}")
    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols).copy()

    raw = _read_bytes(labels_path)
    if len(raw) < 8:
        raise DataFormatError(f"{labels_path}: 文件头被截断")
    magic, n_labels = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{labels_path}: 标签魔数 0x{magic:08x}，期望 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) != 8 + n_labels:
        raise DataFormatError(f"{labels_path}: 文件长度 {len(raw)}，按文件头应为 {8 + n_labels}")
    if n_labels != count:
        raise DataFormatError(f"图像数 {count} 与标签数 {n_labels} 不一致")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    return ImageDataset(images, labels, class_count, name)


def write_idx(images_path: str, labels_path: str, ds: ImageDataset) -> None:
    """把单通道数据集写成 IDX 文件对（路径以 .gz 结尾时压缩）"""
    if ds.images.shape[1] != 1:
        raise DataFormatError(f"IDX 只支持单通道图像，实际 {ds.images.shape[1]} 通道")
    m, _, rows, cols = ds.images.shape
    img = struct.pack(">IIII", IDX_IMAGES_MAGIC, m, rows, cols) + ds.images.astype(np.uint8).tobytes()
    lab = struct.pack(">II", IDX_LABELS_MAGIC, m) + ds.labels.astype(np.uint8).tobytes()
    for path, payload in ((images_path, img), (labels_path, lab)):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        opener = gzip.open if path.endswith(".gz") else open
        with opener(path, "wb") as f:
            f.write(payload)


# ============================================================
# CIFAR 二进制
# ============================================================
def _read_cifar_file(path: str, label_bytes: int, class_count: int) -> Tuple[np.ndarray, np.ndarray]:
    raw = _read_bytes(path)
    record = label_bytes + CIFAR_IMAGE_BYTES
    if len(raw) == 0 or len(raw) % record:
        raise DataFormatError(f"{path}: 文件长度 {len(raw)} 不是记录长度 {record} 的整数倍")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
    labels = rows[:, label_bytes - 1].astype(np.int64)
    if labels.max() >= class_count:
        raise DataFormatError(f"{path}: 出现标签 {int(labels.max())}，应小于 {class_count}")
    images = rows[:, label_bytes:].reshape(-1, 3, 32, 32).copy()
    return images, labels


def _load_cifar(files: List[str], label_bytes: int, class_count: int, name: str) -> ImageDataset:
    missing = [f for f in files if not os.path.isfile(f)]
    if missing:
        raise DataFormatError(f"缺少 CIFAR 数据文件: {', '.join(missing)}")
    parts = [_read_cifar_file(f, label_bytes, class_count) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return ImageDataset(images, labels, class_count, name)


def load_cifar10_bin(directory: str, split: str = "train") -> ImageDataset:
    """读取 CIFAR-10 二进制目录

    Args:
        directory: 含 data_batch_1..5.bin / test_batch.bin 的目录，也可直接给单个 .bin 文件
        split: 'train' 或 'test'

    Returns:
        ImageDataset: 3×32×32，训练集 50000 张，测试集 10000 张
    """
    if os.path.isfile(directory):
        files = [directory]
    elif split == "train":
        files = [os.path.join(directory, f"data_batch_{i}.bin") for i in range(1, 6)]
    else:
        files = [os.path.join(directory, "test_batch.bin")]
    return _load_cifar(files, 1, 10, f"cifar10-{split}")


def load_cifar100_bin(directory: str, split: str = "train") -> ImageDataset:
    """读取 CIFAR-100 二进制目录（train.bin / test.bin），使用细类标签"""
    if os.path.isfile(directory):
        files = [directory]
    else:
        files = [os.path.join(directory, "train.bin" if split == "train" else "test.bin")]
    return _load_cifar(files, 2, 100, f"cifar100-{split}")


def write_cifar_bin(path: str, ds: ImageDataset, label_bytes: int = 1) -> None:
    """写出 CIFAR 二进制记录；label_bytes=2 时粗类字节写 0"""
    if ds.shape != (3, 32, 32):
        raise DataFormatError(f"CIFAR 记录要求 3×32×32 图像，实际 {ds.shape}")
    m = len(ds)
    rows = np.zeros((m, label_bytes + CIFAR_IMAGE_BYTES), dtype=np.uint8)
    rows[:, label_bytes - 1] = ds.labels.astype(np.uint8)
    rows[:, label_bytes:] = ds.images.reshape(m, -1)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(rows.tobytes())


# ============================================================
# 合成数据集
# ============================================================
def make_synthetic_dataset(
    m: int,
    class_count: int = 10,
    shape: Tuple[int, int, int] = (1, 28, 28),
    seed: int = 0,
    noise: float = 0.35,
    name: str = "synthetic",
) -> ImageDataset:
    """生成带类别原型的合成图像

    每个类别一个固定的随机原型图，样本 = 原型与噪声的混合，类别均衡。
    原型只取决于 (class_count, shape)，噪声与标签顺序取决于 seed。
    """
    protos = substream(0, "synthetic-prototypes", class_count).uniform(0.0, 1.0, (class_count,) + tuple(shape))
    rng = substream(seed, "synthetic", m)
    labels = rng.permutation(np.arange(m) % class_count)
    mixed = (1.0 - noise) * protos[labels] + noise * rng.uniform(0.0, 1.0, (m,) + tuple(shape))
    images = np.clip(np.round(mixed * 255.0), 0, 255).astype(np.uint8)
    return ImageDataset(images, labels, class_count, name)


# ============================================================
# 按数据集名称加载
# ============================================================
class DatasetLoader:
    """按数据集名称定位并读取训练/测试集

    Attributes:
        data_dir (str): 数据根目录，默认取 IENET_DATA_DIR，否则为 ./datasets
    """

    _IDX_FILES = {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }

    def __init__(self, data_dir: Optional[str] = None, verbose: bool = True):
        self.data_dir = data_dir or os.getenv("IENET_DATA_DIR", "datasets")
        self.verbose = verbose

    def _find(self, base: str) -> str:
        for candidate in (base, base + ".gz"):
            path = os.path.join(self.data_dir, candidate)
            if os.path.isfile(path):
                return path
        raise DataFormatError(f"在 {self.data_dir} 中找不到 {base}(.gz)")

    def load(
        self,
        dataset: str,
        split: str,
        images_path: Optional[str] = None,
        labels_path: Optional[str] = None,
        synthetic_size: int = 512,
        seed: int = 0,
    ) -> ImageDataset:
        """读取一个划分

        Args:
            dataset: fashion-mnist | mnist | cifar10 | cifar100 | synthetic
            split: 'train' 或 'test'
            images_path / labels_path: 显式指定 IDX 文件路径（可选）
            synthetic_size: 合成数据集的样本数（测试集取其 1/4）
            seed: 合成数据集种子

        Returns:
            ImageDataset
        """
        key = dataset.strip().lower()
        if key not in DATASET_NAMES:
            raise ConfigError(f"未知数据集: {dataset}（可选: {', '.join(DATASET_NAMES)}）")
        if split not in ("train", "test"):
            raise ConfigError(f"未知划分: {split}")

        if key in ("fashion-mnist", "mnist"):
            img_name, lab_name = self._IDX_FILES[split]
            ds = load_idx(
                images_path or self._find(img_name),
                labels_path or self._find(lab_name),
                10,
                f"{key}-{split}",
            )
        elif key == "cifar10":
            sub = os.path.join(self.data_dir, "cifar-10-batches-bin")
            ds = load_cifar10_bin(sub if os.path.isdir(sub) else self.data_dir, split)
        elif key == "cifar100":
            sub = os.path.join(self.data_dir, "cifar-100-binary")
            ds = load_cifar100_bin(sub if os.path.isdir(sub) else self.data_dir, split)
        else:
            size = synthetic_size if split == "train" else max(synthetic_size // 4, 10)
            ds = make_synthetic_dataset(size, seed=seed + (0 if split == "train" else 1), name=f"synthetic-{split}")

        if self.verbose:
            print(f"[DatasetLoader] 📂 {ds.name}: {len(ds)} 张, 形状 {ds.shape}, {ds.class_count} 类")
        return ds
