"""
train_config.py - 实验配置

配置文件为扁平的 key=value 文本（允许 # 注释和空行），用 python-dotenv 的
dotenv_values 读取。CONFIG_KEYS 是唯一的键表：类型、默认值、是否必填、说明。
未知键报错；缺少的必填键在一条错误中全部列出。

默认值是本项目的实现默认值，可全部覆盖。
"""

import os
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from channels.plan import validate_widths
from channels.recombination import FULL, normalize_kind
from common.errors import ConfigError, IENetError
from data.dataset_loader import DATASET_NAMES
from ensemble.combiners import AVERAGING, STACKING

load_dotenv()

_REQUIRED = object()

# 键名: (类型, 默认值, 说明)
CONFIG_KEYS: Dict[str, Tuple[str, object, str]] = {
    "dataset": ("str", _REQUIRED, "fashion-mnist | mnist | cifar10 | cifar100 | synthetic"),
    "n_subnets": ("int", _REQUIRED, "子网络个数 N"),
    "widths": ("floats", _REQUIRED, "宽度比例列表，逗号分隔，长度 N"),
    "kind": ("str", _REQUIRED, "通道重组方式 rc | ro | sc | full"),
    "arch": ("str", "ienet-mini", "网络结构"),
    "width_mult": ("float", 1.0, "结构通道缩放系数"),
    "epochs": ("int", 10, "训练轮数，0 表示只在初始化后评估一次"),
    "batch_size": ("int", 128, "批大小"),
    "lr": ("float", 0.05, "初始学习率"),
    "lr_min": ("float", 0.0, "余弦退火终点学习率"),
    "momentum": ("float", 0.9, "SGD 动量"),
    "weight_decay": ("float", 3e-4, "L2 权重衰减"),
    "seed": ("int", 0, "全局种子"),
    "combiner": ("str", STACKING, "averaging | stacking"),
    "stacking_epochs": ("int", 5, "堆叠权重训练轮数"),
    "stacking_lr": ("float", 0.1, "堆叠权重学习率"),
    "output_dir": ("str", None, "输出根目录，默认取 IENET_OUTPUT_DIR，否则 output"),
    "run_name": ("str", None, "运行目录名，默认取配置文件名"),
    "data_dir": ("str", None, "数据目录，默认取 IENET_DATA_DIR"),
    "train_images": ("str", None, "训练集 IDX 图像文件"),
    "train_labels": ("str", None, "训练集 IDX 标签文件"),
    "test_images": ("str", None, "测试集 IDX 图像文件"),
    "test_labels": ("str", None, "测试集 IDX 标签文件"),
    "train_subset": ("int", 0, "训练集分层子集大小，0 表示全部"),
    "test_subset": ("int", 0, "测试集前缀子集大小，0 表示全部"),
    "augment": ("bool", True, "训练时是否做数据增强"),
    "cutout": ("bool", True, "数据增强是否包含 cutout"),
    "norm_mean": ("floats", None, "每通道均值，缺省时由训练集计算"),
    "norm_std": ("floats", None, "每通道标准差，缺省时由训练集计算"),
    "eval_workers": ("int", 1, "评估线程数"),
    "synthetic_size": ("int", 512, "合成数据集训练样本数"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class TrainConfig:
    """训练配置（字段与 CONFIG_KEYS 一一对应）"""

    dataset: str
    n_subnets: int
    widths: List[float]
    kind: str
    arch: str = "ienet-mini"
    width_mult: float = 1.0
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.05
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 3e-4
    seed: int = 0
    combiner: str = STACKING
    stacking_epochs: int = 5
    stacking_lr: float = 0.1
    output_dir: Optional[str] = None
    run_name: Optional[str] = None
    data_dir: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_subset: int = 0
    test_subset: int = 0
    augment: bool = True
    cutout: bool = True
    norm_mean: Optional[List[float]] = None
    norm_std: Optional[List[float]] = None
    eval_workers: int = 1
    synthetic_size: int = 512
    source_path: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dataset not in DATASET_NAMES:
            raise ConfigError(f"dataset 取值非法: {self.dataset}（可选: {', '.join(DATASET_NAMES)}）")
        try:
            self.kind = normalize_kind(self.kind)
            self.widths = validate_widths(self.widths)
        except IENetError as e:
            raise ConfigError(str(e))
        if self.n_subnets < 1:
            raise ConfigError(f"n_subnets 必须为正，实际 {self.n_subnets}")
        if len(self.widths) != self.n_subnets:
            raise ConfigError(f"widths 长度 {len(self.widths)} 与 n_subnets={self.n_subnets} 不一致")
        if self.kind == FULL and any(w != 1.0 for w in self.widths):
            raise ConfigError("kind=full 时所有宽度必须为 1.0")
        if self.combiner not in (AVERAGING, STACKING):
            raise ConfigError(f"combiner 取值非法: {self.combiner}（可选: averaging, stacking）")
        for name in ("batch_size", "eval_workers", "synthetic_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} 必须为正，实际 {getattr(self, name)}")
        for name in ("epochs", "stacking_epochs", "train_subset", "test_subset", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} 不能为负，实际 {getattr(self, name)}")
        for name in ("lr", "width_mult"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} 必须为正，实际 {getattr(self, name)}")
        for name in ("lr_min", "momentum", "weight_decay", "stacking_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} 不能为负，实际 {getattr(self, name)}")
        if (self.norm_mean is None) != (self.norm_std is None):
            raise ConfigError("norm_mean 与 norm_std 必须同时给出")

    @property
    def resolved_output_dir(self) -> str:
        return self.output_dir or os.getenv("IENET_OUTPUT_DIR", "output")

    @property
    def resolved_run_name(self) -> str:
        if self.run_name:
            return self.run_name
        if self.source_path:
            return os.path.splitext(os.path.basename(self.source_path))[0]
        return f"{self.dataset}-{self.kind}-n{self.n_subnets}-s{self.seed}"

    @property
    def run_dir(self) -> str:
        return os.path.join(self.resolved_output_dir, self.resolved_run_name)

    def as_dict(self) -> Dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name in CONFIG_KEYS}

    def to_text(self) -> str:
        """写回 key=value 文本（只写非空值），可被 parse_config 重新读取"""
        lines = []
        for key, value in self.as_dict().items():
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, (list, tuple)):
                value = ",".join(repr(float(v)) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


def _convert(key: str, kind: str, raw: str):
    text = raw.strip()
    try:
        if kind == "str":
            return text
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "floats":
            items = [t.strip() for t in text.split(",") if t.strip()]
            if not items:
                raise ValueError("空列表")
            return [float(t) for t in items]
        if kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError("不是布尔值")
    except ValueError as e:
        raise ConfigError(f"配置项 {key}={raw!r} 类型错误（期望 {kind}）: {e}")
    raise ConfigError(f"配置项 {key} 的类型 {kind} 未定义")


def config_from_values(values: Dict[str, Optional[str]], source_path: Optional[str] = None, seed_override: Optional[int] = None) -> TrainConfig:
    """由键值字典构造 TrainConfig，做全部键名与类型检查"""
    unknown = sorted(k for k in values if k not in CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"未知配置项: {', '.join(unknown)}")
    missing = [k for k, (_, default, _) in CONFIG_KEYS.items() if default is _REQUIRED and not (values.get(k) or "").strip()]
    if missing:
        raise ConfigError(f"缺少必填配置项: {', '.join(missing)}")

    kwargs = {}
    for key, raw in values.items():
        if raw is None or not raw.strip():
            continue
        kwargs[key] = _convert(key, CONFIG_KEYS[key][0], raw)
    if seed_override is not None:
        kwargs["seed"] = int(seed_override)
    return TrainConfig(source_path=source_path, **kwargs)


def parse_config(path: str, seed_override: Optional[int] = None) -> TrainConfig:
    """读取配置文件

    Args:
        path: 配置文件路径
        seed_override: 若给出，覆盖文件中的 seed

    Returns:
        TrainConfig

    Raises:
        ConfigError: 文件不可读、未知键、缺少必填键、类型错误、宽度列表非法
    """
    if not os.path.isfile(path):
        raise ConfigError(f"配置文件不存在: {path}")
    values = dotenv_values(path, interpolate=False)
    return config_from_values(dict(values), source_path=path, seed_override=seed_override)
