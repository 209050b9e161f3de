"""
checkpoint.py - 检查点容器

小端二进制格式：
    8 字节魔数 "IENETCK1"
    u32 清单长度 + UTF-8 清单文本（每行 key=value）
    u32 数组个数
    每个数组：u32 名称长度 + 名称 | u32 类型标记长度 + 标记(f32|f64|i64) |
              u32 维数 | 每维 u64 长度 | 原始数据
保存权重、动量缓冲区、S-BN 参数与统计量、子网络方案和可选的堆叠权重，
读回后逐位一致。读取时先完整解析整个文件，失败不会留下半成品状态。
"""

import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from channels.plan import SubNetworkPlan
from channels.recombination import ChannelSelection
from common.errors import CheckpointError, IENetError
from network.arch import ArchSpec, build_arch
from network.shared_net import IntraEnsembleNet, init_parameters

MAGIC = b"IENETCK1"
FORMAT_VERSION = 1

_DTYPE_TAGS = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i64": np.dtype("<i8")}
_TAG_OF = {np.dtype("float32"): "f32", np.dtype("float64"): "f64", np.dtype("int64"): "i64"}


@dataclass
class Checkpoint:
    """检查点内容

    Attributes:
        manifest: 清单键值
        net: 共享网络（权重、动量、S-BN 全部恢复）
        plans: 子网络方案
        stacking: 堆叠权重 [C × N]，未训练时为 None
    """

    manifest: Dict[str, str]
    net: IntraEnsembleNet
    plans: List[SubNetworkPlan]
    stacking: Optional[np.ndarray] = None

    @property
    def arch(self) -> ArchSpec:
        return self.net.arch

    @property
    def epoch(self) -> int:
        return int(self.manifest.get("epoch", 0))

    @property
    def seed(self) -> int:
        return int(self.manifest.get("seed", 0))


# ============================================================
# 写入
# ============================================================
def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    tag = _TAG_OF.get(arr.dtype)
    if tag is None:
        raise CheckpointError(f"不支持的数组类型 {arr.dtype}（{name}）")
    parts = [_pack_str(name), _pack_str(tag), struct.pack("<I", arr.ndim)]
    parts.extend(struct.pack("<Q", d) for d in arr.shape)
    parts.append(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())
    return b"".join(parts)


def _collect_arrays(net: IntraEnsembleNet, plans: List[SubNetworkPlan], stacking) -> List[Tuple[str, np.ndarray]]:
    arrays = []
    for name in net.store.names():
        arrays.append((f"store/{name}", net.store.weights[name]))
        arrays.append((f"store_v/{name}", net.store.velocity[name]))
    for name in net.bank.params.names():
        arrays.append((f"bn/{name}", net.bank.params.weights[name]))
        arrays.append((f"bn_v/{name}", net.bank.params.velocity[name]))
    for name in sorted(net.bank.stats):
        arrays.append((f"bn_stat/{name}", net.bank.stats[name]))
    for plan in plans:
        for sel in plan.selections:
            arrays.append((f"plan/{plan.subnet_id}/{sel.layer_id}", sel.as_array()))
    if stacking is not None:
        arrays.append(("stacking/W", np.asarray(getattr(stacking, "weights", stacking))))
    return arrays


def checkpoint_save(
    path: str,
    net: IntraEnsembleNet,
    plans: List[SubNetworkPlan],
    seed: int = 0,
    epoch: int = 0,
    combiner: str = "averaging",
    stacking=None,
    verbose: bool = True,
) -> str:
    """保存训练状态

    先写临时文件再原子替换，写入失败（如磁盘已满）时删除临时文件、抛出 OSError，旧文件不受影响。

    Returns:
        str: 写入的文件路径
    """
    arch = net.arch
    manifest = {
        "format_version": str(FORMAT_VERSION),
        "arch": arch.name,
        "arch_hash": arch.arch_hash(),
        "input_shape": ",".join(str(d) for d in arch.input_shape),
        "num_classes": str(arch.num_classes),
        "width_mult": repr(float(arch.width_mult)),
        "n_subnets": str(len(plans)),
        "subnet_ids": ",".join(str(p.subnet_id) for p in plans),
        "widths": ",".join(repr(float(p.width)) for p in plans),
        "kinds": ",".join(p.kind for p in plans),
        "seed": str(seed),
        "epoch": str(epoch),
        "combiner": combiner,
        "dtype": _TAG_OF[net.dtype],
    }
    text = "\n".join(f"{k}={v}" for k, v in manifest.items())
    arrays = _collect_arrays(net, plans, stacking)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = path + ".tmp"
    try:
        with open(tmp_path, "wb") as f:
            f.write(MAGIC)
            f.write(_pack_str(text))
            f.write(struct.pack("<I", len(arrays)))
            for name, arr in arrays:
                f.write(_pack_array(name, arr))
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    if verbose:
        print(f"[Checkpoint] 💾 已保存: {path} | epoch={epoch} | 数组 {len(arrays)} 个")
    return path


# ============================================================
# 读取
# ============================================================
class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"检查点文件被截断（偏移 {self.pos} 处需要 {n} 字节）")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"检查点字符串解码失败: {e}")


def _parse(data: bytes) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("魔数不符，不是 IENETCK1 检查点")
    manifest = {}
    for line in r.string().splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"清单行格式错误: {line!r}")
        manifest[key.strip()] = value.strip()
    version = manifest.get("format_version")
    if version != str(FORMAT_VERSION):
        raise CheckpointError(f"检查点格式版本 {version} 与当前版本 {FORMAT_VERSION} 不一致")

    arrays = {}
    for _ in range(r.u32()):
        name = r.string()
        tag = r.string()
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"未知的数组类型标记 {tag!r}（{name}）")
        shape = tuple(r.u64() for _ in range(r.u32()))
        dtype = _DTYPE_TAGS[tag]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = r.take(count * dtype.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="), copy=True)
    if r.pos != len(data):
        raise CheckpointError(f"检查点末尾有 {len(data) - r.pos} 字节多余数据")
    return manifest, arrays


def _array(arrays: Dict[str, np.ndarray], name: str, shape=None) -> np.ndarray:
    if name not in arrays:
        raise CheckpointError(f"检查点缺少数组 {name}")
    arr = arrays[name]
    if shape is not None and arr.shape != tuple(shape):
        raise CheckpointError(f"数组 {name} 形状 {arr.shape} 与结构要求 {tuple(shape)} 不一致")
    return arr


def checkpoint_load(path: str, expected_arch: Optional[ArchSpec] = None, verbose: bool = True) -> Checkpoint:
    """读取检查点

    Args:
        path: 文件路径
        expected_arch: 若给出，则要求检查点结构摘要与之一致

    Returns:
        Checkpoint

    Raises:
        CheckpointError: 魔数/版本不符、文件截断、结构摘要不匹配
    """
    with open(path, "rb") as f:
        data = f.read()
    manifest, arrays = _parse(data)

    try:
        arch = build_arch(
            manifest["arch"],
            tuple(int(d) for d in manifest["input_shape"].split(",")),
            int(manifest["num_classes"]),
            float(manifest["width_mult"]),
        )
        subnet_ids = [int(s) for s in manifest["subnet_ids"].split(",")]
        widths = [float(w) for w in manifest["widths"].split(",")]
        kinds = manifest["kinds"].split(",")
        n_subnets = int(manifest["n_subnets"])
        dtype = _DTYPE_TAGS[manifest["dtype"]].newbyteorder("=")
    except (KeyError, ValueError, IENetError) as e:
        raise CheckpointError(f"检查点清单不完整或非法: {e}")
    if not len(subnet_ids) == len(widths) == len(kinds) == n_subnets:
        raise CheckpointError(
            f"检查点清单中子网络信息长度不一致: n_subnets={n_subnets}, "
            f"subnet_ids={len(subnet_ids)}, widths={len(widths)}, kinds={len(kinds)}"
        )

    if arch.arch_hash() != manifest.get("arch_hash"):
        raise CheckpointError("检查点结构摘要与其清单描述的结构不一致")
    if expected_arch is not None and expected_arch.arch_hash() != arch.arch_hash():
        raise CheckpointError(
            f"结构不匹配: 检查点 {manifest['arch_hash']}，期望 {expected_arch.arch_hash()}"
        )

    plans = []
    for sid, w, kind in zip(subnet_ids, widths, kinds):
        sels = tuple(
            ChannelSelection(layer, tuple(int(i) for i in _array(arrays, f"plan/{sid}/{layer}")))
            for layer, _ in arch.recombinable_layers()
        )
        plans.append(SubNetworkPlan(sid, w, kind, sels, arch.arch_hash()))

    try:
        store, bank = init_parameters(arch, plans, seed=0, dtype=dtype)
    except IENetError as e:
        raise CheckpointError(f"检查点中的方案与结构不匹配: {e}")
    for name in list(store.names()):
        store.weights[name][...] = _array(arrays, f"store/{name}", store.weights[name].shape)
        store.velocity[name][...] = _array(arrays, f"store_v/{name}", store.weights[name].shape)
    for name in list(bank.params.names()):
        bank.params.weights[name][...] = _array(arrays, f"bn/{name}", bank.params.weights[name].shape)
        bank.params.velocity[name][...] = _array(arrays, f"bn_v/{name}", bank.params.weights[name].shape)
    for name in bank.stats:
        bank.stats[name][...] = _array(arrays, f"bn_stat/{name}", bank.stats[name].shape)

    stacking = arrays.get("stacking/W")
    if stacking is not None and stacking.shape != (arch.num_classes, len(plans)):
        raise CheckpointError(
            f"堆叠权重形状 {stacking.shape} 与 (C, N) = {(arch.num_classes, len(plans))} 不一致"
        )
    if verbose:
        print(f"[Checkpoint] 📂 已加载: {path} | 结构 {arch.name} | N={len(plans)} | epoch={manifest.get('epoch')}")
    return Checkpoint(manifest, IntraEnsembleNet(arch, store, bank), plans, stacking)
