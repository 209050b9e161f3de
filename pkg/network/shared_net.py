"""
shared_net.py - 共享参数网络

一个过参数化的网络承载 N 个子网络：卷积/全连接权重全部共享，
每个子网络按自己的通道方案切片权重，BN 使用各自的 S-BN 槽位。

使用方法：
    from network.shared_net import IntraEnsembleNet
    net = IntraEnsembleNet.build(arch, plans, seed=0)
    losses = net.train_step(plans, x, y)
    net.step(lr=0.05, momentum=0.9, weight_decay=3e-4)
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from channels.plan import SubNetworkPlan, validate_plans
from common.errors import InvariantError, PlanError, ShapeError
from common.rng import substream
from network.arch import BN, CONV, DENSE, GLOBAL_AVG, MAXPOOL2, RELU, ArchSpec
from network.switchable_bn import SwitchableBNBank
from numeric.layers import (
    conv2d,
    conv2d_backward,
    dense,
    dense_backward,
    relu,
    relu_backward,
    spatial_reduce,
    spatial_reduce_backward,
)
from numeric.losses import softmax, softmax_cross_entropy
from numeric.optimizer import sgd_momentum_step
from numeric.parameters import ParameterStore


def kernel_name(layer: str) -> str:
    return f"{layer}.kernel"


def weight_name(layer: str) -> str:
    return f"{layer}.weight"


def bias_name(layer: str) -> str:
    return f"{layer}.bias"


def init_parameters(
    arch: ArchSpec,
    plans: Sequence[SubNetworkPlan],
    seed: int,
    dtype=np.float32,
) -> Tuple[ParameterStore, SwitchableBNBank]:
    """初始化共享权重与 S-BN 槽位

    卷积/全连接权重 ~ N(0, 2/fan_in)，偏置为 0；每个 (BN 层, 子网络) 一个槽位，
    大小由方案决定。权重只依赖 seed 与层名，与子网络个数无关。

    Args:
        arch: 网络结构
        plans: 子网络方案
        seed: 初始化种子
        dtype: 参数精度

    Returns:
        (store, bank)
    """
    validate_plans(plans, arch)
    ids = [p.subnet_id for p in plans]
    if len(set(ids)) != len(ids):
        raise PlanError("子网络编号重复")

    store = ParameterStore(dtype)
    for name, c_in, c_out, k in arch.conv_layers():
        std = np.sqrt(2.0 / (c_in * k * k))
        rng = substream(seed, "init", name)
        store.add(kernel_name(name), rng.standard_normal((c_out, c_in, k, k)) * std)
        store.add(bias_name(name), np.zeros(c_out))
    fc, d_in, d_out = arch.dense_layer()
    rng = substream(seed, "init", fc)
    store.add(weight_name(fc), rng.standard_normal((d_out, d_in)) * np.sqrt(2.0 / d_in))
    store.add(bias_name(fc), np.zeros(d_out))

    bank = SwitchableBNBank(dtype)
    for bn_layer, conv_layer, c in arch.bn_layers():
        for plan in plans:
            bank.add_slot(bn_layer, plan.subnet_id, len(plan.selection(conv_layer)), c)
    return store, bank


def parameter_count(store: ParameterStore, bank: SwitchableBNBank, stacking=None) -> Dict[str, int]:
    """参数量分解

    Returns:
        dict:
            - shared: 共享卷积/全连接参数
            - bn_baseline: 单网络 BN 参数（每层 2·c）
            - sbn_extra: S-BN 槽位参数 − 单网络基线
            - stacking: 堆叠权重 N·C（无则 0）
            - total: shared + bn_baseline + sbn_extra + stacking
    """
    shared = store.num_elements()
    bn_baseline = 2 * sum(bank.channels.values())
    slots = bank.num_trainable()
    stack = 0
    if stacking is not None:
        stack = int(np.asarray(getattr(stacking, "weights", stacking)).size)
    return {
        "shared": shared,
        "bn_baseline": bn_baseline,
        "sbn_extra": slots - bn_baseline,
        "stacking": stack,
        "total": shared + slots + stack,
    }


class IntraEnsembleNet:
    """共享参数的子网络集合

    Attributes:
        arch (ArchSpec): 网络结构
        store (ParameterStore): 共享权重
        bank (SwitchableBNBank): S-BN 槽位
    """

    def __init__(self, arch: ArchSpec, store: ParameterStore, bank: SwitchableBNBank):
        self.arch = arch
        self.store = store
        self.bank = bank
        self.dtype = store.dtype
        self._caches: Dict[int, list] = {}

    @classmethod
    def build(cls, arch: ArchSpec, plans: Sequence[SubNetworkPlan], seed: int, dtype=np.float32) -> "IntraEnsembleNet":
        store, bank = init_parameters(arch, plans, seed, dtype)
        return cls(arch, store, bank)

    # ============================================================
    # 前向
    # ============================================================
    def forward_subnet(
        self,
        plan: Optional[SubNetworkPlan],
        x: np.ndarray,
        mode: str = "eval",
        subnet_id: int = 0,
    ) -> np.ndarray:
        """按方案执行一个子网络

        Args:
            plan: 子网络方案；None 表示不做通道限制的完整网络（BN 使用 subnet_id 槽位）
            x: 输入 [B × C × H × W]
            mode: 'train' 缓存激活并更新该子网络的 BN 统计；'eval' 只读

        Returns:
            np.ndarray: logits [B × C]
        """
        if plan is not None:
            if plan.arch_hash != self.arch.arch_hash():
                raise PlanError(f"子网络 {plan.subnet_id} 的方案不是为该结构生成的")
            subnet_id = plan.subnet_id
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.arch.input_shape):
            raise ShapeError(f"输入形状 {x.shape[1:]} 与结构输入 {self.arch.input_shape} 不一致")

        def sel(layer: Optional[str]):
            if plan is None or layer is None:
                return None
            return plan.selection(layer)

        cur = x.astype(self.dtype, copy=False)
        caches = []
        for entry in self.arch.table():
            layer_spec = entry["desc"]
            name = layer_spec.name
            if layer_spec.kind == CONV:
                cur, c = conv2d(
                    cur,
                    self.store[kernel_name(name)],
                    self.store[bias_name(name)],
                    in_sel=sel(entry["source"]),
                    out_sel=sel(name),
                    stride=layer_spec.stride,
                    pad=layer_spec.pad,
                )
            elif layer_spec.kind == BN:
                cur, c = self.bank.forward(name, subnet_id, cur, mode)
            elif layer_spec.kind == RELU:
                cur, c = relu(cur)
            elif layer_spec.kind in (MAXPOOL2, GLOBAL_AVG):
                cur, c = spatial_reduce(cur, layer_spec.kind)
            elif layer_spec.kind == DENSE:
                flat_shape = cur.shape
                cur, c = dense(
                    cur.reshape(cur.shape[0], -1),
                    self.store[weight_name(name)],
                    self.store[bias_name(name)],
                    in_sel=sel(entry["source"]),
                )
                c = (c, flat_shape)
            caches.append((layer_spec.kind, name, c))
        if mode == "train":
            self._caches[subnet_id] = caches
        return cur

    # ============================================================
    # 反向
    # ============================================================
    def backward_subnet(
        self,
        plan: Optional[SubNetworkPlan],
        grad_logits: np.ndarray,
        subnet_id: int = 0,
        slot_scale: float = 1.0,
    ) -> np.ndarray:
        """对最近一次 train 模式前向做反向传播

        梯度以 += 写入共享权重中该方案选中的位置，BN 梯度只写入该子网络槽位。
        slot_scale 额外缩放写入 BN 槽位的参数梯度。

        Returns:
            np.ndarray: 输入梯度
        """
        if plan is not None:
            subnet_id = plan.subnet_id
        caches = self._caches.pop(subnet_id, None)
        if caches is None:
            raise InvariantError(f"子网络 {subnet_id} 没有缓存的前向激活，请先以 train 模式前向")
        g = grad_logits.astype(self.dtype, copy=False)
        for kind, name, c in reversed(caches):
            if kind == DENSE:
                c, flat_shape = c
                g = dense_backward(
                    g, c, self.store.grad(weight_name(name)), self.store.grad(bias_name(name))
                ).reshape(flat_shape)
            elif kind in (MAXPOOL2, GLOBAL_AVG):
                g = spatial_reduce_backward(g, c)
            elif kind == RELU:
                g = relu_backward(g, c)
            elif kind == BN:
                g = self.bank.backward(name, subnet_id, g, c, slot_scale)
            elif kind == CONV:
                g = conv2d_backward(g, c, self.store.grad(kernel_name(name)), self.store.grad(bias_name(name)))
        return g

    # ============================================================
    # 训练调度
    # ============================================================
    def train_step(
        self,
        plans: Sequence[SubNetworkPlan],
        x: np.ndarray,
        labels: np.ndarray,
        loss_weight: Optional[float] = None,
    ) -> List[float]:
        """一个 batch 的联合训练：依次对每个子网络前向+反向，梯度累加

        loss_weight 只作用于共享权重（N 份梯度取加权和）；S-BN 槽位只属于一个
        子网络，收到的是该子网络未加权的梯度。全宽恒等方案下，N 个子网络以 lr
        训练与单个网络以 lr 训练一致。

        Args:
            plans: 子网络方案
            x: 输入 batch
            labels: 标签
            loss_weight: 每个子网络损失的权重，默认 1/N

        Returns:
            list[float]: 各子网络的 batch 损失
        """
        weight = 1.0 / len(plans) if loss_weight is None else loss_weight
        slot_scale = 1.0 / weight if weight else 1.0
        losses = []
        for plan in plans:
            logits = self.forward_subnet(plan, x, "train")
            _, loss, grad = softmax_cross_entropy(logits, labels)
            self.backward_subnet(plan, grad * np.asarray(weight, dtype=grad.dtype), slot_scale=slot_scale)
            losses.append(loss)
        return losses

    def step(self, lr: float, momentum: float, weight_decay: float) -> None:
        """对共享权重与 S-BN 参数各执行一次 SGD 更新"""
        sgd_momentum_step(self.store, lr, momentum, weight_decay)
        sgd_momentum_step(self.bank.params, lr, momentum, weight_decay)

    def zero_grad(self) -> None:
        self.store.zero_grad()
        self.bank.params.zero_grad()

    def predict_proba(self, plan: Optional[SubNetworkPlan], x: np.ndarray) -> np.ndarray:
        """eval 模式 softmax 输出"""
        return softmax(self.forward_subnet(plan, x, "eval"))

    def parameter_count(self, stacking=None) -> Dict[str, int]:
        return parameter_count(self.store, self.bank, stacking)

    def fingerprint(self) -> str:
        return self.store.fingerprint() + self.bank.fingerprint()
