"""
layers.py - 层级数值运算模块

IENet-mini 所需的全部层运算（卷积 / 全连接 / ReLU / 池化 / 批归一化）的
前向与反向实现，基于 numpy 向量化计算。

约定：
- 前向函数返回 (output, cache)，反向函数接收 (grad_output, cache, ...)
- 卷积与全连接支持通道选择：只使用被选中的输入/输出通道对应的权重子块，
  反向时梯度只以 += 方式写回这些位置
- 选择集为 None 表示全部通道，与显式全选走完全相同的计算路径
- 输出 dtype 与输入一致（训练用 float32，梯度检查用 float64）
"""

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from common.errors import SelectionError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

MAXPOOL2 = "maxpool2"
GLOBAL_AVG = "global_avg"


# ============================================================
# 通道选择
# ============================================================
def resolve_selection(sel, total: int, what: str = "通道") -> np.ndarray:
    """把选择集规范化为 int64 索引数组并校验

    Args:
        sel: None（全选）、带 indices 属性的对象或整数序列
        total: 该轴上的通道总数
        what: 报错时使用的描述

    Returns:
        np.ndarray: 有序索引数组

    Raises:
        SelectionError: 索引越界、重复或为空
    """
    if sel is None:
        return np.arange(total, dtype=np.int64)
    raw = getattr(sel, "indices", sel)
    idx = np.asarray(raw, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise SelectionError(f"{what}选择集为空")
    if idx.min() < 0 or idx.max() >= total:
        raise SelectionError(f"{what}索引越界: 允许范围 [0, {total})，实际 [{idx.min()}, {idx.max()}]")
    if np.unique(idx).size != idx.size:
        raise SelectionError(f"{what}选择集存在重复索引")
    return idx


# ============================================================
# 卷积
# ============================================================
def _im2col(xp: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    b, c = xp.shape[:2]
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows[:, :, :h_out, :w_out]
    # (B, Ho, Wo, C, k, k) → 每行一个感受野
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * h_out * w_out, c * k * k)


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    in_sel=None,
    out_sel=None,
    stride: int = 1,
    pad: int = 0,
) -> Tuple[np.ndarray, dict]:
    """选择通道下的二维卷积

    只使用 kernel[out_sel × in_sel] 这一权重子块进行卷积。

    Args:
        x: 输入 [B × |in_sel| × H × W]
        kernel: 完整卷积核 [c_out × c_in × k × k]
        bias: 完整偏置 [c_out]
        in_sel: 输入通道选择（None 为全选）
        out_sel: 输出通道选择（None 为全选）
        stride: 步长
        pad: 四周零填充圈数

    Returns:
        (y, cache): y 形状 [B × |out_sel| × H' × W']
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d 需要 4 维输入与卷积核，实际 {x.shape} / {kernel.shape}")
    c_out, c_in, k, k2 = kernel.shape
    if k != k2:
        raise ShapeError(f"卷积核必须为正方形，实际 {k}×{k2}")
    if bias.shape != (c_out,):
        raise ShapeError(f"偏置形状应为 ({c_out},)，实际 {bias.shape}")
    in_idx = resolve_selection(in_sel, c_in, "输入通道")
    out_idx = resolve_selection(out_sel, c_out, "输出通道")
    b, c, h, w = x.shape
    if c != in_idx.size:
        raise ShapeError(f"输入通道数 {c} 与输入选择集大小 {in_idx.size} 不一致")

    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w + 2 * pad - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"卷积输出尺寸非法: {h_out}×{w_out}")

    wsel = kernel[np.ix_(out_idx, in_idx)]
    bsel = bias[out_idx]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad > 0 else x
    cols = _im2col(xp, k, stride, h_out, w_out)
    wmat = wsel.reshape(out_idx.size, -1)
    y = cols @ wmat.T + bsel
    y = y.reshape(b, h_out, w_out, out_idx.size).transpose(0, 3, 1, 2)

    cache = {
        "cols": cols,
        "wmat": wmat,
        "in_idx": in_idx,
        "out_idx": out_idx,
        "x_shape": x.shape,
        "k": k,
        "stride": stride,
        "pad": pad,
        "out_hw": (h_out, w_out),
    }
    return np.ascontiguousarray(y), cache


def conv2d_backward(
    grad_y: np.ndarray,
    cache: dict,
    kernel_grad: Optional[np.ndarray] = None,
    bias_grad: Optional[np.ndarray] = None,
) -> np.ndarray:
    """卷积反向传播

    Args:
        grad_y: 输出梯度 [B × |out_sel| × H' × W']
        cache: conv2d 返回的缓存
        kernel_grad: 完整卷积核的梯度缓冲区，只在选中子块上 += 累加
        bias_grad: 完整偏置的梯度缓冲区，只在选中位置 += 累加

    Returns:
        np.ndarray: 输入梯度 [B × |in_sel| × H × W]
    """
    b, c, h, w = cache["x_shape"]
    k, s, p = cache["k"], cache["stride"], cache["pad"]
    h_out, w_out = cache["out_hw"]
    out_idx, in_idx = cache["out_idx"], cache["in_idx"]
    if grad_y.shape != (b, out_idx.size, h_out, w_out):
        raise ShapeError(f"conv2d 输出梯度形状不符: {grad_y.shape}")

    g = grad_y.transpose(0, 2, 3, 1).reshape(-1, out_idx.size)
    if kernel_grad is not None:
        dw = (g.T @ cache["cols"]).reshape(out_idx.size, in_idx.size, k, k)
        kernel_grad[np.ix_(out_idx, in_idx)] += dw
    if bias_grad is not None:
        bias_grad[out_idx] += g.sum(axis=0)

    dcols = (g @ cache["wmat"]).reshape(b, h_out, w_out, c, k, k)
    dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=grad_y.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + s * h_out:s, j:j + s * w_out:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, p:p + h, p:p + w]


# ============================================================
# 全连接
# ============================================================
def dense(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, in_sel=None) -> Tuple[np.ndarray, dict]:
    """选择输入列的全连接层：y = x · w[:, in_sel]ᵀ + b

    Args:
        x: 输入 [B × |in_sel|]
        weight: 完整权重 [d_out × d_in]
        bias: 偏置 [d_out]
        in_sel: 输入维度选择（None 为全选）

    Returns:
        (y, cache): y 形状 [B × d_out]
    """
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"dense 需要 2 维输入与权重，实际 {x.shape} / {weight.shape}")
    d_out, d_in = weight.shape
    if bias.shape != (d_out,):
        raise ShapeError(f"偏置形状应为 ({d_out},)，实际 {bias.shape}")
    in_idx = resolve_selection(in_sel, d_in, "输入维度")
    if x.shape[1] != in_idx.size:
        raise ShapeError(f"输入维度 {x.shape[1]} 与选择集大小 {in_idx.size} 不一致")
    wsel = weight[:, in_idx]
    y = x @ wsel.T + bias
    return y, {"x": x, "wsel": wsel, "in_idx": in_idx}


def dense_backward(
    grad_y: np.ndarray,
    cache: dict,
    weight_grad: Optional[np.ndarray] = None,
    bias_grad: Optional[np.ndarray] = None,
) -> np.ndarray:
    """全连接反向传播，权重梯度只累加到被选中的列"""
    if weight_grad is not None:
        weight_grad[:, cache["in_idx"]] += grad_y.T @ cache["x"]
    if bias_grad is not None:
        bias_grad += grad_y.sum(axis=0)
    return grad_y @ cache["wsel"]


# ============================================================
# ReLU 与空间降采样
# ============================================================
def relu(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return np.where(mask, x, np.zeros((), dtype=x.dtype)), mask


def relu_backward(grad_y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, grad_y, np.zeros((), dtype=grad_y.dtype))


def spatial_reduce(x: np.ndarray, kind: str) -> Tuple[np.ndarray, dict]:
    """空间降采样

    Args:
        x: 输入 [B × C × H × W]
        kind: 'maxpool2'（2×2 窗口、步长 2）或 'global_avg'（H×W → 1×1）

    Returns:
        (y, cache)
    """
    if x.ndim != 4:
        raise ShapeError(f"spatial_reduce 需要 4 维输入，实际 {x.shape}")
    b, c, h, w = x.shape
    if kind == MAXPOOL2:
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2 要求偶数尺寸，实际 {h}×{w}")
        win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
        arg = win.argmax(axis=-1)
        y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return y, {"kind": kind, "arg": arg, "x_shape": x.shape}
    if kind == GLOBAL_AVG:
        y = x.mean(axis=(2, 3), keepdims=True)
        return y, {"kind": kind, "x_shape": x.shape}
    raise ValueError(f"未知的降采样方式: {kind}")


def spatial_reduce_backward(grad_y: np.ndarray, cache: dict) -> np.ndarray:
    """降采样反向传播：maxpool 梯度回到最大值位置，global_avg 均匀摊开"""
    b, c, h, w = cache["x_shape"]
    if cache["kind"] == MAXPOOL2:
        onehot = np.zeros((b, c, h // 2, w // 2, 4), dtype=grad_y.dtype)
        np.put_along_axis(onehot, cache["arg"][..., None], grad_y[..., None], axis=-1)
        return onehot.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
    scale = np.asarray(1.0 / (h * w), dtype=grad_y.dtype)
    return np.broadcast_to(grad_y * scale, (b, c, h, w)).copy()


# ============================================================
# 批归一化
# ============================================================
def _per_channel(v: np.ndarray) -> np.ndarray:
    return v[None, :, None, None]


def batchnorm(
    x: np.ndarray,
    scale: np.ndarray,
    shift: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tuple[np.ndarray, dict]:
    """批归一化（单个 S-BN 槽位）

    train 模式用批统计量归一化，并原地更新该槽位的滑动统计：
    new = momentum·old + (1 − momentum)·batch（方差取有偏批方差）。
    eval 模式只读滑动统计。

    Args:
        x: 输入 [B × c' × H × W]
        scale, shift: 该槽位的缩放/平移参数 [c']
        running_mean, running_var: 该槽位的滑动统计 [c']，train 模式下原地修改
        mode: 'train' 或 'eval'

    Returns:
        (y, cache)
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm 需要 4 维输入，实际 {x.shape}")
    b, c, h, w = x.shape
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"BN 槽位大小 {scale.shape} 与输入通道数 {c} 不一致")
    if mode == "train":
        m = b * h * w
        if m < 2:
            raise ShapeError("train 模式下 B·H·W 至少为 2，否则方差无定义")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean[...] = momentum * running_mean + (1.0 - momentum) * mean
        running_var[...] = momentum * running_var + (1.0 - momentum) * var
    elif mode == "eval":
        mean = running_mean
        var = running_var
    else:
        raise ValueError(f"未知模式: {mode}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - _per_channel(mean)) * _per_channel(inv_std)
    y = _per_channel(scale) * xhat + _per_channel(shift)
    return y.astype(x.dtype, copy=False), {"xhat": xhat, "inv_std": inv_std, "scale": scale, "mode": mode}


def batchnorm_backward(
    grad_y: np.ndarray,
    cache: dict,
    scale_grad: Optional[np.ndarray] = None,
    shift_grad: Optional[np.ndarray] = None,
    param_scale: float = 1.0,
) -> np.ndarray:
    """批归一化反向传播

    param_scale 只作用于 scale / shift 的梯度累加，不影响返回的输入梯度。
    """
    xhat, inv_std = cache["xhat"], cache["inv_std"]
    if scale_grad is not None:
        d_scale = (grad_y * xhat).sum(axis=(0, 2, 3))
        scale_grad += d_scale if param_scale == 1.0 else d_scale * param_scale
    if shift_grad is not None:
        d_shift = grad_y.sum(axis=(0, 2, 3))
        shift_grad += d_shift if param_scale == 1.0 else d_shift * param_scale
    dxhat = grad_y * _per_channel(cache["scale"])
    if cache["mode"] == "eval":
        return dxhat * _per_channel(inv_std)
    b, _, h, w = grad_y.shape
    m = b * h * w
    sum_d = dxhat.sum(axis=(0, 2, 3))
    sum_dx = (dxhat * xhat).sum(axis=(0, 2, 3))
    dx = (dxhat * m - _per_channel(sum_d) - xhat * _per_channel(sum_dx)) * _per_channel(inv_std / m)
    return dx.astype(grad_y.dtype, copy=False)
