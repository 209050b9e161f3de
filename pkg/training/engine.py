"""
engine.py - 训练引擎模块

封装一次完整的 intra-ensemble 实验：
    读取并归一化数据 → 生成子网络方案 → 联合训练共享网络 →
    （可选）训练堆叠权重 → 每个 epoch 评估并写入指标 CSV 与检查点

运行目录 <output_dir>/<run_name>/ 下的文件：
    metrics.csv              每个 epoch 一行，表头固定
    checkpoint_latest.ienet  最近一个 epoch
    checkpoint_best.ienet    集成准确率最高的 epoch
    plan_overlap.csv         子网络两两重叠度
    config.txt               实际使用的配置（含归一化常数）
    eval.json                evaluate_checkpoint 的输出
"""

import json
import os
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from channels.plan import build_plan, plan_diversity
from channels.recombination import KIND_SHORT
from common.errors import ConfigError
from common.rng import substream
from config.train_config import TrainConfig
from data.augment import augment_batch, default_policy_for
from data.dataset_loader import DatasetLoader
from data.preprocess import NormalizedDataset, compute_channel_stats, deterministic_split, iterate_batches, normalize
from ensemble.combiners import AVERAGING, STACKING
from ensemble.evaluator import evaluate_ensemble
from ensemble.stacking import StackingCombiner, train_stacking
from network.arch import ArchSpec, build_arch
from network.checkpoint import checkpoint_load, checkpoint_save
from network.shared_net import IntraEnsembleNet
from numeric.optimizer import cosine_lr

METRICS_COLUMNS = [
    "epoch",
    "lr",
    "train_loss",
    "subnet_acc",
    "ensemble_acc",
    "averaging_acc",
    "similarity",
    "agree_k",
    "eval_m",
    "params_total",
    "n_subnets",
    "kind",
    "seconds",
]

METRICS_FILE = "metrics.csv"
LATEST_CHECKPOINT = "checkpoint_latest.ienet"
BEST_CHECKPOINT = "checkpoint_best.ienet"


def _joined(values) -> str:
    return ";".join(f"{v:.6f}" for v in values)


def load_datasets(config: TrainConfig, verbose: bool = True) -> Tuple[NormalizedDataset, NormalizedDataset]:
    """按配置读取训练/测试集，取子集并归一化

    归一化常数缺省时由（取子集后的）训练集计算，并回写到 config。

    Returns:
        (train, test)
    """
    loader = DatasetLoader(config.data_dir, verbose=verbose)
    train_raw = loader.load(
        config.dataset, "train", config.train_images, config.train_labels, config.synthetic_size, config.seed
    )
    test_raw = loader.load(
        config.dataset, "test", config.test_images, config.test_labels, config.synthetic_size, config.seed
    )
    if config.train_subset and config.train_subset < len(train_raw):
        train_raw = deterministic_split(train_raw, [config.train_subset / len(train_raw)], config.seed)[0]
    if config.test_subset and config.test_subset < len(test_raw):
        test_raw = test_raw.subset(np.arange(config.test_subset))
    if train_raw.shape != test_raw.shape:
        raise ConfigError(f"训练集形状 {train_raw.shape} 与测试集形状 {test_raw.shape} 不一致")

    if config.norm_mean is None:
        mean, std = compute_channel_stats(train_raw)
        config.norm_mean, config.norm_std = list(mean), list(std)
        if verbose:
            print(f"[TrainingEngine] 由训练集计算归一化常数: mean={np.round(mean, 4).tolist()} std={np.round(std, 4).tolist()}")
    return normalize(train_raw, config.norm_mean, config.norm_std), normalize(test_raw, config.norm_mean, config.norm_std)


def arch_for(config: TrainConfig, dataset: NormalizedDataset) -> ArchSpec:
    return build_arch(config.arch, dataset.shape, dataset.class_count, config.width_mult)


class TrainingEngine:
    """训练引擎

    Attributes:
        config (TrainConfig): 实验配置
        run_dir (str): 运行目录
        net (IntraEnsembleNet): 共享网络（prepare 之后可用）
        plans (list): 子网络方案
        stacking (StackingCombiner): 堆叠权重（combiner=stacking 且训练完成后可用）
        history (list): 已写出的指标记录
    """

    def __init__(self, config: TrainConfig, verbose: bool = True):
        self.config = config
        self.verbose = verbose
        self.run_dir = config.run_dir
        self.train_set: Optional[NormalizedDataset] = None
        self.test_set: Optional[NormalizedDataset] = None
        self.arch: Optional[ArchSpec] = None
        self.net: Optional[IntraEnsembleNet] = None
        self.plans: List = []
        self.stacking: Optional[StackingCombiner] = None
        self.history: List[Dict[str, object]] = []
        self.best_acc = -1.0
        self.best_epoch = -1

    def _log(self, msg: str) -> None:
        if self.verbose:
            print(f"[TrainingEngine] {msg}")

    def _banner(self, msg: str) -> None:
        if self.verbose:
            print("\n" + "=" * 60)
            print(f"[TrainingEngine] {msg}")
            print("=" * 60)

    # ============================================================
    # 准备
    # ============================================================
    def prepare(self) -> None:
        """读取数据、生成方案、初始化网络，并写出 plan_overlap.csv 与 config.txt"""
        cfg = self.config
        self.train_set, self.test_set = load_datasets(cfg, self.verbose)
        self.arch = arch_for(cfg, self.train_set)
        self.plans = build_plan(self.arch, cfg.widths, cfg.kind, cfg.seed)
        self.net = IntraEnsembleNet.build(self.arch, self.plans, cfg.seed)

        os.makedirs(self.run_dir, exist_ok=True)
        metrics_path = os.path.join(self.run_dir, METRICS_FILE)
        if os.path.exists(metrics_path):
            os.remove(metrics_path)
        overlap = plan_diversity(self.plans, self.arch)
        overlap.to_csv(os.path.join(self.run_dir, "plan_overlap.csv"), float_format="%.6f")
        with open(os.path.join(self.run_dir, "config.txt"), "w", encoding="utf-8") as f:
            f.write(cfg.to_text())

        params = self.net.parameter_count()
        self._log(
            f"初始化完成 | 结构 {self.arch.name} ({self.arch.arch_hash()}) | N={len(self.plans)} | "
            f"方式 {KIND_SHORT[cfg.kind]} | 宽度 {cfg.widths} | 共享参数 {params['shared']:,}"
        )
        if self.verbose and len(self.plans) > 1:
            print("  子网络两两重叠度:")
            print(overlap.round(4).to_string())

    # ============================================================
    # 训练
    # ============================================================
    def _train_epoch(self, epoch: int, lr: float) -> List[float]:
        cfg = self.config
        ds = self.train_set
        policy = default_policy_for(ds.shape, cutout=cfg.cutout) if cfg.augment else None
        sums = np.zeros(len(self.plans))
        batches = iterate_batches(len(ds), cfg.batch_size, substream(cfg.seed, "order", epoch))
        for b, idx in enumerate(batches):
            x = ds.images[idx]
            if policy is not None:
                x = augment_batch(x, policy, substream(cfg.seed, "augment", epoch, b))
            losses = self.net.train_step(self.plans, x, ds.labels[idx])
            self.net.step(lr, cfg.momentum, cfg.weight_decay)
            sums += np.asarray(losses) * idx.size
        return (sums / len(ds)).tolist()

    def _evaluate_and_record(self, epoch: int, lr: float, losses: List[float], started: float, final: bool) -> Dict[str, object]:
        cfg = self.config
        if final and cfg.combiner == STACKING:
            if cfg.epochs == 0:
                # 只评估：W 保持均匀 1/N，与 averaging 等价
                self.stacking = StackingCombiner(len(self.plans), self.arch.num_classes)
            else:
                self.stacking = train_stacking(
                    self.net, self.plans, self.train_set, cfg.stacking_epochs, cfg.stacking_lr,
                    cfg.batch_size, cfg.seed, self.verbose,
                )
        combiner = STACKING if self.stacking is not None else AVERAGING
        result = evaluate_ensemble(
            self.net, self.plans, combiner, self.test_set, self.stacking,
            batch_size=cfg.batch_size, workers=cfg.eval_workers, verbose=self.verbose,
        )
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": _joined(losses),
            "subnet_acc": _joined(result.per_subnet_acc),
            "ensemble_acc": result.ensemble_acc,
            "averaging_acc": result.averaging_acc,
            "similarity": result.similarity.s,
            "agree_k": result.similarity.k,
            "eval_m": result.similarity.m,
            "params_total": result.params["total"],
            "n_subnets": len(self.plans),
            "kind": KIND_SHORT[cfg.kind],
            "seconds": round(time.time() - started, 3),
        }
        path = os.path.join(self.run_dir, METRICS_FILE)
        pd.DataFrame([record], columns=METRICS_COLUMNS).to_csv(
            path, mode="a", header=not os.path.exists(path), index=False, float_format="%.6f"
        )
        self.history.append(record)

        ckpt_args = dict(seed=cfg.seed, epoch=epoch, combiner=combiner, stacking=self.stacking, verbose=self.verbose)
        checkpoint_save(os.path.join(self.run_dir, LATEST_CHECKPOINT), self.net, self.plans, **ckpt_args)
        if result.ensemble_acc > self.best_acc:
            self.best_acc = result.ensemble_acc
            self.best_epoch = epoch
            checkpoint_save(os.path.join(self.run_dir, BEST_CHECKPOINT), self.net, self.plans, **ckpt_args)
        return record

    def run(self) -> Dict[str, object]:
        """执行完整训练

        epochs=0 时只在初始化后做一次评估并写一条记录，堆叠权重保持均匀、不做训练。

        Returns:
            dict: run_dir、最终记录、最佳 epoch 与集成准确率
        """
        cfg = self.config
        if self.net is None:
            self.prepare()

        self._banner(f"🚀 开始训练 | epochs={cfg.epochs} | batch={cfg.batch_size} | lr={cfg.lr} → {cfg.lr_min}")

        if cfg.epochs == 0:
            self._evaluate_and_record(0, 0.0, [float("nan")] * len(self.plans), time.time(), final=True)
        for epoch in range(cfg.epochs):
            started = time.time()
            lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min)
            losses = self._train_epoch(epoch, lr)
            record = self._evaluate_and_record(epoch + 1, lr, losses, started, final=epoch == cfg.epochs - 1)
            self._log(
                f"epoch {epoch + 1}/{cfg.epochs} | lr {lr:.5f} | loss [{record['train_loss']}] | "
                f"集成 {record['ensemble_acc']:.4f} | S {record['similarity']:.4f} | {record['seconds']:.1f}s"
            )

        last = self.history[-1]
        self._banner(f"🏁 训练完成 | 最佳 epoch {self.best_epoch} | 集成准确率 {self.best_acc:.4f} | 目录 {self.run_dir}")
        return {"run_dir": self.run_dir, "final": last, "best_epoch": self.best_epoch, "best_acc": self.best_acc}


# ============================================================
# 检查点评估
# ============================================================
def evaluate_checkpoint(
    config: TrainConfig,
    checkpoint_path: str,
    out_path: Optional[str] = None,
    verbose: bool = True,
) -> Dict[str, object]:
    """加载检查点并在测试集上评估，结果写成 JSON

    Args:
        config: 实验配置（决定数据集与归一化）
        checkpoint_path: 检查点文件
        out_path: JSON 输出路径，默认 <run_dir>/eval.json

    Returns:
        dict: 评估报告

    Raises:
        CheckpointError: 检查点损坏或结构与数据集不匹配
    """
    _, test_set = load_datasets(config, verbose)
    ckpt = checkpoint_load(checkpoint_path, expected_arch=arch_for(config, test_set), verbose=verbose)
    combiner = config.combiner
    if combiner == STACKING and ckpt.stacking is None:
        if verbose:
            print("[TrainingEngine] ⚠️ 检查点中没有堆叠权重，改用 averaging 评估")
        combiner = AVERAGING
    result = evaluate_ensemble(
        ckpt.net, ckpt.plans, combiner, test_set, ckpt.stacking,
        batch_size=config.batch_size, workers=config.eval_workers, verbose=verbose,
    )
    report = {
        "checkpoint": os.path.basename(checkpoint_path),
        "arch": ckpt.manifest["arch"],
        "arch_hash": ckpt.manifest["arch_hash"],
        "epoch": ckpt.epoch,
        "n_subnets": len(ckpt.plans),
        "widths": [p.width for p in ckpt.plans],
        "kinds": [p.kind for p in ckpt.plans],
        **result.as_dict(),
    }

    out_path = out_path or os.path.join(config.run_dir, "eval.json")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, ensure_ascii=False)

    if verbose:
        print("\n" + "=" * 60)
        print("📊 集成评估报告")
        print("=" * 60)
        for i, acc in enumerate(result.per_subnet_acc):
            print(f"  子网络 {i} (w={ckpt.plans[i].width}): {acc:>10.4f}")
        print(f"  averaging:        {result.averaging_acc:>10.4f}")
        if result.stacking_acc is not None:
            print(f"  stacking:         {result.stacking_acc:>10.4f}")
        print(f"  一致度 S:         {result.similarity.s:>10.4f}  ({result.similarity.k}/{result.similarity.m})")
        print("-" * 60)
        for key, value in result.params.items():
            print(f"  参数 {key:<12} {value:>12,}")
        print("=" * 60)
        print(f"📁 评估结果已保存至 {out_path}")
    return report
