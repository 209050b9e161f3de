"""
main.py - Intra-Ensemble 项目演示入口

在合成数据集上按顺序执行：数据准备 → 子网络方案 → 联合训练 → 堆叠组合与评估
四个阶段，几分钟内跑完，不需要下载任何数据集。

使用方法：
    python main.py
"""

from config.train_config import TrainConfig
from ensemble.evaluator import evaluate_ensemble
from training.engine import TrainingEngine


def main():
    """项目主函数

    用一个小配置串起各模块，完成从数据到集成评估的完整流程。
    """
    config = TrainConfig(
        dataset="synthetic",
        n_subnets=4,
        widths=[0.9, 0.9, 0.9, 1.0],
        kind="rc",
        width_mult=0.25,
        epochs=2,
        batch_size=64,
        combiner="stacking",
        stacking_epochs=3,
        synthetic_size=512,
        run_name="demo-synthetic",
    )
    engine = TrainingEngine(config)

    # ============================================================
    # 第一阶段：数据准备
    # 生成合成数据集，计算归一化常数
    # 第二阶段：子网络方案
    # 按 RC 方式为 4 个子网络采样通道，并打印两两重叠度
    # ============================================================
    print("=" * 60)
    print("【第一、二阶段】数据准备与子网络方案")
    print("=" * 60)
    engine.prepare()
    for plan in engine.plans:
        sizes = [len(sel) for sel in plan.selections]
        print(f"  子网络 {plan.subnet_id}: w={plan.width} 方式={plan.kind} 各层通道数={sizes}")

    # ============================================================
    # 第三阶段：联合训练
    # 每个 batch 依次训练全部子网络，共享权重梯度累加后统一更新
    # ============================================================
    print("\n" + "=" * 60)
    print("【第三阶段】联合训练")
    print("=" * 60)
    summary = engine.run()

    # ============================================================
    # 第四阶段：组合与评估
    # 对比 averaging 与 stacking，给出一致度与参数分解
    # ============================================================
    print("\n" + "=" * 60)
    print("【第四阶段】组合与评估")
    print("=" * 60)
    result = evaluate_ensemble(engine.net, engine.plans, "stacking", engine.test_set, engine.stacking)
    print(f"  子网络准确率: {[round(a, 4) for a in result.per_subnet_acc]}")
    print(f"  averaging: {result.averaging_acc:.4f} | stacking: {result.stacking_acc:.4f}")
    print(f"  一致度 S = {result.similarity.s:.4f} ({result.similarity.k}/{result.similarity.m})")
    print(f"  参数分解: {result.params}")

    print("\n" + "=" * 60)
    print(f"Intra-Ensemble 演示执行完毕 | 输出目录 {summary['run_dir']}")
    print("=" * 60)


if __name__ == "__main__":
    main()
