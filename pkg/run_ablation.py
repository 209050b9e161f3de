"""
run_ablation.py - 通道重组方式对比

以一个配置为基础，依次训练：
    baseline   N=1、宽度 1.0 的单网络
    identity   N 个全宽恒等方案（对照组，子网络完全相同）
    rc / ro / sc  三种通道重组方式
然后打印各方式的一致度 S 排序和对比表。排序只做报告，不做断言。

使用方法：
    python run_ablation.py --config configs/fashion_mnist_rc.cfg
    python run_ablation.py --config configs/synthetic_smoke.cfg --kinds rc,sc --seed-override 2
"""

import argparse
import dataclasses
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from channels.recombination import FULL, KIND_SHORT, normalize_kind
from common.errors import exit_code_for
from config.train_config import TrainConfig, parse_config
from ensemble.combiners import AVERAGING
from training.engine import METRICS_FILE, TrainingEngine
from training.report import cmd_report


def ablation_configs(base: TrainConfig, kinds) -> dict:
    """生成各组配置：baseline、identity 对照与各重组方式"""
    stem = base.resolved_run_name
    n = base.n_subnets
    configs = {
        "baseline": dataclasses.replace(
            base, n_subnets=1, widths=[1.0], kind=FULL, combiner=AVERAGING, run_name=f"{stem}-baseline"
        ),
        "identity": dataclasses.replace(base, widths=[1.0] * n, kind=FULL, run_name=f"{stem}-identity"),
    }
    for kind in kinds:
        short = KIND_SHORT[normalize_kind(kind)]
        configs[short] = dataclasses.replace(base, kind=short, run_name=f"{stem}-{short}")
    return configs


def main() -> int:
    parser = argparse.ArgumentParser(description="Intra-Ensemble 通道重组方式对比")
    parser.add_argument("--config", "-c", required=True, help="基础配置文件")
    parser.add_argument("--kinds", default="rc,ro,sc", help="参与对比的重组方式，逗号分隔（默认 rc,ro,sc）")
    parser.add_argument("--seed-override", type=int, default=None, help="覆盖配置中的 seed")
    parser.add_argument("--quiet", "-q", action="store_true", help="不打印每次训练的进度")
    args = parser.parse_args()

    try:
        base = parse_config(args.config, args.seed_override)
        kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
        configs = ablation_configs(base, kinds)

        print("=" * 60)
        print(f"  通道重组方式对比 | 基础配置 {args.config} | seed={base.seed}")
        print(f"  组别: {', '.join(configs)}")
        print("=" * 60)

        results = {}
        for i, (label, cfg) in enumerate(configs.items(), 1):
            print(f"\n[{i}/{len(configs)}] 训练 {label} ...")
            results[label] = TrainingEngine(cfg, verbose=not args.quiet).run()

        print("\n一致度 S（由低到高）:")
        ranked = sorted(
            ((label, r["final"]["similarity"]) for label, r in results.items() if label != "baseline"),
            key=lambda item: item[1],
        )
        for label, s in ranked:
            print(f"  {label:<10} S={s:.4f}")

        metrics = [os.path.join(r["run_dir"], METRICS_FILE) for r in results.values()]
        out = os.path.join(base.resolved_output_dir, f"{base.resolved_run_name}-ablation.csv")
        cmd_report(metrics, out)
    except Exception as e:
        print(f"❌ [{type(e).__name__}] {e}", file=sys.stderr)
        return exit_code_for(e)
    return 0


if __name__ == "__main__":
    sys.exit(main())
