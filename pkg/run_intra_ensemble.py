"""
run_intra_ensemble.py - intra-ensemble 实验命令行

子命令：
    train   按配置联合训练 N 个子网络（并训练堆叠权重），写出指标与检查点
    eval    加载检查点，在测试集上评估并输出 JSON
    report  对比若干次运行的 metrics.csv

使用方法：
    python run_intra_ensemble.py train --config configs/fashion_mnist_rc.cfg
    python run_intra_ensemble.py train --config configs/baseline.cfg --seed-override 1
    python run_intra_ensemble.py eval --config configs/fashion_mnist_rc.cfg \
        --checkpoint output/fashion_mnist_rc/checkpoint_best.ienet
    python run_intra_ensemble.py report output/baseline/metrics.csv output/fashion_mnist_rc/metrics.csv \
        --out output/compare.csv

退出码：0 成功 | 1 用法/配置错误 | 2 数据或检查点错误 | 3 内部错误
"""

import argparse
import os
import sys
from typing import List, Optional

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from common.errors import exit_code_for
from config.train_config import parse_config
from training.engine import LATEST_CHECKPOINT, TrainingEngine, evaluate_checkpoint
from training.report import cmd_report


class _Parser(argparse.ArgumentParser):
    """用法错误统一以退出码 1 结束"""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"❌ {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="Intra-Ensemble：共享参数的子网络集成实验")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p_train = sub.add_parser("train", help="联合训练子网络")
    p_train.add_argument("--config", "-c", required=True, help="配置文件（key=value）")
    p_train.add_argument("--seed-override", type=int, default=None, help="覆盖配置中的 seed")
    p_train.add_argument("--out", default=None, help="输出根目录（覆盖 output_dir）")
    p_train.add_argument("--quiet", "-q", action="store_true", help="不打印进度")

    p_eval = sub.add_parser("eval", help="评估检查点")
    p_eval.add_argument("--config", "-c", required=True, help="配置文件（决定数据集与归一化）")
    p_eval.add_argument("--checkpoint", default=None, help=f"检查点文件（默认运行目录下的 {LATEST_CHECKPOINT}）")
    p_eval.add_argument("--seed-override", type=int, default=None, help="覆盖配置中的 seed")
    p_eval.add_argument("--out", default=None, help="JSON 输出路径（默认运行目录下的 eval.json）")
    p_eval.add_argument("--quiet", "-q", action="store_true", help="不打印进度")

    p_report = sub.add_parser("report", help="对比多次运行")
    p_report.add_argument("metrics", nargs="+", help="metrics.csv 文件，第一个作为基线")
    p_report.add_argument("--out", default=None, help="对比表 CSV 输出路径")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1

    try:
        if args.command == "train":
            config = parse_config(args.config, args.seed_override)
            if args.out:
                config.output_dir = args.out
            TrainingEngine(config, verbose=not args.quiet).run()
        elif args.command == "eval":
            config = parse_config(args.config, args.seed_override)
            checkpoint = args.checkpoint or os.path.join(config.run_dir, LATEST_CHECKPOINT)
            evaluate_checkpoint(config, checkpoint, args.out, verbose=not args.quiet)
        else:
            cmd_report(args.metrics, args.out)
    except Exception as e:
        code = exit_code_for(e)
        print(f"❌ [{type(e).__name__}] {e}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
