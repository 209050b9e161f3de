"""
report.py - 多次运行对比表

读取若干 metrics.csv，取每次运行的最后一条记录，生成对比表：
    方法 | N | 方式 | 参数量 | S | 集成错误率 | 最佳子网络错误率 | Acc Δ | Param Δ
Acc Δ 与 Param Δ 都相对第一个文件（通常是 N=1 的单网络基线）。
"""

import os
from typing import List, Optional, Sequence

import pandas as pd

from common.errors import DataFormatError
from training.engine import METRICS_COLUMNS, METRICS_FILE

REPORT_COLUMNS = [
    "method",
    "n_subnets",
    "kind",
    "params_total",
    "similarity",
    "ensemble_err",
    "best_subnet_err",
    "acc_delta",
    "param_delta",
]


def run_label(path: str) -> str:
    """运行名：metrics.csv 取所在目录名，否则取文件名"""
    if os.path.basename(path) == METRICS_FILE:
        return os.path.basename(os.path.dirname(os.path.abspath(path)))
    return os.path.splitext(os.path.basename(path))[0]


def read_metrics(path: str) -> pd.DataFrame:
    """读取并校验一个指标文件

    Raises:
        DataFormatError: 文件不存在、为空或缺少列
    """
    if not os.path.isfile(path):
        raise DataFormatError(f"指标文件不存在: {path}")
    try:
        df = pd.read_csv(path, dtype={"train_loss": str, "subnet_acc": str, "kind": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataFormatError(f"{path}: 无法解析 CSV: {e}")
    missing = [c for c in METRICS_COLUMNS if c not in df.columns]
    if missing:
        raise DataFormatError(f"{path}: 缺少列 {', '.join(missing)}")
    if df.empty:
        raise DataFormatError(f"{path}: 没有任何记录")
    return df


def _summary_row(path: str) -> dict:
    last = read_metrics(path).iloc[-1]
    try:
        subnet_acc = [float(v) for v in str(last["subnet_acc"]).split(";") if v]
    except ValueError:
        raise DataFormatError(f"{path}: subnet_acc 列格式错误: {last['subnet_acc']!r}")
    if not subnet_acc:
        raise DataFormatError(f"{path}: subnet_acc 列为空")
    return {
        "method": run_label(path),
        "n_subnets": int(last["n_subnets"]),
        "kind": str(last["kind"]),
        "params_total": int(last["params_total"]),
        "similarity": float(last["similarity"]),
        "ensemble_acc": float(last["ensemble_acc"]),
        "ensemble_err": 100.0 * (1.0 - float(last["ensemble_acc"])),
        "best_subnet_err": 100.0 * (1.0 - max(subnet_acc)),
    }


def build_report(metrics_paths: Sequence[str]) -> pd.DataFrame:
    """生成对比表（错误率与 Acc Δ 以百分点表示）"""
    if not metrics_paths:
        raise DataFormatError("至少需要一个指标文件")
    rows = [_summary_row(p) for p in metrics_paths]
    base = rows[0]
    for row in rows:
        row["acc_delta"] = 100.0 * (row["ensemble_acc"] - base["ensemble_acc"])
        row["param_delta"] = row["params_total"] - base["params_total"]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def format_report(table: pd.DataFrame) -> str:
    """对齐的纯文本表格"""
    shown = table.rename(
        columns={
            "method": "方法",
            "n_subnets": "N",
            "kind": "方式",
            "params_total": "参数量",
            "similarity": "S",
            "ensemble_err": "集成错误率%",
            "best_subnet_err": "最佳子网络错误率%",
            "acc_delta": "Acc Δ",
            "param_delta": "Param Δ",
        }
    )
    return shown.to_string(
        index=False,
        formatters={
            "S": "{:.4f}".format,
            "集成错误率%": "{:.2f}".format,
            "最佳子网络错误率%": "{:.2f}".format,
            "Acc Δ": "{:+.2f}".format,
            "Param Δ": "{:+,d}".format,
            "参数量": "{:,d}".format,
        },
    )


def cmd_report(metrics_paths: Sequence[str], out_path: Optional[str] = None, verbose: bool = True) -> pd.DataFrame:
    """打印对比表，并在给出 out_path 时写出 CSV"""
    table = build_report(metrics_paths)
    if verbose:
        print("\n" + "=" * 60)
        print("📊 运行对比")
        print("=" * 60)
        print(format_report(table))
        print("=" * 60)
    if out_path:
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        table.to_csv(out_path, index=False, float_format="%.6f")
        if verbose:
            print(f"📁 对比表已保存至 {out_path}")
    return table
