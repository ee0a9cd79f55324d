#!/usr/bin/env python3
"""
Cert Relay - Acceptance Runner
证书中继 - 验收检查批量运行脚本

按名称运行 accept-1 … accept-10（默认全规模），输出结论表与 CSV。
"""

import argparse
import logging
import sys
from pathlib import Path

# 添加项目根目录到路径
sys.path.insert(0, str(Path(__file__).parent.parent))

from rich.console import Console
from rich.table import Table

from config.settings import CONFIG_LOGGING, REPORT_DIR
from core.harness import ACCEPTANCE_DESCRIPTIONS, ACCEPTANCE_NAMES, run_acceptance, write_csv
from core.run_metadata import RunMetadataRecorder

logging.basicConfig(level=CONFIG_LOGGING["level"], format=CONFIG_LOGGING["format"])
console = Console()


def main() -> int:
    parser = argparse.ArgumentParser(description="Cert Relay 验收检查")
    parser.add_argument("names", nargs="*", default=ACCEPTANCE_NAMES, help="检查名（默认全部）")
    parser.add_argument("--reps", type=int, default=None, help="覆盖场景重复次数")
    parser.add_argument("--n", type=int, default=None, help="覆盖场景进程数")
    parser.add_argument("--sweep-n", default=None, help="扫描 n 值，逗号分隔")
    parser.add_argument("--sweep-reps", type=int, default=None, help="扫描每个 n 的种子数")
    parser.add_argument("--seed", type=int, default=1, help="种子基数")
    parser.add_argument("--workers", type=int, default=None, help="工作线程数")
    parser.add_argument("--csv", default=str(REPORT_DIR / "acceptance.csv"), help="CSV 输出路径")
    args = parser.parse_args()

    sweep_n = [int(v) for v in args.sweep_n.split(",")] if args.sweep_n else None
    recorder = RunMetadataRecorder("acceptance", args.seed, vars(args))
    results = run_acceptance(args.names, reps=args.reps, n=args.n, sweep_n_values=sweep_n,
                             sweep_reps=args.sweep_reps, seed=args.seed, workers=args.workers)

    table = Table(title="验收结论", show_header=True, header_style="bold magenta")
    table.add_column("检查", style="cyan")
    table.add_column("说明")
    table.add_column("结论", justify="center")
    for r in results:
        table.add_row(r.name, ACCEPTANCE_DESCRIPTIONS[r.name], "[green]通过[/green]" if r.passed else "[red]失败[/red]")
    console.print(table)

    path = write_csv([r.to_row() for r in results], args.csv)
    console.print(f"CSV: {path}")
    recorder.add_artifact(str(path))
    passed = all(r.passed for r in results)
    recorder.finalize(passed, {r.name: r.passed for r in results})
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
