#!/usr/bin/env python3
"""
Cert Relay - 统一命令行入口
证书中继 - 场景运行、扫描、密钥生成 / 签名演示、证书校验、轨迹报告
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

try:
    from rich.console import Console
    from rich.panel import Panel
    from rich.table import Table
except ImportError:
    print("请安装 rich: pip install rich")
    sys.exit(1)

from config.settings import CONFIG_HARNESS, CONFIG_LOGGING, REPORT_DIR, SCENARIO_DIR
from core.certificate import (
    Certificate,
    LocalTransfer,
    OutboundXS,
    SubnetId,
    SubnetState,
    TransferAsset,
    build_and_sign_certificate,
    valid_cert,
    verify_certificate_signature,
)
from core.codec import CodecError
from core.group import get_backend
from core.harness import (
    Scenario,
    builtin_scenarios,
    list_scenarios,
    report_traces,
    run_scenario,
    sweep_message_complexity,
    write_csv,
)
from core.ice_frost import (
    Misbehavior,
    MisbehaviorKind,
    SessionContext,
    SigningAborted,
    SubnetSigner,
    run_keygen,
    threshold_sign,
    verify_signature,
)
from core.randomness import make_rng
from core.run_metadata import RunMetadataRecorder
from core.simnet import ConfigError
from core.trace import write_jsonl

console = Console()
logger = logging.getLogger("CertRelay.cli")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def setup_logging(verbose: bool = False):
    """配置日志：文件 + 标准错误输出"""
    level = logging.DEBUG if verbose else getattr(logging, CONFIG_LOGGING["level"].upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format=CONFIG_LOGGING["format"],
        handlers=[
            logging.FileHandler(CONFIG_LOGGING["log_path"], encoding="utf-8"),
            logging.StreamHandler(sys.stderr),
        ],
        force=True,
    )


def print_banner():
    console.print(Panel("CERT RELAY - Transmission Control Engine Simulator\n证书中继 - 跨子网证书可靠广播模拟器",
                        style="cyan"))


def _overrides(args) -> dict:
    overrides = {}
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.validate_at_prb:
        overrides["validate_at_prb"] = True
    if args.backend is not None:
        overrides["backend"] = args.backend
    return overrides


def _load_scenario(ref: str) -> Scenario:
    builtin = builtin_scenarios()
    if ref in builtin:
        return builtin[ref]
    path = Path(ref)
    if not path.exists() and (SCENARIO_DIR / ref).exists():
        path = SCENARIO_DIR / ref
    return Scenario.load(str(path))


# ==================== 子命令 ====================
def cmd_run_scenario(args) -> int:
    scenario = _load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed_base = args.seed
    recorder = RunMetadataRecorder(f"run-scenario {scenario.name}", scenario.seed_base, scenario.to_dict())
    result = run_scenario(scenario, reps=args.reps, n=args.n, workers=args.workers,
                          trace_dir=args.trace_dir, **_overrides(args))

    table = Table(title=f"场景 {scenario.name}", show_header=True, header_style="bold magenta")
    table.add_column("指标", style="cyan")
    table.add_column("值", justify="right")
    for key, value in result.metrics.to_row().items():
        table.add_row(key, str(value))
    console.print(table)

    verdicts = Table(title="断言", show_header=True, header_style="bold magenta")
    verdicts.add_column("断言", style="cyan")
    verdicts.add_column("结论", justify="center")
    for name, ok in result.verdicts.items():
        verdicts.add_row(name, "[green]通过[/green]" if ok else "[red]失败[/red]")
    console.print(verdicts)

    if args.csv:
        recorder.add_artifact(str(write_csv([result.to_row()], args.csv)))
    for run in result.runs:
        recorder.record_trace(run["seed"], run["digest"], run.get("trace"))
    recorder.finalize(result.passed, {"metrics": result.metrics.to_row(), "verdicts": result.verdicts})
    return EXIT_OK if result.passed else EXIT_FAILED


def cmd_sweep(args) -> int:
    try:
        n_values = [int(v) for v in args.n.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--n must be a comma-separated list of integers, got {args.n!r}")
    seed = args.seed if args.seed is not None else 1
    recorder = RunMetadataRecorder("sweep", seed, {"n_values": n_values, "reps": args.reps, "K": args.K})
    report = sweep_message_complexity(n_values, args.reps, K=args.K, seed_base=seed, workers=args.workers,
                                      tolerance=args.tolerance, control=not args.no_control)

    frame = report.to_frame()
    table = Table(title="每进程消息数 / 次广播", show_header=True, header_style="bold magenta")
    for column in frame.columns:
        table.add_column(column, justify="right")
    for row in frame.itertuples(index=False):
        table.add_row(*[f"{v:.3f}" if isinstance(v, float) else str(v) for v in row])
    console.print(table)
    control = f"{report.control_ratio:.3f}" if report.control_ratio is not None else "-"
    console.print(Panel(
        f"观测比值: {report.observed_ratio:.3f}\n"
        f"ln 比值预测: {report.predicted_ratio:.3f}\n"
        f"相对误差: {report.relative_error:.1%} (容忍 {report.tolerance:.0%})\n"
        f"拟合: {report.fit_slope:.2f} · ln n + {report.fit_intercept:.2f}\n"
        f"对照 (固定样本): {control}",
        title="O(log n) 检验", style="green" if report.passed else "red",
    ))
    if args.csv:
        path = Path(args.csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
        recorder.add_artifact(str(path))
    recorder.finalize(report.passed, {"observed_ratio": report.observed_ratio,
                                      "predicted_ratio": report.predicted_ratio,
                                      "control_ratio": report.control_ratio})
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_keygen_demo(args) -> int:
    group = get_backend(args.backend or "secp256k1")
    rng = make_rng(args.seed if args.seed is not None else 1, "keygen-demo")
    misbehaviors = []
    if args.bad_share:
        dealer, target = (int(v) for v in args.bad_share.split(":"))
        misbehaviors.append(Misbehavior(MisbehaviorKind.BAD_SHARE, dealer, target))
    outcome = run_keygen(group, list(range(1, args.n + 1)), args.t, SessionContext("keygen-demo"), rng,
                         misbehaviors)
    if args.transcript:
        write_jsonl(args.transcript, outcome.transcript.records())
    if outcome.aborted:
        console.print("[red]密钥生成中止[/red]")
        return EXIT_FAILED

    table = Table(title=f"ICE-FROST 密钥生成 t={args.t}, n={args.n}", show_header=True, header_style="bold magenta")
    table.add_column("参与者", style="cyan")
    table.add_column("验证份额 Y_i")
    first = next(iter(outcome.key_material.values()))
    for i, Y_i in sorted(first.verification_shares.items()):
        table.add_row(str(i), Y_i.hex())
    console.print(table)
    console.print(f"群公钥 Y: [bold]{outcome.group_key.hex()}[/bold]")
    console.print(f"排除: {sorted(outcome.consensus_excluded)}  一致: {outcome.consistent}")
    return EXIT_OK if outcome.consistent else EXIT_FAILED


def cmd_sign_demo(args) -> int:
    group = get_backend(args.backend or "secp256k1")
    rng = make_rng(args.seed if args.seed is not None else 1, "sign-demo")
    outcome = run_keygen(group, list(range(1, args.n + 1)), args.t, SessionContext("sign-demo"), rng)
    message = args.message.encode("utf-8")
    signers = [int(v) for v in args.signers.split(",")] if args.signers else None
    misbehaviors = [Misbehavior(MisbehaviorKind.BAD_RESPONSE, s) for s in args.bad_response]
    try:
        signing = threshold_sign(outcome.key_material, message, rng, signers, misbehaviors)
    except SigningAborted as e:
        console.print(f"[red]签名中止: {e}[/red]")
        return EXIT_FAILED
    ok = verify_signature(outcome.group_key, message, signing.signature)
    console.print(Panel(
        f"签名者: {signing.signers}\n排除: {sorted(signing.excluded)}\n轮数: {signing.attempts}\n"
        f"R: {signing.signature.R.hex()}\nz: {signing.signature.z.hex()}\n"
        f"校验: {'有效' if ok else '无效'}",
        title="门限签名", style="green" if ok else "red",
    ))
    return EXIT_OK if ok else EXIT_FAILED


def cmd_make_cert(args) -> int:
    group = get_backend(args.backend or "secp256k1")
    rng = make_rng(args.seed if args.seed is not None else 1, "make-cert")
    outcome = run_keygen(group, [1, 2, 3], 2, SessionContext("make-cert"), rng)
    signer = SubnetSigner.from_keygen(outcome, rng)
    owner = SubnetId.from_group_key(signer.group_key)
    other = SubnetId.from_group_key(group.base_exp(group.random_scalar(rng)))
    genesis = SubnetState.genesis(owner, {("alice", "RELAY"): 100, ("bob", "RELAY"): 50})
    batch = [
        LocalTransfer("alice", "bob", "RELAY", 10),
        OutboundXS("bob", TransferAsset(other, "RELAY", "carol", 5)),
    ]
    cert, _ = build_and_sign_certificate(signer, genesis, batch)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(cert.encoded)
    console.print(f"证书 {cert.short()} 已写入 {path}")
    return EXIT_OK


def cmd_verify_cert(args) -> int:
    data = Path(args.file).read_bytes()
    try:
        cert = Certificate.decode(data)
    except (CodecError, ValueError) as e:
        console.print(f"[red]invalid[/red] (解码失败: {e})")
        return EXIT_FAILED
    if args.json:
        console.print_json(json.dumps(cert.to_dict()))
    intrinsic = valid_cert(cert)
    signed = verify_certificate_signature(cert)
    ok = intrinsic and signed
    console.print(f"内在有效性: {intrinsic}  签名: {signed}")
    console.print("[green]valid[/green]" if ok else "[red]invalid[/red]")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_report(args) -> int:
    frame = report_traces(args.traces)
    table = Table(title="轨迹审计", show_header=True, header_style="bold magenta")
    columns = ["trace", "t_end", "delivery_rate", "consistency_violations", "weak_causal_violations",
               "monotonicity_violations", "conservation_violations", "msg_per_process_mean", "latency_mean"]
    for column in columns:
        table.add_column(column)
    for _, row in frame.iterrows():
        table.add_row(*[str(row[c]) for c in columns])
    console.print(table)
    csv_path = Path(args.csv) if args.csv else REPORT_DIR / "trace_report.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(csv_path, index=False)
    console.print(f"CSV: {csv_path}")
    return EXIT_OK


def cmd_list_scenarios(args) -> int:
    table = Table(title="场景库", show_header=True, header_style="bold magenta")
    table.add_column("名称", style="cyan")
    table.add_column("来源")
    table.add_column("说明")
    for entry in list_scenarios(args.dir or str(SCENARIO_DIR)):
        table.add_row(entry["name"], entry["source"], entry["description"])
    console.print(table)
    return EXIT_OK


# ==================== 参数解析 ====================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run.py",
        description="Cert Relay - 跨子网证书可靠广播模拟器",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
子命令说明:
  run-scenario   运行场景（内置 accept-N 或 JSON 文件）并检查断言
  sweep          每进程消息复杂度随 n 的增长检验
  keygen-demo    ICE-FROST 分布式密钥生成演示
  sign-demo      门限签名演示
  make-cert      生成演示证书文件
  verify-cert    校验证书文件
  report         回放轨迹文件并重新审计
  list-scenarios 列出场景库

使用示例:
  python run.py run-scenario scenarios/doublespend.json --reps 5
  python run.py --seed 7 sweep --n 128,512,2048 --reps 20
  python run.py keygen-demo --t 2 --n 3
  python run.py verify-cert storage/reports/demo.cert
        """,
    )
    parser.add_argument("--seed", type=int, default=None, help="运行种子（场景为种子基数）")
    parser.add_argument("--horizon", type=float, default=None, help="事件时间上限")
    parser.add_argument("--validate-at-prb", action="store_true", help="在 gossip 门启用 valid_cert")
    parser.add_argument("--backend", choices=["secp256k1", "inspection"], default=None, help="群后端")
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG 日志")

    sub = parser.add_subparsers(dest="command", help="选择子命令")

    p = sub.add_parser("run-scenario", help="运行场景")
    p.add_argument("scenario", help="内置场景名或 JSON 文件")
    p.add_argument("--reps", type=int, default=None, help="重复次数")
    p.add_argument("--n", type=int, default=None, help="进程数")
    p.add_argument("--workers", type=int, default=None, help="工作线程数")
    p.add_argument("--trace-dir", default=None, help="轨迹输出目录")
    p.add_argument("--csv", default=None, help="CSV 汇总路径")
    p.set_defaults(handler=cmd_run_scenario)

    p = sub.add_parser("sweep", help="消息复杂度扫描")
    p.add_argument("--n", default=",".join(str(v) for v in CONFIG_HARNESS["sweep_n_values"]), help="n 值，逗号分隔")
    p.add_argument("--reps", type=int, default=CONFIG_HARNESS["sweep_reps"], help="每个 n 的种子数")
    p.add_argument("--K", type=float, default=4.0, help="样本大小倍数")
    p.add_argument("--tolerance", type=float, default=None, help="相对误差容忍度")
    p.add_argument("--workers", type=int, default=None, help="工作线程数")
    p.add_argument("--no-control", action="store_true", help="跳过固定样本对照")
    p.add_argument("--csv", default=None, help="CSV 输出路径")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("keygen-demo", help="密钥生成演示")
    p.add_argument("--t", type=int, default=2, help="门限")
    p.add_argument("--n", type=int, default=3, help="参与者数")
    p.add_argument("--bad-share", default=None, metavar="DEALER:TARGET", help="脚本化错误份额")
    p.add_argument("--transcript", default=None, help="公告板记录输出 (JSONL)")
    p.set_defaults(handler=cmd_keygen_demo)

    p = sub.add_parser("sign-demo", help="门限签名演示")
    p.add_argument("--t", type=int, default=2, help="门限")
    p.add_argument("--n", type=int, default=3, help="参与者数")
    p.add_argument("--message", default="hello relay", help="待签名消息")
    p.add_argument("--signers", default=None, help="签名者集合，逗号分隔")
    p.add_argument("--bad-response", type=int, action="append", default=[], help="作恶签名者")
    p.set_defaults(handler=cmd_sign_demo)

    p = sub.add_parser("make-cert", help="生成演示证书")
    p.add_argument("output", help="输出文件")
    p.set_defaults(handler=cmd_make_cert)

    p = sub.add_parser("verify-cert", help="校验证书文件")
    p.add_argument("file", help="证书文件")
    p.add_argument("--json", action="store_true", help="打印 JSON 渲染")
    p.set_defaults(handler=cmd_verify_cert)

    p = sub.add_parser("report", help="轨迹审计报告")
    p.add_argument("traces", nargs="+", help="轨迹文件 (.jsonl / .jsonl.gz) 或目录")
    p.add_argument("--csv", default=None, help="CSV 输出路径")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("list-scenarios", help="列出场景库")
    p.add_argument("--dir", default=None, help="场景目录")
    p.set_defaults(handler=cmd_list_scenarios)
    return parser


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    命令行入口

    Returns:
        0 成功；1 断言失败或证书无效；2 用法错误或配置无效
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    setup_logging(args.verbose)
    try:
        return args.handler(args)
    except ConfigError as e:
        console.print(f"[red]配置错误: {e}[/red]")
        return EXIT_USAGE
    except KeyboardInterrupt:
        console.print("\n[yellow]已停止[/yellow]")
        return EXIT_FAILED


def main(argv: Optional[List[str]] = None):
    print_banner()
    sys.exit(cli(argv))


if __name__ == "__main__":
    main()
