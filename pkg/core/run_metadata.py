#!/usr/bin/env python3
"""
Cert Relay - Run Metadata Recorder
证书中继 - 运行元信息记录

每次场景运行 / 扫描 / 验收记录种子、配置快照、每个种子的轨迹摘要与结论。
同一代码版本下，用记录中的种子与配置重跑应得到相同的轨迹摘要。
"""

import json
import logging
import platform
import re
import subprocess
import sys
import time
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from config.settings import RUN_DIR

logger = logging.getLogger("CertRelay.run_metadata")


def _git(*args: str) -> Optional[str]:
    try:
        result = subprocess.run(["git", *args], capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return result.stdout.strip() if result.returncode == 0 else None


def _slug(command: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", command).strip("-").lower()[:40] or "run"


@dataclass
class RunMetadata:
    """运行元信息"""
    run_id: str                          # 唯一运行 ID
    command: str                         # 子命令 / 场景名
    seed: int                            # 种子（场景为种子基数）
    start_time: float                    # 墙钟时间戳，仅用于记录，不进入轨迹
    start_time_str: str
    git_commit: str                      # 代码版本；dirty 时重放结果不保证一致
    git_dirty: bool
    config_snapshot: Dict[str, Any]
    python_version: str
    platform: str
    # 结束时更新
    end_time: Optional[float] = None
    end_time_str: Optional[str] = None
    total_runtime_seconds: Optional[float] = None
    passed: Optional[bool] = None
    trace_digests: Dict[str, str] = field(default_factory=dict)   # 种子 → 轨迹 SHA-256
    summary: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)


class RunMetadataRecorder:
    """
    运行元信息记录器

    保存到 storage/runs/{YYYYMMDD_HHMMSS}_{command}_{uuid8}.json
    """

    def __init__(self, command: str, seed: int, config_snapshot: Optional[Dict[str, Any]] = None,
                 output_dir: Optional[str] = None):
        self.output_dir = Path(output_dir) if output_dir else RUN_DIR
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.run_id = f"{datetime.now().strftime('%Y%m%d_%H%M%S')}_{_slug(command)}_{uuid.uuid4().hex[:8]}"
        self.filepath = self.output_dir / f"{self.run_id}.json"

        commit = _git("rev-parse", "HEAD")
        status = _git("status", "--porcelain")
        now = time.time()
        self.metadata = RunMetadata(
            run_id=self.run_id,
            command=command,
            seed=seed,
            start_time=now,
            start_time_str=datetime.fromtimestamp(now).isoformat(),
            git_commit=commit[:12] if commit else "unknown",
            git_dirty=bool(status),
            config_snapshot=config_snapshot or {},
            python_version=sys.version.split()[0],
            platform=platform.system(),
        )

    def record_trace(self, seed: int, digest: str, path: Optional[str] = None):
        """记录一个种子的轨迹摘要；给出路径时同时登记为产物"""
        self.metadata.trace_digests[str(seed)] = digest
        if path:
            self.add_artifact(path)

    def add_artifact(self, path: str):
        if str(path) not in self.metadata.artifacts:
            self.metadata.artifacts.append(str(path))

    def save(self) -> bool:
        try:
            with open(self.filepath, "w", encoding="utf-8") as f:
                json.dump(asdict(self.metadata), f, indent=2, ensure_ascii=False, default=str)
            return True
        except OSError as e:
            logger.error(f"运行元信息保存失败 {self.filepath}: {e}")
            return False

    def finalize(self, passed: Optional[bool], summary: Optional[Dict[str, Any]] = None):
        """结束运行，写入结论与汇总"""
        now = time.time()
        self.metadata.end_time = now
        self.metadata.end_time_str = datetime.fromtimestamp(now).isoformat()
        self.metadata.total_runtime_seconds = round(now - self.metadata.start_time, 3)
        self.metadata.passed = passed
        if summary:
            self.metadata.summary = summary
        if self.save():
            logger.info(f"运行 {self.run_id} 元信息已写入 {self.filepath}")


def list_runs(output_dir: Optional[str] = None, command: Optional[str] = None) -> List[Dict]:
    """
    列出运行记录，按开始时间从新到旧

    Args:
        command: 只返回该子命令（前缀匹配）的记录
    """
    dir_path = Path(output_dir) if output_dir else RUN_DIR
    if not dir_path.exists():
        return []
    runs = []
    for filepath in dir_path.glob("*.json"):
        try:
            with open(filepath, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError):
            logger.warning(f"跳过无法读取的运行记录 {filepath}")
            continue
        if command is None or str(data.get("command", "")).startswith(command):
            runs.append(data)
    runs.sort(key=lambda r: r.get("start_time", 0.0), reverse=True)
    return runs


def get_latest_run(output_dir: Optional[str] = None, command: Optional[str] = None) -> Optional[Dict]:
    runs = list_runs(output_dir, command)
    return runs[0] if runs else None
