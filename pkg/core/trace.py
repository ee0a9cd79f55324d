#!/usr/bin/env python3
"""
Cert Relay - Trace Logger & Replayer
证书中继 - 轨迹记录与回放

以 JSONL 格式记录模拟事件（交付、发送统计、审计点、运行汇总），支持 gzip 压缩。
轨迹是所有性质断言的基础：只含事件时间，不含墙钟时间，因此同一配置重跑逐字节相同。
"""

import gzip
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Generator, Iterable, List, Optional, Tuple

logger = logging.getLogger("CertRelay.trace")


def _dumps(event: Dict) -> str:
    return json.dumps(event, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


class TraceLogger:
    """
    轨迹记录器

    事件总保存在内存中（供审计）；给出 output_path 时同时写入 JSONL 文件。
    """

    def __init__(self, output_path: Optional[str] = None):
        self.events: List[Dict] = []
        self.output_path = Path(output_path) if output_path else None
        self._file = None
        self.event_count = 0

    def _get_file(self) -> Any:
        if self._file is None and self.output_path is not None:
            self.output_path.parent.mkdir(parents=True, exist_ok=True)
            if self.output_path.suffix == ".gz":
                self._file = gzip.open(self.output_path, "wt", encoding="utf-8")
            else:
                self._file = open(self.output_path, "w", encoding="utf-8")
        return self._file

    def log(self, event_type: str, t: float, **fields):
        """记录一条事件；t 为事件时间"""
        event = {"type": event_type, "t": round(float(t), 9), **fields}
        self._write(event)

    def _write(self, event: Dict):
        self.events.append(event)
        f = self._get_file()
        if f is not None:
            f.write(_dumps(event) + "\n")
        self.event_count += 1

    def digest(self) -> str:
        """规范 JSONL 字节的 SHA-256，用于确定性断言"""
        h = hashlib.sha256()
        for event in self.events:
            h.update((_dumps(event) + "\n").encode("utf-8"))
        return h.hexdigest()

    def events_by_type(self, event_type: str) -> List[Dict]:
        return [e for e in self.events if e.get("type") == event_type]

    def close(self):
        if self._file:
            self._file.close()
            self._file = None


class TraceReplayer:
    """
    轨迹回放器

    从 JSONL（可 gzip）文件逐条读取事件
    """

    def __init__(self, filepath: str):
        self.filepath = str(filepath)

    def replay(self) -> Generator[Dict, None, None]:
        """
        生成器：逐事件回放

        Yields:
            Dict: {"type": "...", "t": ..., ...}
        """
        open_func = gzip.open if self.filepath.endswith(".gz") else open
        with open_func(self.filepath, "rt", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if line:
                    try:
                        yield json.loads(line)
                    except json.JSONDecodeError:
                        logger.warning(f"{self.filepath}:{lineno} 不是有效 JSON，已跳过")

    def get_events_by_type(self, event_type: str) -> List[Dict]:
        """获取指定类型的所有事件"""
        return [e for e in self.replay() if e.get("type") == event_type]

    def get_time_range(self) -> Tuple[Optional[float], Optional[float]]:
        """获取事件时间范围"""
        first_t = None
        last_t = None
        for event in self.replay():
            t = event.get("t")
            if t is not None:
                if first_t is None:
                    first_t = t
                last_t = t
        return (first_t, last_t)


def write_jsonl(path: str, records: Iterable[Dict]) -> int:
    """写出记录列表（例如 DKG 转录本），返回条数"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    open_func = gzip.open if path.suffix == ".gz" else open
    count = 0
    with open_func(path, "wt", encoding="utf-8") as f:
        for record in records:
            f.write(_dumps(record) + "\n")
            count += 1
    return count


def list_trace_files(directory: str) -> List[Path]:
    """列出所有轨迹文件"""
    dir_path = Path(directory)
    if not dir_path.exists():
        return []
    return sorted(dir_path.glob("*.jsonl*"))
