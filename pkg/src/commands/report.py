"""
EventAttn - Report Helpers
统一的报告格式：命令名 + 解析后的完整配置 + 结果
"""

import logging
from pathlib import Path

from config import to_plain
from file_ops import write_json_report
from run_config import RunConfig

logger = logging.getLogger("eventattn")


def build_report(command: str, data: dict, run: RunConfig) -> dict:
    """报告正文，附带本次运行的配置以便复现"""
    return {"command": command, **to_plain(data), "config": run.to_dict()}


def write_report(path: Path, command: str, data: dict, run: RunConfig) -> Path:
    """写出 JSON 报告并返回路径"""
    return write_json_report(build_report(command, data, run), path)


def emit_path(path: Path) -> None:
    """stdout 只输出产物路径"""
    print(Path(path), flush=True)
