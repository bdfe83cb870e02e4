"""
EventAttn - Evaluate Commands
eval-classify / eval-attention / heatmap 子命令
"""

import logging
from pathlib import Path

import yaml

from attention_eval import Homography, attention_records, heatmap, homography_dlt, shooter_eval
from checkpoint import load_checkpoint
from errors import ConfigError, ValidationError
from file_ops import read_dataset_with_header, write_csv, write_jsonl
from metrics import classify_eval
from model import forward
from run_config import RunConfig
from .report import write_report

logger = logging.getLogger("eventattn")


def _load(args):
    """读取 --checkpoint 与 --data，并检查两者维度一致"""
    if not args.checkpoint or not args.data:
        raise ConfigError("需要 --checkpoint 与 --data")
    params, meta = load_checkpoint(Path(args.checkpoint))
    header, clips = read_dataset_with_header(Path(args.data))
    cfg = params.config
    if (header.d_frame, header.d_app, tuple(header.levels)) != (cfg.d_frame, cfg.d_app, cfg.levels):
        raise ValidationError("数据集维度与检查点的模型配置不一致")
    return params, meta, header, clips


def eval_classify_command(args, run: RunConfig) -> Path:
    """处理 eval-classify 子命令"""
    params, meta, _, clips = _load(args)
    report = classify_eval(params, clips)
    out = Path(args.out or "reports/classify.json")
    return write_report(out, "eval-classify", {
        "checkpoint": str(args.checkpoint),
        "mode": params.config.mode.value,
        "step": meta.get("step"),
        **report.to_dict(),
    }, run)


def eval_attention_command(args, run: RunConfig) -> Path:
    """处理 eval-attention 子命令：射手识别 mAP + 每帧 γ 记录"""
    params, _, _, clips = _load(args)
    if not params.config.mode.attends:
        raise ValidationError(f"模式 {params.config.mode.value} 不产生注意力权重")
    traces = [forward(clip, params) for clip in clips]
    report = shooter_eval(traces, clips, params.config.num_classes)
    out = Path(args.out or "reports/attention.json")
    gamma_path = write_jsonl(attention_records(traces, clips), out.with_name(out.stem + ".gammas.jsonl"))
    return write_report(out, "eval-attention", {
        "checkpoint": str(args.checkpoint),
        "mode": params.config.mode.value,
        "gammas": str(gamma_path),
        **report.to_dict(),
    }, run)


def load_homographies(path: Path | None) -> dict[str, Homography]:
    """YAML/JSON 文件：clip_id -> {src: [[x, y], ...], dst: [[x, y], ...]}"""
    if path is None:
        return {}
    with open(path, 'r', encoding='utf-8') as f:
        try:
            raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"单应性文件解析失败: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("单应性文件顶层必须是 clip_id 映射")
    result = {}
    for clip_id, pairs in raw.items():
        try:
            result[str(clip_id)] = homography_dlt(pairs["src"], pairs["dst"])
        except (KeyError, TypeError) as e:
            raise ConfigError(f"片段 {clip_id} 的对应点格式无效: {e}") from e
        logger.debug(f"片段 {clip_id} 单应性重投影 RMS={result[str(clip_id)].rms:.3e}")
    return result


def heatmap_command(args, run: RunConfig) -> Path:
    """处理 heatmap 子命令，输出 CSV（class, phase, gx, gy, mass）"""
    params, _, _, clips = _load(args)
    if not params.config.mode.attends:
        raise ValidationError(f"模式 {params.config.mode.value} 不产生注意力权重")
    grid = args.grid or run.eval.grid
    homographies = load_homographies(Path(args.homographies) if args.homographies else None)
    traces = [forward(clip, params) for clip in clips]
    result = heatmap(traces, clips, params.config.num_classes, homographies, grid=grid, phases=run.eval.phases)
    out = Path(args.out or "reports/heatmap.csv")
    csv_path = write_csv(result.rows(), out, ["class", "phase", "gx", "gy", "mass"])
    write_report(out.with_suffix(".json"), "heatmap", {
        "checkpoint": str(args.checkpoint),
        "csv": str(csv_path),
        "grid": grid,
        "phases": run.eval.phases,
        "clamped_points": result.clamped,
        "homographies": {cid: {"matrix": h.matrix, "rms": h.rms} for cid, h in homographies.items()},
    }, run)
    return csv_path
