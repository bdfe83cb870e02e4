"""
EventAttn - Track Command
为数据集中每个检测分配 track_id
"""

import logging
from pathlib import Path

import numpy as np

from errors import ConfigError
from file_ops import read_dataset_with_header, write_dataset
from run_config import RunConfig
from tracker import TrackerParams, link_tracks, mean_match_iou, track_agreement
from .report import write_report

logger = logging.getLogger("eventattn")


def track_clips(clips, params: TrackerParams) -> tuple[list, dict]:
    """逐片段跟踪，返回 (带 track_id 的片段, 统计)"""
    tracked, agreements, ious = [], [], []
    total_tracks = 0
    for clip in clips:
        tracks, annotated = link_tracks(clip, params)
        tracked.append(annotated)
        total_tracks += len(tracks)
        agreement = track_agreement(tracks, clip)
        if agreement is not None:
            agreements.append(agreement)
        smooth = mean_match_iou(tracks, clip)
        if smooth is not None:
            ious.append(smooth)
    stats = {
        "clips": len(clips),
        "tracks": total_tracks,
        "gt_agreement": float(np.mean(agreements)) if agreements else None,
        "mean_link_iou": float(np.mean(ious)) if ious else None,
    }
    return tracked, stats


def track_command(args, run: RunConfig) -> Path:
    """处理 track 子命令"""
    if not args.data:
        raise ConfigError("track 需要 --data 指定输入数据集")
    src = Path(args.data)
    dst = Path(args.out) if args.out else src.with_name(src.stem + ".tracked.jsonl")
    header, clips = read_dataset_with_header(src)
    tracked, stats = track_clips(clips, run.tracker)
    write_dataset(tracked, dst, header)
    logger.info(f"跟踪完成: {stats['tracks']} 条轨迹, 真值一致率 {stats['gt_agreement']}")
    return write_report(dst.with_name(dst.stem + ".report.json"), "track", {"output": str(dst), **stats}, run)
