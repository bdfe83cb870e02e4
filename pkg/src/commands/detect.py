"""
EventAttn - Detect Command
合成未剪辑时间线，物化滑动窗口正负样本，训练 K+1 类模型并评估检测 mAP
"""

import logging
from pathlib import Path

from checkpoint import save_checkpoint
from detection import detect_eval, sliding_detect, window_clips
from features import synth_timeline
from file_ops import write_dataset
from run_config import RunConfig
from training import train
from .report import write_report
from .track import track_clips

logger = logging.getLogger("eventattn")


def detect_command(args, run: RunConfig) -> Path:
    """处理 detect 子命令"""
    out_dir = Path(args.out or "runs/detect")
    cfg = run.detect
    seed = run.synth.seed
    timelines = {
        "train": synth_timeline(run.synth, cfg.train_duration_s, cfg.train_events, seed=seed, timeline_id="train"),
        "val": synth_timeline(run.synth, cfg.val_duration_s, cfg.val_events, seed=seed + 1, timeline_id="val"),
        "test": synth_timeline(run.synth, cfg.test_duration_s, cfg.test_events, seed=seed + 2, timeline_id="test"),
    }
    header = run.synth.header()
    model_cfg = run.model.bind(header, negative_class=True)

    windows = {name: window_clips(timelines[name], cfg.stride) for name in ("train", "val")}
    if model_cfg.mode.uses_tracks:
        windows = {name: track_clips(clips, run.tracker)[0] for name, clips in windows.items()}
    windows_path = write_dataset(windows["train"], out_dir / "detect_train_windows.jsonl", header)

    checkpoint = train(windows["train"], windows["val"], run.train, model_cfg)
    ckpt_dir = save_checkpoint(checkpoint.params, checkpoint.meta(), out_dir / "checkpoint")

    scored = sliding_detect(timelines["test"], checkpoint.params, cfg.stride, run.tracker)
    report = detect_eval(scored, header.k)
    return write_report(out_dir / "detect_report.json", "detect", {
        "mode": model_cfg.mode.value,
        "checkpoint": str(ckpt_dir),
        "train_windows": str(windows_path),
        "train_window_count": len(windows["train"]),
        "train_negative_windows": sum(1 for c in windows["train"] if c.is_negative),
        "best_step": checkpoint.step,
        "best_val_map": checkpoint.best_metric,
        **report.to_dict(),
    }, run)
