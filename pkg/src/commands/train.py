"""
EventAttn - Train Command
训练单个模式，或 --sweep 依次训练五种模式并输出比较表
"""

import logging
from pathlib import Path

from checkpoint import save_checkpoint
from config import SPLIT_FILES
from errors import ConfigError
from file_ops import read_dataset_with_header, write_csv
from metrics import classify_eval
from run_config import RunConfig
from training import ablation_sweep, train
from .report import write_report
from .track import track_clips

logger = logging.getLogger("eventattn")


def load_splits(data_dir: Path, names: tuple[str, ...]) -> tuple:
    """读取数据目录中的若干划分，返回 (文件头, {划分: 片段})"""
    header, splits = None, {}
    for name in names:
        h, clips = read_dataset_with_header(Path(data_dir) / SPLIT_FILES[name])
        if header is not None and h != header:
            raise ConfigError(f"{name} 划分的文件头与其他划分不一致")
        header = h
        splits[name] = clips
    return header, splits


def _ensure_tracks(clips, run: RunConfig):
    if all(c.has_tracks for c in clips):
        return clips
    logger.info("数据未带 track_id，先运行跟踪")
    return track_clips(clips, run.tracker)[0]


def train_command(args, run: RunConfig) -> Path:
    """处理 train 子命令"""
    if not args.data:
        raise ConfigError("train 需要 --data 指定数据目录（含 train/val/test.jsonl）")
    names = ("train", "val", "test") if (args.sweep or args.test) else ("train", "val")
    header, splits = load_splits(Path(args.data), names)
    model_cfg = run.model.bind(header)

    if args.sweep:
        out_dir = Path(args.out or "runs/sweep")
        tracked = {name: _ensure_tracks(clips, run) for name, clips in splits.items()}
        rows = ablation_sweep(tracked["train"], tracked["val"], tracked["test"], run.train, model_cfg)
        write_csv(
            [{k: r[k] for k in ("mode", "best_step", "val_map", "test_map")} for r in rows],
            out_dir / "sweep.csv", ["mode", "best_step", "val_map", "test_map"],
        )
        return write_report(out_dir / "sweep.json", "train-sweep", {"modes": rows}, run)

    out_dir = Path(args.out or f"runs/{model_cfg.mode.value}")
    checkpoint = train(splits["train"], splits["val"], run.train, model_cfg)
    ckpt_dir = save_checkpoint(checkpoint.params, checkpoint.meta(), out_dir / "checkpoint")
    data = {
        "mode": checkpoint.params.config.mode.value,
        "checkpoint": str(ckpt_dir),
        "best_step": checkpoint.step,
        "best_val_map": checkpoint.best_metric,
        "history": checkpoint.history,
        "final_loss": checkpoint.losses[-1] if checkpoint.losses else None,
    }
    if args.test:
        data["test"] = classify_eval(checkpoint.params, splits["test"]).to_dict()
    return write_report(out_dir / "train_report.json", "train", data, run)
