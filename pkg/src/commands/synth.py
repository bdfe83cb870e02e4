"""
EventAttn - Synth Command
生成 train / val / test 三个合成数据集
"""

import logging
from pathlib import Path

from config import SPLIT_FILES, SPLIT_RATIOS, class_names
from features import SynthConfig, class_histogram, synth_dataset
from file_ops import write_dataset
from run_config import RunConfig
from .report import write_report

logger = logging.getLogger("eventattn")


def split_sizes(total: int) -> dict[str, int]:
    """按 212:12:33 比例划分，验证/测试至少各 1 个"""
    ratio_sum = sum(SPLIT_RATIOS)
    val = max(1, round(total * SPLIT_RATIOS[1] / ratio_sum))
    test = max(1, round(total * SPLIT_RATIOS[2] / ratio_sum))
    return {"train": max(1, total - val - test), "val": val, "test": test}


def synth_splits(cfg: SynthConfig, out_dir: Path) -> dict:
    """写出三份数据，种子分别为 seed、seed+1、seed+2"""
    out_dir = Path(out_dir)
    header = cfg.header()
    names = class_names(cfg.num_classes)
    summary = {}
    for offset, (split, count) in enumerate(split_sizes(cfg.num_clips).items()):
        clips = synth_dataset(cfg, num_clips=count, seed=cfg.seed + offset, prefix=split)
        path = write_dataset(clips, out_dir / SPLIT_FILES[split], header)
        hist = class_histogram(clips, cfg.num_classes)
        logger.info(f"{split}: {count} 个片段, 类别分布 {hist}")
        summary[split] = {
            "path": str(path),
            "clips": count,
            "seed": cfg.seed + offset,
            "histogram": {names[k]: n for k, n in hist.items() if k >= 0},
        }
    return summary


def synth_command(args, run: RunConfig) -> Path:
    """处理 synth 子命令"""
    out_dir = Path(args.out or "data")
    splits = synth_splits(run.synth, out_dir)
    header = run.synth.header()
    return write_report(out_dir / "synth_report.json", "synth", {
        "splits": splits,
        "header": {"d_frame": header.d_frame, "d_app": header.d_app, "d_sp": header.d_sp, "k": header.k},
    }, run)
