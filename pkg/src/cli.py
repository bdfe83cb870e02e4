#!/usr/bin/env python3
"""
EventAttn - Command Line

多人事件识别流水线：synth / track / train / eval-classify / detect / eval-attention / heatmap。
stdout 只输出产物路径，诊断信息走 stderr；退出码见 config.ERROR_CODES。
"""

import argparse
import logging
import sys

from config import ERROR_CODES
from errors import EventAttnError
from run_config import load_run_config
from commands import (
    detect_command, emit_path, eval_attention_command, eval_classify_command,
    heatmap_command, synth_command, track_command, train_command,
)

logger = logging.getLogger("eventattn")

COMMANDS = {
    "synth": synth_command,
    "track": track_command,
    "train": train_command,
    "eval-classify": eval_classify_command,
    "detect": detect_command,
    "eval-attention": eval_attention_command,
    "heatmap": heatmap_command,
}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=str, default=None,
                        help="YAML run config (default: configs/default.yaml)")
    common.add_argument("--seed", type=int, default=None, help="Override synth/train seed")
    common.add_argument("--workers", type=int, default=None, help="Worker threads for per-clip gradients")
    common.add_argument("--mode", type=str, default=None,
                        help="Model mode: frame-only | only-player | avg-player | attn-no-track | attn-track")
    common.add_argument("--out", "-o", type=str, default=None, help="Output path (file or directory)")
    common.add_argument("--steps", type=int, default=None, help="Override train.max_steps")
    common.add_argument("--debug", "-d", action="store_true", help="Enable debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subparser per pipeline stage."""
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="eventattn", description="Attention-based multi-person event recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="Write synthetic train/val/test splits")

    p = sub.add_parser("track", parents=[common], help="Link detections into tracks")
    p.add_argument("--data", type=str, help="Input dataset (JSONL)")

    p = sub.add_parser("train", parents=[common], help="Train a model")
    p.add_argument("--data", type=str, help="Dataset directory with train/val/test.jsonl")
    p.add_argument("--sweep", action="store_true", help="Train and compare all five modes")
    p.add_argument("--test", action="store_true", help="Evaluate the selected checkpoint on the test split")

    for name, help_text in (("eval-classify", "Clip classification mAP"),
                            ("eval-attention", "Shooter identification mAP and per-frame attention")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--checkpoint", type=str, help="Checkpoint directory")
        p.add_argument("--data", type=str, help="Dataset (JSONL)")

    sub.add_parser("detect", parents=[common], help="Sliding-window detection on synthetic timelines")

    p = sub.add_parser("heatmap", parents=[common], help="Court-aligned attention heatmaps (CSV)")
    p.add_argument("--checkpoint", type=str, help="Checkpoint directory")
    p.add_argument("--data", type=str, help="Dataset (JSONL)")
    p.add_argument("--homographies", type=str, default=None, help="YAML/JSON point correspondences per clip")
    p.add_argument("--grid", type=int, default=None, help="Grid size G (G×G bins)")
    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s [%(levelname)s] %(message)s",
        stream=sys.stderr,
    )
    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.debug("Debug mode enabled")

    try:
        run = load_run_config(args.config, seed=args.seed, workers=args.workers, mode=args.mode, steps=args.steps)
        path = COMMANDS[args.command](args, run)
    except EventAttnError as e:
        logger.error(f"[{e.code}] {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"[IO_ERROR] {e}")
        return ERROR_CODES["IO_ERROR"]
    except Exception as e:
        logger.exception(f"未预期的错误: {e}")
        return ERROR_CODES["RUNTIME_ERROR"]

    emit_path(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
