"""
EventAttn - Commands
子命令处理器
"""

from .report import build_report, write_report, emit_path
from .synth import synth_command
from .track import track_command
from .train import train_command
from .evaluate import eval_classify_command, eval_attention_command, heatmap_command
from .detect import detect_command

__all__ = [
    'build_report', 'write_report', 'emit_path',
    'synth_command', 'track_command', 'train_command',
    'eval_classify_command', 'eval_attention_command', 'heatmap_command',
    'detect_command',
]
