"""
EventAttn - Run Config
YAML 运行配置：synth / model / train / tracker / eval / detect 六个节，命令行参数覆盖文件值
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from attention_eval import EvalConfig
from config import DEFAULT_CONFIG_FILE, build_section, load_config_yaml, to_plain
from detection import DetectConfig
from features import SynthConfig
from model import ModelConfig
from tracker import TrackerParams
from training import TrainConfig

logger = logging.getLogger("eventattn")


@dataclass
class RunConfig:
    """一次运行的完整配置"""
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    eval: EvalConfig = field(default_factory=EvalConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)

    def to_dict(self) -> dict:
        return to_plain(self)


_SECTIONS = {
    "synth": SynthConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "tracker": TrackerParams,
    "eval": EvalConfig,
    "detect": DetectConfig,
}


def load_run_config(path: Path | None = None, seed: int | None = None, workers: int | None = None,
                    mode: str | None = None, steps: int | None = None) -> RunConfig:
    """读取 YAML 并应用命令行覆盖；path 为 None 时使用 configs/default.yaml（若存在）"""
    if path is None and DEFAULT_CONFIG_FILE.exists():
        path = DEFAULT_CONFIG_FILE
    raw = load_config_yaml(path)
    run = RunConfig(**{name: build_section(cls, raw.get(name), name) for name, cls in _SECTIONS.items()})

    if seed is not None:
        run.synth = replace(run.synth, seed=seed)
        run.train = replace(run.train, seed=seed)
    if workers is not None:
        run.train = replace(run.train, workers=workers)
    if mode is not None:
        run.model = replace(run.model, mode=mode)
        run.train = replace(run.train, mode=None)
    if steps is not None:
        run.train = replace(run.train, max_steps=steps)

    logger.info(f"运行配置 ({path or '内置默认'}): {json.dumps(run.to_dict(), ensure_ascii=False)}")
    return run
