"""
EventAttn - Configuration
配置常量、错误码与运行配置加载
"""

import logging
from dataclasses import asdict, fields, is_dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

logger = logging.getLogger("eventattn")

# 目录配置 (src 在项目根目录下，所以需要 parent.parent)
PROJECT_ROOT = Path(__file__).parent.parent
CONFIG_DIR = PROJECT_ROOT / "configs"
DEFAULT_CONFIG_FILE = CONFIG_DIR / "default.yaml"

# 数据集文件格式
DATASET_VERSION = 1
NEGATIVE_LABEL = -1
SPLIT_FILES = {
    "train": "train.jsonl",
    "val": "val.jsonl",
    "test": "test.jsonl",
}
# 训练/验证/测试视频数量比例 212:12:33
SPLIT_RATIOS = (212, 12, 33)

# 特征维度（参考规模）
REFERENCE_D_APP = 1365
REFERENCE_D_PLAYER = 2805
DEFAULT_PYRAMID_LEVELS = (32, 16, 8, 4)

# 时间设置
DEFAULT_FPS = 6.0
EVENT_DURATION_S = 4.0
DETECTION_STRIDE_S = 2.0
MIN_POSITIVE_OVERLAP_S = 1.0

# 模型默认值
DEFAULT_HIDDEN_DIM = 256
DEFAULT_EMBED_DIM = 256
DEFAULT_PHI_HIDDEN = 128
DEFAULT_TAU = 0.25
RECURRENT_INIT_RANGE = 0.08

# 优化器默认值
DEFAULT_BASE_LR = 0.005
DEFAULT_DECAY_FACTOR = 0.1
DEFAULT_DECAY_EVERY = 10000
DEFAULT_RHO = 0.9
DEFAULT_EPSILON = 1e-8
DEFAULT_CLIP_NORM = 5.0

# 跟踪默认值
DEFAULT_ACCEPT_THRESHOLD = 0.7
DEFAULT_MAX_GAP = 2
DEFAULT_GATE_RADIUS = 0.2
DEFAULT_COST_WEIGHTS = (1.0, 0.2)

# 检查点
CHECKPOINT_VERSION = 1
CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_BLOB = "params.bin"

# 篮球事件类别名（11 类）
EVENT_CLASS_NAMES = [
    "3-point succ.",
    "3-point fail.",
    "free-throw succ.",
    "free-throw fail.",
    "layup succ.",
    "layup fail.",
    "2-point succ.",
    "2-point fail.",
    "slam dunk succ.",
    "slam dunk fail.",
    "steal",
]

# 错误码定义（code -> 进程退出码）
ERROR_CODES = {
    "RUNTIME_ERROR": 1,
    "CONFIG_ERROR": 2,
    "IO_ERROR": 3,
    "PARSE_ERROR": 4,
    "VALIDATION_ERROR": 4,
    "DIMENSION_ERROR": 4,
    "EMPTY_INPUT": 4,
    "PARAMETER_ERROR": 4,
    "TRAINING_ERROR": 5,
    "CHECKPOINT_CORRUPT": 6,
    "CHECKPOINT_VERSION": 6,
    "CHECKPOINT_SHAPE": 6,
    "CHECKPOINT_TRUNCATED": 6,
    "UNDEFINED_AP": 7,
    "RANK_DEFICIENT": 7,
}

# 运行配置的顶层节
CONFIG_SECTIONS = ("synth", "model", "train", "tracker", "eval", "detect")


def class_names(num_classes: int) -> list[str]:
    """取前 K 个事件类别名，不足时补 class_{k}"""
    names = EVENT_CLASS_NAMES[:num_classes]
    names += [f"class_{k}" for k in range(len(names), num_classes)]
    return names


def load_config_yaml(path: Path | None) -> dict:
    """加载 YAML 运行配置，文件缺失或为空时返回空字典"""
    from errors import ConfigError

    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"配置文件解析失败: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("配置文件顶层必须是映射")
    unknown = set(data) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"未知配置节: {sorted(unknown)}")
    return data


def build_section(cls, values: dict | None, section: str):
    """用配置节构造 dataclass，拒绝未知键"""
    from errors import ConfigError

    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"配置节 {section} 含未知键: {sorted(unknown)}")
    for key, value in list(values.items()):
        # YAML 列表 -> 元组（dataclass 默认值都用元组）
        if isinstance(value, list):
            values[key] = tuple(value)
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"配置节 {section} 无效: {e}") from e


def to_plain(obj):
    """dataclass / 元组 / Enum 转为可 JSON 序列化的结构"""
    if is_dataclass(obj):
        return {k: to_plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj
