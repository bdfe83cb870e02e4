"""
EventAttn - Checkpoint
检查点目录：manifest.json（UTF-8 JSON）+ params.bin（小端 float32，按清单顺序拼接）
"""

import json
import logging
from pathlib import Path

import numpy as np

from config import CHECKPOINT_BLOB, CHECKPOINT_MANIFEST, CHECKPOINT_VERSION, to_plain
from errors import (
    CheckpointError, CheckpointVersionError, ConfigError, ShapeMismatchError, TruncatedCheckpointError,
)
from model import ModelConfig, ModelParams, param_shapes

logger = logging.getLogger("eventattn")

_BLOB_DTYPE = np.dtype("<f4")


def save_checkpoint(params: ModelParams, meta: dict, path: Path) -> Path:
    """写出检查点目录

    meta 可含 train_config、step、history，其余键原样写入 extra。
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = []
    chunks = []
    offset = 0
    for name, value in params.tensors.items():
        data = np.ascontiguousarray(value, dtype=_BLOB_DTYPE).tobytes()
        tensors.append({"name": name, "shape": list(value.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)

    meta = dict(meta or {})
    manifest = {
        "version": CHECKPOINT_VERSION,
        "model_config": to_plain(params.config),
        "train_config": to_plain(meta.pop("train_config", None)),
        "step": int(meta.pop("step", 0)),
        "history": to_plain(meta.pop("history", [])),
        "extra": to_plain(meta),
        "tensors": tensors,
        "blob_bytes": offset,
    }
    with open(path / CHECKPOINT_BLOB, 'wb') as f:
        f.write(b"".join(chunks))
    with open(path / CHECKPOINT_MANIFEST, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2)
    logger.info(f"检查点已保存: {path} (step={manifest['step']}, {len(tensors)} 个张量, {offset} 字节)")
    return path


def _model_config_from(raw: dict) -> ModelConfig:
    try:
        return ModelConfig(**{**raw, "levels": tuple(raw.get("levels", ()))})
    except (TypeError, ValueError, ConfigError) as e:
        raise CheckpointError(f"清单中的 model_config 无效: {e}") from e


def _tensor_entries(manifest: dict) -> list[dict]:
    """校验张量表：每项含 name（字符串）、shape（非负整数列表）、offset（非负整数）"""
    entries = manifest.get("tensors")
    if not isinstance(entries, list):
        raise CheckpointError("清单缺少张量表 tensors")
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or not {"name", "shape", "offset"} <= set(entry):
            raise CheckpointError(f"张量表第 {i} 项缺少 name / shape / offset")
        shape, offset = entry["shape"], entry["offset"]
        if not isinstance(entry["name"], str) or not isinstance(shape, list) or not all(
                type(d) is int and d >= 0 for d in shape) or type(offset) is not int or offset < 0:
            raise CheckpointError(f"张量表第 {i} 项格式无效: {entry}")
    return entries


def load_checkpoint(path: Path) -> tuple[ModelParams, dict]:
    """读取检查点，校验版本、形状表与 blob 长度"""
    path = Path(path)
    try:
        with open(path / CHECKPOINT_MANIFEST, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"清单解析失败: {e}") from e
    if not isinstance(manifest, dict):
        raise CheckpointError("清单顶层必须是对象")

    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"检查点版本 {version} 与当前版本 {CHECKPOINT_VERSION} 不符")

    raw_config = manifest.get("model_config")
    if not isinstance(raw_config, dict):
        raise CheckpointError("清单缺少 model_config")
    cfg = _model_config_from(raw_config)
    try:
        expected = param_shapes(cfg)
    except ConfigError as e:
        raise CheckpointError(f"清单中的 model_config 无效: {e}") from e
    entries = _tensor_entries(manifest)
    listed = {e["name"]: tuple(e["shape"]) for e in entries}
    if list(listed) != list(expected):
        raise ShapeMismatchError(f"张量表与模型配置不符: 期望 {list(expected)}，实际 {list(listed)}")
    for name, shape in expected.items():
        if listed[name] != shape:
            raise ShapeMismatchError(f"张量 {name} 形状 {listed[name]} 与模型配置 {shape} 不符")

    with open(path / CHECKPOINT_BLOB, 'rb') as f:
        blob = f.read()
    needed = sum(int(np.prod(s)) for s in expected.values()) * _BLOB_DTYPE.itemsize
    if len(blob) < needed:
        raise TruncatedCheckpointError(f"参数文件被截断: {len(blob)} 字节，需要 {needed} 字节")
    if len(blob) != needed or manifest.get("blob_bytes") != needed:
        raise CheckpointError(f"参数文件长度 {len(blob)} 与清单 {manifest.get('blob_bytes')} 不一致")

    tensors = {}
    for entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        try:
            data = np.frombuffer(blob, dtype=_BLOB_DTYPE, count=count, offset=int(entry["offset"]))
        except ValueError as e:
            raise CheckpointError(f"张量 {entry['name']} 偏移无效: {e}") from e
        tensors[entry["name"]] = data.astype(np.float32).reshape(shape)
    params = ModelParams(config=cfg, tensors=tensors)
    params.validate()

    extra = manifest.get("extra")
    meta = {
        "train_config": manifest.get("train_config"),
        "step": manifest.get("step", 0),
        "history": manifest.get("history", []),
        **(extra if isinstance(extra, dict) else {}),
    }
    logger.info(f"检查点已加载: {path} (mode={cfg.mode.value}, step={meta['step']})")
    return params, meta
