"""
EventAttn - File Operations
数据集 JSONL 读写、评估报告与 CSV 输出
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np

from config import DATASET_VERSION, DEFAULT_PYRAMID_LEVELS, NEGATIVE_LABEL
from errors import DatasetParseError, DimensionError, ValidationError
from features import BoundingBox, Clip, DatasetHeader, Detection, Frame

logger = logging.getLogger("eventattn")


def _f32_list(values) -> list[float]:
    """float32 数组转为可精确往返的 JSON 数字"""
    return np.asarray(values, dtype=np.float32).tolist()


def header_to_dict(header: DatasetHeader) -> dict:
    return {
        "version": header.version,
        "d_frame": header.d_frame,
        "d_app": header.d_app,
        "d_sp": header.d_sp,
        "k": header.k,
        "fps": header.fps,
        "levels": list(header.levels),
    }


def clip_to_dict(clip: Clip) -> dict:
    """片段 -> JSONL 对象"""
    frames = []
    for frame in clip.frames:
        frames.append({
            "feature": _f32_list(frame.frame_feature),
            "ball": list(frame.ball_position) if frame.ball_position is not None else None,
            "dets": [
                {
                    "box": det.box.as_list(),
                    "conf": float(np.float32(det.confidence)),
                    "app": _f32_list(det.appearance),
                    "track": det.track_id,
                    "gt_player": det.gt_player_id,
                }
                for det in frame.detections
            ],
        })
    return {"clip_id": clip.clip_id, "label": clip.label, "frames": frames}


def write_dataset(clips: list[Clip], path: Path, header: DatasetHeader) -> Path:
    """写出数据集：第一行文件头，之后每行一个片段"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(header_to_dict(header), separators=(",", ":")) + "\n")
        for clip in clips:
            f.write(json.dumps(clip_to_dict(clip), separators=(",", ":"), ensure_ascii=False) + "\n")
    logger.info(f"数据集已写出: {path} ({len(clips)} 个片段)")
    return path


def _int_field(value, what: str, line_no: int) -> int:
    """JSON 整数（拒绝 bool、浮点与字符串）"""
    if isinstance(value, bool) or not isinstance(value, int):
        raise DatasetParseError(f"{what} 必须是整数: {value!r}", line=line_no)
    return value


def _number_list(value, what: str, line_no: int, length: int | None = None) -> list[float]:
    if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise DatasetParseError(f"{what} 必须是数值数组: {value!r}", line=line_no)
    if length is not None and len(value) != length:
        raise DatasetParseError(f"{what} 应有 {length} 个数，实际 {len(value)}", line=line_no)
    return [float(v) for v in value]


def _list_field(obj: dict, key: str, what: str, line_no: int) -> list:
    if key not in obj:
        raise DatasetParseError(f"{what}缺少字段 {key}", line=line_no)
    if not isinstance(obj[key], list):
        raise DatasetParseError(f"{what}的 {key} 必须是数组", line=line_no)
    return obj[key]


def _parse_header(obj, line_no: int) -> DatasetHeader:
    if not isinstance(obj, dict):
        raise DatasetParseError("文件头必须是对象", line=line_no)
    missing = [k for k in ("version", "d_frame", "d_app", "d_sp", "k", "fps") if k not in obj]
    if missing:
        raise DatasetParseError(f"文件头缺少字段: {missing}", line=line_no)
    if obj["version"] != DATASET_VERSION:
        raise DatasetParseError(f"不支持的数据集版本: {obj['version']}", line=line_no)
    dims = {k: _int_field(obj[k], f"文件头 {k}", line_no) for k in ("d_frame", "d_app", "d_sp", "k")}
    fps = _number_list([obj["fps"]], "文件头 fps", line_no)[0]
    if "levels" in obj:
        levels = tuple(_int_field(L, "文件头 levels", line_no) for L in _list_field(obj, "levels", "文件头", line_no))
    elif dims["d_sp"] == sum(L * L for L in DEFAULT_PYRAMID_LEVELS):
        levels = DEFAULT_PYRAMID_LEVELS
    else:
        raise DatasetParseError(
            f"文件头没有 levels，且 d_sp={dims['d_sp']} 与默认金字塔 {DEFAULT_PYRAMID_LEVELS} 不符", line=line_no)
    try:
        return DatasetHeader(fps=fps, levels=levels, version=DATASET_VERSION, **dims)
    except DimensionError as e:
        raise ValidationError(f"第 {line_no} 行: {e}") from e


def _parse_detection(raw_det, header: DatasetHeader, t: int, line_no: int) -> Detection:
    if not isinstance(raw_det, dict):
        raise DatasetParseError(f"第 {t} 帧检测必须是对象", line=line_no)
    for key in ("box", "app", "conf"):
        if key not in raw_det:
            raise DatasetParseError(f"第 {t} 帧检测缺少字段 {key}", line=line_no)
    coords = _number_list(raw_det["box"], f"第 {t} 帧检测框", line_no, length=4)
    try:
        box = BoundingBox(*coords)
    except ValidationError as e:
        raise DatasetParseError(f"第 {t} 帧检测框无效: {e}", line=line_no) from e
    appearance = np.asarray(_number_list(raw_det["app"], f"第 {t} 帧外观特征", line_no), dtype=np.float32)
    if appearance.shape != (header.d_app,):
        raise DimensionError(f"第 {line_no} 行第 {t} 帧外观维度不符", expected=header.d_app, actual=appearance.shape)
    conf = _number_list([raw_det["conf"]], f"第 {t} 帧置信度", line_no)[0]
    track, gt = raw_det.get("track"), raw_det.get("gt_player")
    return Detection(
        box=box, appearance=appearance, confidence=conf,
        track_id=None if track is None else _int_field(track, "track", line_no),
        gt_player_id=None if gt is None else _int_field(gt, "gt_player", line_no),
    )


def _parse_frame(raw, header: DatasetHeader, t: int, line_no: int) -> Frame:
    if not isinstance(raw, dict):
        raise DatasetParseError(f"第 {t} 帧必须是对象", line=line_no)
    if "feature" not in raw:
        raise DatasetParseError(f"第 {t} 帧缺少字段 feature", line=line_no)
    feature = np.asarray(_number_list(raw["feature"], f"第 {t} 帧特征", line_no), dtype=np.float32)
    if feature.shape != (header.d_frame,):
        raise DimensionError(f"第 {line_no} 行第 {t} 帧特征维度不符", expected=header.d_frame, actual=feature.shape)
    ball = raw.get("ball")
    if ball is not None:
        ball = tuple(_number_list(ball, f"第 {t} 帧球位置", line_no, length=2))
    dets = [_parse_detection(d, header, t, line_no) for d in _list_field(raw, "dets", f"第 {t} 帧", line_no)]
    return Frame(index=t, frame_feature=feature, detections=dets, ball_position=ball)


def _parse_clip(obj, header: DatasetHeader, line_no: int) -> Clip:
    """解析单个片段对象，结构错误 -> DatasetParseError，维度不符 -> DimensionError"""
    if not isinstance(obj, dict):
        raise DatasetParseError("片段必须是对象", line=line_no)
    for key in ("clip_id", "label"):
        if key not in obj:
            raise DatasetParseError(f"片段缺少字段 {key}", line=line_no)
    label = _int_field(obj["label"], "label", line_no)
    if not (label == NEGATIVE_LABEL or 0 <= label < header.k):
        raise ValidationError(f"第 {line_no} 行: 标签越界 {label}（K={header.k}）")
    raw_frames = _list_field(obj, "frames", "片段", line_no)
    frames = [_parse_frame(raw, header, t, line_no) for t, raw in enumerate(raw_frames)]
    return Clip(frames=frames, label=label, fps=header.fps, clip_id=str(obj["clip_id"]))


def read_dataset_with_header(path: Path) -> tuple[DatasetHeader, list[Clip]]:
    """读取数据集并返回 (文件头, 片段列表)"""
    path = Path(path)
    clips = []
    header = None
    with open(path, 'rb') as f:
        for line_no, raw_line in enumerate(f, start=1):
            try:
                line = raw_line.decode('utf-8')
            except UnicodeDecodeError as e:
                raise DatasetParseError(f"不是合法的 UTF-8: {e.reason}", line=line_no) from e
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(f"JSON 解析失败: {e.msg}", line=line_no) from e
            if header is None:
                header = _parse_header(obj, line_no)
            else:
                clips.append(_parse_clip(obj, header, line_no))
    if header is None:
        raise DatasetParseError("文件为空，缺少文件头", line=1)
    logger.info(f"数据集已读取: {path} ({len(clips)} 个片段)")
    return header, clips


def read_dataset(path: Path) -> list[Clip]:
    """读取数据集片段"""
    return read_dataset_with_header(path)[1]


def write_json_report(report: dict, path: Path) -> Path:
    """写出 JSON 报告"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report, f, ensure_ascii=False, indent=2)
    logger.info(f"报告已写出: {path}")
    return path


def write_csv(rows: list[dict], path: Path, columns: list[str]) -> Path:
    """写出 CSV（带表头）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    logger.info(f"CSV 已写出: {path} ({len(rows)} 行)")
    return path


def write_jsonl(records: list[dict], path: Path) -> Path:
    """每行一个 JSON 记录"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, separators=(",", ":"), ensure_ascii=False) + "\n")
    return path
