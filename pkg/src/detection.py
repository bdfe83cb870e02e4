"""
EventAttn - Detection
未剪辑时间线上的 4 秒滑动窗口：窗口生成、重叠标注、窗口样本物化与检测 mAP
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from config import DETECTION_STRIDE_S, EVENT_DURATION_S, MIN_POSITIVE_OVERLAP_S, NEGATIVE_LABEL
from errors import ConfigError, EmptyInputError, ValidationError
from features import Clip, Timeline, TimelineEvent
from metrics import EvalReport, Scorer, ap_table, model_scorer
from model import ModelParams
from tracker import TrackerParams, link_tracks

logger = logging.getLogger("eventattn")

# 浮点边界容差
_EPS = 1e-9


@dataclass
class DetectConfig:
    """检测实验配置：训练/验证/测试各一条合成时间线"""
    train_duration_s: float = 600.0
    train_events: int = 60
    val_duration_s: float = 120.0
    val_events: int = 12
    test_duration_s: float = 600.0
    test_events: int = 60
    stride: float = DETECTION_STRIDE_S

    def __post_init__(self):
        if self.stride <= 0:
            raise ConfigError(f"步长必须为正: {self.stride}")
        for name in ("train", "val", "test"):
            if getattr(self, f"{name}_duration_s") < EVENT_DURATION_S:
                raise ConfigError(f"{name} 时间线短于一个窗口")


@dataclass
class DetectionWindow:
    """一个检测窗口及其分数与真值正例类别"""
    start_time: float
    duration: float = EVENT_DURATION_S
    scores: np.ndarray | None = None
    positive_classes: tuple[int, ...] = ()
    overlaps: dict[int, float] = field(default_factory=dict)

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    @property
    def is_negative(self) -> bool:
        return not self.positive_classes


def window_count(duration_s: float, stride: float = DETECTION_STRIDE_S,
                 length: float = EVENT_DURATION_S) -> int:
    """floor((L − 4) / stride) + 1"""
    if duration_s + _EPS < length:
        return 0
    return int(math.floor((duration_s - length) / stride + _EPS)) + 1


def window_starts(duration_s: float, stride: float = DETECTION_STRIDE_S,
                  length: float = EVENT_DURATION_S) -> list[float]:
    """窗口起点 0, stride, 2·stride, …（start + length ≤ duration）"""
    if stride <= 0:
        raise ValidationError(f"步长必须为正: {stride}")
    return [i * stride for i in range(window_count(duration_s, stride, length))]


def interval_overlap(a0: float, a1: float, b0: float, b1: float) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def label_window(start: float, events: Sequence[TimelineEvent],
                 length: float = EVENT_DURATION_S) -> tuple[tuple[int, ...], dict[int, float]]:
    """返回 (正例类别, 各类最大重叠秒数)；重叠超过 1 秒才算正例"""
    overlaps: dict[int, float] = {}
    for event in events:
        ov = interval_overlap(start, start + length, event.start_time, event.end_time)
        if ov > overlaps.get(event.label, 0.0):
            overlaps[event.label] = ov
    positives = tuple(sorted(k for k, ov in overlaps.items() if ov > MIN_POSITIVE_OVERLAP_S + _EPS))
    return positives, overlaps


def window_clip(timeline: Timeline, start: float, length: float = EVENT_DURATION_S) -> Clip:
    """单个窗口 -> 带标签片段：正例取重叠最大的类，其余为 NEGATIVE"""
    positives, overlaps = label_window(start, timeline.events, length)
    label = max(positives, key=lambda k: (overlaps[k], -k)) if positives else NEGATIVE_LABEL
    first = int(round(start * timeline.fps))
    count = int(round(length * timeline.fps))
    frames = [replace(f, index=i) for i, f in enumerate(timeline.frames[first:first + count])]
    return Clip(frames=frames, label=label, fps=timeline.fps, clip_id=f"{timeline.timeline_id}@{start:.1f}")


def window_clips(timeline: Timeline, stride: float = DETECTION_STRIDE_S,
                 length: float = EVENT_DURATION_S) -> list[Clip]:
    """把每个窗口物化为带标签的片段（检测训练的正负样本）"""
    clips = [window_clip(timeline, start, length) for start in window_starts(timeline.duration, stride, length)]
    negatives = sum(1 for c in clips if c.is_negative)
    logger.info(f"时间线 {timeline.timeline_id}: {len(clips)} 个窗口, 其中负例 {negatives} 个")
    return clips


def sliding_detect(timeline: Timeline, model: ModelParams | Scorer, stride: float = DETECTION_STRIDE_S,
                   tracker_params: TrackerParams | None = None) -> list[DetectionWindow]:
    """对时间线上每个窗口打分；attn-track 模型会先对窗口内检测做跟踪"""
    if timeline.duration + _EPS < EVENT_DURATION_S:
        raise ValidationError(f"时间线时长 {timeline.duration:.2f}s 短于一个窗口")
    needs_tracks = isinstance(model, ModelParams) and model.config.mode.uses_tracks
    scorer = model_scorer(model) if isinstance(model, ModelParams) else model
    windows = []
    for start in window_starts(timeline.duration, stride):
        clip = window_clip(timeline, start)
        if needs_tracks:
            _, clip = link_tracks(clip, tracker_params)
        positives, overlaps = label_window(start, timeline.events)
        windows.append(DetectionWindow(
            start_time=start,
            scores=np.asarray(scorer(clip), dtype=np.float64),
            positive_classes=positives,
            overlaps=overlaps,
        ))
    negatives = sum(1 for w in windows if w.is_negative)
    logger.info(f"滑动检测 {timeline.timeline_id}: {len(windows)} 个窗口, 负例 {negatives} 个")
    return windows


def detect_eval(windows: Sequence[DetectionWindow], num_classes: int) -> EvalReport:
    """各类 AP（所有窗口合在一起排序），报告负例窗口数"""
    if not windows:
        raise EmptyInputError("没有检测窗口")
    scores = np.stack([w.scores[:num_classes] for w in windows])
    # 一个窗口可能同时是多类正例
    positives = np.zeros((len(windows), num_classes), dtype=bool)
    for i, w in enumerate(windows):
        for k in w.positive_classes:
            positives[i, k] = True
    report = ap_table(scores, positives)
    negatives = sum(1 for w in windows if w.is_negative)
    report.extra = {"windows": len(windows), "negative_windows": negatives}
    logger.info(f"检测评估: {len(windows)} 个窗口 (负例 {negatives}), mAP={report.map:.4f}")
    return report
