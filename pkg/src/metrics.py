"""
EventAttn - Metrics
平均精度（AP）、片段分类评估与统一的评估报告
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from config import NEGATIVE_LABEL, class_names
from errors import EmptyInputError, UndefinedAPError, ValidationError
from features import Clip
from model import EncodedClip, ModelParams, encode_clip, forward

logger = logging.getLogger("eventattn")


@dataclass
class RankedList:
    """(分数, 是否正例) 列表"""
    scores: np.ndarray
    positives: np.ndarray

    @classmethod
    def from_items(cls, items: Sequence[tuple[float, bool]]) -> "RankedList":
        scores = np.array([float(s) for s, _ in items], dtype=np.float64)
        positives = np.array([bool(p) for _, p in items], dtype=bool)
        return cls(scores, positives)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.positives = np.asarray(self.positives, dtype=bool)
        if self.scores.shape != self.positives.shape or self.scores.ndim != 1:
            raise ValidationError("scores 与 positives 形状不一致")

    def __len__(self) -> int:
        return self.scores.shape[0]


def average_precision(ranked: RankedList) -> float:
    """按分数降序（同分按输入下标稳定排序），对每个正例取该位置的精度再求平均"""
    n_pos = int(ranked.positives.sum())
    if n_pos == 0:
        raise UndefinedAPError("列表中没有正例，AP 无定义")
    order = np.argsort(-ranked.scores, kind="stable")
    hits = ranked.positives[order]
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, n_pos + 1) / ranks
    return float(precisions.mean())


@dataclass
class EvalReport:
    """per_class: 类别名 -> AP；skipped: 无正例而跳过的类别名"""
    per_class: dict[str, float]
    map: float | None
    skipped: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        report = {"per_class": dict(self.per_class), "map": self.map, "skipped": list(self.skipped)}
        report.update(self.extra)
        return report


def rank_eval(scores: np.ndarray, labels: Sequence[int], num_classes: int,
              names: list[str] | None = None) -> EvalReport:
    """对每个类 k，按 scores[:, k] 排序，label == k 为正例"""
    labels = np.asarray(labels)
    return ap_table(scores, labels[:, None] == np.arange(num_classes)[None, :], names)


def ap_table(scores: np.ndarray, positives: np.ndarray, names: list[str] | None = None) -> EvalReport:
    """positives[i, k] 表示样本 i 是否为类 k 的正例；没有正例的类跳过并记录"""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape[0] == 0:
        raise EmptyInputError("评估样本为空")
    num_classes = positives.shape[1]
    if scores.shape[0] != positives.shape[0] or scores.shape[1] < num_classes:
        raise ValidationError(f"分数矩阵 {scores.shape} 与正例矩阵 {positives.shape} 不符")
    names = names or class_names(num_classes)
    per_class, skipped = {}, []
    for k in range(num_classes):
        try:
            per_class[names[k]] = average_precision(RankedList(scores[:, k], positives[:, k]))
        except UndefinedAPError:
            skipped.append(names[k])
            logger.warning(f"类别 {names[k]} 没有正例，已跳过")
    if not per_class:
        raise UndefinedAPError("所有类别都没有正例，mAP 无定义")
    return EvalReport(per_class=per_class, map=float(np.mean(list(per_class.values()))), skipped=skipped)


Scorer = Callable[[Clip | EncodedClip], np.ndarray]


def model_scorer(params: ModelParams) -> Scorer:
    """片段 -> 片段级分数"""
    def score(clip: Clip | EncodedClip) -> np.ndarray:
        enc = clip if isinstance(clip, EncodedClip) else encode_clip(clip, params.config)
        return forward(enc, params).clip_scores
    return score


def score_clips(scorer: Scorer, clips: Sequence[Clip | EncodedClip]) -> np.ndarray:
    return np.stack([np.asarray(scorer(c), dtype=np.float64) for c in clips])


def classify_eval(scorer: Scorer | ModelParams, clips: Sequence[Clip | EncodedClip],
                  num_classes: int | None = None) -> EvalReport:
    """片段分类 mAP：片段不得含 NEGATIVE"""
    if isinstance(scorer, ModelParams):
        num_classes = scorer.config.num_classes if num_classes is None else num_classes
        scorer = model_scorer(scorer)
    if num_classes is None:
        raise ValidationError("classify_eval 需要类别数")
    if not clips:
        raise EmptyInputError("评估片段为空")
    labels = [c.label for c in clips]
    if NEGATIVE_LABEL in labels:
        raise ValidationError("分类评估的片段不能含 NEGATIVE 标签")
    report = rank_eval(score_clips(scorer, clips), labels, num_classes)
    logger.info(f"分类评估: {len(clips)} 个片段, mAP={report.map:.4f}")
    return report
