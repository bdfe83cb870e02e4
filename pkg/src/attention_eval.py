"""
EventAttn - Attention Evaluation
注意力评估：射手识别 AP、单应性（DLT）、球场对齐热力图
"""

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from config import class_names
from errors import ConfigError, EmptyInputError, RankDeficiencyError, UndefinedAPError, ValidationError
from features import Clip, Frame
from metrics import EvalReport, RankedList, average_precision
from model import ForwardTrace

logger = logging.getLogger("eventattn")

DEFAULT_PHASES = 3
DEFAULT_GRID = 10


@dataclass
class EvalConfig:
    """注意力评估与热力图配置"""
    grid: int = DEFAULT_GRID
    phases: int = DEFAULT_PHASES

    def __post_init__(self):
        if self.grid < 1 or self.phases < 1:
            raise ConfigError(f"grid 与 phases 必须 ≥ 1: {self.grid}, {self.phases}")


def key_player_index(frame: Frame) -> int | None:
    """框中心离球最近的检测下标；无球或无检测时为 None"""
    if frame.ball_position is None or not frame.detections:
        return None
    bx, by = frame.ball_position
    centers = np.array([d.box.center for d in frame.detections])
    return int(np.argmin(np.hypot(centers[:, 0] - bx, centers[:, 1] - by)))


def expected_uniform_ap(n: int) -> float:
    """均匀随机排序下单正例 AP 的期望：Σ_{r=1..N}(1/r) / N"""
    if n < 1:
        raise EmptyInputError("检测数必须 ≥ 1")
    return float(np.sum(1.0 / np.arange(1, n + 1)) / n)


def _check_trace(trace: ForwardTrace, clip: Clip) -> None:
    if trace.gammas is None:
        raise ValidationError(f"片段 {clip.clip_id} 的前向结果没有注意力权重（该模式不做注意力）")
    if len(trace.gammas) != clip.num_frames:
        raise ValidationError(f"片段 {clip.clip_id} 的注意力帧数与片段不符")


def shooter_eval(traces: Sequence[ForwardTrace], clips: Sequence[Clip], num_classes: int) -> EvalReport:
    """逐帧以 γ 对检测排序，最近球的检测为唯一正例；每类取帧 AP 的平均

    同时报告均匀随机 γ 的解析期望作为机会基线。
    """
    if len(traces) != len(clips):
        raise ValidationError(f"前向结果数 {len(traces)} 与片段数 {len(clips)} 不符")
    names = class_names(num_classes)
    frame_aps: dict[int, list[float]] = {k: [] for k in range(num_classes)}
    chance: dict[int, list[float]] = {k: [] for k in range(num_classes)}
    for trace, clip in zip(traces, clips):
        if not 0 <= clip.label < num_classes:
            continue
        _check_trace(trace, clip)
        for frame, gamma in zip(clip.frames, trace.gammas):
            key = key_player_index(frame)
            if key is None:
                continue
            positives = np.zeros(len(frame.detections), dtype=bool)
            positives[key] = True
            frame_aps[clip.label].append(average_precision(RankedList(gamma, positives)))
            chance[clip.label].append(expected_uniform_ap(len(frame.detections)))

    per_class, chance_per_class, skipped = {}, {}, []
    for k in range(num_classes):
        if frame_aps[k]:
            per_class[names[k]] = float(np.mean(frame_aps[k]))
            chance_per_class[names[k]] = float(np.mean(chance[k]))
        else:
            skipped.append(names[k])
    if not per_class:
        raise UndefinedAPError("没有带球位置标注且有检测的帧")
    report = EvalReport(
        per_class=per_class,
        map=float(np.mean(list(per_class.values()))),
        skipped=skipped,
        extra={
            "chance": {"per_class": chance_per_class, "map": float(np.mean(list(chance_per_class.values())))},
            "frames": int(sum(len(v) for v in frame_aps.values())),
        },
    )
    logger.info(f"射手评估: {report.extra['frames']} 帧, mAP={report.map:.4f} (机会 {report.extra['chance']['map']:.4f})")
    return report


def attention_records(traces: Sequence[ForwardTrace], clips: Sequence[Clip]) -> list[dict]:
    """每帧一条 γ 记录，供外部可视化"""
    records = []
    for trace, clip in zip(traces, clips):
        _check_trace(trace, clip)
        for frame, gamma in zip(clip.frames, trace.gammas):
            records.append({
                "clip_id": clip.clip_id,
                "frame": frame.index,
                "gammas": [round(float(g), 6) for g in gamma],
                "key_index": key_player_index(frame),
            })
    return records


# ---- 单应性 ----

@dataclass
class Homography:
    """3×3 投影矩阵，右下角归一化为 1"""
    matrix: np.ndarray
    rms: float | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValidationError(f"单应性矩阵形状必须为 3×3: {m.shape}")
        if abs(m[2, 2]) < 1e-12:
            raise RankDeficiencyError("单应性矩阵右下角为 0，无法归一化")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-9:
            raise RankDeficiencyError("单应性矩阵不可逆")
        self.matrix = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def project(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        padded = np.hstack([points, np.ones((points.shape[0], 1))])
        mapped = padded @ self.matrix.T
        return mapped[:, :2] / mapped[:, 2:3]


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """平移到质心并缩放到平均距离 √2，返回 (归一化点, 变换矩阵)"""
    mean = pts.mean(axis=0)
    avg_dist = np.mean(np.hypot(pts[:, 0] - mean[0], pts[:, 1] - mean[1]))
    if avg_dist < 1e-12:
        raise RankDeficiencyError("对应点全部重合")
    sf = np.sqrt(2.0) / avg_dist
    T = np.array([[sf, 0.0, -sf * mean[0]], [0.0, sf, -sf * mean[1]], [0.0, 0.0, 1.0]])
    return (pts - mean) * sf, T


def reprojection_rms(H: Homography, src: np.ndarray, dst: np.ndarray) -> float:
    diff = H.project(src) - np.asarray(dst, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def homography_dlt(src, dst) -> Homography:
    """归一化 DLT：构造 2n×9 方程组，取最小奇异值对应的右奇异向量，再反归一化"""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValidationError(f"对应点形状无效: {src.shape} / {dst.shape}")
    if src.shape[0] < 4:
        raise ValidationError(f"至少需要 4 对对应点，实际 {src.shape[0]}")

    p1, T1 = _normalize_points(src)
    p2, T2 = _normalize_points(dst)
    x, y = p1[:, 0], p1[:, 1]
    xp, yp = p2[:, 0], p2[:, 1]
    zeros, ones = np.zeros_like(x), np.ones_like(x)
    A = np.empty((2 * src.shape[0], 9))
    A[0::2] = np.stack([zeros, zeros, zeros, -x, -y, -ones, yp * x, yp * y, yp], axis=1)
    A[1::2] = np.stack([x, y, ones, zeros, zeros, zeros, -xp * x, -xp * y, -xp], axis=1)

    _, s, Vt = np.linalg.svd(A)
    if s.shape[0] < 8 or s[7] <= 1e-10 * s[0]:
        raise RankDeficiencyError("对应点退化（共线或重复），方程组秩不足")
    H_norm = Vt[-1].reshape(3, 3)
    H = Homography(np.linalg.inv(T2) @ H_norm @ T1)
    H.rms = reprojection_rms(H, src, dst)
    logger.debug(f"单应性估计: {src.shape[0]} 对点, 重投影 RMS={H.rms:.3e}")
    return H


# ---- 热力图 ----

def phase_of(t: int, num_frames: int, phases: int = DEFAULT_PHASES) -> int:
    """把帧号划入开始/中间/结束等阶段"""
    return min(int(t * phases / num_frames), phases - 1)


def grid_bin(point: np.ndarray, grid: int) -> tuple[int, int]:
    """球场坐标 -> (gx, gy)，越界点夹到边界格"""
    x, y = np.clip(point, 0.0, 1.0)
    return min(int(x * grid), grid - 1), min(int(y * grid), grid - 1)


@dataclass
class Heatmap:
    """grids[k, phase, gy, gx]，每个 (类别, 阶段) 归一化为和 1"""
    grids: np.ndarray
    counts: np.ndarray
    names: list[str] = field(default_factory=list)
    clamped: int = 0

    def rows(self) -> list[dict]:
        """CSV 行：class, phase, gx, gy, mass"""
        rows = []
        K, P, G, _ = self.grids.shape
        for k in range(K):
            for p in range(P):
                if self.counts[k, p] == 0:
                    continue
                for gy in range(G):
                    for gx in range(G):
                        rows.append({
                            "class": self.names[k],
                            "phase": p,
                            "gx": gx,
                            "gy": gy,
                            "mass": float(self.grids[k, p, gy, gx]),
                        })
        return rows


def heatmap(traces: Sequence[ForwardTrace], clips: Sequence[Clip], num_classes: int,
            homographies: Mapping[str, Homography] | None = None,
            grid: int = DEFAULT_GRID, phases: int = DEFAULT_PHASES) -> Heatmap:
    """每帧 γ 最大的检测取框底部中点，经单应性投到球场坐标后累加"""
    if grid < 1 or phases < 1:
        raise ValidationError(f"grid 与 phases 必须 ≥ 1: {grid}, {phases}")
    homographies = homographies or {}
    identity = Homography.identity()
    counts = np.zeros((num_classes, phases, grid, grid))
    clamped = 0
    for trace, clip in zip(traces, clips):
        if not 0 <= clip.label < num_classes:
            continue
        _check_trace(trace, clip)
        H = homographies.get(clip.clip_id, identity)
        for t, (frame, gamma) in enumerate(zip(clip.frames, trace.gammas)):
            if gamma.size == 0:
                continue
            box = frame.detections[int(np.argmax(gamma))].box
            point = H.project(np.array(box.bottom_center))[0]
            if np.any(point < 0.0) or np.any(point > 1.0):
                clamped += 1
            gx, gy = grid_bin(point, grid)
            counts[clip.label, phase_of(t, clip.num_frames, phases), gy, gx] += 1

    totals = counts.sum(axis=(2, 3), keepdims=True)
    grids = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    if clamped:
        logger.info(f"热力图: {clamped} 个投影点落在球场外，已夹到边界格")
    return Heatmap(grids=grids, counts=totals[:, :, 0, 0], names=class_names(num_classes), clamped=clamped)
