"""
EventAttn - Tracker
逐帧二分图匹配把检测关联成球员轨迹
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from config import (
    DEFAULT_ACCEPT_THRESHOLD, DEFAULT_COST_WEIGHTS, DEFAULT_GATE_RADIUS, DEFAULT_MAX_GAP,
)
from errors import ConfigError, DimensionError
from features import BoundingBox, Clip, Detection, Frame

logger = logging.getLogger("eventattn")

# 禁止匹配的哨兵代价
FORBIDDEN = float("inf")


class TrackState(Enum):
    """轨迹状态"""
    ACTIVE = "active"
    TERMINATED = "terminated"


@dataclass
class Track:
    """同一球员的连续检测链，entries 为 (帧号, 帧内检测下标)"""
    track_id: int
    entries: list[tuple[int, int]] = field(default_factory=list)
    state: TrackState = TrackState.ACTIVE

    @property
    def last_frame(self) -> int:
        return self.entries[-1][0]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class TrackerParams:
    """关联参数"""
    w_iou: float = DEFAULT_COST_WEIGHTS[0]
    w_app: float = DEFAULT_COST_WEIGHTS[1]
    accept_threshold: float = DEFAULT_ACCEPT_THRESHOLD
    max_gap: int = DEFAULT_MAX_GAP
    gate_radius: float = DEFAULT_GATE_RADIUS

    def __post_init__(self):
        if self.w_iou < 0 or self.w_app < 0:
            raise ConfigError("关联代价权重不能为负")
        if self.max_gap < 0:
            raise ConfigError(f"max_gap 不能为负: {self.max_gap}")


@dataclass
class MatchResult:
    """匹配结果"""
    pairs: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]
    total_cost: float


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """交并比"""
    iw = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    ih = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """余弦相似度；零向量约定为 0"""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u.astype(np.float64), v.astype(np.float64)) / (nu * nv))


def association_cost(track_tail: Detection, det: Detection,
                     weights: tuple[float, float] = DEFAULT_COST_WEIGHTS,
                     gate_radius: float = DEFAULT_GATE_RADIUS) -> float:
    """w_iou·(1 − IoU) + w_app·(1 − cos)/2；不相交且中心距离超过门限时为 FORBIDDEN"""
    if track_tail.appearance.shape != det.appearance.shape:
        raise DimensionError("外观维度不一致", expected=track_tail.appearance.shape, actual=det.appearance.shape)
    overlap = iou(track_tail.box, det.box)
    if overlap == 0.0:
        (ax, ay), (bx, by) = track_tail.box.center, det.box.center
        if np.hypot(ax - bx, ay - by) > gate_radius:
            return FORBIDDEN
    w_iou, w_app = weights
    cos = cosine_similarity(track_tail.appearance, det.appearance)
    return w_iou * (1.0 - overlap) + w_app * (1.0 - cos) / 2.0


def _solve_square(cost: np.ndarray) -> np.ndarray:
    """方阵最小代价完美匹配（势函数 + 最短增广路），返回 row -> col

    列按下标升序扫描，相等时取较小下标，结果与平台无关。
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)      # p[j] = 分配到第 j 列的行（1 起）
    way = np.zeros(n + 1, dtype=int)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break

    assignment = np.full(n, -1, dtype=int)
    for j in range(1, n + 1):
        if p[j] > 0:
            assignment[p[j] - 1] = j - 1
    return assignment


def _lexicographic_optimum(cost: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    """在全部最优完美匹配中取 (row, col) 字典序最小者

    按行依次固定：只尝试比当前解更小的列，子问题最优值与全局最优相等即采用。
    """
    n = cost.shape[0]
    best = assignment.copy()
    optimum = float(cost[np.arange(n), best].sum())
    tol = 1e-9 * max(1.0, abs(optimum))
    fixed = 0.0
    free_cols = list(range(n))
    for r in range(n - 1):
        for c in free_cols:
            if c >= best[r]:
                break
            rest_cols = [j for j in free_cols if j != c]
            sub = _solve_square(cost[np.ix_(range(r + 1, n), rest_cols)])
            total = fixed + cost[r, c] + float(cost[np.arange(r + 1, n), np.asarray(rest_cols)[sub]].sum())
            if total <= optimum + tol:
                best[r] = c
                best[r + 1:] = np.asarray(rest_cols)[sub]
                break
        fixed += cost[r, best[r]]
        free_cols.remove(int(best[r]))
    return best


def hungarian(costs: np.ndarray) -> MatchResult:
    """最小代价二分匹配（Munkres）

    非方阵补零填成方阵；FORBIDDEN 以大于全部有限代价之和的常数替代，
    求解后剔除禁止对，对应行/列报告为未匹配。
    代价相同的多个最优解中返回 (row, col) 字典序最小的一个。
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2:
        raise DimensionError("代价矩阵必须是二维", expected=2, actual=costs.ndim)
    rows, cols = costs.shape
    if rows == 0 or cols == 0:
        return MatchResult([], list(range(rows)), list(range(cols)), 0.0)

    forbidden = ~np.isfinite(costs)
    finite = costs[~forbidden]
    if np.any(finite < 0):
        raise DimensionError("代价必须非负", expected=">= 0", actual=float(finite.min()))
    big = float(finite.sum()) + 1.0 if finite.size else 1.0
    n = max(rows, cols)
    square = np.zeros((n, n))
    square[:rows, :cols] = np.where(forbidden, big, costs)

    assignment = _lexicographic_optimum(square, _solve_square(square))
    pairs = []
    for r in range(rows):
        c = int(assignment[r])
        if c < cols and not forbidden[r, c]:
            pairs.append((r, c))
    matched_rows = {r for r, _ in pairs}
    matched_cols = {c for _, c in pairs}
    unmatched_rows = [r for r in range(rows) if r not in matched_rows]
    if unmatched_rows:
        logger.debug(f"匈牙利匹配: {len(unmatched_rows)} 行未匹配")
    return MatchResult(
        pairs=pairs,
        unmatched_rows=unmatched_rows,
        unmatched_cols=[c for c in range(cols) if c not in matched_cols],
        total_cost=float(sum(costs[r, c] for r, c in pairs)),
    )


def link_tracks(clip: Clip, params: TrackerParams | None = None) -> tuple[list[Track], Clip]:
    """逐帧关联检测，返回 (轨迹列表, 写回 track_id 的新片段)

    已有的 track_id 会被忽略并重新分配，相同参数下结果幂等。
    """
    params = params or TrackerParams()
    weights = (params.w_iou, params.w_app)
    tracks: list[Track] = []
    active: list[Track] = []
    tails: dict[int, Detection] = {}
    new_frames = []

    for t, frame in enumerate(clip.frames):
        # 超过 max_gap 帧未匹配的轨迹终止
        still_active = []
        for track in active:
            if t - track.last_frame - 1 > params.max_gap:
                track.state = TrackState.TERMINATED
            else:
                still_active.append(track)
        active = still_active

        dets = frame.detections
        assigned: dict[int, int] = {}
        if active and dets:
            matrix = np.array([
                [association_cost(tails[track.track_id], det, weights, params.gate_radius) for det in dets]
                for track in active
            ])
            result = hungarian(matrix)
            for r, c in result.pairs:
                if matrix[r, c] <= params.accept_threshold:
                    assigned[c] = r

        for c, det in enumerate(dets):
            if c in assigned:
                track = active[assigned[c]]
            else:
                track = Track(track_id=len(tracks))
                tracks.append(track)
                active.append(track)
            track.entries.append((t, c))
            tails[track.track_id] = det

        labelled = {c: track for track in tracks for (ft, c) in track.entries[-1:] if ft == t}
        new_frames.append(Frame(
            index=frame.index,
            frame_feature=frame.frame_feature,
            detections=[replace(det, track_id=labelled[c].track_id) for c, det in enumerate(dets)],
            ball_position=frame.ball_position,
        ))

    for track in active:
        track.state = TrackState.TERMINATED
    logger.debug(f"片段 {clip.clip_id}: {len(tracks)} 条轨迹")
    return tracks, replace(clip, frames=new_frames)


def track_agreement(tracks: list[Track], clip: Clip) -> float | None:
    """轨迹与真值球员的一一对应一致率（无真值时返回 None）

    在 (track, gt_player) 共现计数上求最大权匹配，返回被正确归属的检测比例。
    """
    counts: dict[tuple[int, int], int] = {}
    total = 0
    for track in tracks:
        for t, c in track.entries:
            gt = clip.frames[t].detections[c].gt_player_id
            if gt is None:
                return None
            counts[(track.track_id, gt)] = counts.get((track.track_id, gt), 0) + 1
            total += 1
    if total == 0:
        return 1.0
    track_ids = sorted({k[0] for k in counts})
    gt_ids = sorted({k[1] for k in counts})
    matrix = np.zeros((len(track_ids), len(gt_ids)))
    for (tid, gid), n in counts.items():
        matrix[track_ids.index(tid), gt_ids.index(gid)] = n
    result = hungarian(matrix.max() - matrix)
    matched = sum(matrix[r, c] for r, c in result.pairs)
    return float(matched / total)


def mean_match_iou(tracks: list[Track], clip: Clip) -> float | None:
    """轨迹内相邻检测的平均 IoU（运动平滑程度的统计）"""
    values = []
    for track in tracks:
        for (t0, c0), (t1, c1) in zip(track.entries, track.entries[1:]):
            values.append(iou(clip.frames[t0].detections[c0].box, clip.frames[t1].detections[c1].box))
    return float(np.mean(values)) if values else None
