"""
EventAttn - Features
片段/检测数据结构、球员特征组合（外观 + 空间金字塔）、植入关键球员的合成数据
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from config import (
    DEFAULT_FPS, DEFAULT_PYRAMID_LEVELS, DATASET_VERSION, EVENT_DURATION_S,
    NEGATIVE_LABEL, REFERENCE_D_APP, REFERENCE_D_PLAYER,
)
from errors import ConfigError, DimensionError, ValidationError

logger = logging.getLogger("eventattn")

# 参考规模维度差异只提示一次
_reference_scale_noted = False


@dataclass(frozen=True)
class BoundingBox:
    """归一化坐标下的检测框"""
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise ValidationError(f"检测框坐标超出 [0,1]: {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"检测框面积为零或坐标颠倒: {coords}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @property
    def bottom_center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), self.y_max)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass
class Detection:
    """单个球员检测"""
    box: BoundingBox
    appearance: np.ndarray
    confidence: float = 1.0
    track_id: int | None = None
    gt_player_id: int | None = None


@dataclass
class Frame:
    """一帧：全局特征 + 可变数量的检测"""
    index: int
    frame_feature: np.ndarray
    detections: list[Detection] = field(default_factory=list)
    ball_position: tuple[float, float] | None = None


@dataclass
class Clip:
    """固定帧率的事件片段"""
    frames: list[Frame]
    label: int
    fps: float = DEFAULT_FPS
    clip_id: str = ""

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def is_negative(self) -> bool:
        return self.label == NEGATIVE_LABEL

    @property
    def has_tracks(self) -> bool:
        return all(d.track_id is not None for f in self.frames for d in f.detections)

    def detection_count(self) -> int:
        return sum(len(f.detections) for f in self.frames)


@dataclass(frozen=True)
class DatasetHeader:
    """数据集文件头"""
    d_frame: int
    d_app: int
    d_sp: int
    k: int
    fps: float = DEFAULT_FPS
    levels: tuple[int, ...] = DEFAULT_PYRAMID_LEVELS
    version: int = DATASET_VERSION

    def __post_init__(self):
        if sum(L * L for L in self.levels) != self.d_sp:
            raise DimensionError("d_sp 与金字塔层级不符", expected=sum(L * L for L in self.levels), actual=self.d_sp)

    @property
    def d_player(self) -> int:
        return self.d_app + self.d_sp


@dataclass(frozen=True)
class TimelineEvent:
    """未剪辑时间线上的一个 4 秒事件"""
    label: int
    start_time: float
    end_time: float

    def __post_init__(self):
        if self.start_time < 0:
            raise ValidationError(f"事件开始时间为负: {self.start_time}")
        if abs((self.end_time - self.start_time) - EVENT_DURATION_S) > 1e-6:
            raise ValidationError(f"事件时长必须为 {EVENT_DURATION_S} 秒")


@dataclass
class Timeline:
    """未剪辑的长帧序列与其中的真值事件"""
    frames: list[Frame]
    events: list[TimelineEvent]
    fps: float = DEFAULT_FPS
    timeline_id: str = "timeline"

    @property
    def duration(self) -> float:
        return len(self.frames) / self.fps


@dataclass
class SynthConfig:
    """合成数据配置"""
    num_classes: int = 11
    num_frames: int = 24
    fps: float = DEFAULT_FPS
    min_players: int = 6
    max_players: int = 8
    d_app: int = 64
    d_frame: int = 32
    levels: tuple[int, ...] = DEFAULT_PYRAMID_LEVELS
    signal_strength: float = 1.0
    noise_sigma: float = 0.1
    active_window: tuple[int, int] = (4, 20)
    cue_leak: float = 0.0
    layout: str = "random"
    box_size: tuple[float, float] = (0.06, 0.12)
    max_speed: float = 0.01
    box_jitter: float = 0.002
    drop_prob: float = 0.0
    empty_frame_prob: float = 0.02
    key_anchor: tuple[float, float] | None = None
    num_clips: int = 200
    seed: int = 0

    def __post_init__(self):
        start, end = self.active_window
        if not 0 <= start < end <= self.num_frames:
            raise ConfigError(f"active_window 必须满足 0 ≤ start < end ≤ T: {self.active_window}")
        if self.signal_strength <= 0:
            raise ConfigError("signal_strength 必须为正")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma 不能为负")
        if not 1 <= self.min_players <= self.max_players:
            raise ConfigError(f"球员数量范围无效: [{self.min_players}, {self.max_players}]")
        if self.layout not in ("random", "lanes"):
            raise ConfigError(f"未知布局: {self.layout}")
        if not self.levels or any(L < 1 for L in self.levels):
            raise ConfigError(f"金字塔层级无效: {self.levels}")
        if self.key_anchor is not None:
            self.key_anchor = tuple(float(v) for v in self.key_anchor)
            if len(self.key_anchor) != 2 or not all(0.0 <= v <= 1.0 for v in self.key_anchor):
                raise ConfigError(f"key_anchor 必须是 [0,1] 内的 (x, y): {self.key_anchor}")

    @property
    def d_sp(self) -> int:
        return sum(L * L for L in self.levels)

    def header(self) -> DatasetHeader:
        return DatasetHeader(
            d_frame=self.d_frame, d_app=self.d_app, d_sp=self.d_sp,
            k=self.num_classes, fps=self.fps, levels=tuple(self.levels),
        )


def _cell_overlaps(lo: float, hi: float, L: int) -> np.ndarray:
    """区间 [lo, hi] 与 L 等分单元格的一维重叠长度"""
    edges = np.linspace(0.0, 1.0, L + 1)
    return np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0.0, None)


def spatial_feature(box: BoundingBox, levels=DEFAULT_PYRAMID_LEVELS) -> np.ndarray:
    """空间金字塔直方图：每层 L×L 网格，单元值 = 相交面积 / 框面积，行优先

    各层按 levels 给定的顺序拼接，每层之和为 1。
    """
    if not levels:
        raise ValidationError("金字塔层级不能为空")
    if box.area <= 0:
        raise ValidationError("检测框面积为零")
    blocks = []
    for L in levels:
        if L < 1:
            raise ValidationError(f"网格尺寸必须 ≥ 1: {L}")
        ox = _cell_overlaps(box.x_min, box.x_max, L)
        oy = _cell_overlaps(box.y_min, box.y_max, L)
        blocks.append((np.outer(oy, ox) / box.area).reshape(-1))
    return np.concatenate(blocks).astype(np.float32)


def compose_player_feature(det: Detection, box_feature: np.ndarray,
                           d_app: int | None = None, d_sp: int | None = None) -> np.ndarray:
    """球员特征 = 外观在前 + 空间特征在后"""
    appearance = np.asarray(det.appearance, dtype=np.float32)
    if d_app is not None and appearance.shape != (d_app,):
        raise DimensionError("外观特征维度不符", expected=d_app, actual=appearance.shape)
    if d_sp is not None and box_feature.shape != (d_sp,):
        raise DimensionError("空间特征维度不符", expected=d_sp, actual=box_feature.shape)
    feature = np.concatenate([appearance, np.asarray(box_feature, dtype=np.float32)])
    global _reference_scale_noted
    if appearance.shape[0] == REFERENCE_D_APP and feature.shape[0] != REFERENCE_D_PLAYER and not _reference_scale_noted:
        _reference_scale_noted = True
        logger.info(f"球员特征维度 {feature.shape[0]}（参考规模为 {REFERENCE_D_PLAYER}，空间部分由金字塔层级决定）")
    return feature


def player_feature_matrix(clip: Clip, levels, d_app: int) -> tuple[np.ndarray, list[int]]:
    """整段片段的球员特征按帧顺序堆叠，返回 (矩阵, 每帧起始行偏移)"""
    rows = []
    offsets = []
    for frame in clip.frames:
        offsets.append(len(rows))
        for det in frame.detections:
            rows.append(compose_player_feature(det, spatial_feature(det.box, levels), d_app=d_app))
    offsets.append(len(rows))
    if rows:
        return np.stack(rows), offsets
    return np.zeros((0, d_app + sum(L * L for L in levels)), dtype=np.float32), offsets


# ---- 合成数据 ----

def orthonormal_prototypes(rng: np.random.Generator, k: int, dim: int) -> np.ndarray:
    """K 个互相正交的单位向量（按行返回，形状 K×dim）"""
    if k > dim:
        raise ConfigError(f"类别数 K={k} 大于特征维度 {dim}，无法构造正交原型")
    q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
    return q.T.astype(np.float32)


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """把坐标反射回 [lo, hi]（三角波）"""
    span = hi - lo
    y = np.mod(x - lo, 2.0 * span)
    return lo + np.where(y > span, 2.0 * span - y, y)


def _trajectories(rng: np.random.Generator, cfg: SynthConfig, n_players: int, n_frames: int,
                 anchored: int | None = None) -> np.ndarray:
    """每个球员的逐帧框 (n_players, n_frames, 4)，线性运动 + 抖动

    anchored 指定的球员固定在 cfg.key_anchor 附近，只保留抖动。
    """
    t = np.arange(n_frames, dtype=np.float64)[:, None]
    boxes = np.empty((n_players, n_frames, 4))
    lo_s, hi_s = cfg.box_size
    for p in range(n_players):
        w, h = rng.uniform(lo_s, hi_s, size=2)
        if cfg.layout == "lanes":
            lane_h = 1.0 / n_players
            h = min(h, 0.8 * lane_h)
            start = np.array([rng.uniform(0.15, 0.85), (p + 0.5) * lane_h])
            velocity = np.array([rng.uniform(-cfg.max_speed, cfg.max_speed), 0.0])
            jitter = np.zeros((n_frames, 2))
            jitter[:, 0] = rng.normal(0.0, cfg.box_jitter, n_frames)
        else:
            start = rng.uniform(0.15, 0.85, size=2)
            velocity = rng.uniform(-cfg.max_speed, cfg.max_speed, size=2)
            jitter = rng.normal(0.0, cfg.box_jitter, (n_frames, 2))
        if p == anchored:
            start, velocity = np.array(cfg.key_anchor), np.zeros(2)
        half = np.array([w / 2.0, h / 2.0])
        centers = start + velocity * t + jitter
        centers = _reflect(centers, half, 1.0 - half)
        boxes[p, :, 0:2] = centers - half
        boxes[p, :, 2:4] = centers + half
    return np.clip(boxes, 0.0, 1.0)


def _noise(rng: np.random.Generator, sigma: float, dim: int) -> np.ndarray:
    if sigma == 0:
        return np.zeros(dim, dtype=np.float32)
    return rng.normal(0.0, sigma, dim).astype(np.float32)


def _synth_frames(rng, cfg: SynthConfig, n_frames: int, n_players: int,
                  signal: list[tuple[int, int] | None],
                  prototypes: np.ndarray, frame_cue: list[np.ndarray | None],
                  anchored: int | None = None) -> list[Frame]:
    """生成帧序列

    signal[t] = (key_player, label) 表示该帧关键球员携带类别信号；None 表示无信号。
    frame_cue[t] 为叠加到帧特征上的全局线索（或 None）。
    """
    boxes = _trajectories(rng, cfg, n_players, n_frames, anchored)
    frames = []
    for t in range(n_frames):
        feature = _noise(rng, cfg.noise_sigma, cfg.d_frame)
        if frame_cue[t] is not None:
            feature = feature + frame_cue[t]
        ball = None
        dets = []
        empty = rng.random() < cfg.empty_frame_prob
        for p in rng.permutation(n_players):
            appearance = _noise(rng, cfg.noise_sigma, cfg.d_app)
            box = BoundingBox(*(float(v) for v in boxes[p, t]))
            is_key = signal[t] is not None and signal[t][0] == p
            if is_key:
                appearance = appearance + prototypes[signal[t][1]] * np.float32(cfg.signal_strength)
            if empty or rng.random() < cfg.drop_prob:
                continue
            if is_key:
                ball = box.center
            dets.append(Detection(
                box=box,
                appearance=appearance.astype(np.float32),
                confidence=float(np.float32(rng.uniform(0.5, 1.0))),
                gt_player_id=int(p),
            ))
        frames.append(Frame(index=t, frame_feature=feature.astype(np.float32), detections=dets, ball_position=ball))
    return frames


def _prototype_sets(cfg: SynthConfig, seed: int) -> tuple[np.ndarray, np.ndarray | None]:
    proto_rng = np.random.default_rng([seed, 1])
    prototypes = orthonormal_prototypes(proto_rng, cfg.num_classes, cfg.d_app)
    frame_protos = None
    if cfg.cue_leak > 0:
        frame_protos = orthonormal_prototypes(proto_rng, cfg.num_classes, cfg.d_frame)
    return prototypes, frame_protos


def synth_clip(rng: np.random.Generator, cfg: SynthConfig, label: int, clip_id: str,
               prototypes: np.ndarray, frame_protos: np.ndarray | None) -> Clip:
    """生成单个片段；label 为 NEGATIVE 时不植入信号"""
    n_players = int(rng.integers(cfg.min_players, cfg.max_players + 1))
    key = int(rng.integers(n_players))
    start, end = cfg.active_window
    signal = [None] * cfg.num_frames
    cue = [None] * cfg.num_frames
    if label != NEGATIVE_LABEL:
        for t in range(start, end):
            signal[t] = (key, label)
        if frame_protos is not None:
            cue = [frame_protos[label] * np.float32(cfg.cue_leak)] * cfg.num_frames
    anchored = key if cfg.key_anchor is not None and label != NEGATIVE_LABEL else None
    frames = _synth_frames(rng, cfg, cfg.num_frames, n_players, signal, prototypes, cue, anchored)
    return Clip(frames=frames, label=label, fps=cfg.fps, clip_id=clip_id)


def synth_dataset(cfg: SynthConfig, num_clips: int | None = None, seed: int | None = None,
                  prefix: str = "clip") -> list[Clip]:
    """植入关键球员的合成数据集，给定 seed 完全确定"""
    seed = cfg.seed if seed is None else seed
    num_clips = cfg.num_clips if num_clips is None else num_clips
    prototypes, frame_protos = _prototype_sets(cfg, cfg.seed)
    rng = np.random.default_rng([seed, 2])
    # 类别均衡：轮转后打乱
    labels = rng.permutation(np.arange(num_clips) % cfg.num_classes)
    clips = [
        synth_clip(rng, cfg, int(label), f"{prefix}-{seed}-{i:05d}", prototypes, frame_protos)
        for i, label in enumerate(labels)
    ]
    logger.info(f"已生成合成数据: {len(clips)} 个片段, K={cfg.num_classes}, seed={seed}")
    return clips


def synth_timeline(cfg: SynthConfig, duration_s: float, n_events: int, seed: int | None = None,
                   timeline_id: str = "timeline") -> Timeline:
    """未剪辑长时间线：固定一组球员持续运动，事件期间关键球员携带信号

    事件互不重叠，按时间等分槽位后在槽内随机放置。
    """
    seed = cfg.seed if seed is None else seed
    prototypes, frame_protos = _prototype_sets(cfg, cfg.seed)
    rng = np.random.default_rng([seed, 3])
    n_frames = int(round(duration_s * cfg.fps))
    event_frames = int(round(EVENT_DURATION_S * cfg.fps))
    if n_events * event_frames > n_frames:
        raise ConfigError(f"时间线 {duration_s}s 放不下 {n_events} 个事件")
    n_players = int(rng.integers(cfg.min_players, cfg.max_players + 1))

    slot = n_frames // max(n_events, 1)
    labels = rng.permutation(np.arange(n_events) % cfg.num_classes)
    signal = [None] * n_frames
    cue = [None] * n_frames
    events = []
    start_w, end_w = cfg.active_window
    for e, label in enumerate(labels):
        begin = e * slot + int(rng.integers(0, slot - event_frames + 1))
        key = int(rng.integers(n_players))
        for t in range(begin + start_w, min(begin + end_w, begin + event_frames)):
            signal[t] = (key, int(label))
        if frame_protos is not None:
            for t in range(begin, begin + event_frames):
                cue[t] = frame_protos[label] * np.float32(cfg.cue_leak)
        events.append(TimelineEvent(
            label=int(label),
            start_time=begin / cfg.fps,
            end_time=begin / cfg.fps + EVENT_DURATION_S,
        ))
    frames = _synth_frames(rng, cfg, n_frames, n_players, signal, prototypes, cue)
    logger.info(f"已生成时间线 {timeline_id}: {duration_s:.0f}s, {n_events} 个事件, {n_players} 名球员")
    return Timeline(frames=frames, events=events, fps=cfg.fps, timeline_id=timeline_id)


def class_histogram(clips: list[Clip], num_classes: int) -> dict[int, int]:
    """各类片段数量（NEGATIVE 记在 -1）"""
    hist = {k: 0 for k in range(num_classes)}
    for clip in clips:
        hist[clip.label] = hist.get(clip.label, 0) + 1
    return hist
