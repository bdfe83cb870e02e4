"""
EventAttn - Model
帧级 BLSTM + 轨迹 BLSTM + 注意力 + 事件 LSTM + 线性分类器，平方合页损失与解析梯度
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from config import (
    DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIM, DEFAULT_PHI_HIDDEN, DEFAULT_TAU,
    NEGATIVE_LABEL, RECURRENT_INIT_RANGE,
)
from errors import ConfigError, DimensionError, EmptyInputError, ShapeMismatchError, ValidationError
from features import Clip, DatasetHeader, player_feature_matrix
from tape import Tape, Var

logger = logging.getLogger("eventattn")


class ModelMode(Enum):
    """消融模式"""
    FRAME_ONLY = "frame-only"
    ONLY_PLAYER = "only-player"
    AVG_PLAYER = "avg-player"
    ATTN_NO_TRACK = "attn-no-track"
    ATTN_TRACK = "attn-track"

    @property
    def uses_frame_stream(self) -> bool:
        return self is not ModelMode.ONLY_PLAYER

    @property
    def uses_players(self) -> bool:
        return self is not ModelMode.FRAME_ONLY

    @property
    def attends(self) -> bool:
        return self in (ModelMode.ONLY_PLAYER, ModelMode.ATTN_NO_TRACK, ModelMode.ATTN_TRACK)

    @property
    def uses_tracks(self) -> bool:
        return self is ModelMode.ATTN_TRACK


@dataclass
class ModelConfig:
    """模型配置

    d_frame / d_app / levels / num_classes 来自数据集文件头，由 bind() 填入。
    negative_class=True 时输出 K+1 类，最后一类为 NEGATIVE（检测训练用）。
    """
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    embed_dim: int = DEFAULT_EMBED_DIM
    tau: float = DEFAULT_TAU
    mode: ModelMode = ModelMode.ATTN_TRACK
    phi_hidden: int = DEFAULT_PHI_HIDDEN
    score_reduction: str = "mean"
    num_classes: int = 0
    d_frame: int = 0
    d_app: int = 0
    levels: tuple[int, ...] = ()
    negative_class: bool = False

    def __post_init__(self):
        if isinstance(self.mode, str):
            try:
                self.mode = ModelMode(self.mode)
            except ValueError:
                raise ConfigError(f"未知模型模式: {self.mode}（可选 {[m.value for m in ModelMode]}）") from None
        if not self.tau > 0:
            raise ConfigError(f"tau 必须为正: {self.tau}")
        if self.hidden_dim < 1 or self.embed_dim < 1 or self.phi_hidden < 1:
            raise ConfigError("hidden_dim / embed_dim / phi_hidden 必须 ≥ 1")
        if self.score_reduction not in ("mean", "last"):
            raise ConfigError(f"未知分数汇聚方式: {self.score_reduction}")
        self.levels = tuple(self.levels)

    def bind(self, header: DatasetHeader, negative_class: bool = False) -> "ModelConfig":
        """按数据集文件头填入输入维度与类别数"""
        return replace(self, d_frame=header.d_frame, d_app=header.d_app, levels=tuple(header.levels),
                       num_classes=header.k, negative_class=negative_class)

    @property
    def d_sp(self) -> int:
        return sum(L * L for L in self.levels)

    @property
    def d_player(self) -> int:
        return self.d_app + self.d_sp

    @property
    def num_outputs(self) -> int:
        return self.num_classes + (1 if self.negative_class else 0)

    @property
    def repr_dim(self) -> int:
        """注意力/平均所作用的球员表示维度"""
        return 2 * self.hidden_dim if self.mode.uses_tracks else self.embed_dim

    @property
    def context_dim(self) -> int:
        """φ 的上下文部分：(h_f, h_e_prev) 或仅 h_e_prev"""
        frame = 2 * self.hidden_dim if self.mode.uses_frame_stream else 0
        return frame + self.hidden_dim

    @property
    def event_input_dim(self) -> int:
        dim = 2 * self.hidden_dim if self.mode.uses_frame_stream else 0
        if self.mode.uses_players:
            dim += self.repr_dim
        return dim


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """参数名 -> 形状，顺序即检查点中的张量顺序"""
    if cfg.num_classes < 1 or cfg.d_frame < 1 or cfg.d_app < 1 or not cfg.levels:
        raise ConfigError("模型输入维度未绑定，先调用 ModelConfig.bind(header)")
    H, E = cfg.hidden_dim, cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.mode.uses_frame_stream:
        shapes["frame_embed.W"] = (E, cfg.d_frame)
        shapes["frame_embed.b"] = (E,)
        for block in ("frame_fwd", "frame_bwd"):
            shapes[f"{block}.W"] = (4 * H, E + H)
            shapes[f"{block}.b"] = (4 * H,)
    if cfg.mode.uses_players:
        shapes["player_embed.W"] = (E, cfg.d_player)
        shapes["player_embed.b"] = (E,)
    if cfg.mode.uses_tracks:
        for block in ("track_fwd", "track_bwd"):
            shapes[f"{block}.W"] = (4 * H, E + H)
            shapes[f"{block}.b"] = (4 * H,)
    shapes["event.W"] = (4 * H, cfg.event_input_dim + H)
    shapes["event.b"] = (4 * H,)
    if cfg.mode.attends:
        shapes["phi.W1"] = (cfg.phi_hidden, cfg.context_dim + cfg.repr_dim)
        shapes["phi.b1"] = (cfg.phi_hidden,)
        shapes["phi.W2"] = (1, cfg.phi_hidden)
        shapes["phi.b2"] = (1,)
    shapes["classifier.W"] = (cfg.num_outputs, H)
    return shapes


@dataclass
class ModelParams:
    """命名参数表"""
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "ModelParams":
        """循环块与分类器均匀 ±0.08，嵌入层 He 初始化，φ 用 Xavier；偏置为零"""
        rng = np.random.default_rng([seed, 4])
        tensors = {}
        for name, shape in param_shapes(cfg).items():
            block, kind = name.split(".")
            if kind.startswith("b"):
                tensors[name] = np.zeros(shape, dtype=np.float32)
            elif block.endswith("embed"):
                tensors[name] = rng.normal(0.0, np.sqrt(2.0 / shape[1]), shape).astype(np.float32)
            elif block == "phi":
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                tensors[name] = rng.uniform(-limit, limit, shape).astype(np.float32)
            else:
                tensors[name] = rng.uniform(-RECURRENT_INIT_RANGE, RECURRENT_INIT_RANGE, shape).astype(np.float32)
        return cls(config=cfg, tensors=tensors)

    @classmethod
    def zeros(cls, cfg: ModelConfig, dtype=np.float32) -> "ModelParams":
        return cls(config=cfg, tensors={n: np.zeros(s, dtype=dtype) for n, s in param_shapes(cfg).items()})

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {n: t.astype(dtype) for n, t in self.tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {n: t.copy() for n, t in self.tensors.items()})

    def validate(self) -> None:
        """形状与配置一致且全部有限"""
        expected = param_shapes(self.config)
        if list(expected) != list(self.tensors):
            raise ShapeMismatchError(f"参数名与配置不符: 期望 {list(expected)}，实际 {list(self.tensors)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatchError(f"参数 {name} 形状 {self.tensors[name].shape} 与配置 {shape} 不符")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ValidationError(f"参数 {name} 含 NaN/Inf")

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


@dataclass
class EncodedClip:
    """一次性编码好的片段输入"""
    clip_id: str
    label: int
    frames: np.ndarray                  # (T, d_frame)
    players: np.ndarray | None          # (N, d_player)，所有帧检测按帧顺序堆叠
    offsets: list[int]                  # 长度 T+1，第 t 帧检测为 players[offsets[t]:offsets[t+1]]
    track_ids: list[int] | None = None

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def frame_count(self, t: int) -> int:
        return self.offsets[t + 1] - self.offsets[t]


def encode_clip(clip: Clip, cfg: ModelConfig) -> EncodedClip:
    """片段 -> 模型输入矩阵；attn-track 模式要求每个检测都有 track_id"""
    if clip.num_frames == 0:
        raise EmptyInputError(f"片段 {clip.clip_id} 没有帧")
    frames = np.stack([f.frame_feature for f in clip.frames]).astype(np.float32)
    if frames.shape[1] != cfg.d_frame:
        raise DimensionError(f"片段 {clip.clip_id} 帧特征维度不符", expected=cfg.d_frame, actual=frames.shape[1])
    players, offsets, track_ids = None, [0] * (clip.num_frames + 1), None
    if cfg.mode.uses_players:
        players, offsets = player_feature_matrix(clip, cfg.levels, cfg.d_app)
    if cfg.mode.uses_tracks:
        if not clip.has_tracks:
            raise ValidationError(f"片段 {clip.clip_id} 存在没有 track_id 的检测，attn-track 模式需先运行 track")
        track_ids = [d.track_id for f in clip.frames for d in f.detections]
        for frame in clip.frames:
            ids = [d.track_id for d in frame.detections]
            if len(set(ids)) != len(ids):
                raise ValidationError(f"片段 {clip.clip_id} 第 {frame.index} 帧同一轨迹出现多个检测")
    return EncodedClip(clip_id=clip.clip_id, label=clip.label, frames=frames,
                       players=players, offsets=list(offsets), track_ids=track_ids)


@dataclass
class ForwardTrace:
    """前向结果与反传所需的记录带"""
    frame_context: np.ndarray | None            # (T, 2H)，only-player 模式为 None
    track_states: list[np.ndarray] | None       # 每帧 (N_t, 2H)，仅 attn-track
    gammas: list[np.ndarray] | None             # 每帧注意力权重，N_t = 0 时为空数组
    attended: list[np.ndarray] | None           # 每帧 a_t
    event_states: np.ndarray                    # (T, H)
    frame_scores: np.ndarray                    # (T, K)
    clip_scores: np.ndarray                     # (K,)
    clip_id: str = ""
    tape: Tape | None = field(default=None, repr=False)
    leaves: dict[str, Var] = field(default_factory=dict, repr=False)
    scores_var: Var | None = field(default=None, repr=False)


# ---- 图构建 ----

def _blstm(tape: Tape, seq: list[Var], fwd: tuple[Var, Var], bwd: tuple[Var, Var], hidden: int) -> list[Var]:
    """双向 LSTM，输出每步 concat(h_fwd, h_bwd)"""
    if not seq:
        raise EmptyInputError("blstm 输入序列为空")
    dtype = seq[0].value.dtype
    h, c = tape.zeros(hidden, dtype), tape.zeros(hidden, dtype)
    forward_states = []
    for x in seq:
        h, c = tape.lstm_cell(x, h, c, *fwd)
        forward_states.append(h)
    h, c = tape.zeros(hidden, dtype), tape.zeros(hidden, dtype)
    backward_states = [None] * len(seq)
    for t in range(len(seq) - 1, -1, -1):
        h, c = tape.lstm_cell(seq[t], h, c, *bwd)
        backward_states[t] = h
    return [tape.concat([f, b]) for f, b in zip(forward_states, backward_states)]


def _attend(tape: Tape, context: Var, reps: Var, phi_ctx: Var, phi_rep: Var,
            b1: Var, W2: Var, b2: Var, tau: float) -> tuple[Var, Var]:
    """score_i = φ(concat(context, repr_i))，γ = softmax(score/τ)，a = Σγ_i·repr_i"""
    ctx_proj = tape.affine(phi_ctx, b1, context)
    rep_proj = tape.affine(phi_rep, None, reps)
    hidden = tape.tanh(tape.add_row(rep_proj, ctx_proj))
    scores = tape.flatten(tape.affine(W2, b2, hidden))
    gamma = tape.softmax_temp(scores, tau)
    return tape.weighted_sum(gamma, reps), gamma


def _track_graph(tape: Tape, players: list[Var], track_ids: list[int],
                 fwd: tuple[Var, Var], bwd: tuple[Var, Var], hidden: int) -> list[Var]:
    """每条轨迹独立跑轨迹 BLSTM，返回与检测一一对应的状态"""
    order: dict[int, list[int]] = {}
    for idx, tid in enumerate(track_ids):
        order.setdefault(tid, []).append(idx)
    states: list[Var | None] = [None] * len(players)
    for indices in order.values():
        outputs = _blstm(tape, [players[i] for i in indices], fwd, bwd, hidden)
        for i, out in zip(indices, outputs):
            states[i] = out
    return states


def _build(tape: Tape, enc: EncodedClip, params: ModelParams) -> ForwardTrace:
    cfg = params.config
    mode = cfg.mode
    H = cfg.hidden_dim
    leaves = {name: tape.leaf(value, name) for name, value in params.tensors.items()}
    dtype = leaves["event.W"].value.dtype
    T = enc.num_frames

    frame_ctx: list[Var] | None = None
    if mode.uses_frame_stream:
        F = tape.relu(tape.affine(leaves["frame_embed.W"], leaves["frame_embed.b"], tape.const(enc.frames.astype(dtype))))
        frame_ctx = _blstm(tape, tape.unstack(F),
                           (leaves["frame_fwd.W"], leaves["frame_fwd.b"]),
                           (leaves["frame_bwd.W"], leaves["frame_bwd.b"]), H)

    per_frame: list[Var | None] = [None] * T
    track_rows: list[np.ndarray] | None = None
    if mode.uses_players and enc.offsets[-1] > 0:
        P = tape.relu(tape.affine(leaves["player_embed.W"], leaves["player_embed.b"], tape.const(enc.players.astype(dtype))))
        if mode.uses_tracks:
            states = _track_graph(tape, tape.unstack(P), enc.track_ids,
                                  (leaves["track_fwd.W"], leaves["track_fwd.b"]),
                                  (leaves["track_bwd.W"], leaves["track_bwd.b"]), H)
            track_rows = []
            for t in range(T):
                lo, hi = enc.offsets[t], enc.offsets[t + 1]
                if hi > lo:
                    per_frame[t] = tape.stack(states[lo:hi])
                    track_rows.append(per_frame[t].value)
                else:
                    track_rows.append(np.zeros((0, 2 * H), dtype=dtype))
        else:
            for t in range(T):
                lo, hi = enc.offsets[t], enc.offsets[t + 1]
                if hi > lo:
                    per_frame[t] = tape.rows(P, lo, hi)
    elif mode.uses_tracks:
        track_rows = [np.zeros((0, 2 * H), dtype=dtype) for _ in range(T)]

    if mode.attends:
        W1 = leaves["phi.W1"]
        phi_ctx = tape.cols(W1, 0, cfg.context_dim)
        phi_rep = tape.cols(W1, cfg.context_dim, cfg.context_dim + cfg.repr_dim)

    gammas = [] if mode.attends else None
    attended = [] if mode.uses_players else None
    h_e, c_e = tape.zeros(H, dtype), tape.zeros(H, dtype)
    event_states = []
    for t in range(T):
        inputs = [frame_ctx[t]] if frame_ctx is not None else []
        if mode.uses_players:
            reps = per_frame[t]
            if reps is None:
                a = tape.zeros(cfg.repr_dim, dtype)
                if gammas is not None:
                    gammas.append(np.zeros(0, dtype=dtype))
            elif mode.attends:
                context = tape.concat(inputs + [h_e])
                a, gamma = _attend(tape, context, reps, phi_ctx, phi_rep,
                                   leaves["phi.b1"], leaves["phi.W2"], leaves["phi.b2"], cfg.tau)
                gammas.append(gamma.value)
            else:
                a = tape.mean_rows(reps)
            attended.append(a.value)
            inputs.append(a)
        x = inputs[0] if len(inputs) == 1 else tape.concat(inputs)
        h_e, c_e = tape.lstm_cell(x, h_e, c_e, leaves["event.W"], leaves["event.b"])
        event_states.append(h_e)

    HE = tape.stack(event_states)
    S = tape.affine(leaves["classifier.W"], None, HE)
    scores = S.value
    clip_scores = scores.mean(axis=0) if cfg.score_reduction == "mean" else scores[-1].copy()
    return ForwardTrace(
        frame_context=np.stack([h.value for h in frame_ctx]) if frame_ctx is not None else None,
        track_states=track_rows,
        gammas=gammas,
        attended=attended,
        event_states=HE.value,
        frame_scores=scores,
        clip_scores=clip_scores,
        clip_id=enc.clip_id,
        tape=tape,
        leaves=leaves,
        scores_var=S,
    )


# ---- 公开运算 ----

def lstm_cell(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              W: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """单步 LSTM（门顺序 i, f, o, g）"""
    tape = Tape()
    h, c = tape.lstm_cell(tape.const(x), tape.const(h_prev), tape.const(c_prev), tape.const(W), tape.const(b))
    return h.value, c.value


def blstm(sequence: list[np.ndarray], fwd_block: tuple[np.ndarray, np.ndarray],
          bwd_block: tuple[np.ndarray, np.ndarray]) -> list[np.ndarray]:
    """双向 LSTM，前向一半在前"""
    tape = Tape()
    hidden = fwd_block[0].shape[0] // 4
    outputs = _blstm(tape, [tape.const(x) for x in sequence],
                     tuple(tape.const(v) for v in fwd_block),
                     tuple(tape.const(v) for v in bwd_block), hidden)
    return [o.value for o in outputs]


def track_states(players: np.ndarray, track_ids: list[int | None],
                 fwd_block: tuple[np.ndarray, np.ndarray],
                 bwd_block: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """
    沿轨迹的 BLSTM 状态
    players 为按帧展开的嵌入后球员特征 (N, E)，track_ids 与之一一对应；返回 (N, 2H)
    """
    if any(tid is None for tid in track_ids):
        raise ValidationError("存在没有 track_id 的检测")
    players = np.asarray(players)
    if players.shape[0] != len(track_ids):
        raise ValidationError(f"球员特征 {players.shape[0]} 行与 track_id {len(track_ids)} 个不一致")
    if players.shape[0] == 0:
        return np.zeros((0, fwd_block[0].shape[0] // 2), dtype=players.dtype)
    tape = Tape()
    hidden = fwd_block[0].shape[0] // 4
    states = _track_graph(tape, tape.unstack(tape.const(players)), list(track_ids),
                          tuple(tape.const(v) for v in fwd_block),
                          tuple(tape.const(v) for v in bwd_block), hidden)
    return np.stack([s.value for s in states])


def attention(h_f_t: np.ndarray | None, reprs: np.ndarray, h_e_prev: np.ndarray,
              phi: dict[str, np.ndarray], tau: float) -> tuple[np.ndarray, np.ndarray]:
    """单帧注意力，phi 含 W1/b1/W2/b2；h_f_t 为 None 时上下文只有 h_e_prev"""
    reprs = np.asarray(reprs)
    if reprs.shape[0] == 0:
        return np.zeros(reprs.shape[1], dtype=reprs.dtype), np.zeros(0, dtype=reprs.dtype)
    tape = Tape()
    parts = ([tape.const(h_f_t)] if h_f_t is not None else []) + [tape.const(h_e_prev)]
    context = tape.concat(parts)
    ctx_dim = context.value.shape[0]
    W1 = tape.const(phi["W1"])
    a, gamma = _attend(tape, context, tape.const(reprs), tape.cols(W1, 0, ctx_dim),
                       tape.cols(W1, ctx_dim, W1.value.shape[1]),
                       tape.const(phi["b1"]), tape.const(phi["W2"]), tape.const(phi["b2"]), tau)
    return a.value, gamma.value


def avg_player(reprs: np.ndarray) -> np.ndarray:
    """球员表示的简单平均，N_t = 0 时为零向量"""
    reprs = np.asarray(reprs)
    if reprs.shape[0] == 0:
        return np.zeros(reprs.shape[1], dtype=reprs.dtype)
    return reprs.mean(axis=0)


def forward(clip: Clip | EncodedClip, params: ModelParams, cfg: ModelConfig | None = None) -> ForwardTrace:
    """整段前向；cfg 缺省取 params.config"""
    if cfg is not None and cfg != params.config:
        params = ModelParams(cfg, params.tensors)
    enc = clip if isinstance(clip, EncodedClip) else encode_clip(clip, params.config)
    return _build(Tape(), enc, params)


def training_label(label: int, cfg: ModelConfig) -> int:
    """数据集标签 -> 输出类下标；NEGATIVE 只在 K+1 类模型中合法（映射到 K）"""
    if label == NEGATIVE_LABEL:
        if not cfg.negative_class:
            raise ValidationError("分类训练中出现 NEGATIVE 片段（负例只用于 K+1 类检测训练）")
        return cfg.num_classes
    if not 0 <= label < cfg.num_classes:
        raise ValidationError(f"标签越界: {label}（K={cfg.num_classes}）")
    return label


def target_vector(label_index: int, num_outputs: int) -> np.ndarray:
    y = -np.ones(num_outputs)
    y[label_index] = 1.0
    return y


def clip_loss(trace: ForwardTrace, label: int, cfg: ModelConfig | None = None) -> float:
    """½ Σ_t Σ_k max(0, 1 − y_k·S_tk)²"""
    num_outputs = trace.frame_scores.shape[1]
    if cfg is not None:
        label = training_label(label, cfg)
    elif not 0 <= label < num_outputs:
        raise ValidationError(f"标签越界: {label}")
    y = target_vector(label, num_outputs)
    margins = np.maximum(0.0, 1.0 - y * trace.frame_scores.astype(np.float64))
    return float(0.5 * np.sum(margins * margins))


def backward(trace: ForwardTrace, label: int, params: ModelParams) -> dict[str, np.ndarray]:
    """沿前向记录带反传 clip_loss，返回与参数同名同形的梯度"""
    if trace.tape is None or trace.scores_var is None:
        raise ValidationError("该前向结果未保留记录带，无法反传")
    tape = trace.tape
    tape.zero_grad(trace.leaves.values())
    y = target_vector(training_label(label, params.config), trace.frame_scores.shape[1])
    loss = tape.squared_hinge(trace.scores_var, y)
    tape.backward(loss)
    grads = {}
    for name, value in params.tensors.items():
        g = trace.leaves[name].grad
        grads[name] = np.zeros_like(value) if g is None else g.astype(value.dtype, copy=False)
    return grads


def loss_and_grad(enc: EncodedClip, params: ModelParams) -> tuple[float, dict[str, np.ndarray]]:
    """单个片段的损失与梯度"""
    trace = forward(enc, params)
    loss = clip_loss(trace, training_label(enc.label, params.config))
    return loss, backward(trace, enc.label, params)
