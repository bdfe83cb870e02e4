"""
EventAttn - Training
批量训练循环：按 epoch 打乱、批内平均梯度、全局范数裁剪、RMSProp、按验证 mAP 选最优
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from tqdm import tqdm

from config import (
    DEFAULT_BASE_LR, DEFAULT_CLIP_NORM, DEFAULT_DECAY_EVERY, DEFAULT_DECAY_FACTOR,
    DEFAULT_EPSILON, DEFAULT_RHO,
)
from core_math import RMSProp, RmsPropState, clip_by_global_norm, lr_at_step
from errors import ConfigError, EmptyInputError, TrainingError, UndefinedAPError
from features import Clip
from metrics import classify_eval, rank_eval, score_clips
from model import EncodedClip, ModelConfig, ModelMode, ModelParams, encode_clip, forward, loss_and_grad

logger = logging.getLogger("eventattn")


@dataclass
class TrainConfig:
    """训练配置；step 指一个批次"""
    batch_size: int = 16
    base_lr: float = DEFAULT_BASE_LR
    decay_factor: float = DEFAULT_DECAY_FACTOR
    decay_every: int = DEFAULT_DECAY_EVERY
    max_steps: int = 5000
    clip_norm: float = DEFAULT_CLIP_NORM
    mode: str | None = None
    seed: int = 0
    eval_every: int = 500
    workers: int = 1
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON
    progress: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.eval_every < 1 or self.workers < 1:
            raise ConfigError("batch_size / eval_every / workers 必须 ≥ 1")
        if self.base_lr <= 0 or self.clip_norm <= 0 or self.decay_factor <= 0:
            raise ConfigError("base_lr / clip_norm / decay_factor 必须为正")
        if self.decay_every < 1:
            raise ConfigError(f"decay_every 必须 ≥ 1: {self.decay_every}")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps 不能为负: {self.max_steps}")
        if isinstance(self.mode, ModelMode):
            self.mode = self.mode.value
        if self.mode is not None and self.mode not in {m.value for m in ModelMode}:
            raise ConfigError(f"未知模型模式: {self.mode}")

    def learning_rate(self, step: int) -> float:
        return lr_at_step(step, self.base_lr, self.decay_factor, self.decay_every)


@dataclass
class Checkpoint:
    """训练结果：最优参数与训练记录"""
    params: ModelParams
    step: int
    train_config: TrainConfig
    history: list[dict] = field(default_factory=list)
    best_metric: float | None = None
    losses: list[float] = field(default_factory=list)

    def meta(self) -> dict:
        return {
            "train_config": self.train_config,
            "step": self.step,
            "history": self.history,
            "best_metric": self.best_metric,
        }


def _clip_grad(enc: EncodedClip, params: ModelParams) -> tuple[float, dict]:
    loss, grads = loss_and_grad(enc, params)
    if not np.isfinite(loss):
        raise TrainingError(f"片段 {enc.clip_id} 的损失非有限: {loss}", clip_id=enc.clip_id)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"片段 {enc.clip_id} 的参数 {name} 梯度非有限", param_name=name, clip_id=enc.clip_id)
    return loss, grads


def batch_gradient(batch: Sequence[EncodedClip], params: ModelParams,
                   executor: ThreadPoolExecutor | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """批内各片段梯度的平均；按片段顺序归约"""
    if not batch:
        raise EmptyInputError("批次为空")
    if executor is None:
        results = [_clip_grad(enc, params) for enc in batch]
    else:
        results = list(executor.map(lambda enc: _clip_grad(enc, params), batch))
    total = {name: np.zeros_like(value, dtype=np.float64) for name, value in params.tensors.items()}
    loss_sum = 0.0
    for loss, grads in results:
        loss_sum += loss
        for name, g in grads.items():
            total[name] += g
    n = len(batch)
    return loss_sum / n, {name: g / n for name, g in total.items()}


def _validation_map(encoded: list[EncodedClip], params: ModelParams) -> float | None:
    """验证集 mAP（只统计前 K 个事件类；NEGATIVE 片段作为所有类的负例）"""
    cfg = params.config
    scores = score_clips(lambda enc: forward(enc, params).clip_scores, encoded)
    try:
        return rank_eval(scores[:, :cfg.num_classes], [e.label for e in encoded], cfg.num_classes).map
    except UndefinedAPError:
        return None


class _BatchSampler:
    """每个 epoch 一个由种子决定的排列，跨 epoch 边界时接续下一个排列"""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng([seed, 5])
        self.order = self.rng.permutation(n)
        self.cursor = 0
        self.epoch = 0

    def next(self) -> list[int]:
        picked = []
        while len(picked) < self.batch_size:
            if self.cursor == self.n:
                self.order = self.rng.permutation(self.n)
                self.cursor = 0
                self.epoch += 1
            take = min(self.batch_size - len(picked), self.n - self.cursor)
            picked.extend(int(i) for i in self.order[self.cursor:self.cursor + take])
            self.cursor += take
        return picked


def train(dataset: Sequence[Clip], val_dataset: Sequence[Clip], cfg: TrainConfig,
          model_cfg: ModelConfig) -> Checkpoint:
    """训练并返回验证 mAP 最优的检查点（并列时取较晚的 step）；max_steps = 0 时返回初始化参数"""
    if not dataset:
        raise EmptyInputError("训练集为空")
    if not val_dataset:
        raise EmptyInputError("验证集为空")
    if cfg.mode is not None:
        model_cfg = replace(model_cfg, mode=ModelMode(cfg.mode))

    train_enc = [encode_clip(c, model_cfg) for c in dataset]
    val_enc = [encode_clip(c, model_cfg) for c in val_dataset]
    params = ModelParams.init(model_cfg, seed=cfg.seed)
    logger.info(f"开始训练: mode={model_cfg.mode.value}, 参数 {params.count()} 个, "
                f"训练 {len(train_enc)} / 验证 {len(val_enc)} 个片段, max_steps={cfg.max_steps}")
    if cfg.max_steps == 0:
        return Checkpoint(params=params, step=0, train_config=cfg)

    optimizer = RMSProp(RmsPropState(
        decay_rho=cfg.rho, epsilon=cfg.epsilon, base_lr=cfg.base_lr,
        decay_factor=cfg.decay_factor, decay_every=cfg.decay_every,
    ))
    sampler = _BatchSampler(len(train_enc), cfg.batch_size, cfg.seed)
    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    if executor is not None:
        logger.info(f"批内并行: {cfg.workers} 个工作线程（浮点归约顺序固定）")

    best = Checkpoint(params=params.copy(), step=0, train_config=cfg)
    history, losses = [], []
    try:
        with tqdm(total=cfg.max_steps, desc=model_cfg.mode.value, disable=not cfg.progress, leave=False) as bar:
            for step in range(1, cfg.max_steps + 1):
                batch = [train_enc[i] for i in sampler.next()]
                loss, grads = batch_gradient(batch, params.astype(np.float64), executor)
                clipped, norm = clip_by_global_norm(grads, cfg.clip_norm)
                optimizer.apply(params.tensors, clipped)
                losses.append(loss)
                bar.update(1)
                bar.set_postfix(loss=f"{loss:.4f}")
                logger.debug(f"step {step}: loss={loss:.6f} |g|={norm:.4f} lr={optimizer.state.learning_rate:.2e}")

                if step % cfg.eval_every == 0 or step == cfg.max_steps:
                    val_map = _validation_map(val_enc, params)
                    history.append({"step": step, "loss": loss, "val_map": val_map, "epoch": sampler.epoch})
                    logger.info(f"step {step}: loss={loss:.4f}, 验证 mAP={val_map}")
                    if val_map is not None and (best.best_metric is None or val_map >= best.best_metric):
                        best = Checkpoint(params=params.copy(), step=step, train_config=cfg, best_metric=val_map)
    finally:
        if executor is not None:
            executor.shutdown()

    if best.best_metric is None:
        logger.warning("验证 mAP 始终无定义，返回最后一步的参数")
        best = Checkpoint(params=params.copy(), step=cfg.max_steps, train_config=cfg)
    best.history = history
    best.losses = losses
    logger.info(f"训练结束: 最优 step={best.step}, 验证 mAP={best.best_metric}")
    return best


def ablation_sweep(dataset: Sequence[Clip], val_dataset: Sequence[Clip], test_dataset: Sequence[Clip],
                   cfg: TrainConfig, model_cfg: ModelConfig,
                   modes: Sequence[ModelMode] = tuple(ModelMode)) -> list[dict]:
    """依次训练各模式并在测试集上评估，返回比较表的行"""
    rows = []
    for mode in modes:
        checkpoint = train(dataset, val_dataset, replace(cfg, mode=mode.value), model_cfg)
        report = classify_eval(checkpoint.params, test_dataset)
        rows.append({
            "mode": mode.value,
            "best_step": checkpoint.step,
            "val_map": checkpoint.best_metric,
            "test_map": report.map,
            "per_class": report.per_class,
        })
        logger.info(f"消融 {mode.value}: 测试 mAP={report.map:.4f}")
    return rows
