"""
EventAttn - Core Math
数值内核：仿射变换、温度 softmax、RMSProp、梯度裁剪与有限差分梯度检查
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from config import (
    DEFAULT_BASE_LR, DEFAULT_DECAY_FACTOR, DEFAULT_DECAY_EVERY,
    DEFAULT_RHO, DEFAULT_EPSILON,
)
from errors import DimensionError, EmptyInputError, ParameterError, TrainingError

logger = logging.getLogger("eventattn")

FLOAT = np.float32


def affine(W: np.ndarray, b: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """Wx + b，float64 累加后转回 W 的精度

    x 可以是向量 (n,) 或按行排列的矩阵 (N, n)，后者返回 (N, m)。
    """
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise DimensionError("affine 形状不匹配", expected=f"W{W.shape} 列数", actual=f"x{x.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError("affine 偏置形状不匹配", expected=(W.shape[0],), actual=b.shape)
    out = np.asarray(x, dtype=np.float64) @ np.asarray(W, dtype=np.float64).T
    if b is not None:
        out = out + np.asarray(b, dtype=np.float64)
    return out.astype(W.dtype, copy=False)


def softmax_temp(scores: np.ndarray, tau: float) -> np.ndarray:
    """温度 softmax：先减最大值再除以 τ

    对整体平移 c 的不变性仅在 c = 0 时逐位精确；c ≠ 0 时减最大值的舍入会带来 ulp 级差异。
    """
    scores = np.asarray(scores)
    if scores.size == 0:
        raise EmptyInputError("softmax_temp 输入为空")
    if not tau > 0:
        raise ParameterError(f"softmax 温度必须为正: tau={tau}")
    dtype = scores.dtype if np.issubdtype(scores.dtype, np.floating) else FLOAT
    shifted = (scores.astype(np.float64) - np.max(scores).astype(np.float64)) / tau
    weights = np.exp(shifted)
    weights /= weights.sum()
    return weights.astype(dtype, copy=False)


def lr_at_step(step: int, base_lr: float, decay_factor: float, decay_every: int) -> float:
    """分段常数学习率：base_lr · decay_factor^floor(step / decay_every)"""
    return base_lr * decay_factor ** (step // decay_every)


@dataclass
class RmsPropState:
    """RMSProp 状态（朴素版本，非 centered）"""
    mean_square: dict[str, np.ndarray] = field(default_factory=dict)
    decay_rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON
    base_lr: float = DEFAULT_BASE_LR
    decay_factor: float = DEFAULT_DECAY_FACTOR
    decay_every: int = DEFAULT_DECAY_EVERY
    step_count: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay_rho < 1.0:
            raise ParameterError(f"rho 必须在 (0,1) 内: {self.decay_rho}")
        if self.epsilon <= 0 or self.base_lr <= 0:
            raise ParameterError("epsilon 与学习率必须为正")
        if self.decay_every < 1:
            raise ParameterError(f"decay_every 必须 ≥ 1: {self.decay_every}")

    @property
    def learning_rate(self) -> float:
        return lr_at_step(self.step_count, self.base_lr, self.decay_factor, self.decay_every)


def rmsprop_step(param: np.ndarray, grad: np.ndarray, state: RmsPropState,
                 name: str = "param") -> np.ndarray:
    """单个张量的一步 RMSProp 更新，返回新参数并原地更新 mean_square

    step_count 不在这里递增，由 RMSProp.apply 每个批次递增一次。
    """
    if param.shape != grad.shape:
        raise DimensionError(f"参数 {name} 与梯度形状不一致", expected=param.shape, actual=grad.shape)
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"参数 {name} 的梯度含 NaN/Inf", param_name=name)

    g = np.asarray(grad, dtype=np.float64)
    s = state.mean_square.get(name)
    if s is None:
        s = np.zeros(param.shape, dtype=np.float64)
    else:
        s = s.astype(np.float64)
    rho = state.decay_rho
    s = rho * s + (1.0 - rho) * g * g
    updated = param.astype(np.float64) - state.learning_rate * g / (np.sqrt(s) + state.epsilon)
    state.mean_square[name] = s.astype(param.dtype)
    return updated.astype(param.dtype)


class RMSProp:
    """按名字管理参数的 RMSProp 优化器，单写者"""

    def __init__(self, state: RmsPropState | None = None):
        self.state = state or RmsPropState()

    def apply(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        """原地更新 params 中所有有梯度的张量，然后 step_count += 1"""
        for name in params:
            if name not in grads:
                continue
            params[name] = rmsprop_step(params[name], grads[name], self.state, name)
        self.state.step_count += 1


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    """所有梯度拼接后的 L2 范数"""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    """全局范数裁剪，返回 (裁剪后的梯度, 裁剪前范数)"""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: (g * scale).astype(g.dtype) for name, g in grads.items()}, norm


@dataclass
class GradCheckResult:
    """有限差分检查结果"""
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple | None
    checked: int


def finite_diff_check(
    loss_fn: Callable[[dict[str, np.ndarray]], float],
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    epsilon: float = 1e-4,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
    names: list[str] | None = None,
) -> GradCheckResult:
    """中心差分 (f(x+ε) − f(x−ε)) / 2ε 与解析梯度逐坐标比较

    sample 为每个参数抽查的坐标数（None 表示全部）。
    返回最大相对误差 |a−n| / max(|a|, |n|, 1e-8) 及最差坐标。
    """
    if not 1e-5 <= epsilon <= 1e-2:
        raise ParameterError(f"epsilon 应在 [1e-5, 1e-2] 内: {epsilon}")
    rng = rng or np.random.default_rng(0)
    worst = GradCheckResult(0.0, None, None, 0)

    for name in names or list(params):
        tensor = params[name] = np.ascontiguousarray(params[name])
        analytic = np.asarray(grads[name], dtype=np.float64)
        flat = tensor.reshape(-1)
        if sample is None or sample >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=sample, replace=False)

        for idx in coords:
            original = flat[idx]
            flat[idx] = original + epsilon
            f_plus = loss_fn(params)
            flat[idx] = original - epsilon
            f_minus = loss_fn(params)
            flat[idx] = original

            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic.reshape(-1)[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst.checked += 1
            if rel > worst.max_rel_error:
                worst.max_rel_error = float(rel)
                worst.worst_param = name
                worst.worst_index = tuple(int(i) for i in np.unravel_index(idx, tensor.shape))

    if worst.worst_param is not None:
        logger.debug(f"梯度检查最差坐标: {worst.worst_param}{worst.worst_index} 相对误差 {worst.max_rel_error:.3e}")
    return worst
