"""
EventAttn - Tape
反向模式梯度记录带：按执行顺序记录每个运算及其解析伴随，backward 时逆序回放
"""

import numpy as np
from scipy.special import expit

from core_math import affine as affine_kernel, softmax_temp as softmax_kernel
from errors import DimensionError


class Var:
    """记录带上的一个值节点"""
    __slots__ = ("value", "grad", "name", "requires_grad")

    def __init__(self, value: np.ndarray, name: str | None = None, requires_grad: bool = True):
        self.value = value
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(name={self.name}, shape={self.shape})"


class Tape:
    """按前向顺序记录运算，backward() 逆序累加梯度"""

    def __init__(self):
        self._ops: list[tuple[tuple[Var, ...], callable]] = []

    def __len__(self) -> int:
        return len(self._ops)

    # ---- 叶子 ----

    def leaf(self, value: np.ndarray, name: str | None = None) -> Var:
        return Var(np.asarray(value), name=name, requires_grad=True)

    def const(self, value: np.ndarray) -> Var:
        return Var(np.asarray(value), requires_grad=False)

    def zeros(self, size: int, dtype=np.float64) -> Var:
        return self.const(np.zeros(size, dtype=dtype))

    # ---- 内部工具 ----

    def _record(self, inputs, outputs, backward) -> None:
        needs = any(v is not None and v.requires_grad for v in inputs)
        for out in outputs:
            out.requires_grad = needs
        if needs:
            self._ops.append((tuple(outputs), backward))

    @staticmethod
    def _acc(var: Var | None, g: np.ndarray) -> None:
        if var is None or not var.requires_grad:
            return
        if var.grad is None:
            var.grad = np.array(g, dtype=var.value.dtype, copy=True)
        else:
            var.grad += g

    def zero_grad(self, leaves=()) -> None:
        """清空已记录节点与给定叶子的梯度，便于同一记录带再次反传"""
        for outputs, _ in self._ops:
            for out in outputs:
                out.grad = None
        for leaf in leaves:
            leaf.grad = None

    def backward(self, loss: Var) -> None:
        """从标量 loss 反传"""
        if loss.value.size != 1:
            raise DimensionError("backward 需要标量 loss", expected=1, actual=loss.value.size)
        loss.grad = np.ones_like(loss.value)
        for outputs, fn in reversed(self._ops):
            if all(o.grad is None for o in outputs):
                continue
            fn()

    # ---- 运算 ----

    def affine(self, W: Var, b: Var | None, x: Var) -> Var:
        """x W^T + b；x 为向量或按行矩阵"""
        out = Var(affine_kernel(W.value, None if b is None else b.value, x.value))

        def backward():
            g = out.grad
            if x.value.ndim == 1:
                self._acc(W, np.outer(g, x.value))
                self._acc(b, g)
            else:
                self._acc(W, g.T @ x.value)
                self._acc(b, g.sum(axis=0))
            self._acc(x, g @ W.value)

        self._record((W, b, x), (out,), backward)
        return out

    def relu(self, x: Var) -> Var:
        mask = x.value > 0
        out = Var(np.where(mask, x.value, 0).astype(x.value.dtype))

        def backward():
            self._acc(x, out.grad * mask)

        self._record((x,), (out,), backward)
        return out

    def tanh(self, x: Var) -> Var:
        y = np.tanh(x.value)
        out = Var(y)

        def backward():
            self._acc(x, out.grad * (1.0 - y * y))

        self._record((x,), (out,), backward)
        return out

    def add_row(self, M: Var, v: Var) -> Var:
        """矩阵每一行加同一个向量"""
        out = Var(M.value + v.value)

        def backward():
            self._acc(M, out.grad)
            self._acc(v, out.grad.sum(axis=0))

        self._record((M, v), (out,), backward)
        return out

    def concat(self, parts: list[Var]) -> Var:
        """一维向量拼接"""
        sizes = [p.value.shape[0] for p in parts]
        out = Var(np.concatenate([p.value for p in parts]))

        def backward():
            offset = 0
            for p, n in zip(parts, sizes):
                self._acc(p, out.grad[offset:offset + n])
                offset += n

        self._record(parts, (out,), backward)
        return out

    def row(self, M: Var, i: int) -> Var:
        out = Var(M.value[i].copy())

        def backward():
            g = np.zeros_like(M.value)
            g[i] = out.grad
            self._acc(M, g)

        self._record((M,), (out,), backward)
        return out

    def rows(self, M: Var, start: int, stop: int) -> Var:
        out = Var(M.value[start:stop].copy())

        def backward():
            g = np.zeros_like(M.value)
            g[start:stop] = out.grad
            self._acc(M, g)

        self._record((M,), (out,), backward)
        return out

    def cols(self, W: Var, start: int, stop: int) -> Var:
        """取矩阵的列块（把拼接输入的权重拆成分块）"""
        out = Var(np.ascontiguousarray(W.value[:, start:stop]))

        def backward():
            g = np.zeros_like(W.value)
            g[:, start:stop] = out.grad
            self._acc(W, g)

        self._record((W,), (out,), backward)
        return out

    def unstack(self, M: Var) -> list[Var]:
        """按行拆成向量列表，整体作为一个运算记录"""
        outs = [Var(M.value[i].copy()) for i in range(M.value.shape[0])]

        def backward():
            g = np.zeros_like(M.value)
            for i, out in enumerate(outs):
                if out.grad is not None:
                    g[i] = out.grad
            self._acc(M, g)

        self._record((M,), outs, backward)
        return outs

    def stack(self, parts: list[Var]) -> Var:
        """向量列表 -> 按行矩阵"""
        out = Var(np.stack([p.value for p in parts]))

        def backward():
            for i, p in enumerate(parts):
                self._acc(p, out.grad[i])

        self._record(parts, (out,), backward)
        return out

    def flatten(self, M: Var) -> Var:
        shape = M.value.shape
        out = Var(M.value.reshape(-1).copy())

        def backward():
            self._acc(M, out.grad.reshape(shape))

        self._record((M,), (out,), backward)
        return out

    def mean_rows(self, M: Var) -> Var:
        n = M.value.shape[0]
        out = Var(M.value.mean(axis=0))

        def backward():
            self._acc(M, np.broadcast_to(out.grad / n, M.value.shape))

        self._record((M,), (out,), backward)
        return out

    def softmax_temp(self, scores: Var, tau: float) -> Var:
        """温度 softmax，伴随为 γ ⊙ (g − Σγg) / τ"""
        gamma = softmax_kernel(scores.value, tau)
        out = Var(gamma)

        def backward():
            g = out.grad
            self._acc(scores, gamma * (g - np.dot(gamma, g)) / tau)

        self._record((scores,), (out,), backward)
        return out

    def weighted_sum(self, gamma: Var, R: Var) -> Var:
        """Σ_i γ_i · R_i"""
        out = Var(gamma.value @ R.value)

        def backward():
            g = out.grad
            self._acc(gamma, R.value @ g)
            self._acc(R, np.outer(gamma.value, g))

        self._record((gamma, R), (out,), backward)
        return out

    def lstm_cell(self, x: Var, h_prev: Var, c_prev: Var, W: Var, b: Var) -> tuple[Var, Var]:
        """融合 LSTM 单元；门顺序 (i, f, o, g)，W 作用于拼接的 (x, h_prev)"""
        n_in = x.value.shape[0]
        H = h_prev.value.shape[0]
        if W.value.shape != (4 * H, n_in + H):
            raise DimensionError("LSTM 权重形状不匹配", expected=(4 * H, n_in + H), actual=W.value.shape)
        z = np.concatenate([x.value, h_prev.value])
        gates = affine_kernel(W.value, b.value, z)
        i = expit(gates[:H])
        f = expit(gates[H:2 * H])
        o = expit(gates[2 * H:3 * H])
        g = np.tanh(gates[3 * H:])
        c = f * c_prev.value + i * g
        tc = np.tanh(c)
        h_out = Var(o * tc)
        c_out = Var(c)

        def backward():
            dh = h_out.grad if h_out.grad is not None else 0.0
            dc = c_out.grad if c_out.grad is not None else 0.0
            d_o = dh * tc
            dc_total = dc + dh * o * (1.0 - tc * tc)
            d_i = dc_total * g
            d_f = dc_total * c_prev.value
            d_g = dc_total * i
            d_gates = np.concatenate([
                d_i * i * (1.0 - i),
                d_f * f * (1.0 - f),
                d_o * o * (1.0 - o),
                d_g * (1.0 - g * g),
            ])
            self._acc(W, np.outer(d_gates, z))
            self._acc(b, d_gates)
            dz = d_gates @ W.value
            self._acc(x, dz[:n_in])
            self._acc(h_prev, dz[n_in:])
            self._acc(c_prev, dc_total * f)

        self._record((x, h_prev, c_prev, W, b), (h_out, c_out), backward)
        return h_out, c_out

    def squared_hinge(self, S: Var, y: np.ndarray) -> Var:
        """½ Σ_t Σ_k max(0, 1 − y_k S_tk)²，y ∈ {+1, −1}^K"""
        margins = np.maximum(0.0, 1.0 - y * S.value)
        out = Var(np.asarray(0.5 * np.sum(margins * margins), dtype=S.value.dtype))

        def backward():
            self._acc(S, -out.grad * y * margins)

        self._record((S,), (out,), backward)
        return out
