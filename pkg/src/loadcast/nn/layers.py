"""Layer math: forward passes and exact reverse-mode gradients.

Two parallel routes live here on purpose. The functional, single-sample
operations (lstm_cell_step, lstm_layer_forward, conv1d_forward, ...) spell
out the defining equations and serve as readable oracles. The *Runtime
classes are independently written, batch-vectorized implementations used by
the trainer; the test suite cross-checks the two against each other and
against finite differences.

All arrays are float64, batch axis first on the runtime path.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import (
    KernelLargerThanInput,
    MissingForwardCache,
    ShapeMismatch,
    WindowLargerThanInput,
)


def sigmoid(x):
    """Numerically stable logistic; never exponentiates a positive argument."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


ACTIVATIONS = ("relu", "linear", "sigmoid", "tanh")


def apply_activation(name: str, x: np.ndarray) -> np.ndarray:
    if name == "linear":
        return x
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad_from_output(name: str, y: np.ndarray) -> np.ndarray:
    """d activation / d pre-activation, expressed through the output value.

    relu uses y > 0, which fixes the subgradient at 0 to 0.
    """
    if name == "linear":
        return np.ones_like(y)
    if name == "relu":
        return (y > 0.0).astype(np.float64)
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "tanh":
        return 1.0 - y * y
    raise ValueError(f"unknown activation {name!r}")


# -------------------------------------------------------------------------
# recurrent cell parameters
# -------------------------------------------------------------------------

LSTM_WEIGHT_NAMES = ("w_ix", "w_fx", "w_cx", "w_ox", "w_ih", "w_fh", "w_ch", "w_oh")
LSTM_BIAS_NAMES = ("b_i", "b_f", "b_c", "b_o")
LSTM_PARAM_NAMES = LSTM_WEIGHT_NAMES + LSTM_BIAS_NAMES


@dataclass
class LstmParams:
    """Gate weights of one LSTM direction.

    w_*x map the input (h x d), w_*h the previous hidden state (h x h),
    b_* are the gate biases (h).
    """

    w_ix: np.ndarray
    w_fx: np.ndarray
    w_cx: np.ndarray
    w_ox: np.ndarray
    w_ih: np.ndarray
    w_fh: np.ndarray
    w_ch: np.ndarray
    w_oh: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        h, d = self.w_ix.shape
        for name in ("w_fx", "w_cx", "w_ox"):
            if getattr(self, name).shape != (h, d):
                raise ShapeMismatch(f"{name} must be {(h, d)}")
        for name in ("w_ih", "w_fh", "w_ch", "w_oh"):
            if getattr(self, name).shape != (h, h):
                raise ShapeMismatch(f"{name} must be {(h, h)}")
        for name in LSTM_BIAS_NAMES:
            if getattr(self, name).shape != (h,):
                raise ShapeMismatch(f"{name} must be {(h,)}")

    @property
    def hidden_size(self) -> int:
        return self.w_ix.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_ix.shape[1]


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


@dataclass
class BiLstmParams:
    """Two LSTM directions plus the linear combination head.

    The per-step output is w_y_fwd @ h_fwd(t) + w_y_rev @ h_rev(t) + b_y,
    where the reverse hidden states are re-aligned to position t.
    """

    forward: LstmParams
    reverse: LstmParams
    w_y_fwd: np.ndarray
    w_y_rev: np.ndarray
    b_y: np.ndarray

    def __post_init__(self):
        h = self.forward.hidden_size
        if self.reverse.hidden_size != h:
            raise ShapeMismatch("forward and reverse hidden sizes must match")
        out = self.b_y.shape[0]
        if self.w_y_fwd.shape != (out, h) or self.w_y_rev.shape != (out, h):
            raise ShapeMismatch(f"output weights must be {(out, h)}")


# -------------------------------------------------------------------------
# functional single-sample forwards (reference path)
# -------------------------------------------------------------------------

def lstm_cell_step(x_t: np.ndarray, prev: LstmState, p: LstmParams) -> LstmState:
    """One gated update.

    i = sigma(w_ix x + w_ih h + b_i)        input gate
    f = sigma(w_fx x + w_fh h + b_f)        forget gate
    g = tanh (w_cx x + w_ch h + b_c)        candidate cell value
    o = sigma(w_ox x + w_oh h + b_o)        output gate
    c' = f * c + i * g
    h' = o * tanh(c')
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev, c_prev = prev
    if x_t.shape != (p.input_size,):
        raise ShapeMismatch(f"x_t must be {(p.input_size,)}, got {x_t.shape}")
    if h_prev.shape != (p.hidden_size,) or c_prev.shape != (p.hidden_size,):
        raise ShapeMismatch("state vectors must match the hidden size")
    i = sigmoid(p.w_ix @ x_t + p.w_ih @ h_prev + p.b_i)
    f = sigmoid(p.w_fx @ x_t + p.w_fh @ h_prev + p.b_f)
    g = np.tanh(p.w_cx @ x_t + p.w_ch @ h_prev + p.b_c)
    o = sigmoid(p.w_ox @ x_t + p.w_oh @ h_prev + p.b_o)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return LstmState(h=h, c=c)


def zero_state(hidden_size: int) -> LstmState:
    return LstmState(h=np.zeros(hidden_size), c=np.zeros(hidden_size))


def lstm_layer_forward(seq: np.ndarray, p: LstmParams,
                       return_sequences: bool = True) -> np.ndarray:
    """Run the cell left to right from a zero state over a (T, d) sequence."""
    seq = np.atleast_2d(np.asarray(seq, dtype=np.float64))
    if seq.shape[1] != p.input_size:
        raise ShapeMismatch(f"sequence features {seq.shape[1]} != input size {p.input_size}")
    state = zero_state(p.hidden_size)
    hs = np.empty((seq.shape[0], p.hidden_size))
    for t in range(seq.shape[0]):
        state = lstm_cell_step(seq[t], state, p)
        hs[t] = state.h
    return hs if return_sequences else hs[-1]


def bilstm_layer_forward(seq: np.ndarray, p: BiLstmParams,
                         return_sequences: bool = True) -> np.ndarray:
    """Forward and reverse passes combined linearly per time step.

    The reverse pass consumes the time-reversed sequence; its hidden outputs
    are re-reversed so position t of both directions describes the same hour.
    """
    seq = np.atleast_2d(np.asarray(seq, dtype=np.float64))
    h_fwd = lstm_layer_forward(seq, p.forward, return_sequences=True)
    h_rev = lstm_layer_forward(seq[::-1], p.reverse, return_sequences=True)[::-1]
    y = h_fwd @ p.w_y_fwd.T + h_rev @ p.w_y_rev.T + p.b_y
    return y if return_sequences else y[-1]


def conv1d_forward(seq: np.ndarray, kernels: np.ndarray, bias: np.ndarray,
                   stride: int = 1) -> np.ndarray:
    """Valid (unpadded) 1-D convolution of a (T, c) sequence.

    kernels has shape (filters, kernel, c); output row t' covers input rows
    [t'*stride, t'*stride + kernel).
    """
    seq = np.atleast_2d(np.asarray(seq, dtype=np.float64))
    f, k, c = kernels.shape
    t_in = seq.shape[0]
    if seq.shape[1] != c:
        raise ShapeMismatch(f"sequence channels {seq.shape[1]} != kernel channels {c}")
    if t_in < k:
        raise KernelLargerThanInput(f"kernel {k} exceeds sequence length {t_in}")
    t_out = (t_in - k) // stride + 1
    out = np.empty((t_out, f))
    for t in range(t_out):
        window = seq[t * stride:t * stride + k]          # (k, c)
        out[t] = np.tensordot(kernels, window, axes=([1, 2], [0, 1])) + bias
    return out


def maxpool1d_forward(seq: np.ndarray, size: int) -> np.ndarray:
    """Non-overlapping max over blocks of `size` rows; remainder rows drop.

    Ties go to the earliest index, which matters only for gradient routing.
    """
    seq = np.atleast_2d(np.asarray(seq, dtype=np.float64))
    t_in = seq.shape[0]
    if t_in < size:
        raise WindowLargerThanInput(f"pool size {size} exceeds sequence length {t_in}")
    t_out = t_in // size
    return seq[:t_out * size].reshape(t_out, size, -1).max(axis=1)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  activation: str = "linear") -> np.ndarray:
    """activation(W x + b) for a flat input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"W {w.shape} does not accept input {x.shape}")
    return apply_activation(activation, w @ x + b)


# -------------------------------------------------------------------------
# batched runtimes (training path)
# -------------------------------------------------------------------------

class _ParamViews:
    """Named parameter and gradient views into a flat store."""

    def __init__(self, params: dict, grads: dict):
        self.p = params
        self.g = grads


class LayerRuntime:
    """Forward caches whatever its backward needs; backward accumulates
    parameter gradients into the store views and returns d(input)."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self, cache):
        if cache is None:
            raise MissingForwardCache(
                f"{type(self).__name__}.backward called before forward")
        return cache


class DenseRuntime(LayerRuntime):
    def __init__(self, views: _ParamViews, activation: str):
        self.v = views
        self.activation = activation
        self._cache = None

    def forward(self, x):
        y = apply_activation(self.activation, x @ self.v.p["w"].T + self.v.p["b"])
        self._cache = (x, y)
        return y

    def backward(self, dout):
        x, y = self._need_cache(self._cache)
        dpre = dout * activation_grad_from_output(self.activation, y)
        self.v.g["w"] += dpre.T @ x
        self.v.g["b"] += dpre.sum(axis=0)
        return dpre @ self.v.p["w"]


class TimeDistributedDenseRuntime(LayerRuntime):
    """Dense applied identically at every time step of a (B, T, C) input."""

    def __init__(self, views: _ParamViews, activation: str):
        self.v = views
        self.activation = activation
        self._cache = None

    def forward(self, x):
        y = apply_activation(self.activation, x @ self.v.p["w"].T + self.v.p["b"])
        self._cache = (x, y)
        return y

    def backward(self, dout):
        x, y = self._need_cache(self._cache)
        dpre = dout * activation_grad_from_output(self.activation, y)
        units, c = self.v.p["w"].shape
        self.v.g["w"] += dpre.reshape(-1, units).T @ x.reshape(-1, c)
        self.v.g["b"] += dpre.sum(axis=(0, 1))
        return dpre @ self.v.p["w"]


class Conv1DRuntime(LayerRuntime):
    def __init__(self, views: _ParamViews, stride: int):
        self.v = views
        self.stride = stride
        self._cache = None

    def forward(self, x):
        w = self.v.p["w"]                               # (f, k, c)
        f, k, c = w.shape
        if x.shape[1] < k:
            raise KernelLargerThanInput(
                f"kernel {k} exceeds sequence length {x.shape[1]}")
        windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=1)
        windows = windows[:, ::self.stride]             # (B, T', c, k)
        out = np.einsum("btck,fkc->btf", windows, w) + self.v.p["b"]
        self._cache = (x.shape, windows)
        return out

    def backward(self, dout):
        x_shape, windows = self._need_cache(self._cache)
        w = self.v.p["w"]
        f, k, c = w.shape
        self.v.g["w"] += np.einsum("btf,btck->fkc", dout, windows)
        self.v.g["b"] += dout.sum(axis=(0, 1))
        dx = np.zeros(x_shape)
        t_out = dout.shape[1]
        positions = self.stride * np.arange(t_out)
        for kk in range(k):
            # distinct positions for fixed kk, so plain += is safe
            dx[:, positions + kk, :] += dout @ w[:, kk, :]
        return dx


class MaxPool1DRuntime(LayerRuntime):
    def __init__(self, size: int):
        self.size = size
        self._cache = None

    def forward(self, x):
        b, t, c = x.shape
        if t < self.size:
            raise WindowLargerThanInput(
                f"pool size {self.size} exceeds sequence length {t}")
        t_out = t // self.size
        blocks = x[:, :t_out * self.size].reshape(b, t_out, self.size, c)
        idx = blocks.argmax(axis=2)                     # first max wins ties
        out = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]
        self._cache = (x.shape, idx)
        return out

    def backward(self, dout):
        x_shape, idx = self._need_cache(self._cache)
        b, t, c = x_shape
        t_out = idx.shape[1]
        dblocks = np.zeros((b, t_out, self.size, c))
        np.put_along_axis(dblocks, idx[:, :, None, :], dout[:, :, None, :], axis=2)
        dx = np.zeros(x_shape)
        dx[:, :t_out * self.size] = dblocks.reshape(b, t_out * self.size, c)
        return dx


class FlattenRuntime(LayerRuntime):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._need_cache(self._cache))


class _LstmCoreRuntime:
    """Batched single-direction LSTM over (B, T, d); full BPTT on backward."""

    def __init__(self, views: _ParamViews, prefix: str = ""):
        self.v = views
        self.prefix = prefix
        self._cache = None

    def _p(self, name):
        return self.v.p[self.prefix + name]

    def _g(self, name):
        return self.v.g[self.prefix + name]

    def forward(self, x):
        b, t, _ = x.shape
        hsz = self._p("w_ih").shape[0]
        i_t = np.empty((b, t, hsz))
        f_t = np.empty((b, t, hsz))
        g_t = np.empty((b, t, hsz))
        o_t = np.empty((b, t, hsz))
        c_t = np.empty((b, t, hsz))
        tc_t = np.empty((b, t, hsz))
        h_prev = np.zeros((b, t, hsz))
        c_prev = np.zeros((b, t, hsz))
        h = np.zeros((b, hsz))
        c = np.zeros((b, hsz))
        hs = np.empty((b, t, hsz))
        for step in range(t):
            xt = x[:, step]
            h_prev[:, step] = h
            c_prev[:, step] = c
            i = sigmoid(xt @ self._p("w_ix").T + h @ self._p("w_ih").T + self._p("b_i"))
            f = sigmoid(xt @ self._p("w_fx").T + h @ self._p("w_fh").T + self._p("b_f"))
            g = np.tanh(xt @ self._p("w_cx").T + h @ self._p("w_ch").T + self._p("b_c"))
            o = sigmoid(xt @ self._p("w_ox").T + h @ self._p("w_oh").T + self._p("b_o"))
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            i_t[:, step], f_t[:, step], g_t[:, step], o_t[:, step] = i, f, g, o
            c_t[:, step], tc_t[:, step], hs[:, step] = c, tc, h
        self._cache = (x, i_t, f_t, g_t, o_t, c_t, tc_t, h_prev, c_prev)
        return hs

    def backward(self, dhs):
        x, i_t, f_t, g_t, o_t, c_t, tc_t, h_prev, c_prev = self._need_cache()
        b, t, _ = x.shape
        dx = np.empty_like(x)
        dh_next = np.zeros_like(dhs[:, 0])
        dc_next = np.zeros_like(dhs[:, 0])
        for step in reversed(range(t)):
            i, f, g, o = i_t[:, step], f_t[:, step], g_t[:, step], o_t[:, step]
            tc = tc_t[:, step]
            dh = dhs[:, step] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev[:, step]
            dc_next = dc * f
            da_i = di * i * (1.0 - i)
            da_f = df * f * (1.0 - f)
            da_o = do * o * (1.0 - o)
            da_g = dg * (1.0 - g * g)
            xt = x[:, step]
            hp = h_prev[:, step]
            self._g("w_ix")[...] += da_i.T @ xt
            self._g("w_fx")[...] += da_f.T @ xt
            self._g("w_cx")[...] += da_g.T @ xt
            self._g("w_ox")[...] += da_o.T @ xt
            self._g("w_ih")[...] += da_i.T @ hp
            self._g("w_fh")[...] += da_f.T @ hp
            self._g("w_ch")[...] += da_g.T @ hp
            self._g("w_oh")[...] += da_o.T @ hp
            self._g("b_i")[...] += da_i.sum(axis=0)
            self._g("b_f")[...] += da_f.sum(axis=0)
            self._g("b_c")[...] += da_g.sum(axis=0)
            self._g("b_o")[...] += da_o.sum(axis=0)
            dx[:, step] = (da_i @ self._p("w_ix") + da_f @ self._p("w_fx")
                           + da_g @ self._p("w_cx") + da_o @ self._p("w_ox"))
            dh_next = (da_i @ self._p("w_ih") + da_f @ self._p("w_fh")
                       + da_g @ self._p("w_ch") + da_o @ self._p("w_oh"))
        return dx

    def _need_cache(self):
        if self._cache is None:
            raise MissingForwardCache("LSTM backward called before forward")
        return self._cache


class LstmRuntime(LayerRuntime):
    def __init__(self, views: _ParamViews, return_sequences: bool):
        self.core = _LstmCoreRuntime(views)
        self.return_sequences = return_sequences
        self._t = None

    def forward(self, x):
        self._t = x.shape[1]
        hs = self.core.forward(x)
        return hs if self.return_sequences else hs[:, -1]

    def backward(self, dout):
        if self.return_sequences:
            return self.core.backward(dout)
        dhs = np.zeros((dout.shape[0], self._t, dout.shape[1]))
        dhs[:, -1] = dout
        return self.core.backward(dhs)


class BiLstmRuntime(LayerRuntime):
    """Concatenates forward-direction and reverse-direction hidden states.

    With return_sequences the reverse states are re-aligned in time before
    concatenation; without it the output pairs the forward pass's final
    state with the reverse pass's final state (which describes t = 0).
    """

    def __init__(self, views: _ParamViews, return_sequences: bool):
        self.fwd = _LstmCoreRuntime(views, prefix="fwd_")
        self.rev = _LstmCoreRuntime(views, prefix="rev_")
        self.return_sequences = return_sequences
        self._t = None

    def forward(self, x):
        self._t = x.shape[1]
        hs_f = self.fwd.forward(x)
        hs_r = self.rev.forward(np.ascontiguousarray(x[:, ::-1]))
        if self.return_sequences:
            return np.concatenate([hs_f, hs_r[:, ::-1]], axis=2)
        return np.concatenate([hs_f[:, -1], hs_r[:, -1]], axis=1)

    def backward(self, dout):
        h = self.fwd._p("w_ih").shape[0]
        if self.return_sequences:
            d_f = np.ascontiguousarray(dout[:, :, :h])
            d_r = np.ascontiguousarray(dout[:, ::-1, h:])
        else:
            b = dout.shape[0]
            d_f = np.zeros((b, self._t, h))
            d_r = np.zeros((b, self._t, h))
            d_f[:, -1] = dout[:, :h]
            d_r[:, -1] = dout[:, h:]
        dx_f = self.fwd.backward(d_f)
        dx_r = self.rev.backward(d_r)
        return dx_f + dx_r[:, ::-1]
