"""Model assembly: declarative layer stacks over a flat parameter vector.

A ModelSpec is an ordered tuple of layer descriptions plus the input shape
(timesteps, channels). Parameters for the whole stack live in one flat
float64 vector (ParamStore) with a layout table mapping each layer's named
matrices into it; gradients mirror the layout exactly, which fixes the
accumulation order and keeps runs bit-reproducible.
"""

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..errors import ShapeMismatch
from . import layers as L

# -- layer descriptions ----------------------------------------------------


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "linear"


@dataclass(frozen=True)
class TimeDistributedDense:
    units: int
    activation: str = "linear"


@dataclass(frozen=True)
class Conv1D:
    filters: int
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class MaxPool1D:
    size: int


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Lstm:
    units: int
    return_sequences: bool = False


@dataclass(frozen=True)
class BiLstm:
    units: int
    return_sequences: bool = False


LayerSpec = Union[Dense, TimeDistributedDense, Conv1D, MaxPool1D, Flatten,
                  Lstm, BiLstm]


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_shape: tuple = (24, 1)    # (timesteps, channels)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        infer_shapes(self)          # validates composition eagerly


def infer_shapes(spec: ModelSpec) -> list:
    """Shape after each layer; raises ShapeMismatch on bad composition.

    Sequence shapes are (T, C) tuples, flat shapes (D,) singletons.
    """
    shapes = [spec.input_shape]
    cur = spec.input_shape
    for li, layer in enumerate(spec.layers):
        where = f"layer {li} ({type(layer).__name__})"
        if isinstance(layer, Dense):
            if len(cur) != 1:
                raise ShapeMismatch(f"{where}: needs a flat input, got {cur}")
            if layer.activation not in L.ACTIVATIONS:
                raise ShapeMismatch(f"{where}: unknown activation {layer.activation!r}")
            cur = (layer.units,)
        elif isinstance(layer, TimeDistributedDense):
            if len(cur) != 2:
                raise ShapeMismatch(f"{where}: needs a (T, C) input, got {cur}")
            if layer.activation not in L.ACTIVATIONS:
                raise ShapeMismatch(f"{where}: unknown activation {layer.activation!r}")
            cur = (cur[0], layer.units)
        elif isinstance(layer, Conv1D):
            if len(cur) != 2:
                raise ShapeMismatch(f"{where}: needs a (T, C) input, got {cur}")
            t, _ = cur
            if t < layer.kernel:
                raise ShapeMismatch(f"{where}: kernel {layer.kernel} exceeds T={t}")
            cur = ((t - layer.kernel) // layer.stride + 1, layer.filters)
        elif isinstance(layer, MaxPool1D):
            if len(cur) != 2:
                raise ShapeMismatch(f"{where}: needs a (T, C) input, got {cur}")
            t, c = cur
            if t < layer.size:
                raise ShapeMismatch(f"{where}: pool size {layer.size} exceeds T={t}")
            cur = (t // layer.size, c)
        elif isinstance(layer, Flatten):
            if len(cur) != 2:
                raise ShapeMismatch(f"{where}: needs a (T, C) input, got {cur}")
            cur = (cur[0] * cur[1],)
        elif isinstance(layer, (Lstm, BiLstm)):
            if len(cur) != 2:
                raise ShapeMismatch(f"{where}: needs a (T, C) input, got {cur}")
            width = layer.units if isinstance(layer, Lstm) else 2 * layer.units
            cur = (cur[0], width) if layer.return_sequences else (width,)
        else:
            raise ShapeMismatch(f"{where}: unknown layer kind")
        shapes.append(cur)
    return shapes


def output_size(spec: ModelSpec) -> int:
    return int(np.prod(infer_shapes(spec)[-1]))


def validate_forecast_spec(spec: ModelSpec) -> None:
    """Forecast models must emit one 24-hour profile."""
    out = infer_shapes(spec)[-1]
    if out not in ((24,), (24, 1)):
        raise ShapeMismatch(f"forecast head must produce a 24-vector, got {out}")


# -- parameter layout ------------------------------------------------------


@dataclass(frozen=True)
class LayoutEntry:
    layer: int
    kind: str
    name: str
    offset: int
    shape: tuple

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def _layer_param_shapes(layer: LayerSpec, in_shape: tuple) -> list:
    """(name, shape, is_weight) triples in their fixed layout order."""
    if isinstance(layer, Dense):
        return [("w", (layer.units, in_shape[0]), True),
                ("b", (layer.units,), False)]
    if isinstance(layer, TimeDistributedDense):
        return [("w", (layer.units, in_shape[1]), True),
                ("b", (layer.units,), False)]
    if isinstance(layer, Conv1D):
        return [("w", (layer.filters, layer.kernel, in_shape[1]), True),
                ("b", (layer.filters,), False)]
    if isinstance(layer, Lstm):
        return _lstm_param_shapes("", layer.units, in_shape[1])
    if isinstance(layer, BiLstm):
        return (_lstm_param_shapes("fwd_", layer.units, in_shape[1])
                + _lstm_param_shapes("rev_", layer.units, in_shape[1]))
    return []


def _lstm_param_shapes(prefix: str, h: int, d: int) -> list:
    shapes = []
    for name in L.LSTM_WEIGHT_NAMES:
        dim = d if name.endswith("x") else h
        shapes.append((prefix + name, (h, dim), True))
    for name in L.LSTM_BIAS_NAMES:
        shapes.append((prefix + name, (h,), False))
    return shapes


def build_layout(spec: ModelSpec) -> tuple:
    shapes = infer_shapes(spec)
    entries = []
    offset = 0
    for li, layer in enumerate(spec.layers):
        for name, shape, _ in _layer_param_shapes(layer, shapes[li]):
            entries.append(LayoutEntry(layer=li, kind=type(layer).__name__.lower(),
                                       name=name, offset=offset, shape=shape))
            offset += int(np.prod(shape))
    return tuple(entries)


def param_count(spec: ModelSpec) -> int:
    """Total trainable scalars in the stack."""
    return sum(e.size for e in build_layout(spec))


@dataclass
class ParamStore:
    """Flat parameter vector + mirrored gradient vector + layout table."""

    spec: ModelSpec
    flat: np.ndarray
    grad: np.ndarray
    layout: tuple = field(default=None)

    def __post_init__(self):
        if self.layout is None:
            self.layout = build_layout(self.spec)
        total = sum(e.size for e in self.layout)
        if self.flat.shape != (total,) or self.grad.shape != (total,):
            raise ShapeMismatch(
                f"store needs {total} parameters, got {self.flat.shape}")
        self._index = {(e.layer, e.name): e for e in self.layout}

    def view(self, layer: int, name: str) -> np.ndarray:
        e = self._index[(layer, name)]
        return self.flat[e.offset:e.offset + e.size].reshape(e.shape)

    def grad_view(self, layer: int, name: str) -> np.ndarray:
        e = self._index[(layer, name)]
        return self.grad[e.offset:e.offset + e.size].reshape(e.shape)

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def entry_at(self, flat_index: int) -> LayoutEntry:
        for e in self.layout:
            if e.offset <= flat_index < e.offset + e.size:
                return e
        raise IndexError(flat_index)

    def copy(self) -> "ParamStore":
        return ParamStore(spec=self.spec, flat=self.flat.copy(),
                          grad=np.zeros_like(self.grad), layout=self.layout)


def init_params(spec: ModelSpec, seed: int) -> ParamStore:
    """Glorot-uniform weights, zero biases, LSTM forget-gate biases at 1.

    Deterministic: parameters are drawn in layout order from one seeded
    generator.
    """
    layout = build_layout(spec)
    total = sum(e.size for e in layout)
    flat = np.zeros(total)
    rng = np.random.default_rng(seed)
    shapes_by_layer = infer_shapes(spec)
    for e in layout:
        is_weight = next(w for n, s, w in
                         _layer_param_shapes(spec.layers[e.layer], shapes_by_layer[e.layer])
                         if n == e.name)
        block = flat[e.offset:e.offset + e.size]
        if is_weight:
            fan_out, fan_in = e.shape[0], int(np.prod(e.shape[1:]))
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            block[:] = rng.uniform(-limit, limit, size=e.size)
        elif e.name.endswith("b_f"):
            block[:] = 1.0
    return ParamStore(spec=spec, flat=flat, grad=np.zeros(total), layout=layout)


# -- runtime assembly ------------------------------------------------------


def _views_for(store: ParamStore, li: int) -> L._ParamViews:
    names = [e.name for e in store.layout if e.layer == li]
    return L._ParamViews(
        params={n: store.view(li, n) for n in names},
        grads={n: store.grad_view(li, n) for n in names},
    )


def _make_runtime(layer: LayerSpec, views: L._ParamViews) -> L.LayerRuntime:
    if isinstance(layer, Dense):
        return L.DenseRuntime(views, layer.activation)
    if isinstance(layer, TimeDistributedDense):
        return L.TimeDistributedDenseRuntime(views, layer.activation)
    if isinstance(layer, Conv1D):
        return L.Conv1DRuntime(views, layer.stride)
    if isinstance(layer, MaxPool1D):
        return L.MaxPool1DRuntime(layer.size)
    if isinstance(layer, Flatten):
        return L.FlattenRuntime()
    if isinstance(layer, Lstm):
        return L.LstmRuntime(views, layer.return_sequences)
    if isinstance(layer, BiLstm):
        return L.BiLstmRuntime(views, layer.return_sequences)
    raise ShapeMismatch(f"unknown layer kind {layer!r}")


class ModelRuntime:
    """Executable layer stack bound to one ParamStore.

    forward consumes a (B, T, C) batch and returns (B, output_size);
    backward pushes an upstream (B, output_size) gradient through the stack,
    accumulating parameter gradients into the store.
    """

    def __init__(self, spec: ModelSpec, store: ParamStore):
        if store.spec != spec:
            raise ShapeMismatch("store was laid out for a different spec")
        self.spec = spec
        self.store = store
        self.runtimes = [_make_runtime(layer, _views_for(store, li))
                         for li, layer in enumerate(spec.layers)]
        self._out_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != self.spec.input_shape:
            raise ShapeMismatch(
                f"batch must be (B, {self.spec.input_shape[0]}, "
                f"{self.spec.input_shape[1]}), got {x.shape}")
        for rt in self.runtimes:
            x = rt.forward(x)
        self._out_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._out_shape is None:
            raise ShapeMismatch("backward before forward")
        g = np.asarray(dout, dtype=np.float64).reshape(self._out_shape)
        for rt in reversed(self.runtimes):
            g = rt.backward(g)
        return g

    def zero_grad(self) -> None:
        self.store.zero_grad()


def model_forward(spec: ModelSpec, store: ParamStore, x: np.ndarray) -> np.ndarray:
    """Single-sample forward pass; input (T, C) or (T,), output a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return ModelRuntime(spec, store).forward(x[None])[0]


def model_backward(spec: ModelSpec, store: ParamStore, x: np.ndarray,
                   upstream: np.ndarray) -> np.ndarray:
    """Gradient of dot(model(x), upstream) w.r.t. every parameter.

    Returns a fresh flat vector matching the store layout; the store's own
    gradient buffer is left holding the same values.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    rt = ModelRuntime(spec, store)
    store.zero_grad()
    out = rt.forward(x[None])
    up = np.asarray(upstream, dtype=np.float64).reshape(1, out.shape[1])
    rt.backward(up)
    return store.grad.copy()


# -- gradient checking -----------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_coordinate: str
    trials: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def gradient_check(spec: ModelSpec, store: ParamStore, trials: int = 200,
                   eps: float = 1e-5, tol: float = 1e-4,
                   seed: int = 0) -> GradCheckReport:
    """Compare model_backward to central finite differences.

    Samples `trials` parameter coordinates (all of them when the store is
    small); relative error is |a - n| / max(|a|, |n|, 1e-12). Reports and
    never raises.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=spec.input_shape)
    upstream = rng.uniform(-1.0, 1.0, size=output_size(spec))

    analytic = model_backward(spec, store, x, upstream)
    n = store.flat.size
    coords = (np.arange(n) if trials >= n
              else rng.choice(n, size=trials, replace=False))

    def objective() -> float:
        return float(model_forward(spec, store, x) @ upstream)

    worst = (0.0, 0)
    for j in coords:
        saved = store.flat[j]
        store.flat[j] = saved + eps
        f_plus = objective()
        store.flat[j] = saved - eps
        f_minus = objective()
        store.flat[j] = saved
        numeric = (f_plus - f_minus) / (2.0 * eps)
        rel = abs(analytic[j] - numeric) / max(abs(analytic[j]), abs(numeric), 1e-12)
        if rel > worst[0]:
            worst = (rel, int(j))
    e = store.entry_at(worst[1])
    label = f"layer{e.layer}:{e.kind}.{e.name}[{worst[1] - e.offset}]"
    return GradCheckReport(max_rel_error=worst[0], worst_coordinate=label,
                           trials=len(coords), tol=tol)
