"""Versioned JSON checkpoints: spec + seed + flat parameters + norm params.

Floats are emitted with Python's shortest round-trip repr (at most 17
significant digits), so save -> load -> save is byte-identical and the
parameter vector survives losslessly.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..fileio import atomic_write_text
from ..series import NormParams
from .model import (
    BiLstm,
    Conv1D,
    Dense,
    Flatten,
    Lstm,
    MaxPool1D,
    ModelSpec,
    ParamStore,
    TimeDistributedDense,
    build_layout,
)

FORMAT_VERSION = 1

_KINDS = {
    "dense": Dense,
    "time_distributed_dense": TimeDistributedDense,
    "conv1d": Conv1D,
    "maxpool1d": MaxPool1D,
    "flatten": Flatten,
    "lstm": Lstm,
    "bilstm": BiLstm,
}
_NAMES = {cls: name for name, cls in _KINDS.items()}


def spec_to_dict(spec: ModelSpec) -> dict:
    layers = []
    for layer in spec.layers:
        entry = {"kind": _NAMES[type(layer)]}
        for fname in layer.__dataclass_fields__:
            entry[fname] = getattr(layer, fname)
        layers.append(entry)
    return {"input_shape": list(spec.input_shape), "layers": layers}


def spec_from_dict(doc: dict) -> ModelSpec:
    layers = []
    for entry in doc["layers"]:
        kwargs = dict(entry)
        kind = kwargs.pop("kind")
        if kind not in _KINDS:
            raise ConfigError(f"unknown layer kind {kind!r}")
        layers.append(_KINDS[kind](**kwargs))
    return ModelSpec(layers=tuple(layers), input_shape=tuple(doc["input_shape"]))


@dataclass(frozen=True)
class Checkpoint:
    spec: ModelSpec
    store: ParamStore
    seed: int
    norm: Optional[NormParams]


def save_checkpoint(path, spec: ModelSpec, store: ParamStore, seed: int,
                    norm: Optional[NormParams]) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": spec_to_dict(spec),
        "seed": seed,
        "params": [float(v) for v in store.flat],
        "norm": None if norm is None else {"x_min": norm.x_min, "x_max": norm.x_max},
    }
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"{path}: unsupported checkpoint format {doc.get('format_version')!r}")
    spec = spec_from_dict(doc["spec"])
    layout = build_layout(spec)
    flat = np.asarray(doc["params"], dtype=np.float64)
    store = ParamStore(spec=spec, flat=flat, grad=np.zeros_like(flat), layout=layout)
    norm = None
    if doc.get("norm") is not None:
        norm = NormParams(x_min=doc["norm"]["x_min"], x_max=doc["norm"]["x_max"])
    return Checkpoint(spec=spec, store=store, seed=int(doc["seed"]), norm=norm)
