"""The four day-ahead forecasting architectures, by name.

All take the previous day's 24 normalized hourly values as a (24, 1)
sequence and emit the next day's 24 values. The recurrent models keep the
full 24-step sequence and regress each step down to one value; the
convolutional hybrids compress the day with a 64-filter conv + pool front
end, summarize it with a single recurrent state, and decode through a dense
head.
"""

from .nn.model import (
    BiLstm,
    Conv1D,
    Dense,
    Lstm,
    MaxPool1D,
    ModelSpec,
    TimeDistributedDense,
)

MODEL_NAMES = ("lstm", "bilstm", "cnn-lstm", "cnn-bilstm")
DEFAULT_CELLS = {"lstm": 100, "bilstm": 100, "cnn-lstm": 200, "cnn-bilstm": 200}


def reference_spec(name: str, cells: int | None = None) -> ModelSpec:
    """Build one of the named architectures, optionally resizing the
    recurrent width (used by the grid search)."""
    if name not in MODEL_NAMES:
        raise ValueError(f"model must be one of {MODEL_NAMES}, got {name!r}")
    units = DEFAULT_CELLS[name] if cells is None else int(cells)
    if name == "lstm":
        layers = (Lstm(units, return_sequences=True),
                  TimeDistributedDense(100, "relu"),
                  TimeDistributedDense(1, "linear"))
    elif name == "bilstm":
        layers = (BiLstm(units, return_sequences=True),
                  TimeDistributedDense(100, "relu"),
                  TimeDistributedDense(1, "linear"))
    elif name == "cnn-lstm":
        layers = (Conv1D(64, 3, 1),
                  MaxPool1D(2),
                  Lstm(units, return_sequences=False),
                  Dense(100, "relu"),
                  Dense(24, "linear"))
    else:
        layers = (Conv1D(64, 3, 1),
                  MaxPool1D(2),
                  BiLstm(units, return_sequences=False),
                  Dense(100, "relu"),
                  Dense(24, "linear"))
    return ModelSpec(layers=layers, input_shape=(24, 1))
