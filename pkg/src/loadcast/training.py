"""Loss/metric computation, Adam, the training loop, and grid search.

Training minimizes MSE on normalized values (a differentiable,
monotone-equivalent surrogate for the reported RMSE); all reported RMSE
figures are computed in kW after denormalization.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DivergedLoss, EmptyDataset, LengthMismatch
from .fileio import atomic_write_text
from .models import reference_spec
from .nn.model import ModelRuntime, ModelSpec, ParamStore, init_params
from .series import LoadSeries, WindowedDataset


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LengthMismatch(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float((diff * diff).mean())
    return loss, (2.0 / diff.size) * diff


def rmse(pred, target) -> float:
    """Root-mean-squared error, in the units of its arguments."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.size != target.size:
        raise LengthMismatch(f"{pred.size} vs {target.size} values")
    if pred.size == 0:
        raise EmptyDataset("rmse of empty sequences")
    diff = pred - target
    return float(math.sqrt((diff * diff).mean()))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 384
    max_epochs: int = 150
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              cfg: TrainConfig):
    """One Adam update. Pure: returns (new_params, new_state).

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  bias-corrected m^, v^;
    theta <- theta - lr * m^ / (sqrt(v^) + eps).
    """
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise LengthMismatch("params/grads/moments must share one length")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    new_params = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return new_params, AdamState(m=m, v=v, t=t)


@dataclass
class TrainRun:
    best_params: np.ndarray
    train_history: list
    valid_history: list
    stopped_epoch: int
    seed: int

    def best_valid_loss(self) -> float:
        return min(self.valid_history) if self.valid_history else math.inf


def _dataset_mse(runtime: ModelRuntime, ds: WindowedDataset,
                 chunk: int = 512) -> float:
    total = 0.0
    for lo in range(0, len(ds), chunk):
        x = ds.inputs[lo:lo + chunk][:, :, None]
        pred = runtime.forward(x)
        diff = pred - ds.targets[lo:lo + chunk]
        total += float((diff * diff).sum())
    return total / ds.targets.size


def train_model(spec: ModelSpec, data: WindowedDataset, valid: WindowedDataset,
                cfg: TrainConfig) -> TrainRun:
    """Minibatch Adam with early stopping on validation loss.

    Each epoch shuffles the sample order with the seeded generator, walks
    minibatches (the last one may be short), averages the gradient over the
    batch, and takes one Adam step per batch. Training stops once the
    validation loss has not improved for `patience` consecutive epochs; the
    best-validation parameters are restored into the returned snapshot.
    """
    if len(data) == 0 or len(valid) == 0:
        raise EmptyDataset("training and validation sets must be nonempty")
    store = init_params(spec, cfg.seed)
    runtime = ModelRuntime(spec, store)
    adam = AdamState.zeros(store.flat.size)
    rng = np.random.default_rng(cfg.seed)

    best_valid = math.inf
    best_params = store.flat.copy()
    epochs_since_best = 0
    train_hist: list[float] = []
    valid_hist: list[float] = []
    stopped = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(data))
        loss_sum = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            x = data.inputs[idx][:, :, None]
            y = data.targets[idx]
            pred = runtime.forward(x)
            loss, dpred = mse_loss(pred, y)
            if not math.isfinite(loss):
                raise DivergedLoss(f"training loss became {loss} at epoch {epoch}")
            runtime.zero_grad()
            runtime.backward(dpred)
            new_flat, adam = adam_step(store.flat, store.grad, adam, cfg)
            store.flat[:] = new_flat
            loss_sum += loss * len(idx)
        train_hist.append(loss_sum / len(data))

        v = _dataset_mse(runtime, valid)
        if not math.isfinite(v):
            raise DivergedLoss(f"validation loss became {v} at epoch {epoch}")
        valid_hist.append(v)
        stopped = epoch
        if v < best_valid:
            best_valid = v
            best_params = store.flat.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                break

    store.flat[:] = best_params
    return TrainRun(best_params=best_params.copy(), train_history=train_hist,
                    valid_history=valid_hist, stopped_epoch=stopped, seed=cfg.seed)


def write_history_csv(run: TrainRun, path) -> None:
    lines = ["epoch,train_loss,valid_loss"]
    for i, (t, v) in enumerate(zip(run.train_history, run.valid_history), start=1):
        lines.append(f"{i},{t!r},{v!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# -------------------------------------------------------------------------
# grid search
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class GridCell:
    batch_size: int
    cell_count: int
    avg_rmse: Optional[float]
    reason: Optional[str] = None     # set when the cell failed to train


@dataclass(frozen=True)
class GridSearchResult:
    rows: tuple
    winner: int                      # index into rows

    @property
    def winner_cell(self) -> GridCell:
        return self.rows[self.winner]


def _run_grid_cell(args) -> GridCell:
    (model_name, batch_size, cells, data, valid, test, cfg_fields, seed) = args
    from .errors import LoadcastError
    from .evaluate import ForecastModel, walk_forward_eval

    cfg = TrainConfig(**{**cfg_fields, "batch_size": batch_size, "seed": seed})
    spec = reference_spec(model_name, cells=cells)
    try:
        run = train_model(spec, data, valid, cfg)
        store = ParamStore(spec=spec, flat=run.best_params.copy(),
                           grad=np.zeros_like(run.best_params))
        model = ForecastModel(spec=spec, store=store, norm=data.norm,
                              name=f"{model_name}-{cells}c-{batch_size}b")
        report = walk_forward_eval(model, test)
        return GridCell(batch_size=batch_size, cell_count=cells,
                        avg_rmse=report.avg_daily_rmse)
    except LoadcastError as exc:
        return GridCell(batch_size=batch_size, cell_count=cells,
                        avg_rmse=None, reason=f"{type(exc).__name__}: {exc}")


def grid_search(batch_sizes, cell_counts, data: WindowedDataset,
                valid: WindowedDataset, test: LoadSeries, base_cfg: TrainConfig,
                model_name: str = "bilstm", jobs: int = 1) -> GridSearchResult:
    """Train one model per (batch size, cell count) and score each on the
    test series by walk-forward average daily RMSE (kW).

    Cell k trains with seed base_cfg.seed + k, so cells are independent but
    the whole grid is reproducible. Failed cells are recorded with a reason
    and excluded from the winner choice.
    """
    batch_sizes = list(batch_sizes)
    cell_counts = list(cell_counts)
    if not batch_sizes or not cell_counts:
        raise EmptyDataset("grid must contain at least one cell")
    cfg_fields = {
        "learning_rate": base_cfg.learning_rate, "beta1": base_cfg.beta1,
        "beta2": base_cfg.beta2, "epsilon": base_cfg.epsilon,
        "max_epochs": base_cfg.max_epochs, "patience": base_cfg.patience,
    }
    tasks = []
    for k, (bs, cells) in enumerate(
            (bs, cells) for bs in batch_sizes for cells in cell_counts):
        tasks.append((model_name, bs, cells, data, valid, test, cfg_fields,
                      base_cfg.seed + k))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = tuple(pool.map(_run_grid_cell, tasks))
    else:
        rows = tuple(_run_grid_cell(t) for t in tasks)

    scored = [(row.avg_rmse, row.cell_count, row.batch_size, i)
              for i, row in enumerate(rows) if row.avg_rmse is not None]
    if not scored:
        raise EmptyDataset("every grid cell failed to train")
    winner = min(scored)[3]
    return GridSearchResult(rows=rows, winner=winner)


def write_grid_csv(result: GridSearchResult, path) -> None:
    """Table layout: one row per batch size, one column per cell count."""
    batch_sizes = sorted({r.batch_size for r in result.rows})
    cell_counts = sorted({r.cell_count for r in result.rows})
    by_key = {(r.batch_size, r.cell_count): r for r in result.rows}
    lines = ["batch_size," + ",".join(f"{c}_cells" for c in cell_counts)]
    for bs in batch_sizes:
        cells = []
        for c in cell_counts:
            row = by_key.get((bs, c))
            cells.append("" if row is None or row.avg_rmse is None
                         else repr(row.avg_rmse))
        lines.append(f"{bs}," + ",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")
