from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, spec_from_dict, spec_to_dict
from .layers import (
    BiLstmParams,
    LstmParams,
    LstmState,
    bilstm_layer_forward,
    conv1d_forward,
    dense_forward,
    lstm_cell_step,
    lstm_layer_forward,
    maxpool1d_forward,
    sigmoid,
    zero_state,
)
from .model import (
    BiLstm,
    Conv1D,
    Dense,
    Flatten,
    GradCheckReport,
    Lstm,
    MaxPool1D,
    ModelRuntime,
    ModelSpec,
    ParamStore,
    TimeDistributedDense,
    gradient_check,
    infer_shapes,
    init_params,
    model_backward,
    model_forward,
    output_size,
    param_count,
    validate_forecast_spec,
)

__all__ = [n for n in dir() if not n.startswith("_")]
