"""Next-slot load forecasting: windows, scaling, LSTM and training."""

from .lstm import DEFAULT_HIDDEN, LstmModel, loss_and_grad, lstm_backward, lstm_forward, n_parameters
from .scaler import Scaler, apply_scaler, fit_scaler, invert_scaler
from .train import (
    Predictions,
    TrainConfig,
    TrainHistory,
    evaluate_mse,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    write_predictions_csv,
)
from .windows import (
    DEFAULT_HISTORY,
    FeatureSet,
    FeatureTable,
    Split,
    WindowSample,
    WindowSet,
    assemble_features,
    build_windows,
    split_chronological,
)

__all__ = [
    "DEFAULT_HIDDEN", "DEFAULT_HISTORY", "FeatureSet", "FeatureTable", "LstmModel",
    "Predictions", "Scaler", "Split", "TrainConfig", "TrainHistory", "WindowSample",
    "WindowSet", "apply_scaler", "assemble_features", "build_windows", "evaluate_mse",
    "fit_scaler", "invert_scaler", "load_checkpoint", "loss_and_grad", "lstm_backward",
    "lstm_forward", "n_parameters", "predict", "save_checkpoint", "split_chronological",
    "train", "write_predictions_csv",
]
