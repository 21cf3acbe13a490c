"""Mini-batch RMSProp training with early stopping, inference and checkpoints."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, TrainingDivergedError
from .lstm import LstmModel, lstm_backward, lstm_forward
from .scaler import Scaler, invert_scaler
from .windows import WindowSet


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 < self.rmsprop_decay < 1:
            raise ConfigError("rmsprop_decay must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown training parameters {sorted(extra)}")
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)


def evaluate_mse(model: LstmModel, windows: WindowSet) -> float:
    if len(windows) == 0:
        return math.nan
    pred, _ = lstm_forward(model, windows.X)
    return float(np.mean((pred - windows.y) ** 2))


def train(model: LstmModel, train_set: WindowSet, val_set: WindowSet, cfg: TrainConfig,
          context: str = "") -> tuple[LstmModel, TrainHistory]:
    """Fit ``model`` in place and return it with the parameters of the best
    validation epoch restored (training loss stands in when there is no
    validation data).

    Raises :class:`TrainingDivergedError` if a loss turns non-finite.
    """
    rng = np.random.default_rng(cfg.seed)
    hist = TrainHistory()
    sq = np.zeros_like(model.params)
    best = model.params.copy()
    since_best = 0
    n = len(train_set)
    lr, rho, eps = cfg.learning_rate, cfg.rmsprop_decay, cfg.epsilon

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        # overflow shows up as a non-finite loss, which is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, cfg.batch_size):
                rows = order[start:start + cfg.batch_size]
                _, cache = lstm_forward(model, train_set.X[rows])
                loss, grad = lstm_backward(model, cache, train_set.y[rows])
                if not math.isfinite(loss):
                    raise TrainingDivergedError(epoch, loss, context)
                total += loss * rows.size
                sq *= rho
                sq += (1.0 - rho) * grad * grad
                model.params -= lr * grad / (np.sqrt(sq) + eps)
            train_loss = total / n if n else math.nan
            val_loss = evaluate_mse(model, val_set) if len(val_set) else train_loss
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDivergedError(epoch, train_loss if not math.isfinite(train_loss)
                                        else val_loss, context)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        if val_loss < hist.best_val_loss:
            hist.best_val_loss, hist.best_epoch = val_loss, epoch
            best[...] = model.params
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.set_params(best)
    return model, hist


@dataclass(frozen=True, eq=False)
class Predictions:
    slot_index: np.ndarray
    target_norm: np.ndarray
    pred_norm: np.ndarray
    target: np.ndarray
    pred: np.ndarray

    def __len__(self) -> int:
        return int(self.slot_index.size)


def predict(model: LstmModel, scaler: Scaler, windows: WindowSet) -> Predictions:
    """Predict normalised windows; original-unit values come from the scaler."""
    if len(windows) == 0:
        e = np.empty(0)
        return Predictions(np.empty(0, np.int64), e, e, e, e)
    pred, _ = lstm_forward(model, windows.X)
    return Predictions(windows.slot_index, windows.y, pred,
                       invert_scaler(scaler, windows.y), invert_scaler(scaler, pred))


def write_predictions_csv(preds: Predictions, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("slot_index", "target", "prediction"))
        for s, t, p in zip(preds.slot_index.tolist(), preds.target.tolist(), preds.pred.tolist()):
            w.writerow((s, repr(t), repr(p)))
    return path


def save_checkpoint(path, model: LstmModel, scaler: Scaler, cfg: TrainConfig,
                    **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"model": model.to_dict(), "scaler": scaler.to_dict(), "train_config": cfg.to_dict(),
           "seed": cfg.seed, **extra}
    path.write_text(json.dumps(doc))
    return path


def load_checkpoint(path) -> tuple[LstmModel, Scaler, TrainConfig, dict]:
    doc = json.loads(Path(path).read_text())
    extra = {k: v for k, v in doc.items() if k not in ("model", "scaler", "train_config")}
    return (LstmModel.from_dict(doc["model"]), Scaler.from_dict(doc["scaler"]),
            TrainConfig.from_dict(doc["train_config"]), extra)
