"""Single-layer LSTM with a linear one-unit head, in plain numpy.

All parameters live in one flat float64 vector so the optimiser and the
checkpoint code can treat them uniformly. Layout::

    W      (4H, p + H)   gate weights, rows ordered input, forget, output, candidate;
                         columns [input features | previous hidden state]
    b      (4H,)
    w_out  (H,)
    b_out  (1,)
"""

from __future__ import annotations

import numpy as np

from ..errors import DataValidationError

DEFAULT_HIDDEN = 16


def n_parameters(input_size: int, hidden_size: int = DEFAULT_HIDDEN) -> int:
    return 4 * (hidden_size * (input_size + hidden_size) + hidden_size) + hidden_size + 1


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LstmModel:
    def __init__(self, input_size: int, hidden_size: int = DEFAULT_HIDDEN,
                 params: np.ndarray | None = None):
        if input_size < 1 or hidden_size < 1:
            raise ValueError("input_size and hidden_size must be positive")
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        n = n_parameters(self.input_size, self.hidden_size)
        if params is None:
            params = np.zeros(n)
        params = np.array(params, dtype=np.float64).reshape(-1)
        if params.size != n:
            raise ValueError(f"expected {n} parameters, got {params.size}")
        self.params = params
        self._bind()

    def _bind(self):
        p, H = self.input_size, self.hidden_size
        nw = 4 * H * (p + H)
        self.W = self.params[:nw].reshape(4 * H, p + H)
        self.b = self.params[nw:nw + 4 * H]
        self.w_out = self.params[nw + 4 * H:nw + 5 * H]
        self.b_out = self.params[nw + 5 * H:]

    @classmethod
    def initialize(cls, input_size: int, hidden_size: int = DEFAULT_HIDDEN,
                   seed: int = 0) -> "LstmModel":
        """Uniform(-1/sqrt(H), 1/sqrt(H)) everywhere, then +1 on the forget-gate bias."""
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(hidden_size)
        m = cls(input_size, hidden_size,
                rng.uniform(-bound, bound, n_parameters(input_size, hidden_size)))
        H = hidden_size
        m.b[H:2 * H] += 1.0
        return m

    @property
    def n_params(self) -> int:
        return int(self.params.size)

    def set_params(self, params: np.ndarray):
        self.params[...] = params

    def copy(self) -> "LstmModel":
        return LstmModel(self.input_size, self.hidden_size, self.params.copy())

    def to_dict(self) -> dict:
        return {"input_size": self.input_size, "hidden_size": self.hidden_size,
                "params": self.params.tolist()}

    @classmethod
    def from_dict(cls, d) -> "LstmModel":
        return cls(int(d["input_size"]), int(d["hidden_size"]), np.asarray(d["params"], float))


def lstm_forward(model: LstmModel, X: np.ndarray):
    """Run the recurrence from a zero state and apply the head.

    ``X`` is one window (M, p) or a batch (B, M, p). Returns the prediction
    (float or (B,) array) and the activation cache for :func:`lstm_backward`.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != model.input_size:
        raise DataValidationError(
            f"window shape {X.shape[1:] if X.ndim == 3 else X.shape} does not match "
            f"input_size={model.input_size}")
    B, M, p = X.shape
    H = model.hidden_size
    Wx, Wh = model.W[:, :p], model.W[:, p:]
    xproj = X @ Wx.T + model.b  # (B, M, 4H)
    WhT = Wh.T

    hs = np.zeros((M + 1, B, H))
    cs = np.zeros((M + 1, B, H))
    acts = np.empty((M, B, 4 * H))
    tanh_c = np.empty((M, B, H))
    for t in range(M):
        z = xproj[:, t] + hs[t] @ WhT
        a = acts[t]
        a[:, :3 * H] = _sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        cs[t + 1] = a[:, H:2 * H] * cs[t] + a[:, :H] * a[:, 3 * H:]
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = a[:, 2 * H:3 * H] * tanh_c[t]
    pred = hs[M] @ model.w_out + model.b_out[0]
    cache = {"X": X, "hs": hs, "cs": cs, "acts": acts, "tanh_c": tanh_c, "pred": pred}
    return (float(pred[0]) if single else pred), cache


def lstm_backward(model: LstmModel, cache: dict, targets) -> tuple[float, np.ndarray]:
    """Mean squared error over the cached batch and its gradient (flat, parameter layout)."""
    X, hs, cs, acts, tanh_c, pred = (cache[k] for k in ("X", "hs", "cs", "acts", "tanh_c", "pred"))
    B, M, p = X.shape
    H = model.hidden_size
    resid = pred - np.asarray(targets, dtype=np.float64).reshape(B)
    loss = float(np.mean(resid * resid))
    dpred = 2.0 * resid / B

    g_wout = hs[M].T @ dpred
    g_bout = dpred.sum()
    Wh = model.W[:, p:]
    dh = np.outer(dpred, model.w_out)
    dc = np.zeros((B, H))
    dZ = np.empty((M, B, 4 * H))
    for t in range(M - 1, -1, -1):
        a = acts[t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = tanh_c[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dZ[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc = dc * f
        dh = dz @ Wh

    dZ_flat = dZ.reshape(M * B, 4 * H)
    g_Wx = dZ_flat.T @ X.transpose(1, 0, 2).reshape(M * B, p)
    g_Wh = dZ_flat.T @ hs[:M].reshape(M * B, H)
    grad = np.concatenate([np.hstack([g_Wx, g_Wh]).ravel(), dZ_flat.sum(axis=0),
                           g_wout, [g_bout]])
    return loss, grad


def loss_and_grad(model: LstmModel, X, y) -> tuple[float, np.ndarray]:
    _, cache = lstm_forward(model, X if np.ndim(X) == 3 else np.asarray(X)[None])
    return lstm_backward(model, cache, y)
