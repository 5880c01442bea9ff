"""Built-in forecasters: a trend/seasonal linear model and a one-hidden-layer tanh MLP.

Both map a ``[lookback, k]`` input window to a ``[horizon]`` forecast and are
trained with plain mini-batch gradient descent from a seeded uniform
initialisation, so a (windows, config) pair always yields the same
parameters.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, TrainingError

__all__ = [
    "ModelSpec",
    "TrainConfig",
    "ForecastModel",
    "LinearDecompModel",
    "MLPModel",
    "decompose",
    "train",
    "model_from_dict",
    "save_model",
    "load_model",
    "BUILTIN_KINDS",
]

BUILTIN_KINDS = ("linear-decomp", "mlp")
INIT_SCALE = 0.05


@dataclass(frozen=True)
class ModelSpec:
    lookback: int
    horizon: int
    k: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    l2: float = 0.0
    moving_average_kernel: int = 3
    hidden_width: int = 32

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if self.moving_average_kernel < 1 or self.moving_average_kernel % 2 == 0:
            raise ConfigError("moving_average_kernel must be an odd integer >= 1")
        if self.hidden_width < 1:
            raise ConfigError("hidden_width must be >= 1")

    @classmethod
    def from_mapping(cls, m: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(m) - known
        if extra:
            raise ConfigError(f"unknown train option(s): {sorted(extra)}")
        return cls(**m)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_kernel(kernel: int, lookback: int) -> None:
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"moving-average kernel must be odd and >= 1, got {kernel}")
    if kernel > lookback:
        raise ConfigError(f"moving-average kernel {kernel} exceeds lookback {lookback}")


def decompose(x, kernel: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a ``[lookback, k]`` window into (trend, seasonal).

    The trend is a centred moving average with edge replication; the seasonal
    part is the residual ``x - trend``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"expected a [lookback, k] window, got shape {x.shape}")
    _check_kernel(kernel, x.shape[0])
    trend = kernels.moving_average(x[None], kernel)[0]
    return trend, x - trend


class ForecastModel:
    """A predictor from a ``[lookback, k]`` window to a ``[horizon]`` forecast."""

    kind: str = "abstract"

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    @property
    def lookback(self) -> int:
        return self.spec.lookback

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    @property
    def k(self) -> int:
        return self.spec.k

    def _check_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1:] != (self.lookback, self.k):
            raise ContractError(
                f"input shape {X.shape[1:] if X.ndim == 3 else X.shape} does not match "
                f"[lookback={self.lookback}, k={self.k}]"
            )
        if not np.all(np.isfinite(X)):
            raise ContractError("input contains NaN or infinite values")
        return X

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ContractError(f"expected a [lookback, k] window, got shape {x.shape}")
        return self.predict_batch(x[None])[0]

    def predict_batch(self, X) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass


def _param(arr, shape) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    if out.shape != tuple(shape):
        raise ConfigError(f"parameter shape {out.shape} != {tuple(shape)}")
    out.setflags(write=False)
    return out


class LinearDecompModel(ForecastModel):
    """Trend and seasonal linear maps over the whole window, summed.

    ``y[h] = sum_{t,f} Wt[h,t,f] trend[t,f] + Ws[h,t,f] seasonal[t,f] + b[h]``
    """

    kind = "linear-decomp"

    def __init__(self, spec: ModelSpec, trend_weight, seasonal_weight, bias, kernel: int = 1):
        super().__init__(spec)
        _check_kernel(kernel, spec.lookback)
        shape = (spec.horizon, spec.lookback, spec.k)
        self.kernel = int(kernel)
        self.trend_weight = _param(trend_weight, shape)
        self.seasonal_weight = _param(seasonal_weight, shape)
        self.bias = _param(bias, (spec.horizon,))

    @classmethod
    def zeros(cls, spec: ModelSpec, kernel: int = 1) -> "LinearDecompModel":
        shape = (spec.horizon, spec.lookback, spec.k)
        return cls(spec, np.zeros(shape), np.zeros(shape), np.zeros(spec.horizon), kernel)

    def predict_batch(self, X) -> np.ndarray:
        X = self._check_batch(X)
        n = X.shape[0]
        trend = kernels.moving_average(X, self.kernel)
        seasonal = X - trend
        H = self.horizon
        out = trend.reshape(n, -1) @ self.trend_weight.reshape(H, -1).T
        out += seasonal.reshape(n, -1) @ self.seasonal_weight.reshape(H, -1).T
        out += self.bias
        return out

    def aggregate_weights(self) -> np.ndarray:
        """Change in the horizon-mean forecast per unit shift of each feature over the whole window."""
        # A constant shift passes entirely into the trend branch.
        return self.trend_weight.sum(axis=1).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "kernel": self.kernel,
            "trend_weight": self.trend_weight.tolist(),
            "seasonal_weight": self.seasonal_weight.tolist(),
            "bias": self.bias.tolist(),
        }


class MLPModel(ForecastModel):
    """``tanh`` hidden layer over the standardised, flattened window."""

    kind = "mlp"

    def __init__(self, spec: ModelSpec, w1, b1, w2, b2, x_mean=None, x_scale=None,
                 y_mean: float = 0.0, y_scale: float = 1.0):
        super().__init__(spec)
        w1 = np.asarray(w1, dtype=np.float64)
        width = w1.shape[0]
        P = spec.lookback * spec.k
        self.w1 = _param(w1, (width, P))
        self.b1 = _param(b1, (width,))
        self.w2 = _param(w2, (spec.horizon, width))
        self.b2 = _param(b2, (spec.horizon,))
        self.x_mean = _param(np.zeros(spec.k) if x_mean is None else x_mean, (spec.k,))
        self.x_scale = _param(np.ones(spec.k) if x_scale is None else x_scale, (spec.k,))
        if np.any(self.x_scale <= 0) or not y_scale > 0:
            raise ConfigError("standardisation scales must be > 0")
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[0]

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.x_mean) / self.x_scale).reshape(X.shape[0], -1)

    def predict_batch(self, X) -> np.ndarray:
        X = self._check_batch(X)
        hidden = np.tanh(self.standardize(X) @ self.w1.T + self.b1)
        out = hidden @ self.w2.T + self.b2
        return out * self.y_scale + self.y_mean

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
        }


def _mse(model: ForecastModel, X: np.ndarray, Y: np.ndarray) -> float:
    err = model.predict_batch(X) - Y
    return float(np.mean(err * err))


def _safe_scale(s: np.ndarray) -> np.ndarray:
    return np.where(s > 0, s, 1.0)


def train(kind: str, windows, config: TrainConfig | None = None, *, backend: str | None = None) -> ForecastModel:
    """Fit a built-in model on every window of ``windows``.

    The returned model carries ``init_mse``, ``train_mse`` and ``loss_history``
    attributes.  A non-finite epoch loss raises :class:`TrainingError`.
    """
    config = config or TrainConfig()
    if kind not in BUILTIN_KINDS:
        raise TrainingError(f"cannot train model kind {kind!r}; built-in kinds are {BUILTIN_KINDS}")
    if windows is None or len(windows) == 0:
        raise TrainingError("cannot train on an empty window set")
    impl = kernels.get_backend(backend)
    X = np.ascontiguousarray(windows.inputs, dtype=np.float64)
    Y = np.ascontiguousarray(windows.targets, dtype=np.float64)
    N, L, k = X.shape
    H = Y.shape[1]
    spec = ModelSpec(L, H, k)
    rng = np.random.default_rng(config.seed)

    if kind == "linear-decomp":
        _check_kernel(config.moving_average_kernel, L)
        P = L * k
        Wt = rng.uniform(-INIT_SCALE, INIT_SCALE, (H, P))
        Ws = rng.uniform(-INIT_SCALE, INIT_SCALE, (H, P))
        b = rng.uniform(-INIT_SCALE, INIT_SCALE, H)
        trend = impl.moving_average(X, config.moving_average_kernel)
        T = np.ascontiguousarray(trend.reshape(N, P))
        S = np.ascontiguousarray((X - trend).reshape(N, P))
        params = (Wt, Ws, b)

        def step(order):
            return impl.linear_epoch(T, S, Y, Wt, Ws, b, order, config.batch_size, config.learning_rate, config.l2)

        def build():
            return LinearDecompModel(spec, Wt.reshape(H, L, k), Ws.reshape(H, L, k), b,
                                     config.moving_average_kernel)
    else:
        M = config.hidden_width
        flat = X.reshape(-1, k)
        x_mean = flat.mean(axis=0)
        x_scale = _safe_scale(flat.std(axis=0))
        y_mean = float(Y.mean())
        y_scale = float(_safe_scale(np.array(Y.std())))
        W1 = rng.uniform(-INIT_SCALE, INIT_SCALE, (M, L * k))
        b1 = rng.uniform(-INIT_SCALE, INIT_SCALE, M)
        W2 = rng.uniform(-INIT_SCALE, INIT_SCALE, (H, M))
        b2 = rng.uniform(-INIT_SCALE, INIT_SCALE, H)
        Z = np.ascontiguousarray(((X - x_mean) / x_scale).reshape(N, -1))
        Yn = np.ascontiguousarray((Y - y_mean) / y_scale)
        params = (W1, b1, W2, b2)

        def step(order):
            return impl.mlp_epoch(Z, Yn, W1, b1, W2, b2, order, config.batch_size, config.learning_rate, config.l2)

        def build():
            return MLPModel(spec, W1, b1, W2, b2, x_mean, x_scale, y_mean, y_scale)

    init_mse = _mse(build(), X, Y)
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            loss = step(rng.permutation(N))
            if not np.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingError(f"training diverged at epoch {epoch} (loss={loss})")
            history.append(float(loss))
    model = build()
    model.init_mse = init_mse
    model.train_mse = _mse(model, X, Y)
    model.loss_history = tuple(history)
    model.train_config = config
    return model


def model_from_dict(doc: Mapping) -> ForecastModel:
    spec = ModelSpec(**doc["spec"])
    kind = doc.get("kind")
    if kind == "linear-decomp":
        return LinearDecompModel(spec, doc["trend_weight"], doc["seasonal_weight"], doc["bias"], doc["kernel"])
    if kind == "mlp":
        return MLPModel(spec, doc["w1"], doc["b1"], doc["w2"], doc["b2"], doc["x_mean"], doc["x_scale"],
                        doc["y_mean"], doc["y_scale"])
    raise ConfigError(f"cannot deserialise model kind {kind!r}")


def save_model(model: ForecastModel, path: str | os.PathLike) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(model.to_dict()), encoding="utf-8")
    os.replace(tmp, path)
    return path


def load_model(path: str | os.PathLike) -> ForecastModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
