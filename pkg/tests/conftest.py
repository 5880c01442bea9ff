import numpy as np
import pytest

from sensbench import kernels
from sensbench.models import LinearDecompModel, ModelSpec
from sensbench.panel import Panel

BACKENDS = ["python"] + (["compiled"] if kernels.compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def make_panel(values, target=None, features=None, static=None, start="2020-03-01"):
    values = np.asarray(values, dtype=float)
    E, T, k = values.shape
    if target is None:
        target = np.zeros((E, T))
    return Panel(
        entities=tuple(f"e{i}" for i in range(E)),
        timestamps=np.datetime64(start, "D") + np.arange(T),
        features=features or tuple(f"f{i + 1}" for i in range(k)),
        values=values,
        target=target,
        static_mask=np.zeros(k, bool) if static is None else np.asarray(static),
    )


def aggregate_linear_model(weights, lookback=4, horizon=3, kernel=1):
    """Linear model whose horizon-mean output is ``sum_i weights[i] * x_i`` for a time-constant window."""
    w = np.asarray(weights, dtype=float)
    k = len(w)
    spec = ModelSpec(lookback, horizon, k)
    trend = np.broadcast_to(w / lookback, (horizon, lookback, k)).copy()
    seasonal = np.zeros_like(trend)
    return LinearDecompModel(spec, trend, seasonal, np.zeros(horizon), kernel)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
