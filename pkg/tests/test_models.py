import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sensbench import kernels
from sensbench.errors import ConfigError, ContractError, TrainingError
from sensbench.models import (
    LinearDecompModel,
    MLPModel,
    ModelSpec,
    TrainConfig,
    decompose,
    load_model,
    save_model,
    train,
)
from sensbench.panel import SynthConfig, make_windows, synth_generate

from .conftest import BACKENDS, make_panel


def brute_moving_average(x, kernel):
    L = len(x)
    half = kernel // 2
    padded = [x[0]] * half + list(x) + [x[-1]] * half
    return np.array([sum(padded[t:t + kernel]) / kernel for t in range(L)])


def test_decompose_hand_computed():
    trend, seasonal = decompose(np.array([[1.0], [2.0], [3.0]]), 3)
    np.testing.assert_allclose(trend[:, 0], [4 / 3, 2.0, 8 / 3], rtol=1e-15)
    np.testing.assert_allclose(seasonal[:, 0], [1 - 4 / 3, 0.0, 3 - 8 / 3], atol=1e-15)


def test_decompose_kernel_one_is_identity(rng):
    x = rng.standard_normal((13, 4))
    trend, seasonal = decompose(x, 1)
    assert np.array_equal(trend, x)
    assert not seasonal.any()


@pytest.mark.parametrize("kernel", [1, 3, 5, 13])
@pytest.mark.parametrize("value", [0.1, -7.3, 1e9])
def test_decompose_constant_series(kernel, value):
    _, seasonal = decompose(np.full((13, 2), value), kernel)
    assert not seasonal.any()


@pytest.mark.parametrize("kernel", [3, 5, 7])
def test_decompose_matches_brute_force(rng, kernel):
    x = rng.standard_normal((13, 3))
    trend, _ = decompose(x, kernel)
    for f in range(3):
        np.testing.assert_allclose(trend[:, f], brute_moving_average(x[:, f], kernel), rtol=1e-12, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    hnp.arrays(np.float64, st.tuples(st.integers(1, 15), st.integers(1, 3)),
               elements=st.integers(-2**20, 2**20).map(lambda v: v / 8.0)),
    st.sampled_from([1, 3, 5, 7]),
)
def test_decomposition_reconstructs_dyadic_input(x, kernel):
    if kernel > x.shape[0]:
        kernel = 1
    trend, seasonal = decompose(x, kernel)
    assert np.array_equal(trend + seasonal, x)


def test_decompose_bad_kernels():
    with pytest.raises(ConfigError):
        decompose(np.zeros((5, 1)), 2)
    with pytest.raises(ConfigError):
        decompose(np.zeros((3, 1)), 5)


def test_backends_agree_on_moving_average(rng):
    x = rng.standard_normal((7, 13, 5))
    ref = kernels.get_backend("python").moving_average(x, 5)
    for name in BACKENDS:
        assert np.array_equal(kernels.get_backend(name).moving_average(x, 5), ref)


def test_zero_linear_model_predicts_zero():
    spec = ModelSpec(13, 15, 8)
    model = LinearDecompModel.zeros(spec, kernel=3)
    assert not model.predict(np.ones((13, 8))).any()


def test_hand_assembled_linear_model(rng):
    L, H, k = 4, 3, 2
    Wt = rng.standard_normal((H, L, k))
    Ws = rng.standard_normal((H, L, k))
    b = rng.standard_normal(H)
    model = LinearDecompModel(ModelSpec(L, H, k), Wt, Ws, b, kernel=3)
    out = model.predict(np.ones((L, k)))
    # all-ones input: trend is all ones, seasonal is zero
    expected = [sum(Wt[h, t, f] for t in range(L) for f in range(k)) + b[h] for h in range(H)]
    np.testing.assert_allclose(out, expected, rtol=1e-13)

    x = rng.standard_normal((L, k))
    trend = np.column_stack([brute_moving_average(x[:, f], 3) for f in range(k)])
    seas = x - trend
    expected = [sum(Wt[h, t, f] * trend[t, f] + Ws[h, t, f] * seas[t, f] for t in range(L) for f in range(k)) + b[h]
                for h in range(H)]
    np.testing.assert_allclose(model.predict(x), expected, rtol=1e-12, atol=1e-12)


def test_predict_contract_errors():
    model = LinearDecompModel.zeros(ModelSpec(3, 2, 2))
    x = np.zeros((3, 2))
    x[1, 0] = np.nan
    with pytest.raises(ContractError):
        model.predict(x)
    with pytest.raises(ContractError):
        model.predict(np.zeros((4, 2)))
    with pytest.raises(ContractError):
        model.predict_batch(np.zeros((5, 3, 3)))


def test_predict_is_pure(rng):
    Wt = rng.standard_normal((2, 3, 2))
    model = LinearDecompModel(ModelSpec(3, 2, 2), Wt, Wt, np.ones(2), kernel=3)
    x = rng.standard_normal((3, 2))
    before = x.copy()
    a, b = model.predict(x), model.predict(x)
    assert np.array_equal(a, b) and np.array_equal(x, before)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10), st.floats(-10, 10))
def test_linear_model_is_linear_without_decomposition(seed, a, b):
    rng = np.random.default_rng(seed)
    L, H, k = 5, 4, 3
    model = LinearDecompModel(ModelSpec(L, H, k), rng.standard_normal((H, L, k)),
                              rng.standard_normal((H, L, k)), np.zeros(H), kernel=1)
    u, v = rng.standard_normal((L, k)), rng.standard_normal((L, k))
    lhs = model.predict(a * u + b * v)
    rhs = a * model.predict(u) + b * model.predict(v)
    scale = np.abs(a * model.predict(u)) + np.abs(b * model.predict(v)) + 1e-300
    assert np.all(np.abs(lhs - rhs) <= 1e-9 * np.maximum(scale, np.abs(rhs)) + 1e-12)


def test_aggregate_weights_match_constant_shift(rng):
    L, H, k = 6, 4, 3
    model = LinearDecompModel(ModelSpec(L, H, k), rng.standard_normal((H, L, k)),
                              rng.standard_normal((H, L, k)), rng.standard_normal(H), kernel=5)
    x = rng.standard_normal((L, k))
    for i in range(k):
        shifted = x.copy()
        shifted[:, i] += 1.0
        diff = model.predict(shifted).mean() - model.predict(x).mean()
        assert diff == pytest.approx(model.aggregate_weights()[i], rel=1e-12)


def _doubling_windows(n_entities=4, days=60, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_entities, days, 1))
    target = np.zeros((n_entities, days))
    target[:, 1:] = 2.0 * x[:, :-1, 0]
    return make_windows(make_panel(x, target), lookback=1, horizon=1)


def test_train_recovers_doubling(backend):
    ws = _doubling_windows()
    cfg = TrainConfig(epochs=500, learning_rate=0.05, moving_average_kernel=1, seed=3)
    model = train("linear-decomp", ws, cfg, backend=backend)
    assert abs(model.aggregate_weights()[0] - 2.0) < 1e-3
    assert model.train_mse < 1e-6
    assert model.train_mse < model.init_mse


def test_train_constant_zero_target():
    rng = np.random.default_rng(1)
    ws = make_windows(make_panel(rng.standard_normal((3, 40, 2))), 3, 2)
    cfg = TrainConfig(epochs=300, learning_rate=0.05, moving_average_kernel=1)
    model = train("linear-decomp", ws, cfg)
    assert np.all(np.abs(model.predict_batch(ws.inputs)) < 1e-4)
    assert model.train_mse < 1e-8


def test_mlp_constant_zero_target_shrinks_towards_zero():
    rng = np.random.default_rng(1)
    ws = make_windows(make_panel(rng.standard_normal((3, 40, 2))), 3, 2)
    model = train("mlp", ws, TrainConfig(epochs=300, hidden_width=4))
    assert np.all(np.abs(model.predict_batch(ws.inputs)) < 1e-2)
    assert model.train_mse < 0.01 * model.init_mse


@pytest.mark.parametrize("kind", ["linear-decomp", "mlp"])
def test_training_is_deterministic_and_improves(kind, backend):
    panel, _ = synth_generate(SynthConfig(entities=10, days=40, seed=5))
    ws = make_windows(panel)
    cfg = TrainConfig(epochs=5, seed=9)
    a = train(kind, ws, cfg, backend=backend)
    b = train(kind, ws, cfg, backend=backend)
    assert a.to_dict() == b.to_dict()
    assert a.train_mse < a.init_mse
    params = [np.asarray(v) for key, v in a.to_dict().items() if key not in ("kind", "spec")]
    assert all(np.all(np.isfinite(p)) for p in params)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
@pytest.mark.parametrize("kind", ["linear-decomp", "mlp"])
def test_backends_train_the_same_model(kind):
    panel, _ = synth_generate(SynthConfig(entities=10, days=40, seed=5))
    ws = make_windows(panel)
    cfg = TrainConfig(epochs=10, seed=2)
    a = train(kind, ws, cfg, backend="python")
    b = train(kind, ws, cfg, backend="compiled")
    np.testing.assert_allclose(a.predict_batch(ws.inputs), b.predict_batch(ws.inputs), rtol=1e-9, atol=1e-9)


def test_divergence_names_epoch():
    ws = _doubling_windows()
    with pytest.raises(TrainingError, match="epoch"):
        train("linear-decomp", ws, TrainConfig(epochs=50, learning_rate=1e6, moving_average_kernel=1))


def test_train_errors():
    ws = _doubling_windows()
    with pytest.raises(TrainingError):
        train("external", ws)
    with pytest.raises(TrainingError):
        train("mlp", ws.subset([]))
    with pytest.raises(ConfigError):
        train("linear-decomp", ws, TrainConfig(moving_average_kernel=3))  # kernel > lookback 1
    with pytest.raises(ConfigError):
        TrainConfig(moving_average_kernel=4)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


@pytest.mark.parametrize("kind", ["linear-decomp", "mlp"])
def test_save_load_round_trip(tmp_path, kind):
    panel, _ = synth_generate(SynthConfig(entities=5, days=35, seed=1))
    ws = make_windows(panel)
    model = train(kind, ws, TrainConfig(epochs=2))
    back = load_model(save_model(model, tmp_path / "m.json"))
    assert type(back) is type(model)
    assert np.array_equal(back.predict_batch(ws.inputs), model.predict_batch(ws.inputs))


def test_mlp_standardisation_is_part_of_the_model(rng):
    spec = ModelSpec(2, 1, 1)
    m = MLPModel(spec, np.ones((1, 2)), [0.0], [[1.0]], [0.0], x_mean=[1.0], x_scale=[2.0], y_mean=3.0, y_scale=4.0)
    out = m.predict(np.array([[3.0], [1.0]]))
    assert out[0] == pytest.approx(np.tanh(1.0) * 4.0 + 3.0)
