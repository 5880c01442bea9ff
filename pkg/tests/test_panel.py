import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensbench.errors import ConfigError, DataError, EmptyWindowSetError, SchemaError
from sensbench.panel import (
    PanelSchema,
    SynthConfig,
    feature_stats,
    load_panel,
    load_truth,
    make_windows,
    synth_generate,
    write_panel_csv,
    write_truth,
)

from .conftest import make_panel

SCHEMA = PanelSchema(entity="county", date="date", target="cases", features=("a", "b"))


def write_csv(path, rows, header="county,date,cases,a,b"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def test_load_small_panel(tmp_path):
    rows = [
        "x,2020-03-02,5,1.0,10",
        "x,2020-03-01,4,0.5,10",
        "y,2020-03-01,1,2.0,20",
        "x,2020-03-03,6,1.5,10",
        "y,2020-03-02,2,2.5,20",
        "y,2020-03-03,3,3.0,20",
    ]
    panel = load_panel(write_csv(tmp_path / "p.csv", rows), SCHEMA)
    assert panel.values.shape == (2, 3, 2)
    assert panel.entities == ("x", "y")
    np.testing.assert_array_equal(panel.target[0], [4, 5, 6])
    np.testing.assert_array_equal(panel.values[1, :, 0], [2.0, 2.5, 3.0])
    assert str(panel.timestamps[0]) == "2020-03-01"


def test_date_gap_is_rejected(tmp_path):
    rows = ["x,2020-03-04,1,1,1", "x,2020-03-06,1,1,1"]
    with pytest.raises(DataError, match="non-uniform spacing"):
        load_panel(write_csv(tmp_path / "p.csv", rows), SCHEMA)


def test_missing_column_is_schema_error(tmp_path):
    path = write_csv(tmp_path / "p.csv", ["x,2020-03-01,1,1"], header="county,date,cases,a")
    with pytest.raises(SchemaError, match="b"):
        load_panel(path, SCHEMA)


def test_missing_cells_rejected_by_default_and_filled_on_request(tmp_path):
    rows = ["x,2020-03-01,1,1.0,1", "x,2020-03-02,2,,1", "x,2020-03-03,3,4.0,1"]
    path = write_csv(tmp_path / "p.csv", rows)
    with pytest.raises(DataError, match="missing"):
        load_panel(path, SCHEMA)
    panel = load_panel(path, PanelSchema("county", "date", "cases", ("a", "b"), max_fill_gap=1))
    np.testing.assert_array_equal(panel.values[0, :, 0], [1.0, 1.0, 4.0])


def test_fill_gap_longer_than_limit(tmp_path):
    rows = ["x,2020-03-01,1,1.0,1", "x,2020-03-02,2,,1", "x,2020-03-03,3,,1", "x,2020-03-04,3,2,1"]
    with pytest.raises(DataError, match="gap"):
        load_panel(write_csv(tmp_path / "p.csv", rows), PanelSchema("county", "date", "cases", ("a", "b"),
                                                                  max_fill_gap=1))


def test_entities_must_share_grid(tmp_path):
    rows = ["x,2020-03-01,1,1,1", "x,2020-03-02,1,1,1", "y,2020-03-02,1,1,1", "y,2020-03-03,1,1,1"]
    with pytest.raises(DataError, match="common date grid"):
        load_panel(write_csv(tmp_path / "p.csv", rows), SCHEMA)


def test_static_mask_verified(tmp_path):
    rows = ["x,2020-03-01,1,1,10", "x,2020-03-02,1,2,11"]
    schema = PanelSchema("county", "date", "cases", ("a", "b"), static=("b",))
    with pytest.raises(DataError, match="static"):
        load_panel(write_csv(tmp_path / "p.csv", rows), schema)
    rows = ["x,2020-03-01,1,1,10", "x,2020-03-02,1,2,10"]
    panel = load_panel(write_csv(tmp_path / "q.csv", rows), schema)
    assert panel.static_mask.tolist() == [False, True]


def test_target_zscore_toggle(tmp_path):
    rows = ["x,2020-03-01,1,0,0", "x,2020-03-02,2,0,0", "x,2020-03-03,3,0,0"]
    schema = PanelSchema("county", "date", "cases", ("a", "b"), target_zscore=True)
    panel = load_panel(write_csv(tmp_path / "p.csv", rows), schema)
    np.testing.assert_allclose(panel.target[0], np.array([-1, 0, 1]) / math.sqrt(2 / 3))


def test_eight_feature_panel_at_benchmark_scale(tmp_path):
    # 3,142 counties x 8 age-group features; a few days is enough to check k.
    panel, _ = synth_generate(SynthConfig(entities=3142, days=2, k=8, seed=1))
    path = write_panel_csv(panel, tmp_path / "counties.csv")
    loaded = load_panel(path, PanelSchema("entity", "date", "target", panel.features))
    assert loaded.k == 8
    assert len(loaded.entities) == 3142


def test_feature_stats_constant_and_small():
    panel = make_panel([[[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]])
    st_ = feature_stats(panel)
    assert (st_.mean[0], st_.std[0], st_.min[0], st_.max[0]) == (5.0, 0.0, 5.0, 5.0)
    assert st_.mean[1] == 2.0 and st_.min[1] == 1.0 and st_.max[1] == 3.0
    assert st_.std[1] == pytest.approx(math.sqrt(2 / 3), rel=1e-15)


def test_feature_stats_constant_non_dyadic_is_exact():
    panel = make_panel(np.full((3, 7, 1), 0.1))
    st_ = feature_stats(panel)
    assert st_.mean[0] == 0.1 and st_.std[0] == 0.0


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
def test_feature_stats_invariants(xs):
    panel = make_panel(np.array(xs)[None, :, None])
    s = feature_stats(panel)
    assert s.min[0] <= s.mean[0] <= s.max[0]
    assert s.std[0] >= 0
    assert (s.std[0] == 0) == (s.min[0] == s.max[0])


@pytest.mark.parametrize("T,expected", [(30, 3), (28, 1)])
def test_window_counts(T, expected):
    panel = make_panel(np.zeros((2, T, 3)))
    ws = make_windows(panel, 13, 15)
    assert ws.per_entity_counts() == {"e0": expected, "e1": expected}
    assert ws.inputs.shape == (2 * expected, 13, 3)
    assert ws.targets.shape == (2 * expected, 15)


def test_windows_infeasible():
    with pytest.raises(EmptyWindowSetError):
        make_windows(make_panel(np.zeros((2, 27, 3))), 13, 15)
    with pytest.raises(ConfigError):
        make_windows(make_panel(np.zeros((1, 5, 1))), 0, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(2, 25), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_windows_are_exact_slices(E, T, lookback, horizon, seed):
    rng = np.random.default_rng(seed)
    panel = make_panel(rng.standard_normal((E, T, 2)), rng.standard_normal((E, T)))
    if lookback + horizon > T:
        with pytest.raises(EmptyWindowSetError):
            make_windows(panel, lookback, horizon)
        return
    ws = make_windows(panel, lookback, horizon)
    assert len(ws) == E * (T - lookback - horizon + 1)
    starts_seen = {e: [] for e in panel.entities}
    for ent, start, x, y in ws:
        e = panel.entities.index(ent)
        np.testing.assert_array_equal(x, panel.values[e, start:start + lookback])
        np.testing.assert_array_equal(y, panel.target[e, start + lookback:start + lookback + horizon])
        starts_seen[ent].append(start)
    for ent in panel.entities:
        # every forecast origin t in [lookback, T - horizon] appears exactly once
        assert sorted(s + lookback for s in starts_seen[ent]) == list(range(lookback, T - horizon + 1))
        assert starts_seen[ent] == sorted(starts_seen[ent])


@pytest.mark.parametrize(
    "weights,ranks",
    [((4, 2, 1), [1, 2, 3]), ((1, -5), [2, 1]), ((3, 3, 1), [1.5, 1.5, 3])],
)
def test_synth_ground_truth(weights, ranks):
    _, truth = synth_generate(SynthConfig(entities=2, days=3, k=len(weights), weights=weights, noise_sd=0))
    assert truth.ranks.tolist() == ranks
    assert truth.source == "planted-weights"


def test_synth_target_is_planted_combination():
    cfg = SynthConfig(entities=3, days=5, k=3, weights=(4, 2, 1), noise_sd=0, static=(1,), seed=3)
    panel, _ = synth_generate(cfg)
    np.testing.assert_allclose(panel.target, panel.values @ np.array([4.0, 2.0, 1.0]), rtol=0, atol=1e-12)
    assert panel.static_mask.tolist() == [False, True, False]
    assert np.all(panel.values[:, :, 1] == panel.values[:, :1, 1])


def test_synth_standardize():
    panel, _ = synth_generate(SynthConfig(entities=40, days=10, seed=2, standardize=True))
    flat = panel.values.reshape(-1, panel.k)
    np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(flat.std(axis=0), 1, atol=1e-12)


def test_synth_config_errors():
    with pytest.raises(ConfigError):
        synth_generate(SynthConfig(k=1, weights=(1.0,)))
    with pytest.raises(ConfigError):
        synth_generate(SynthConfig(k=2, weights=(1.0, float("nan"))))
    with pytest.raises(ConfigError):
        SynthConfig.from_mapping({"bogus": 1})


def test_synth_deterministic_bytes(tmp_path):
    cfg = SynthConfig(entities=4, days=9, seed=11)
    a = write_panel_csv(synth_generate(cfg)[0], tmp_path / "a.csv").read_bytes()
    b = write_panel_csv(synth_generate(cfg)[0], tmp_path / "b.csv").read_bytes()
    assert a == b
    c = write_panel_csv(synth_generate(SynthConfig(entities=4, days=9, seed=12))[0], tmp_path / "c.csv")
    assert c.read_bytes() != a


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["all", "none", (0, 2)]))
def test_csv_round_trip_is_bitwise(tmp_path_factory, seed, static):
    panel, _ = synth_generate(SynthConfig(entities=3, days=6, k=3, weights=(1, 2, 3), seed=seed, static=static))
    path = write_panel_csv(panel, tmp_path_factory.mktemp("rt") / "p.csv")
    static_names = tuple(f for f, m in zip(panel.features, panel.static_mask) if m)
    back = load_panel(path, PanelSchema("entity", "date", "target", panel.features, static=static_names))
    assert back.values.tobytes() == panel.values.tobytes()
    assert back.target.tobytes() == panel.target.tobytes()
    assert np.array_equal(back.static_mask, panel.static_mask)
    # static features have zero within-entity variance after load
    for i in np.flatnonzero(back.static_mask):
        assert np.all(np.ptp(back.values[:, :, i], axis=1) == 0)


def test_truth_json_round_trip(tmp_path):
    _, truth = synth_generate(SynthConfig(entities=2, days=2, k=3, weights=(1, 3, 2)))
    path = write_truth(truth, tmp_path / "truth.json")
    doc = json.loads(path.read_text())
    assert doc == {"features": ["f1", "f2", "f3"], "ranks": [3.0, 1.0, 2.0]}
    assert load_truth(path).ranks == truth.ranks
    assert load_truth(path, invert=True).ranks.tolist() == [1.0, 3.0, 2.0]


def test_truth_from_scores(tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps({"features": ["a", "b", "c"], "scores": [0.2, 0.5, 0.3]}))
    assert load_truth(path).ranks.tolist() == [3.0, 1.0, 2.0]
    assert load_truth(path, invert=True).ranks.tolist() == [1.0, 3.0, 2.0]
