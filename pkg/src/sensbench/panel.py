"""Panel ingestion, feature statistics, sliding windows and synthetic panels.

A panel is an ``entity x time x feature`` tensor plus one target series per
entity.  Every entity shares the same daily timestamp grid.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, EmptyWindowSetError, SchemaError
from .ranking import RankVector, rank

__all__ = [
    "Panel",
    "PanelSchema",
    "FeatureStats",
    "WindowSet",
    "GroundTruthRanking",
    "SynthConfig",
    "load_panel",
    "write_panel_csv",
    "feature_stats",
    "make_windows",
    "synth_generate",
    "load_truth",
    "write_truth",
]

DEFAULT_LOOKBACK = 13
DEFAULT_HORIZON = 15

_ONE_DAY = np.timedelta64(1, "D")


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Panel:
    """Observations indexed by (entity, day, feature) with a per-entity target."""

    entities: tuple[str, ...]
    timestamps: np.ndarray  # datetime64[D], strictly increasing by one day
    features: tuple[str, ...]
    values: np.ndarray  # [entity, time, feature]
    target: np.ndarray  # [entity, time]
    static_mask: np.ndarray  # [feature] bool

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(str(e) for e in self.entities))
        object.__setattr__(self, "features", tuple(str(f) for f in self.features))
        object.__setattr__(self, "timestamps", _frozen(self.timestamps, "datetime64[D]"))
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "target", _frozen(self.target))
        object.__setattr__(self, "static_mask", _frozen(self.static_mask, bool))
        self._validate()

    def _validate(self) -> None:
        k = len(self.features)
        if k < 1:
            raise DataError("panel needs at least one feature")
        if len(set(self.features)) != k:
            raise DataError(f"duplicate feature names in {list(self.features)}")
        if len(set(self.entities)) != len(self.entities):
            raise DataError("duplicate entity identifiers")
        E, T = len(self.entities), len(self.timestamps)
        if self.values.shape != (E, T, k):
            raise DataError(f"values shape {self.values.shape} != {(E, T, k)}")
        if self.target.shape != (E, T):
            raise DataError(f"target shape {self.target.shape} != {(E, T)}")
        if self.static_mask.shape != (k,):
            raise DataError("static_mask must have one entry per feature")
        if T > 1 and np.any(np.diff(self.timestamps) != _ONE_DAY):
            raise DataError("non-uniform spacing: timestamps must advance by exactly one day")
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.target))):
            raise DataError("panel contains missing or non-finite entries")
        for i in np.flatnonzero(self.static_mask):
            col = self.values[:, :, i]
            if np.any(col != col[:, :1]):
                raise DataError(f"static feature {self.features[i]!r} varies in time within an entity")

    @property
    def k(self) -> int:
        return len(self.features)

    @property
    def n_times(self) -> int:
        return len(self.timestamps)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for the long-form panel CSV."""

    entity: str
    date: str
    target: str
    features: tuple[str, ...]
    static: tuple[str, ...] = ()
    max_fill_gap: int = 0
    target_zscore: bool = False

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "static", tuple(self.static))
        if not self.features:
            raise SchemaError("schema must name at least one feature column")
        unknown = set(self.static) - set(self.features)
        if unknown:
            raise SchemaError(f"static features not among feature columns: {sorted(unknown)}")
        if self.max_fill_gap < 0:
            raise SchemaError("max_fill_gap must be >= 0")

    @classmethod
    def from_mapping(cls, m: Mapping) -> "PanelSchema":
        try:
            return cls(
                entity=m["entity"],
                date=m["date"],
                target=m["target"],
                features=tuple(m["features"]),
                static=tuple(m.get("static", ())),
                max_fill_gap=int(m.get("max_fill_gap", 0)),
                target_zscore=bool(m.get("target_zscore", False)),
            )
        except KeyError as exc:
            raise SchemaError(f"schema is missing key {exc.args[0]!r}") from None


def _forward_fill(block: np.ndarray, max_gap: int, entity: str, columns: Sequence[str]) -> np.ndarray:
    """Fill NaN runs of length <= max_gap with the last observed value (per column)."""
    if not np.isnan(block).any():
        return block
    out = block.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        missing = np.isnan(col)
        if not missing.any():
            continue
        if max_gap == 0:
            raise DataError(f"missing value in column {columns[j]!r} for entity {entity!r} (fill disabled)")
        if missing[0]:
            raise DataError(f"leading missing value in column {columns[j]!r} for entity {entity!r}")
        run = 0
        for t in range(len(col)):
            if missing[t]:
                run += 1
                if run > max_gap:
                    raise DataError(
                        f"gap of more than {max_gap} missing values in column {columns[j]!r} "
                        f"for entity {entity!r}"
                    )
                col[t] = col[t - 1]
            else:
                run = 0
    return out


def load_panel(path: str | os.PathLike, schema: PanelSchema | Mapping) -> Panel:
    """Read a long-form CSV (one row per entity-day) into a :class:`Panel`.

    Rows are sorted by (entity, date).  Every entity must cover the same
    daily grid with no missing days.  Missing cells are forward-filled up to
    ``schema.max_fill_gap`` consecutive values, otherwise rejected.
    """
    if not isinstance(schema, PanelSchema):
        schema = PanelSchema.from_mapping(schema)
    path = Path(path)
    if not path.exists():
        raise DataError(f"panel file not found: {path}")

    df = pd.read_csv(path, dtype={schema.entity: str}, float_precision="round_trip", encoding="utf-8")
    needed = [schema.entity, schema.date, schema.target, *schema.features]
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise SchemaError(f"missing column(s) {missing} in {path.name}")

    try:
        dates = pd.to_datetime(df[schema.date], format="%Y-%m-%d")
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparseable date in column {schema.date!r}: {exc}") from None
    df = df.assign(**{schema.date: dates.values.astype("datetime64[D]")})
    df = df.sort_values([schema.entity, schema.date], kind="mergesort").reset_index(drop=True)
    if df.duplicated([schema.entity, schema.date]).any():
        raise DataError("duplicate (entity, date) rows")

    num_cols = [schema.target, *schema.features]
    try:
        numeric = df[num_cols].to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"non-numeric value in target/feature columns: {exc}") from None

    entities: list[str] = []
    blocks: list[np.ndarray] = []
    grid = None
    for ent, idx in df.groupby(schema.entity, sort=True).indices.items():
        days = df[schema.date].to_numpy()[idx]
        if len(days) > 1 and np.any(np.diff(days) != _ONE_DAY):
            raise DataError(f"non-uniform spacing in dates for entity {ent!r}")
        if grid is None:
            grid = days
        elif len(days) != len(grid) or np.any(days != grid):
            raise DataError(f"entity {ent!r} does not share the common date grid")
        entities.append(str(ent))
        blocks.append(_forward_fill(numeric[idx], schema.max_fill_gap, str(ent), num_cols))

    if grid is None:
        raise DataError(f"no rows in {path.name}")
    stacked = np.stack(blocks)  # [E, T, 1 + k]
    target = stacked[:, :, 0]
    values = stacked[:, :, 1:]

    if schema.target_zscore:
        mu = target.mean(axis=1, keepdims=True)
        sd = target.std(axis=1, keepdims=True)
        target = (target - mu) / np.where(sd > 0, sd, 1.0)

    static_mask = np.array([f in schema.static for f in schema.features])
    return Panel(
        entities=tuple(entities),
        timestamps=grid,
        features=schema.features,
        values=values,
        target=target,
        static_mask=static_mask,
    )


def write_panel_csv(panel: Panel, path: str | os.PathLike, *, entity_col="entity", date_col="date",
                    target_col="target") -> Path:
    """Write ``panel`` in the long-form CSV layout read by :func:`load_panel`.

    Floats are written with ``repr`` so a reload is bitwise exact.
    """
    path = Path(path)
    dates = [str(d) for d in panel.timestamps.astype("datetime64[D]")]
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([entity_col, date_col, target_col, *panel.features])
        for e, ent in enumerate(panel.entities):
            vals = panel.values[e]
            tgt = panel.target[e]
            for t, day in enumerate(dates):
                w.writerow([ent, day, repr(float(tgt[t])), *(repr(float(v)) for v in vals[t])])
    os.replace(tmp, path)
    return path


@dataclass(frozen=True, eq=False)
class FeatureStats:
    """Per-feature summary over every (entity, time) cell; std uses the population convention."""

    features: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "min": self.min.tolist(),
            "max": self.max.tolist(),
        }


def feature_stats(panel: Panel) -> FeatureStats:
    flat = panel.values.reshape(-1, panel.k)
    lo = flat.min(axis=0)
    hi = flat.max(axis=0)
    const = lo == hi
    mean = np.where(const, lo, np.clip(flat.mean(axis=0), lo, hi))
    std = np.where(const, 0.0, flat.std(axis=0))
    return FeatureStats(
        features=panel.features,
        mean=_frozen(mean),
        std=_frozen(std),
        min=_frozen(lo),
        max=_frozen(hi),
    )


@dataclass(frozen=True, eq=False)
class WindowSet:
    """Sliding (lookback, horizon) windows cut from a panel.

    ``inputs[n]`` is ``values[entity_index[n], start[n]:start[n]+lookback]`` and
    ``targets[n]`` is the following ``horizon`` target values.
    """

    lookback: int
    horizon: int
    features: tuple[str, ...]
    entities: tuple[str, ...]
    entity_index: np.ndarray
    starts: np.ndarray
    inputs: np.ndarray  # [N, lookback, k]
    targets: np.ndarray  # [N, horizon]

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def k(self) -> int:
        return len(self.features)

    def __iter__(self) -> Iterator[tuple[str, int, np.ndarray, np.ndarray]]:
        for n in range(len(self)):
            yield self.entities[self.entity_index[n]], int(self.starts[n]), self.inputs[n], self.targets[n]

    def subset(self, index) -> "WindowSet":
        index = np.asarray(index, dtype=np.int64)
        return WindowSet(
            lookback=self.lookback,
            horizon=self.horizon,
            features=self.features,
            entities=self.entities,
            entity_index=_frozen(self.entity_index[index], np.int64),
            starts=_frozen(self.starts[index], np.int64),
            inputs=_frozen(self.inputs[index]),
            targets=_frozen(self.targets[index]),
        )

    def per_entity_counts(self) -> dict[str, int]:
        counts = np.bincount(self.entity_index, minlength=len(self.entities))
        return {e: int(c) for e, c in zip(self.entities, counts)}


def make_windows(panel: Panel, lookback: int = DEFAULT_LOOKBACK, horizon: int = DEFAULT_HORIZON) -> WindowSet:
    """Cut every (lookback, horizon) window, ordered by (entity, start)."""
    if lookback < 1 or horizon < 1:
        raise ConfigError("lookback and horizon must be >= 1")
    T = panel.n_times
    per_entity = T - lookback - horizon + 1
    if per_entity <= 0:
        raise EmptyWindowSetError(
            f"lookback {lookback} + horizon {horizon} exceeds the {T} available days for every entity"
        )
    E = len(panel.entities)
    starts = np.arange(per_entity)
    x_view = np.lib.stride_tricks.sliding_window_view(panel.values, lookback, axis=1)  # [E, T-L+1, k, L]
    y_view = np.lib.stride_tricks.sliding_window_view(panel.target[:, lookback:], horizon, axis=1)
    inputs = x_view[:, :per_entity].transpose(0, 1, 3, 2).reshape(E * per_entity, lookback, panel.k)
    targets = y_view[:, :per_entity].reshape(E * per_entity, horizon)
    return WindowSet(
        lookback=lookback,
        horizon=horizon,
        features=panel.features,
        entities=panel.entities,
        entity_index=_frozen(np.repeat(np.arange(E), per_entity), np.int64),
        starts=_frozen(np.tile(starts, E), np.int64),
        inputs=_frozen(inputs),
        targets=_frozen(targets),
    )


@dataclass(frozen=True, eq=False)
class GroundTruthRanking:
    features: tuple[str, ...]
    ranks: RankVector
    source: str  # "planted-weights" | "external-file"

    def to_dict(self) -> dict:
        return {"features": list(self.features), "ranks": self.ranks.ranks.tolist()}


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic panel recipe.

    ``static`` is ``"all"``, ``"none"`` or a list of feature indices drawn once
    per entity and repeated over time.  With ``standardize`` every feature is
    rescaled to zero mean and unit population std over the whole panel.
    """

    entities: int = 50
    days: int = 120
    k: int = 8
    weights: tuple[float, ...] = (8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0)
    noise_sd: float = 0.1
    seed: int = 0
    static: str | tuple[int, ...] = "all"
    standardize: bool = False
    start: str = "2020-03-01"
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not isinstance(self.static, str):
            object.__setattr__(self, "static", tuple(int(i) for i in self.static))
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @classmethod
    def from_mapping(cls, m: Mapping) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(m) - known
        if extra:
            raise ConfigError(f"unknown synth option(s): {sorted(extra)}")
        kw = dict(m)
        if "weights" in kw:
            kw["weights"] = tuple(kw["weights"])
        if "static" in kw and not isinstance(kw["static"], str):
            kw["static"] = tuple(kw["static"])
        if kw.get("feature_names") is not None:
            kw["feature_names"] = tuple(kw["feature_names"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "entities": self.entities,
            "days": self.days,
            "k": self.k,
            "weights": list(self.weights),
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "static": self.static if isinstance(self.static, str) else list(self.static),
            "standardize": self.standardize,
            "start": self.start,
            "feature_names": None if self.feature_names is None else list(self.feature_names),
        }

    def static_indices(self) -> list[int]:
        if self.static == "all":
            return list(range(self.k))
        if self.static == "none":
            return []
        if isinstance(self.static, str):
            raise ConfigError(f"static must be 'all', 'none' or a list of indices, got {self.static!r}")
        bad = [i for i in self.static if not 0 <= i < self.k]
        if bad:
            raise ConfigError(f"static feature indices out of range: {bad}")
        return sorted(set(self.static))


def synth_generate(config: SynthConfig | Mapping) -> tuple[Panel, GroundTruthRanking]:
    """Draw a panel whose target is a planted linear combination of the features.

    ``target[e, t] = sum_i weights[i] * values[e, t, i] + noise`` and the
    ground truth ranks features by ``|weights|`` descending (average ties).
    """
    if not isinstance(config, SynthConfig):
        config = SynthConfig.from_mapping(config)
    c = config
    if c.k < 2:
        raise ConfigError("synthetic panel needs k >= 2")
    if len(c.weights) != c.k:
        raise ConfigError(f"{len(c.weights)} weights given for k={c.k}")
    w = np.asarray(c.weights, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ConfigError("weights must be finite")
    if c.entities < 1 or c.days < 1:
        raise ConfigError("entities and days must be >= 1")
    if c.noise_sd < 0:
        raise ConfigError("noise_sd must be >= 0")
    names = c.feature_names or tuple(f"f{i + 1}" for i in range(c.k))
    if len(names) != c.k:
        raise ConfigError("feature_names length must equal k")

    rng = np.random.default_rng(c.seed)
    # Both draws always happen so the stream does not depend on the static subset.
    values = rng.standard_normal((c.entities, c.days, c.k))
    per_entity = rng.standard_normal((c.entities, c.k))
    noise = rng.standard_normal((c.entities, c.days))

    static = c.static_indices()
    for i in static:
        values[:, :, i] = per_entity[:, None, i]
    if c.standardize:
        flat = values.reshape(-1, c.k)
        mu = flat.mean(axis=0)
        sd = flat.std(axis=0)
        values = (values - mu) / np.where(sd > 0, sd, 1.0)

    target = values @ w + c.noise_sd * noise
    start = np.datetime64(c.start, "D")
    panel = Panel(
        entities=tuple(f"e{j:04d}" for j in range(c.entities)),
        timestamps=start + np.arange(c.days),
        features=names,
        values=values,
        target=target,
        static_mask=np.isin(np.arange(c.k), static),
    )
    truth = GroundTruthRanking(features=names, ranks=rank(np.abs(w)), source="planted-weights")
    return panel, truth


def write_truth(truth: GroundTruthRanking, path: str | os.PathLike) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(truth.to_dict(), indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


def load_truth(path: str | os.PathLike, *, invert: bool = False) -> GroundTruthRanking:
    """Read a ground-truth file.

    Accepts either ``{"features", "ranks"}`` or ``{"features", "scores"}``;
    scores (e.g. case share per age group) are ranked descending.  ``invert``
    flips the ordering for sources where a smaller score means more important.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        features = tuple(doc["features"])
    except (KeyError, TypeError):
        raise DataError(f"truth file {path} has no 'features' list") from None
    if "ranks" in doc:
        ranks = np.asarray(doc["ranks"], dtype=np.float64)
        if ranks.shape != (len(features),):
            raise DataError("truth 'ranks' length does not match 'features'")
        rv = RankVector(ranks)
        if invert:
            rv = RankVector(len(features) + 1.0 - ranks)
    elif "scores" in doc:
        scores = np.asarray(doc["scores"], dtype=np.float64)
        if scores.shape != (len(features),):
            raise DataError("truth 'scores' length does not match 'features'")
        rv = rank(-scores if invert else scores)
    else:
        raise DataError(f"truth file {path} needs 'ranks' or 'scores'")
    return GroundTruthRanking(features=features, ranks=rv, source="external-file")
