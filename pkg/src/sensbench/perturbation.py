"""Perturbation-based sensitivity methods for forecasters.

All methods reduce a forecast to one scalar, the mean over the horizon, and
measure how that scalar moves when input features are shifted (Morris
elementary effects) or replaced by a baseline (ablation, occlusion).
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, EvaluationError

__all__ = [
    "MorrisConfig",
    "BaselinePolicy",
    "OcclusionConfig",
    "SensitivityReport",
    "METHODS",
    "aggregate",
    "elementary_effect",
    "morris",
    "scaled_morris",
    "ablation",
    "occlusion",
    "load_report",
    "write_report",
]

METHODS = ("morris", "scaled-morris", "ablation", "occlusion")
SCALED_MORRIS_NORMALIZATION = "mu_star * feature_std / target_std"

# Windows evaluated per model call in ablation/occlusion; fixed so batch layout never depends on parallelism.
CHUNK_WINDOWS = 128


@dataclass(frozen=True)
class MorrisConfig:
    delta_mode: str = "relative-to-std"
    delta: float = 0.1
    samples_r: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.delta_mode not in ("absolute", "relative-to-std"):
            raise ConfigError(f"delta_mode must be 'absolute' or 'relative-to-std', got {self.delta_mode!r}")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ConfigError("delta must be a finite value > 0")
        if self.samples_r < 1:
            raise ConfigError("samples_r must be >= 1")


@dataclass(frozen=True)
class BaselinePolicy:
    mode: str = "feature-mean"
    scope: str = "whole-window"

    def __post_init__(self):
        if self.mode not in ("zero", "feature-mean"):
            raise ConfigError(f"baseline mode must be 'zero' or 'feature-mean', got {self.mode!r}")
        if self.scope not in ("whole-window", "time-slice"):
            raise ConfigError(f"baseline scope must be 'whole-window' or 'time-slice', got {self.scope!r}")

    def values(self, k: int, stats=None) -> np.ndarray:
        if self.mode == "zero":
            return np.zeros(k)
        if stats is None:
            raise ConfigError("feature-mean baseline requires feature statistics")
        mean = np.asarray(stats.mean, dtype=np.float64)
        if mean.shape != (k,):
            raise ConfigError(f"feature statistics cover {mean.shape[0]} features, model has {k}")
        return mean


@dataclass(frozen=True)
class OcclusionConfig:
    patch_length: int = 3
    stride: int = 1
    baseline: BaselinePolicy = field(default_factory=lambda: BaselinePolicy(scope="time-slice"))

    def __post_init__(self):
        if self.patch_length < 1:
            raise ConfigError("patch_length must be >= 1")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")


@dataclass
class SensitivityReport:
    """Per-feature importance for one (model, method) pair."""

    method: str
    model: str
    features: tuple[str, ...]
    window_count: int
    config: dict
    mu: np.ndarray | None = None
    mu_star: np.ndarray | None = None
    sigma: np.ndarray | None = None
    importance: np.ndarray | None = None
    per_position: np.ndarray | None = None
    per_step_mu: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        self.features = tuple(self.features)
        k = len(self.features)
        for name in ("mu", "mu_star", "sigma", "importance"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != (k,):
                    raise ValueError(f"{name} must have one entry per feature")
                setattr(self, name, v)
        for name in ("per_position", "per_step_mu"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.float64))
        if self.is_morris:
            if self.mu_star is None or self.mu is None or self.sigma is None:
                raise ValueError("Morris reports need mu, mu_star and sigma")
        elif self.importance is None:
            raise ValueError("ablation/occlusion reports need importance")

    @property
    def is_morris(self) -> bool:
        return self.method in ("morris", "scaled-morris")

    def ranking_scores(self) -> np.ndarray:
        return self.mu_star if self.is_morris else self.importance

    def to_dict(self) -> dict:
        def arr(v):
            return None if v is None else v.tolist()

        return {
            "method": self.method,
            "model": self.model,
            "features": list(self.features),
            "mu": arr(self.mu),
            "mu_star": arr(self.mu_star),
            "sigma": arr(self.sigma),
            "importance": arr(self.importance),
            "per_position": arr(self.per_position),
            "per_step_mu": arr(self.per_step_mu),
            "window_count": self.window_count,
            "config": self.config,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SensitivityReport":
        return cls(
            method=doc["method"],
            model=doc["model"],
            features=tuple(doc["features"]),
            window_count=int(doc.get("window_count", 0)),
            config=dict(doc.get("config") or {}),
            mu=doc.get("mu"),
            mu_star=doc.get("mu_star"),
            sigma=doc.get("sigma"),
            importance=doc.get("importance"),
            per_position=doc.get("per_position"),
            per_step_mu=doc.get("per_step_mu"),
            warnings=list(doc.get("warnings") or []),
        )


def write_report(report: SensitivityReport, path: str | os.PathLike) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


def load_report(path: str | os.PathLike) -> SensitivityReport:
    with open(path, encoding="utf-8") as fh:
        return SensitivityReport.from_dict(json.load(fh))


def _predict(model, X: np.ndarray) -> np.ndarray:
    out = np.asarray(model.predict_batch(X), dtype=np.float64)
    if out.shape != (X.shape[0], model.horizon):
        raise EvaluationError(f"model returned shape {out.shape}, expected {(X.shape[0], model.horizon)}")
    if not np.all(np.isfinite(out)):
        raise EvaluationError("model produced a non-finite forecast")
    return out


def aggregate(forecast: np.ndarray) -> np.ndarray:
    """Scalar summary of a forecast: the mean over horizon steps."""
    return np.asarray(forecast).mean(axis=-1)


def _model_id(model, model_id):
    return model_id if model_id is not None else getattr(model, "kind", type(model).__name__)


def elementary_effect(model, window, feature: int, delta: float) -> float:
    """``(g(x + delta e_i) - g(x)) / delta`` with the shift applied at every lookback step."""
    x = np.asarray(window, dtype=np.float64)
    if not 0 <= feature < x.shape[-1]:
        raise ConfigError(f"feature index {feature} out of range for k={x.shape[-1]}")
    if delta == 0 or not math.isfinite(delta):
        raise ConfigError("delta must be finite and non-zero")
    shifted = x.copy()
    shifted[:, feature] += delta
    g = aggregate(_predict(model, np.stack([x, shifted])))
    return float((g[1] - g[0]) / delta)


def _feature_std(stats, windows) -> np.ndarray:
    if stats is not None:
        return np.asarray(stats.std, dtype=np.float64)
    return windows.inputs.reshape(-1, windows.k).std(axis=0)


def morris_deltas(config: MorrisConfig, features: Sequence[str], stats=None, windows=None) -> np.ndarray:
    k = len(features)
    if config.delta_mode == "absolute":
        return np.full(k, config.delta)
    std = _feature_std(stats, windows)
    bad = [features[i] for i in np.flatnonzero(~(std > 0))]
    if bad:
        raise ConfigError(f"relative-to-std delta needs std > 0; zero-std feature(s): {bad}")
    return config.delta * std


def morris(model, windows, config: MorrisConfig | None = None, *, stats=None, model_id: str | None = None
           ) -> SensitivityReport:
    """One-at-a-time elementary effects from ``samples_r`` seeded base windows.

    Each sampled window is a shared base point; feature ``i`` is shifted by its
    delta at every lookback step while the others stay fixed.
    """
    config = config or MorrisConfig()
    N, k = len(windows), windows.k
    if config.samples_r > N:
        raise ConfigError(f"samples_r={config.samples_r} exceeds the {N} available windows")
    deltas = morris_deltas(config, windows.features, stats, windows)

    rng = np.random.default_rng(config.seed)
    picks = np.sort(rng.choice(N, size=config.samples_r, replace=False))
    base = windows.inputs[picks]  # [r, L, k]
    r = len(picks)
    batch = np.repeat(base[:, None], k + 1, axis=1)  # [r, k+1, L, k]
    for i in range(k):
        batch[:, i + 1, :, i] += deltas[i]
    out = _predict(model, batch.reshape(r * (k + 1), *base.shape[1:])).reshape(r, k + 1, -1)

    step_effects = (out[:, 1:, :] - out[:, :1, :]) / deltas[None, :, None]  # [r, k, H]
    g = aggregate(out)
    effects = (g[:, 1:] - g[:, :1]) / deltas  # [r, k]

    return SensitivityReport(
        method="morris",
        model=_model_id(model, model_id),
        features=windows.features,
        window_count=r,
        config={
            "delta_mode": config.delta_mode,
            "delta": config.delta,
            "samples_r": config.samples_r,
            "seed": config.seed,
            "deltas": deltas.tolist(),
            "windows": picks.tolist(),
            "output_aggregate": "mean over horizon",
        },
        mu=effects.mean(axis=0),
        mu_star=np.abs(effects).mean(axis=0),
        sigma=effects.std(axis=0),
        per_step_mu=step_effects.mean(axis=0),
    )


def scaled_morris(report: SensitivityReport, stats, output_scale: float) -> SensitivityReport:
    """Rescale a Morris report by ``feature_std / output_scale`` so features in different units compare.

    Features with zero std get a scaled index of 0 and a warning.
    """
    if report.method != "morris":
        raise ConfigError(f"scaled_morris needs a 'morris' report, got {report.method!r}")
    if not (output_scale > 0 and math.isfinite(output_scale)):
        raise ConfigError("output_scale must be a finite value > 0")
    std = np.asarray(stats.std, dtype=np.float64)
    if std.shape != (len(report.features),):
        raise ConfigError("feature statistics do not match the report's features")
    factor = std / output_scale
    notes = list(report.warnings)
    for i in np.flatnonzero(std == 0):
        msg = f"feature {report.features[i]!r} has zero std; scaled index set to 0"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    cfg = dict(report.config)
    cfg.update(
        output_scale=float(output_scale),
        feature_std=std.tolist(),
        normalization=SCALED_MORRIS_NORMALIZATION,
        normalization_is_stand_in=True,
    )
    return SensitivityReport(
        method="scaled-morris",
        model=report.model,
        features=report.features,
        window_count=report.window_count,
        config=cfg,
        mu=report.mu * factor,
        mu_star=report.mu_star * factor,
        sigma=report.sigma * factor,
        per_step_mu=None if report.per_step_mu is None else report.per_step_mu * factor[:, None],
        warnings=notes,
    )


def _replacement_effects(model, inputs: np.ndarray, regions: Sequence[tuple[int, int, int]],
                         baseline: np.ndarray) -> np.ndarray:
    """``|g(x with region replaced) - g(x)|`` for every window and region ``(feature, t0, t1)``."""
    N = inputs.shape[0]
    R = len(regions)
    out = np.empty((N, R))
    for s in range(0, N, CHUNK_WINDOWS):
        X = inputs[s:s + CHUNK_WINDOWS]
        C = X.shape[0]
        batch = np.repeat(X[:, None], R + 1, axis=1)  # [C, R+1, L, k]
        for j, (f, t0, t1) in enumerate(regions):
            batch[:, j + 1, t0:t1, f] = baseline[f]
        g = aggregate(_predict(model, batch.reshape(C * (R + 1), *X.shape[1:]))).reshape(C, R + 1)
        out[s:s + C] = np.abs(g[:, 1:] - g[:, :1])
    return out


def _row_means(a: np.ndarray) -> np.ndarray:
    # Same memory layout and reduction for ablation and occlusion so a full-window patch matches bitwise.
    return np.ascontiguousarray(a).mean(axis=1)


def ablation(model, windows, baseline: BaselinePolicy | None = None, *, stats=None,
             model_id: str | None = None) -> SensitivityReport:
    """Mean absolute change in the forecast when one feature is replaced by its baseline over the whole window."""
    baseline = baseline or BaselinePolicy()
    if baseline.scope != "whole-window":
        raise ConfigError("ablation replaces the whole window; baseline scope must be 'whole-window'")
    if len(windows) == 0:
        raise ConfigError("ablation needs at least one window")
    k, L = windows.k, windows.lookback
    base = baseline.values(k, stats)
    diffs = _replacement_effects(model, windows.inputs, [(i, 0, L) for i in range(k)], base)
    return SensitivityReport(
        method="ablation",
        model=_model_id(model, model_id),
        features=windows.features,
        window_count=len(windows),
        config={"baseline": asdict(baseline), "baseline_values": base.tolist(),
                "output_aggregate": "mean over horizon"},
        importance=_row_means(diffs.T),
    )


def occlusion_positions(lookback: int, config: OcclusionConfig) -> list[int]:
    if config.baseline.scope == "whole-window":
        return [0]
    if config.patch_length > lookback:
        raise ConfigError(f"patch_length {config.patch_length} exceeds lookback {lookback}")
    return list(range(0, lookback - config.patch_length + 1, config.stride))


def occlusion(model, windows, config: OcclusionConfig | None = None, *, stats=None,
              model_id: str | None = None) -> SensitivityReport:
    """Slide a baseline patch along the lookback axis of each feature.

    ``per_position[i, p]`` is the mean absolute change with the patch at
    position ``p``; ``importance[i]`` averages over windows and positions.
    A ``whole-window`` baseline scope uses one patch spanning the lookback.
    """
    config = config or OcclusionConfig()
    if len(windows) == 0:
        raise ConfigError("occlusion needs at least one window")
    k, L = windows.k, windows.lookback
    if config.patch_length > L:
        raise ConfigError(f"patch_length {config.patch_length} exceeds lookback {L}")
    positions = occlusion_positions(L, config)
    width = L if config.baseline.scope == "whole-window" else config.patch_length
    base = config.baseline.values(k, stats)
    regions = [(i, p, p + width) for i in range(k) for p in positions]
    diffs = _replacement_effects(model, windows.inputs, regions, base)  # [N, k * P]
    P = len(positions)
    per_window = diffs.reshape(len(windows), k, P)
    return SensitivityReport(
        method="occlusion",
        model=_model_id(model, model_id),
        features=windows.features,
        window_count=len(windows),
        config={
            "patch_length": width,
            "stride": config.stride,
            "positions": positions,
            "baseline": asdict(config.baseline),
            "baseline_values": base.tolist(),
            "output_aggregate": "mean over horizon",
        },
        importance=_row_means(per_window.transpose(1, 0, 2).reshape(k, -1)),
        per_position=per_window.mean(axis=0),
    )
