"""Run configuration: a TOML document mapped onto :class:`RunConfig`.

Example::

    seed = 7
    lookback = 13
    horizon = 15

    [data]
    source = "synth"            # or "csv"

    [data.synth]
    entities = 50
    days = 120
    weights = [8, 7, 6, 5, 4, 3, 2, 1]

    [[models]]
    id = "dlinear"
    kind = "linear-decomp"
    train = { epochs = 30 }

    [[models]]
    id = "tft"
    kind = "external"
    command = ["python", "my_adapter.py"]

    [[methods]]
    method = "morris"
    samples_r = 20

    [[methods]]
    method = "occlusion"
    patch_length = 3
"""

from __future__ import annotations

import hashlib
import json
import re
import shlex
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, SchemaError
from .models import BUILTIN_KINDS, TrainConfig
from .panel import DEFAULT_HORIZON, DEFAULT_LOOKBACK, PanelSchema, SynthConfig
from .perturbation import METHODS, BaselinePolicy, MorrisConfig, OcclusionConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ModelEntry", "MethodEntry", "RunConfig", "load_config", "parse_config"]

_ID = re.compile(r"^[A-Za-z0-9_-]+$")


def _check_id(value: str, what: str) -> str:
    if not isinstance(value, str) or not _ID.match(value):
        raise ConfigError(f"{what} id {value!r} must match [A-Za-z0-9_-]+")
    return value


def _take(table: Mapping, allowed: set[str], where: str) -> dict:
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in {where}")
    return dict(table)


@dataclass(frozen=True)
class ModelEntry:
    id: str
    kind: str
    train: TrainConfig | None = None
    command: tuple[str, ...] | None = None
    timeout: float = 30.0

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"id": self.id, "kind": self.kind}
        if self.train is not None:
            d["train"] = self.train.to_dict()
        if self.command is not None:
            d["command"] = list(self.command)
            d["timeout"] = self.timeout
        return d


@dataclass(frozen=True)
class MethodEntry:
    id: str
    method: str
    morris: MorrisConfig | None = None
    baseline: BaselinePolicy | None = None
    occlusion: OcclusionConfig | None = None
    max_windows: int | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"id": self.id, "method": self.method}
        if self.morris is not None:
            d["morris"] = asdict(self.morris)
        if self.baseline is not None:
            d["baseline"] = asdict(self.baseline)
        if self.occlusion is not None:
            d["occlusion"] = asdict(self.occlusion)
        if self.max_windows is not None:
            d["max_windows"] = self.max_windows
        return d


@dataclass(frozen=True)
class RunConfig:
    source: str
    lookback: int
    horizon: int
    models: tuple[ModelEntry, ...]
    methods: tuple[MethodEntry, ...]
    seed: int = 0
    synth: SynthConfig | None = None
    csv_path: str | None = None
    schema: PanelSchema | None = None
    out: str | None = None
    base_dir: str = "."
    raw: dict = field(default_factory=dict, compare=False)

    def resolved_csv_path(self) -> Path:
        p = Path(self.csv_path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        """Every semantically meaningful field; the basis of :meth:`config_hash`."""
        data: dict[str, Any] = {"source": self.source}
        if self.synth is not None:
            data["synth"] = self.synth.to_dict()
        if self.source == "csv":
            path = self.resolved_csv_path()
            data["csv"] = {
                "path": str(self.csv_path),
                "sha256": hashlib.sha256(path.read_bytes()).hexdigest() if path.exists() else None,
                "schema": asdict(self.schema),
            }
            data["csv"]["schema"]["features"] = list(self.schema.features)
            data["csv"]["schema"]["static"] = list(self.schema.static)
        return {
            "seed": self.seed,
            "lookback": self.lookback,
            "horizon": self.horizon,
            "data": data,
            "models": [m.to_dict() for m in self.models],
            "methods": [m.to_dict() for m in self.methods],
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _parse_model(t: Mapping, seed: int, index: int) -> ModelEntry:
    t = _take(t, {"id", "kind", "train", "command", "timeout"}, f"models[{index}]")
    kind = t.get("kind")
    if kind not in (*BUILTIN_KINDS, "external"):
        raise ConfigError(f"models[{index}]: kind must be one of {(*BUILTIN_KINDS, 'external')}, got {kind!r}")
    mid = _check_id(t.get("id", kind), "model")
    if kind == "external":
        cmd = t.get("command")
        if isinstance(cmd, str):
            cmd = shlex.split(cmd)
        if not cmd:
            raise ConfigError(f"external model {mid!r} needs a command")
        if "train" in t:
            raise ConfigError(f"external model {mid!r} cannot take a train table")
        timeout = float(t.get("timeout", 30.0))
        if not timeout > 0:
            raise ConfigError("timeout must be > 0")
        return ModelEntry(id=mid, kind=kind, command=tuple(str(c) for c in cmd), timeout=timeout)
    if "command" in t:
        raise ConfigError(f"built-in model {mid!r} cannot take a command")
    train_tbl = dict(t.get("train", {}))
    train_tbl.setdefault("seed", seed)
    return ModelEntry(id=mid, kind=kind, train=TrainConfig.from_mapping(train_tbl))


def _parse_method(t: Mapping, seed: int, index: int) -> MethodEntry:
    method = t.get("method")
    if method not in METHODS:
        raise ConfigError(f"methods[{index}]: method must be one of {METHODS}, got {method!r}")
    where = f"methods[{index}] ({method})"
    mid = _check_id(t.get("id", method), "method")
    if method in ("morris", "scaled-morris"):
        t = _take(t, {"id", "method", "delta_mode", "delta", "samples_r", "seed"}, where)
        cfg = MorrisConfig(
            delta_mode=t.get("delta_mode", "relative-to-std"),
            delta=float(t.get("delta", 0.1)),
            samples_r=int(t.get("samples_r", 20)),
            seed=int(t.get("seed", seed)),
        )
        return MethodEntry(id=mid, method=method, morris=cfg)
    max_windows = t.get("max_windows")
    if max_windows is not None and int(max_windows) < 1:
        raise ConfigError(f"{where}: max_windows must be >= 1")
    max_windows = None if max_windows is None else int(max_windows)
    if method == "ablation":
        t = _take(t, {"id", "method", "baseline", "max_windows"}, where)
        return MethodEntry(id=mid, method=method, baseline=BaselinePolicy(mode=t.get("baseline", "feature-mean")),
                           max_windows=max_windows)
    t = _take(t, {"id", "method", "baseline", "scope", "patch_length", "stride", "max_windows"}, where)
    cfg = OcclusionConfig(
        patch_length=int(t.get("patch_length", 3)),
        stride=int(t.get("stride", 1)),
        baseline=BaselinePolicy(mode=t.get("baseline", "feature-mean"), scope=t.get("scope", "time-slice")),
    )
    return MethodEntry(id=mid, method=method, occlusion=cfg, max_windows=max_windows)


def parse_config(doc: Mapping, *, base_dir: str | Path = ".") -> RunConfig:
    doc = _take(doc, {"seed", "lookback", "horizon", "data", "models", "methods", "out"}, "run config")
    seed = int(doc.get("seed", 0))
    lookback = int(doc.get("lookback", DEFAULT_LOOKBACK))
    horizon = int(doc.get("horizon", DEFAULT_HORIZON))
    if lookback < 1 or horizon < 1:
        raise ConfigError("lookback and horizon must be >= 1")

    data = _take(doc.get("data", {"source": "synth"}), {"source", "synth", "csv"}, "[data]")
    source = data.get("source", "synth")
    synth = csv_path = schema = None
    if source == "synth":
        tbl = dict(data.get("synth", {}))
        tbl.setdefault("seed", seed)
        synth = SynthConfig.from_mapping(tbl)
    elif source == "csv":
        tbl = dict(data.get("csv", {}))
        if "path" not in tbl:
            raise ConfigError("[data.csv] needs a path")
        csv_path = str(tbl.pop("path"))
        try:
            schema = PanelSchema.from_mapping(tbl)
        except SchemaError as exc:
            raise ConfigError(f"[data.csv]: {exc}") from None
    else:
        raise ConfigError(f"data.source must be 'synth' or 'csv', got {source!r}")

    models = tuple(_parse_model(t, seed, i) for i, t in enumerate(doc.get("models", [])))
    methods = tuple(_parse_method(t, seed, i) for i, t in enumerate(doc.get("methods", [])))
    if not models or not methods:
        raise ConfigError("a run needs at least one model and one method")
    for what, ids in (("model", [m.id for m in models]), ("method", [m.id for m in methods])):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ConfigError(f"duplicate {what} id(s): {dupes}")
    return RunConfig(
        source=source,
        lookback=lookback,
        horizon=horizon,
        models=models,
        methods=methods,
        seed=seed,
        synth=synth,
        csv_path=csv_path,
        schema=schema,
        out=doc.get("out"),
        base_dir=str(base_dir),
        raw=dict(doc),
    )


def load_config(path: str | Path, *, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if seed is not None:
        doc["seed"] = seed
    return parse_config(doc, base_dir=path.resolve().parent)
