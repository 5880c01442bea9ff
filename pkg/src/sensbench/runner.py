"""Experiment-grid orchestration behind the ``synth``, ``train``, ``run`` and ``report`` commands."""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import platform
import time
import traceback
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, kernels
from .config import MethodEntry, ModelEntry, RunConfig
from .errors import ReportError, SensBenchError
from .external import connect_external
from .models import ModelSpec, save_model, train
from .panel import (
    FeatureStats,
    Panel,
    WindowSet,
    feature_stats,
    load_panel,
    load_truth,
    make_windows,
    synth_generate,
    write_panel_csv,
    write_truth,
)
from .perturbation import SensitivityReport, ablation, load_report, morris, occlusion, scaled_morris, write_report
from .ranking import accuracy, agreement_matrix

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _write_json(path: Path, doc) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


def _write_text(path: Path, text: str) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def cmd_synth(config: RunConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write ``panel.csv`` and ``truth.json`` for the config's synthetic data source."""
    if config.synth is None:
        raise SensBenchError("synth needs a config with data.source = 'synth'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panel, truth = synth_generate(config.synth)
    return {
        "panel": write_panel_csv(panel, out / "panel.csv"),
        "truth": write_truth(truth, out / "truth.json"),
    }


@dataclass
class RunData:
    panel: Panel
    stats: FeatureStats
    windows: WindowSet
    output_scale: float
    truth: object = None


def prepare_data(config: RunConfig, data_dir: Path | None = None) -> RunData:
    truth = None
    if config.source == "synth":
        panel, truth = synth_generate(config.synth)
        if data_dir is not None:
            data_dir.mkdir(parents=True, exist_ok=True)
            write_panel_csv(panel, data_dir / "panel.csv")
            write_truth(truth, data_dir / "truth.json")
    else:
        panel = load_panel(config.resolved_csv_path(), config.schema)
    windows = make_windows(panel, config.lookback, config.horizon)
    scale = float(windows.targets.std())
    return RunData(panel=panel, stats=feature_stats(panel), windows=windows,
                   output_scale=scale if scale > 0 else 1.0, truth=truth)


def _subset(windows: WindowSet, max_windows: int | None) -> WindowSet:
    n = len(windows)
    if max_windows is None or max_windows >= n:
        return windows
    idx = np.unique(np.round(np.linspace(0, n - 1, max_windows)).astype(np.int64))
    return windows.subset(idx)


def compute_cell(model, model_id: str, method: MethodEntry, data: RunData) -> SensitivityReport:
    if method.method in ("morris", "scaled-morris"):
        rep = morris(model, data.windows, method.morris, stats=data.stats, model_id=model_id)
        if method.method == "scaled-morris":
            rep = scaled_morris(rep, data.stats, data.output_scale)
        return rep
    windows = _subset(data.windows, method.max_windows)
    if method.method == "ablation":
        return ablation(model, windows, method.baseline, stats=data.stats, model_id=model_id)
    return occlusion(model, windows, method.occlusion, stats=data.stats, model_id=model_id)


@dataclass
class CellResult:
    model: str
    method: str
    status: str = "pending"
    file: str | None = None
    error: str | None = None
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"model": self.model, "method": self.method, "status": self.status, "file": self.file,
             "error": self.error, "seconds": round(self.seconds, 6)}
        d.update(self.extra)
        return d


def _describe(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


class GridRunner:
    """Runs every (model, method) cell of a config and records each outcome."""

    def __init__(self, config: RunConfig, out_dir: str | Path, jobs: int = 1):
        self.config = config
        self.out = Path(out_dir)
        self.jobs = max(1, int(jobs))
        self.reports_dir = self.out / "reports"
        self.models_dir = self.out / "models"
        self.cells = {(m.id, t.id): CellResult(m.id, t.id) for m in config.models for t in config.methods}
        self.model_info: dict[str, dict] = {}

    def _run_cell(self, model, entry: ModelEntry, method: MethodEntry, data: RunData) -> None:
        cell = self.cells[(entry.id, method.id)]
        t0 = time.perf_counter()
        try:
            rep = compute_cell(model, entry.id, method, data)
            path = write_report(rep, self.reports_dir / f"{entry.id}.{method.id}.json")
            cell.status, cell.file = "ok", str(path.relative_to(self.out))
        except Exception as exc:
            cell.status, cell.error = "failed", _describe(exc)
            log.warning("cell %s.%s failed: %s", entry.id, method.id, cell.error)
            log.debug("%s", traceback.format_exc())
        cell.seconds = time.perf_counter() - t0

    def _train(self, entry: ModelEntry, data: RunData):
        t0 = time.perf_counter()
        model = train(entry.kind, data.windows, entry.train)
        save_model(model, self.models_dir / f"{entry.id}.json")
        self.model_info[entry.id] = {
            "kind": entry.kind,
            "status": "trained",
            "init_mse": model.init_mse,
            "train_mse": model.train_mse,
            "seconds": round(time.perf_counter() - t0, 6),
        }
        return model

    def _run_external(self, entry: ModelEntry, data: RunData) -> None:
        # One adapter lane per external model: its cells run sequentially, each on a fresh process.
        spec = ModelSpec(self.config.lookback, self.config.horizon, data.panel.k)
        self.model_info[entry.id] = {"kind": "external", "status": "connected", "command": list(entry.command)}
        for method in self.config.methods:
            cell = self.cells[(entry.id, method.id)]
            t0 = time.perf_counter()
            try:
                model = connect_external(entry.command, spec, timeout=entry.timeout, cwd=self.config.base_dir)
            except Exception as exc:
                cell.status, cell.error = "failed", _describe(exc)
                cell.seconds = time.perf_counter() - t0
                continue
            try:
                self._run_cell(model, entry, method, data)
            finally:
                model.close()
            cell.extra["adapter_requests"] = model.requests_sent

    def run(self) -> dict:
        started = _now()
        t_start = time.perf_counter()
        self.reports_dir.mkdir(parents=True, exist_ok=True)
        self.models_dir.mkdir(parents=True, exist_ok=True)
        for stale in self.reports_dir.glob("*.json"):
            stale.unlink()
        data = prepare_data(self.config, self.out / "data")
        t_data = time.perf_counter() - t_start

        # BLAS pinned to one thread so results do not depend on how many cells run at once.
        with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=self.jobs) as pool:
            trained: dict[str, Future] = {}
            lanes: list[Future] = []
            for entry in self.config.models:
                if entry.kind == "external":
                    lanes.append(pool.submit(self._run_external, entry, data))
                else:
                    trained[entry.id] = pool.submit(self._train, entry, data)
            cell_futures = []
            for entry in self.config.models:
                if entry.kind == "external":
                    continue
                try:
                    model = trained[entry.id].result()
                except Exception as exc:
                    msg = f"training failed: {_describe(exc)}"
                    self.model_info[entry.id] = {"kind": entry.kind, "status": "failed", "error": msg}
                    for method in self.config.methods:
                        cell = self.cells[(entry.id, method.id)]
                        cell.status, cell.error = "failed", msg
                    continue
                for method in self.config.methods:
                    cell_futures.append(pool.submit(self._run_cell, model, entry, method, data))
            for f in (*cell_futures, *lanes):
                f.result()

        failed = [c for c in self.cells.values() if c.status != "ok"]
        exit_code = EXIT_OK if not failed else EXIT_PARTIAL
        manifest = {
            "tool": "sensbench",
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "kernel_backend": kernels.BACKEND,
            "config_hash": self.config.config_hash(),
            "config": self.config.to_dict(),
            "jobs": self.jobs,
            "started_at": started,
            "finished_at": _now(),
            "timings": {"data_seconds": round(t_data, 6),
                        "total_seconds": round(time.perf_counter() - t_start, 6)},
            "data": {
                "source": self.config.source,
                "panel_shape": list(data.panel.shape),
                "features": list(data.panel.features),
                "windows": len(data.windows),
                "output_scale": data.output_scale,
                "feature_stats": data.stats.to_dict(),
            },
            "models": {m.id: self.model_info.get(m.id, {}) for m in self.config.models},
            "cells": [self.cells[(m.id, t.id)].to_dict() for m in self.config.models for t in self.config.methods],
            "failed_cells": len(failed),
            "exit_code": exit_code,
        }
        _write_json(self.out / "manifest.json", manifest)
        return manifest


def cmd_run(config: RunConfig, out_dir: str | Path, jobs: int = 1) -> tuple[int, dict]:
    manifest = GridRunner(config, out_dir, jobs).run()
    return manifest["exit_code"], manifest


def cmd_train(config: RunConfig, out_dir: str | Path) -> dict[str, dict]:
    """Train every built-in model of the config and save it under ``models/``."""
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    data = prepare_data(config)
    summary = {}
    for entry in config.models:
        if entry.kind == "external":
            continue
        model = train(entry.kind, data.windows, entry.train)
        path = save_model(model, out / "models" / f"{entry.id}.json")
        summary[entry.id] = {"kind": entry.kind, "file": str(path), "init_mse": model.init_mse,
                             "train_mse": model.train_mse, "train": entry.train.to_dict()}
    _write_json(out / "models" / "summary.json", summary)
    return summary


def _load_reports(run_dir: Path) -> dict[tuple[str, str], SensitivityReport]:
    reports = {}
    for path in sorted((run_dir / "reports").glob("*.json")):
        stem = path.name[: -len(".json")]
        if stem.count(".") != 1:
            raise ReportError(f"unexpected report file name {path.name!r}")
        model_id, method_id = stem.split(".")
        try:
            reports[(model_id, method_id)] = load_report(path)
        except (ValueError, KeyError, SensBenchError) as exc:
            raise ReportError(f"cannot read {path.name}: {exc}") from None
    return reports


def _emit_matrix(mdir: Path, name: str, reports, labels) -> dict:
    mat = agreement_matrix(reports, labels)
    _write_text(mdir / f"{name}.csv", mat.to_csv())
    _write_json(mdir / f"{name}.json", mat.to_dict())
    return mat.to_dict()


def cmd_report(run_dir: str | Path, truth: str | Path | None = None, *, invert_truth: bool = False) -> dict:
    """Cross-method, cross-model and ground-truth agreement tables for a run directory.

    Writes ``matrices/methods__<model>``, ``matrices/models__<method>`` and
    ``matrices/accuracy`` as CSV and JSON.
    """
    run_dir = Path(run_dir)
    reports = _load_reports(run_dir)
    if len(reports) < 2:
        raise ReportError(f"need at least 2 reports in {run_dir / 'reports'}, found {len(reports)}")
    feats = {tuple(r.features) for r in reports.values()}
    if len(feats) > 1:
        raise ReportError(f"reports disagree on the feature list: {sorted(feats)}")

    mdir = run_dir / "matrices"
    mdir.mkdir(parents=True, exist_ok=True)
    for stale in mdir.glob("*"):
        stale.unlink()
    model_ids = sorted({m for m, _ in reports})
    method_ids = sorted({t for _, t in reports})
    out: dict = {"cross_method": {}, "cross_model": {}, "accuracy": None}

    for mid in model_ids:
        keys = [(mid, t) for t in method_ids if (mid, t) in reports]
        if len(keys) >= 2:
            out["cross_method"][mid] = _emit_matrix(mdir, f"methods__{mid}", [reports[k] for k in keys], keys)
    for tid in method_ids:
        keys = [(m, tid) for m in model_ids if (m, tid) in reports]
        if len(keys) >= 2:
            out["cross_model"][tid] = _emit_matrix(mdir, f"models__{tid}", [reports[k] for k in keys], keys)

    if truth is not None:
        gt = load_truth(truth, invert=invert_truth)
        rows = []
        for (mid, tid), rep in sorted(reports.items()):
            try:
                rho = accuracy(rep, gt)
                err = None
            except SensBenchError as exc:
                rho, err = None, _describe(exc)
            rows.append({"model": mid, "method": tid, "spearman": rho, "error": err})
        lines = ["model,method,spearman"]
        lines += [f"{r['model']},{r['method']},{'nan' if r['spearman'] is None else repr(r['spearman'])}" for r in rows]
        _write_text(mdir / "accuracy.csv", "\n".join(lines) + "\n")
        _write_json(mdir / "accuracy.json", {"truth": str(truth), "rows": rows})
        out["accuracy"] = rows

    if not out["cross_method"] and not out["cross_model"] and out["accuracy"] is None:
        raise ReportError("fewer than 2 comparable reports (no shared model or method)")
    return out
