"""Tie-aware ranking and Spearman rank correlation between sensitivity reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InputError, UndefinedCorrelationError

__all__ = [
    "RankVector",
    "CorrelationMatrix",
    "rank",
    "spearman",
    "spearman_no_ties",
    "agreement_matrix",
    "accuracy",
]


@dataclass(frozen=True, eq=False)
class RankVector:
    """Ranks of k features, 1 = most important; ties share their average rank."""

    ranks: np.ndarray

    def __post_init__(self):
        r = np.array(self.ranks, dtype=np.float64, copy=True)
        if r.ndim != 1 or r.size == 0:
            raise InputError("a rank vector must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(r)):
            raise InputError("ranks must be finite")
        k = r.size
        if np.any(r < 1) or np.any(r > k) or not math.isclose(r.sum(), k * (k + 1) / 2, abs_tol=1e-9):
            raise InputError(f"{r.tolist()} is not a valid rank vector for k={k}")
        r.setflags(write=False)
        object.__setattr__(self, "ranks", r)

    def __len__(self) -> int:
        return self.ranks.size

    def __eq__(self, other) -> bool:
        return isinstance(other, RankVector) and np.array_equal(self.ranks, other.ranks)

    def tolist(self) -> list[float]:
        return self.ranks.tolist()


def rank(scores) -> RankVector:
    """Rank scores descending (largest score gets rank 1).

    Only bitwise-equal scores tie; no tolerance bucketing is applied.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise InputError("scores must be a non-empty 1-D sequence")
    if np.isnan(s).any():
        raise InputError("NaN score cannot be ranked")
    if not np.all(np.isfinite(s)):
        raise InputError("scores must be finite")
    return RankVector(rankdata(-s, method="average"))


def _as_ranks(x) -> np.ndarray:
    return x.ranks if isinstance(x, RankVector) else RankVector(x).ranks


def spearman(a, b) -> float:
    """Pearson correlation of two rank vectors (exact under ties)."""
    ra, rb = _as_ranks(a), _as_ranks(b)
    if ra.size != rb.size:
        raise InputError(f"rank vectors differ in length ({ra.size} vs {rb.size})")
    k = ra.size
    if k < 2:
        raise InputError("spearman needs k >= 2")
    centre = (k + 1) / 2.0
    da = ra - centre
    db = rb - centre
    va = float(np.dot(da, da))
    vb = float(np.dot(db, db))
    if va == 0.0 or vb == 0.0:
        raise UndefinedCorrelationError("all ranks tied on one side; correlation undefined")
    rho = float(np.dot(da, db)) / math.sqrt(va * vb)
    return min(1.0, max(-1.0, rho))


def spearman_no_ties(a, b) -> float:
    """The ``1 - 6 sum d^2 / (k (k^2 - 1))`` shortcut; only valid without ties."""
    ra, rb = _as_ranks(a), _as_ranks(b)
    if ra.size != rb.size:
        raise InputError("rank vectors differ in length")
    k = ra.size
    if len(np.unique(ra)) != k or len(np.unique(rb)) != k:
        raise InputError("shortcut formula is biased under ties; use spearman()")
    d = ra - rb
    return 1.0 - 6.0 * float(np.dot(d, d)) / (k * (k * k - 1))


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    labels: tuple[tuple[str, str], ...]  # (model id, method id)
    values: np.ndarray
    undefined: tuple[tuple[int, int], ...] = ()

    def label_strings(self) -> list[str]:
        return [f"{m}.{meth}" for m, meth in self.labels]

    def to_dict(self) -> dict:
        vals = [[None if math.isnan(v) else float(v) for v in row] for row in self.values]
        return {
            "labels": [list(l) for l in self.labels],
            "values": vals,
            "undefined": [list(p) for p in self.undefined],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = self.label_strings()
        w.writerow(["", *names])
        for name, row in zip(names, self.values):
            w.writerow([name, *("nan" if math.isnan(v) else repr(float(v)) for v in row)])
        return buf.getvalue()


def _report_label(report) -> tuple[str, str]:
    return (str(report.model), str(report.method))


def agreement_matrix(reports: Sequence, labels: Sequence[tuple[str, str]] | None = None) -> CorrelationMatrix:
    """Pairwise Spearman correlation between the rankings of ``reports``.

    Pairs whose correlation is undefined (an all-tied ranking) are NaN and
    listed in ``undefined``.
    """
    reports = list(reports)
    if not reports:
        raise InputError("no reports to compare")
    feats = tuple(reports[0].features)
    for r in reports[1:]:
        if tuple(r.features) != feats:
            raise InputError(
                f"feature mismatch: {_report_label(r)} has {list(r.features)}, expected {list(feats)}"
            )
    ranks = [rank(r.ranking_scores()) for r in reports]
    n = len(reports)
    vals = np.eye(n)
    undefined = []
    for i in range(n):
        for j in range(i + 1, n):
            try:
                rho = spearman(ranks[i], ranks[j])
            except UndefinedCorrelationError:
                rho = math.nan
                undefined.append((i, j))
            vals[i, j] = vals[j, i] = rho
    if labels is None:
        labels = [_report_label(r) for r in reports]
    return CorrelationMatrix(labels=tuple(tuple(l) for l in labels), values=vals, undefined=tuple(undefined))


def accuracy(report, truth) -> float:
    """Spearman correlation between a report's ranking and a ground-truth ranking."""
    if tuple(report.features) != tuple(truth.features):
        raise InputError(
            f"feature mismatch between report {list(report.features)} and truth {list(truth.features)}"
        )
    return spearman(rank(report.ranking_scores()), truth.ranks)
