"""Ranking quality: NDCG@p, ACG@p and ACG-weighted average precision.

Queries whose retrieved list holds no relevant item are excluded (the functions
return ``None``) rather than scored zero.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dsrh._fileio import atomic_write_text
from dsrh.dataset import levels_against
from dsrh.retrieval import CodeDatabase, ranking_order

DEFAULT_CUTOFFS = (100,)


def _discounts(n: int) -> np.ndarray:
    return np.log2(np.arange(2, n + 2, dtype=np.float64))


def ndcg_at(levels: Sequence[int], p: int) -> float | None:
    levels = np.asarray(levels, dtype=np.float64)
    p = min(p, len(levels))
    if p < 1:
        return None
    disc = _discounts(p)
    ideal = np.sort(levels)[::-1][:p]
    z = np.sum((2.0**ideal - 1.0) / disc)
    if z == 0:
        return None
    return float(np.sum((2.0 ** levels[:p] - 1.0) / disc) / z)


def acg_at(levels: Sequence[int], p: int) -> float:
    if p < 1:
        raise ValueError("cutoff must be >= 1")
    levels = np.asarray(levels, dtype=np.float64)
    p = min(p, len(levels))
    return float(levels[:p].mean()) if p else 0.0


def average_precision_w(levels: Sequence[int], cutoff: int | None = None) -> float | None:
    levels = np.asarray(levels, dtype=np.float64)[:cutoff]
    relevant = levels > 0
    if not relevant.any():
        return None
    acg = np.cumsum(levels) / np.arange(1, len(levels) + 1)
    return float(acg[relevant].sum() / relevant.sum())


def weighted_map(ap_values: Sequence[float | None]) -> tuple[float, int]:
    """Mean of the non-excluded AP_w values, and how many were excluded."""
    valid = [v for v in ap_values if v is not None]
    if not valid:
        raise ValueError("every query was excluded")
    return float(np.mean(valid)), len(ap_values) - len(valid)


@dataclass
class MetricsReport:
    ndcg: dict[int, float] = field(default_factory=dict)
    acg: dict[int, float] = field(default_factory=dict)
    map_w: float = 0.0
    map_cutoff: int | None = None
    queries: int = 0
    excluded: int = 0

    def lines(self) -> list[str]:
        out = [f"ndcg@{p}={v!r}" for p, v in sorted(self.ndcg.items())]
        out += [f"acg@{p}={v!r}" for p, v in sorted(self.acg.items())]
        cut = "all" if self.map_cutoff is None else self.map_cutoff
        out.append(f"map_w@{cut}={self.map_w!r}")
        out.append(f"queries={self.queries} excluded={self.excluded}")
        return out

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        rep = cls()
        for line in text.splitlines():
            if line.startswith("queries="):
                fields = dict(tok.split("=") for tok in line.split())
                rep.queries, rep.excluded = int(fields["queries"]), int(fields["excluded"])
                continue
            key, value = line.split("=")
            name, cut = key.split("@")
            if name == "map_w":
                rep.map_w = float(value)
                rep.map_cutoff = None if cut == "all" else int(cut)
            else:
                getattr(rep, name)[int(cut)] = float(value)
        return rep


def save_report(report: MetricsReport, path: str | os.PathLike) -> None:
    atomic_write_text(path, report.to_text())


def summarize(level_lists: Sequence[Sequence[int]], cutoffs=DEFAULT_CUTOFFS, map_cutoff: int | None = None) -> MetricsReport:
    """Aggregate metrics over the per-query relevance vectors of retrieved rankings."""
    if not level_lists:
        raise ValueError("no queries to evaluate")
    kept = [lv for lv in level_lists if np.any(np.asarray(lv) > 0)]
    if not kept:
        raise ValueError("every query was excluded")
    rep = MetricsReport(map_cutoff=map_cutoff, queries=len(level_lists), excluded=len(level_lists) - len(kept))
    for p in cutoffs:
        rep.ndcg[p] = float(np.mean([ndcg_at(lv, p) for lv in kept]))
        rep.acg[p] = float(np.mean([acg_at(lv, p) for lv in kept]))
    rep.map_w = weighted_map([average_precision_w(lv, map_cutoff) for lv in kept])[0]
    return rep


def retrieved_levels(
    db: CodeDatabase,
    db_labels: np.ndarray,
    query_codes: CodeDatabase,
    query_labels: np.ndarray,
) -> list[np.ndarray]:
    """For each query, similarity levels of the database in Hamming-ranked order."""
    if len(db) == 0 or len(query_codes) == 0:
        raise ValueError("need a non-empty database and query set")
    if np.intersect1d(db.ids, query_codes.ids).size:
        raise ValueError("query and database ids overlap")
    out = []
    for k in range(len(query_codes)):
        order, _ = ranking_order(db, query_codes[k])
        out.append(levels_against(query_labels[k], db_labels[order]))
    return out


def evaluate_queries(
    db: CodeDatabase,
    db_labels: np.ndarray,
    query_codes: CodeDatabase,
    query_labels: np.ndarray,
    cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
    map_cutoff: int | None = None,
) -> MetricsReport:
    levels = retrieved_levels(db, db_labels, query_codes, query_labels)
    return summarize(levels, cutoffs, map_cutoff)
