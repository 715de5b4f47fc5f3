"""Multi-label feature datasets, similarity levels, ranking lists and triplet sampling."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from dsrh._fileio import atomic_write_text

HEADER_PREFIX = "#dsrh-features v1"
MAX_ID = 2**64 - 1


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent dataset contents."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionMismatchError(DatasetError):
    pass


class EmptyLabelSetError(DatasetError):
    pass


class DuplicateIdError(DatasetError):
    pass


@dataclass(frozen=True)
class LabelSet:
    """A subset of the label universe {1..C}, stored as a bit mask (bit c-1 for label c)."""

    bits: int

    @classmethod
    def from_labels(cls, labels: Iterable[int]) -> "LabelSet":
        mask = 0
        for label in map(int, labels):
            if label < 1:
                raise ValueError(f"labels are 1-based, got {label}")
            mask |= 1 << (label - 1)
        return cls(mask)

    def labels(self) -> list[int]:
        out, mask, c = [], self.bits, 1
        while mask:
            if mask & 1:
                out.append(c)
            mask >>= 1
            c += 1
        return out

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __contains__(self, label: int) -> bool:
        return label >= 1 and bool(self.bits >> (label - 1) & 1)

    def __and__(self, other: "LabelSet") -> "LabelSet":
        return LabelSet(self.bits & other.bits)

    def to_row(self, label_count: int) -> np.ndarray:
        row = np.zeros(label_count, dtype=bool)
        row[[c - 1 for c in self.labels()]] = True
        return row


@dataclass(frozen=True)
class DataPoint:
    id: int
    features: np.ndarray
    labels: LabelSet


@dataclass
class MultiLabelDataset:
    """Columnar storage: ``ids`` (N,), ``features`` (N, D), ``label_matrix`` (N, C) bool."""

    ids: np.ndarray
    features: np.ndarray
    label_matrix: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.uint64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.label_matrix = np.asarray(self.label_matrix, dtype=bool)
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DimensionMismatchError("features must be an (N, D) array matching ids")
        if self.label_matrix.ndim != 2 or self.label_matrix.shape[0] != n:
            raise DatasetError("label_matrix must be an (N, C) array matching ids")
        if len(np.unique(self.ids)) != n:
            raise DuplicateIdError("ids must be unique")
        self._index = {int(i): k for k, i in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def label_count(self) -> int:
        return self.label_matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def point(self, k: int) -> DataPoint:
        labels = LabelSet.from_labels(np.flatnonzero(self.label_matrix[k]) + 1)
        return DataPoint(int(self.ids[k]), self.features[k], labels)

    @property
    def points(self) -> list[DataPoint]:
        return [self.point(k) for k in range(len(self))]

    def index_of(self, point_id: int) -> int:
        return self._index[int(point_id)]

    def subset(self, rows: Sequence[int] | np.ndarray) -> "MultiLabelDataset":
        rows = np.asarray(rows, dtype=np.intp)
        return MultiLabelDataset(self.ids[rows], self.features[rows], self.label_matrix[rows])

    @classmethod
    def from_points(cls, points: Sequence[DataPoint], label_count: int) -> "MultiLabelDataset":
        ids = np.array([p.id for p in points], dtype=np.uint64)
        if points:
            features = np.stack([np.asarray(p.features, dtype=np.float64) for p in points])
        else:
            features = np.zeros((0, 0))
        labels = np.array([p.labels.to_row(label_count) for p in points], dtype=bool)
        return cls(ids, features, labels.reshape(len(points), label_count))


def similarity_level(a: LabelSet, b: LabelSet) -> int:
    """Number of labels shared by ``a`` and ``b``."""
    return (a.bits & b.bits).bit_count()


def levels_against(query_labels: np.ndarray, label_matrix: np.ndarray) -> np.ndarray:
    """Similarity level of every row of ``label_matrix`` with a boolean query row."""
    return label_matrix.astype(np.int64) @ np.asarray(query_labels, dtype=np.int64)


def _query_row(query: DataPoint, db: MultiLabelDataset) -> np.ndarray:
    return query.labels.to_row(max(db.label_count, query.labels.bits.bit_length()))[: db.label_count]


# -- file format ----------------------------------------------------------


def _parse_header(line: str, lineno: int) -> tuple[int, int]:
    if not line.startswith(HEADER_PREFIX):
        raise DatasetError(f"expected header starting with {HEADER_PREFIX!r}", lineno)
    fields = {}
    for token in line[len(HEADER_PREFIX):].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise DatasetError(f"bad header token {token!r}", lineno)
        fields[key] = value
    try:
        dim, label_count = int(fields["dim"]), int(fields["labels"])
    except (KeyError, ValueError):
        raise DatasetError("header must carry integer dim= and labels=", lineno) from None
    if dim < 1 or label_count < 1:
        raise DatasetError("dim and labels must be positive", lineno)
    return dim, label_count


def load_dataset(path: str | os.PathLike) -> MultiLabelDataset:
    """Parse a ``#dsrh-features v1`` text file; errors name the offending line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")

    header = None
    ids: list[int] = []
    feats: list[list[float]] = []
    label_rows: list[list[int]] = []
    seen: set[int] = set()
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r")
        if header is None:
            if not line.strip():
                continue
            header = _parse_header(line, lineno)
            dim, label_count = header
            continue
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DatasetError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
        id_s, labels_s, feats_s = parts
        try:
            pid = int(id_s)
        except ValueError:
            raise DatasetError(f"bad id {id_s!r}", lineno) from None
        if not 0 <= pid <= MAX_ID:
            raise DatasetError(f"id {pid} outside the unsigned 64-bit range", lineno)
        if pid in seen:
            raise DuplicateIdError(f"duplicate id {pid}", lineno)
        seen.add(pid)

        if not labels_s.strip():
            raise EmptyLabelSetError("empty label set", lineno)
        try:
            labels = [int(tok) for tok in labels_s.split(";")]
        except ValueError:
            raise DatasetError(f"bad label field {labels_s!r}", lineno) from None
        bad = [c for c in labels if not 1 <= c <= label_count]
        if bad:
            raise DatasetError(f"label {bad[0]} outside 1..{label_count}", lineno)

        try:
            values = [float(tok) for tok in feats_s.split(",")]
        except ValueError:
            raise DatasetError("bad feature value", lineno) from None
        if len(values) != dim:
            raise DimensionMismatchError(f"expected {dim} features, got {len(values)}", lineno)
        if not all(math.isfinite(v) for v in values):
            raise DatasetError("non-finite feature value", lineno)

        ids.append(pid)
        label_rows.append(labels)
        feats.append(values)

    if header is None:
        raise DatasetError("missing header line")
    dim, label_count = header
    label_matrix = np.zeros((len(ids), label_count), dtype=bool)
    for k, labels in enumerate(label_rows):
        label_matrix[k, np.asarray(labels) - 1] = True
    features = np.array(feats, dtype=np.float64).reshape(len(ids), dim)
    return MultiLabelDataset(np.array(ids, dtype=np.uint64), features, label_matrix)


def format_dataset(ds: MultiLabelDataset) -> str:
    out = [f"{HEADER_PREFIX} dim={ds.dim} labels={ds.label_count}"]
    for k in range(len(ds)):
        labels = ";".join(str(c) for c in np.flatnonzero(ds.label_matrix[k]) + 1)
        feats = ",".join(repr(float(v)) for v in ds.features[k])
        out.append(f"{int(ds.ids[k])}\t{labels}\t{feats}")
    return "\n".join(out) + "\n"


def save_dataset(ds: MultiLabelDataset, path: str | os.PathLike) -> None:
    if np.any(ds.label_matrix.sum(axis=1) == 0):
        raise EmptyLabelSetError("every point needs at least one label")
    atomic_write_text(path, format_dataset(ds))


# -- ranking lists and sampling -------------------------------------------


@dataclass(frozen=True)
class GroundTruthRanking:
    query_id: int
    entries: list[tuple[int, int]]

    @property
    def levels(self) -> list[int]:
        return [level for _, level in self.entries]


def build_ranking_list(query: DataPoint, db: MultiLabelDataset, max_len: int) -> GroundTruthRanking:
    """Database points sorted by decreasing similarity level, ties by ascending id."""
    if max_len < 1:
        raise ValueError("max_len must be positive")
    keep = db.ids != np.uint64(query.id)
    ids = db.ids[keep]
    levels = levels_against(_query_row(query, db), db.label_matrix[keep])
    order = np.lexsort((ids, -levels))[:max_len]
    return GroundTruthRanking(query.id, [(int(ids[k]), int(levels[k])) for k in order])


FULL, PARTIAL, NONE = "full", "partial", "none"


class Skip(NamedTuple):
    """Returned instead of a triplet list when one of the three strata is empty."""

    stratum: str


class ListItem(NamedTuple):
    index: int  # row in the database
    level: int


def strata(query: DataPoint, db: MultiLabelDataset) -> dict[str, np.ndarray]:
    """Row indices of the full-match, partial-match and no-match strata (query row excluded)."""
    return _strata(query, db)[1]


def _strata(query, db):
    levels = levels_against(_query_row(query, db), db.label_matrix)
    other = db.ids != np.uint64(query.id)
    full = len(query.labels)
    groups = {
        FULL: np.flatnonzero((levels == full) & other),
        PARTIAL: np.flatnonzero((levels >= 1) & (levels < full) & other),
        NONE: np.flatnonzero((levels == 0) & other),
    }
    return levels, groups


def sample_triplet_list(
    query: DataPoint, db: MultiLabelDataset, rng: np.random.Generator
) -> list[ListItem] | Skip:
    """Draw one item from each of the full / partial / no-match strata, in that order."""
    if len(db) == 0:
        raise ValueError("database is empty")
    levels, groups = _strata(query, db)
    for name in (FULL, PARTIAL, NONE):
        if len(groups[name]) == 0:
            return Skip(name)
    out = []
    for name in (FULL, PARTIAL, NONE):
        rows = groups[name]
        k = int(rows[rng.integers(len(rows))])
        out.append(ListItem(k, int(levels[k])))
    return out


def split_train_query(
    ds: MultiLabelDataset, query_count: int, rng: np.random.Generator
) -> tuple[MultiLabelDataset, MultiLabelDataset]:
    """Random disjoint (queries, database) split; both keep the original row order."""
    if query_count < 0 or query_count >= len(ds):
        raise ValueError(f"query_count must be in [0, {len(ds)}), got {query_count}")
    perm = rng.permutation(len(ds))
    q_rows = np.sort(perm[:query_count])
    db_rows = np.sort(perm[query_count:])
    return ds.subset(q_rows), ds.subset(db_rows)
