"""Bit-packed hash codes and exact Hamming ranking by XOR + popcount.

Bit j of a K-bit code lives in word j // 64 at position j % 64 (LSB first);
a set bit means +1, a clear bit -1. Padding bits above K are always zero.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from dsrh._fileio import atomic_write_bytes

MAGIC = b"DSRHCODE"
VERSION = 1
_HEADER = struct.Struct("<8sHIQ")


class CodeFormatError(ValueError):
    pass


def n_words(bits: int) -> int:
    return (bits + 63) // 64


@dataclass(frozen=True)
class PackedCode:
    words: np.ndarray  # uint64, length ceil(K / 64)
    bits: int


def pack_many(codes: np.ndarray) -> np.ndarray:
    """(N, K) array of +-1 codes -> (N, ceil(K/64)) uint64 words."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError("expected an (N, K) code array")
    n, k = codes.shape
    if k < 1:
        raise ValueError("codes need at least one bit")
    if not np.all((codes == 1) | (codes == -1)):
        raise ValueError("codes must be +-1")
    padded = np.zeros((n, 64 * n_words(k)), dtype=np.uint8)
    padded[:, :k] = codes > 0
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64).reshape(n, n_words(k))


def unpack_many(words: np.ndarray, bits: int) -> np.ndarray:
    words = np.ascontiguousarray(words, dtype="<u8")
    raw = np.unpackbits(words.view(np.uint8).reshape(len(words), -1), axis=1, bitorder="little")[:, :bits]
    return np.where(raw == 1, 1, -1).astype(np.int8)


def pack(code) -> PackedCode:
    code = np.asarray(code)
    if code.ndim != 1:
        raise ValueError("pack takes a single code vector")
    return PackedCode(pack_many(code[None, :])[0], len(code))


def unpack(packed: PackedCode) -> np.ndarray:
    return unpack_many(packed.words[None, :], packed.bits)[0]


def hamming_distance(a: PackedCode, b: PackedCode) -> int:
    if a.bits != b.bits:
        raise ValueError(f"code length mismatch: {a.bits} vs {b.bits}")
    return int(np.bitwise_count(a.words ^ b.words).sum())


@dataclass(frozen=True)
class CodeDatabase:
    ids: np.ndarray  # uint64, (N,)
    codes: np.ndarray  # uint64 words, (N, ceil(K / 64))
    bits: int

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("K must be >= 1")
        ids = np.asarray(self.ids, dtype=np.uint64)
        codes = np.asarray(self.codes, dtype=np.uint64).reshape(len(ids), n_words(self.bits))
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "codes", codes)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("database ids must be unique")

    @classmethod
    def from_codes(cls, ids, codes: np.ndarray) -> "CodeDatabase":
        codes = np.asarray(codes)
        return cls(np.asarray(ids, dtype=np.uint64), pack_many(codes), codes.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, k: int) -> PackedCode:
        return PackedCode(self.codes[k].copy(), self.bits)

    def distances(self, query: PackedCode) -> np.ndarray:
        if query.bits != self.bits:
            raise ValueError(f"query has K={query.bits}, database has K={self.bits}")
        return np.bitwise_count(self.codes ^ query.words).sum(axis=1, dtype=np.int64)


def rank_all(db: CodeDatabase, query: PackedCode) -> list[tuple[int, int]]:
    return search_topk(db, query, len(db))


def ranking_order(db: CodeDatabase, query: PackedCode) -> tuple[np.ndarray, np.ndarray]:
    """Row order by ascending distance, ties by insertion index; also returns the distances."""
    dist = db.distances(query)
    return np.argsort(dist, kind="stable"), dist


def search_topk(db: CodeDatabase, query: PackedCode, k: int) -> list[tuple[int, int]]:
    if k < 1:
        raise ValueError("k must be positive")
    order, dist = ranking_order(db, query)
    order = order[:k]
    return [(int(i), int(d)) for i, d in zip(db.ids[order], dist[order])]


def _record_dtype(bits: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("code", "u1", ((bits + 7) // 8,))])


def codes_to_bytes(db: CodeDatabase) -> bytes:
    rec = np.zeros(len(db), dtype=_record_dtype(db.bits))
    rec["id"] = db.ids
    code_bytes = np.ascontiguousarray(db.codes, dtype="<u8").view(np.uint8).reshape(len(db), -1)
    rec["code"] = code_bytes[:, : (db.bits + 7) // 8]
    return _HEADER.pack(MAGIC, VERSION, db.bits, len(db)) + rec.tobytes()


def codes_from_bytes(data: bytes) -> CodeDatabase:
    if len(data) < _HEADER.size:
        raise CodeFormatError("code file truncated in header")
    magic, version, bits, n = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CodeFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CodeFormatError(f"unsupported code file version {version}")
    if bits < 1:
        raise CodeFormatError("K must be >= 1")
    dtype = _record_dtype(bits)
    if len(data) != _HEADER.size + n * dtype.itemsize:
        raise CodeFormatError(f"expected {n} records of {dtype.itemsize} bytes, file length disagrees")
    rec = np.frombuffer(data, dtype=dtype, count=n, offset=_HEADER.size)
    words = np.zeros((n, 8 * n_words(bits)), dtype=np.uint8)
    words[:, : (bits + 7) // 8] = rec["code"]
    if bits % 8:
        tail = words[:, (bits - 1) // 8]
        if np.any(tail >> (bits % 8)):
            raise CodeFormatError("nonzero padding bits")
    try:
        return CodeDatabase(rec["id"].astype(np.uint64), words.view("<u8").astype(np.uint64), bits)
    except ValueError as exc:
        raise CodeFormatError(str(exc)) from None


def save_codes(db: CodeDatabase, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, codes_to_bytes(db))


def load_codes(path: str | os.PathLike) -> CodeDatabase:
    with open(path, "rb") as fh:
        return codes_from_bytes(fh.read())
