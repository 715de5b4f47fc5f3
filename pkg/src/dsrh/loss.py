"""NDCG-weighted triplet hinge loss on hash codes, plus balance and weight-decay terms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    alpha: float = 1.0
    beta: float = 5e-4
    weighted: bool = True
    z_mode: str = "list"  # "list" or "database"

    def __post_init__(self):
        if self.margin < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("margin, alpha and beta must be non-negative")
        if self.z_mode not in ("list", "database"):
            raise ValueError(f"unknown z_mode {self.z_mode!r}")


def hamming_inner(h_a, h_b, bits: int | None = None) -> float:
    """(K - h_a.h_b) / 2; the Hamming distance for +-1 codes."""
    h_a, h_b = np.asarray(h_a, dtype=np.float64), np.asarray(h_b, dtype=np.float64)
    if h_a.shape != h_b.shape or (bits is not None and h_a.shape[-1] != bits):
        raise ValueError(f"code length mismatch: {h_a.shape} vs {h_b.shape}")
    k = h_a.shape[-1]
    return 0.5 * (k - np.sum(h_a * h_b, axis=-1))


def dcg(levels: Sequence[int], p: int | None = None) -> float:
    levels = np.asarray(levels, dtype=np.float64)[:p]
    discounts = np.log2(np.arange(2, len(levels) + 2))
    return float(np.sum((2.0**levels - 1.0) / discounts))


def ndcg_norm(levels: Sequence[int], p: int | None = None) -> float:
    """Ideal DCG at cutoff ``p`` (levels sorted descending first)."""
    return dcg(sorted(levels, reverse=True), p)


def triplet_weight(r_i: int, r_j: int, z: float, weighted: bool = True) -> float:
    if not weighted:
        return 1.0
    if r_j >= r_i:
        raise ValueError(f"need r_j < r_i, got r_i={r_i}, r_j={r_j}")
    if z <= 0:
        raise ValueError("normalisation constant must be positive")
    return (2.0**r_i - 2.0**r_j) / z


@dataclass
class TripletLossResult:
    loss: float
    grad_q: np.ndarray
    grad_i: np.ndarray
    grad_j: np.ndarray
    active: bool


def triplet_loss(h_q, h_i, h_j, omega: float, cfg: LossConfig) -> TripletLossResult:
    """omega * [d_H(q, i) - d_H(q, j) + margin]_+ with its code gradients.

    Subgradient zero at the kink: the triplet is active only for a strictly positive hinge.
    """
    h_q, h_i, h_j = (np.asarray(h, dtype=np.float64) for h in (h_q, h_i, h_j))
    if not h_q.shape == h_i.shape == h_j.shape or h_q.ndim != 1:
        raise ValueError("triplet codes must be equal-length vectors")
    arg = 0.5 * (h_q @ h_j - h_q @ h_i) + cfg.margin
    if arg > 0:
        half = 0.5 * omega
        return TripletLossResult(omega * arg, half * (h_j - h_i), -half * h_q, half * h_q, True)
    zero = np.zeros_like(h_q)
    return TripletLossResult(0.0, zero, zero.copy(), zero.copy(), False)


@dataclass
class ListLossResult:
    loss: float
    grad_query: np.ndarray  # (B, K)
    grad_items: np.ndarray  # (B, M, K)
    active: int
    triplets: int


def list_weights(levels: np.ndarray, z: np.ndarray, weighted: bool) -> np.ndarray:
    """(B, M, M) matrix of omega(r_i, r_j) for pairs with r_j < r_i, zero elsewhere."""
    levels = np.asarray(levels)
    valid = levels[:, None, :] < levels[:, :, None]
    if not weighted:
        return valid.astype(np.float64)
    gains = 2.0 ** levels.astype(np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(valid.any(axis=(1, 2)) & (z <= 0)):
        raise ValueError("normalisation constant must be positive for lists with triplets")
    diff = gains[:, :, None] - gains[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        w = diff / z[:, None, None]
    return np.where(valid, w, 0.0)


def list_loss(h_q: np.ndarray, h_items: np.ndarray, levels: np.ndarray, cfg: LossConfig, z=None) -> ListLossResult:
    """Summed weighted triplet loss over a batch of ranking lists.

    ``h_q`` is (B, K), ``h_items`` (B, M, K), ``levels`` (B, M). ``z`` holds one
    normalisation constant per list; by default the ideal DCG of the list itself.
    """
    h_q = np.asarray(h_q, dtype=np.float64)
    h_items = np.asarray(h_items, dtype=np.float64)
    levels = np.asarray(levels)
    b, m, k = h_items.shape
    if h_q.shape != (b, k) or levels.shape != (b, m):
        raise ValueError("inconsistent shapes for query codes, item codes and levels")
    if z is None:
        z = np.array([ndcg_norm(row) for row in levels])
    omega = list_weights(levels, z, cfg.weighted)

    sims = np.einsum("bk,bmk->bm", h_q, h_items)
    # arg[b, i, j] = (q.h_j - q.h_i) / 2 + margin
    arg = 0.5 * (sims[:, None, :] - sims[:, :, None]) + cfg.margin
    valid = levels[:, None, :] < levels[:, :, None]
    active = valid & (arg > 0)
    w = np.where(active, omega, 0.0)
    loss = float(np.sum(w * arg))

    # d/dh_q = sum_ij w/2 (h_j - h_i); d/dh_i = -sum_j w/2 q; d/dh_j = +sum_i w/2 q
    coef = 0.5 * (w.sum(axis=1) - w.sum(axis=2))  # (B, M): coefficient of h_m in grad_q, and of q in grad_m
    grad_query = np.einsum("bm,bmk->bk", coef, h_items)
    grad_items = coef[:, :, None] * h_q[:, None, :]
    return ListLossResult(loss, grad_query, grad_items, int(active.sum()), int(valid.sum()))


def balance_penalty(query_codes: np.ndarray, alpha: float) -> float:
    mean = np.mean(query_codes, axis=0)
    return 0.5 * alpha * float(mean @ mean)


def balance_gradient(query_codes: np.ndarray, alpha: float, n_q: int | None = None) -> np.ndarray:
    """Per-query gradient (alpha / N_q) * mean of the batch's query codes."""
    query_codes = np.asarray(query_codes, dtype=np.float64)
    n_q = len(query_codes) if n_q is None else n_q
    if n_q < 1:
        raise ValueError("need at least one query")
    mean = query_codes.mean(axis=0)
    return np.broadcast_to(alpha / n_q * mean, query_codes.shape).copy()


def objective(
    h_q: np.ndarray,
    h_items: np.ndarray,
    levels: np.ndarray,
    weights: Sequence[np.ndarray],
    cfg: LossConfig,
    z=None,
) -> float:
    """Triplet losses + (alpha/2)|mean query code|^2 + (beta/2) sum |W|^2 over ``weights``."""
    h_q = np.asarray(h_q, dtype=np.float64)
    if len(h_q) == 0:
        raise ValueError("objective needs at least one query")
    total = list_loss(h_q, h_items, levels, cfg, z).loss if np.size(h_items) else 0.0
    total += balance_penalty(h_q, cfg.alpha)
    total += 0.5 * cfg.beta * float(sum(np.sum(np.square(w)) for w in weights))
    return total
