"""Mini-batch SGD with momentum over sampled ranking lists."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dsrh._fileio import atomic_write_text
from dsrh.dataset import MultiLabelDataset, Skip, levels_against, sample_triplet_list
from dsrh.loss import LossConfig, balance_gradient, balance_penalty, list_loss, ndcg_norm
from dsrh.metrics import DEFAULT_CUTOFFS, MetricsReport, evaluate_queries
from dsrh.model import DropoutMask, HashModel, backward, forward_binary, forward_relaxed
from dsrh.retrieval import CodeDatabase


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 0.001
    momentum: float = 0.9
    loss: LossConfig = field(default_factory=LossConfig)
    dropout_keep: float = 0.5
    list_length: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 < self.dropout_keep <= 1:
            raise ValueError("dropout keep probability must lie in (0, 1]")
        if self.list_length != 3:
            # the stratified sampler draws exactly one item per stratum
            raise ValueError("only ranking lists of length 3 are supported")


@dataclass
class OptimizerState:
    velocity: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, model: HashModel) -> "OptimizerState":
        return cls([np.zeros_like(t) for t in model.tensors()])


def sgd_step(model: HashModel, grads: list[np.ndarray], opt: OptimizerState, lr: float, momentum: float, beta: float) -> None:
    """v <- momentum * v - lr * (g + beta * w) for weights (biases skip decay); w <- w + v."""
    tensors = model.tensors()
    if len(grads) != len(tensors) or len(opt.velocity) != len(tensors):
        raise ValueError("gradient / velocity lists do not match the model")
    for w, g, v, decay in zip(tensors, grads, opt.velocity, model.decay_mask()):
        if g.shape != w.shape or v.shape != w.shape:
            raise ValueError(f"shape mismatch: weight {w.shape}, grad {g.shape}, velocity {v.shape}")
        step = g + beta * w if decay else g
        v *= momentum
        v -= lr * step
        w += v
    opt.step += 1


@dataclass
class EpochStats:
    epoch: int
    steps: int
    objective: float
    active: float
    skipped: int
    wall: float

    def line(self) -> str:
        return f"epoch={self.epoch} step={self.steps} obj={self.objective!r} active={self.active!r} skipped={self.skipped}"


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def objectives(self) -> list[float]:
        return [e.objective for e in self.epochs]

    def to_text(self) -> str:
        return "".join(f"{e.line()} wall={e.wall:.3f}\n" for e in self.epochs)


def save_train_report(report: TrainReport, path: str | os.PathLike) -> None:
    atomic_write_text(path, report.to_text())


def _normalisers(levels: np.ndarray, queries: np.ndarray, ds: MultiLabelDataset, mode: str) -> np.ndarray:
    if mode == "list":
        return np.array([ndcg_norm(row) for row in levels])
    m = levels.shape[1]
    out = []
    for q in queries:
        lv = levels_against(ds.label_matrix[q], ds.label_matrix)
        lv = np.delete(lv, q)
        out.append(ndcg_norm(lv, m))
    return np.array(out)


def train(
    model: HashModel,
    train_set: MultiLabelDataset,
    cfg: TrainConfig,
    progress: Callable[[EpochStats], None] | None = None,
) -> tuple[HashModel, TrainReport]:
    """Train a copy of ``model``; the result is fully determined by (model, data, cfg)."""
    if len(train_set) == 0:
        raise TrainingError("training set is empty")
    if train_set.dim != model.input_dim:
        raise TrainingError(f"model expects {model.input_dim} features, dataset has {train_set.dim}")
    model = model.copy()
    report = TrainReport()
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState.zeros_like(model)
    lc = cfg.loss
    n = len(train_set)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    points = train_set.points

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        perm = rng.permutation(n)
        objectives, active, triplets, skipped = [], 0, 0, 0
        for s in range(steps_per_epoch):
            chosen, lists = [], []
            for q in perm[s * cfg.batch_size:(s + 1) * cfg.batch_size]:
                sample = sample_triplet_list(points[q], train_set, rng)
                if isinstance(sample, Skip):
                    skipped += 1
                    continue
                chosen.append(q)
                lists.append(sample)
            if not chosen:
                continue

            q_rows = np.array(chosen)
            item_rows = np.array([[it.index for it in lst] for lst in lists])
            levels = np.array([[it.level for it in lst] for lst in lists])
            b, m = item_rows.shape
            rows = np.concatenate([q_rows, item_rows.ravel()])
            mask = None
            if cfg.dropout_keep < 1:
                mask = DropoutMask.sample(model, len(rows), cfg.dropout_keep, rng)
            codes, trace = forward_relaxed(model, train_set.features[rows], mask)
            h_q, h_items = codes[:b], codes[b:].reshape(b, m, -1)

            z = _normalisers(levels, q_rows, train_set, lc.z_mode)
            res = list_loss(h_q, h_items, levels, lc, z)
            code_grads = np.empty_like(codes)
            code_grads[:b] = res.grad_query + balance_gradient(h_q, lc.alpha)
            code_grads[b:] = res.grad_items.reshape(b * m, -1)

            objectives.append(res.loss + balance_penalty(h_q, lc.alpha) + 0.5 * lc.beta * model.weight_norm_sq())
            active += res.active
            triplets += res.triplets

            grads = backward(model, trace, code_grads)
            sgd_step(model, grads, opt, cfg.learning_rate, cfg.momentum, lc.beta)

        if not objectives:
            raise TrainingError(f"epoch {epoch}: every query was skipped (no full, partial and no-match strata)")
        stats = EpochStats(
            epoch=epoch,
            steps=opt.step,
            objective=float(np.mean(objectives)),
            active=active / triplets if triplets else 0.0,
            skipped=skipped,
            wall=time.perf_counter() - started,
        )
        report.epochs.append(stats)
        if progress is not None:
            progress(stats)
    return model, report


def encode_dataset(model: HashModel, ds: MultiLabelDataset) -> CodeDatabase:
    return CodeDatabase.from_codes(ds.ids, forward_binary(model, ds.features))


def evaluate_hook(
    model: HashModel,
    query_set: MultiLabelDataset,
    db: MultiLabelDataset,
    cutoffs=DEFAULT_CUTOFFS,
    map_cutoff: int | None = None,
) -> MetricsReport:
    if len(query_set) == 0:
        raise ValueError("query set is empty")
    return evaluate_queries(
        encode_dataset(model, db),
        db.label_matrix,
        encode_dataset(model, query_set),
        query_set.label_matrix,
        cutoffs,
        map_cutoff,
    )


def bit_balance(model: HashModel, ds: MultiLabelDataset) -> float:
    """Mean over bits of |mean relaxed activation over ``ds``|; zero for perfectly balanced bits."""
    codes, _ = forward_relaxed(model, ds.features)
    return float(np.mean(np.abs(codes.mean(axis=0))))
