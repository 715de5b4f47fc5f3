"""Deep hash function: feedforward feature net with a skip tap into a bias-free hash layer.

All weight matrices are stored (out, in), so an affine layer computes ``x @ W.T + b``.
The hash layer reads the concatenation ``[f_a; f_b]`` of two hidden activations.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dsrh._fileio import atomic_write_bytes

MAGIC = b"DSRHMODL"
VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class FeatureNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    tap_a: int
    tap_b: int

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("feature net needs matching, non-empty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: bias shape {b.shape} does not fit weight {w.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input width {w.shape[1]} does not compose")
        if not 0 <= self.tap_a < self.tap_b < len(self.weights):
            raise ValueError(f"need 0 <= tap_a < tap_b < {len(self.weights)}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def tap_dims(self) -> tuple[int, int]:
        return self.weights[self.tap_a].shape[0], self.weights[self.tap_b].shape[0]


@dataclass
class HashModel:
    feature_net: FeatureNet
    hash_weight: np.ndarray  # (K, d_a + d_b)

    def __post_init__(self):
        d_a, d_b = self.feature_net.tap_dims
        if self.hash_weight.ndim != 2 or self.hash_weight.shape[0] < 1:
            raise ValueError("hash weight must be a (K, d_a + d_b) matrix with K >= 1")
        if self.hash_weight.shape[1] != d_a + d_b:
            raise ValueError(f"hash weight has {self.hash_weight.shape[1]} inputs, expected {d_a + d_b}")

    @property
    def bits(self) -> int:
        return self.hash_weight.shape[0]

    @property
    def input_dim(self) -> int:
        return self.feature_net.input_dim

    def tensors(self) -> list[np.ndarray]:
        """Parameters in canonical order: W_0, b_0, ..., W_{L-1}, b_{L-1}, W_hash."""
        net = self.feature_net
        out = []
        for w, b in zip(net.weights, net.biases):
            out += [w, b]
        out.append(self.hash_weight)
        return out

    def decay_mask(self) -> list[bool]:
        """Which tensors in ``tensors()`` are weight matrices (receive weight decay)."""
        return [True, False] * len(self.feature_net.weights) + [True]

    def copy(self) -> "HashModel":
        net = self.feature_net
        return HashModel(
            FeatureNet([w.copy() for w in net.weights], [b.copy() for b in net.biases], net.tap_a, net.tap_b),
            self.hash_weight.copy(),
        )

    def weight_norm_sq(self) -> float:
        return float(sum(np.sum(w * w) for w in self.feature_net.weights) + np.sum(self.hash_weight**2))


def equal(a: HashModel, b: HashModel) -> bool:
    """Exact (bitwise) equality of architecture and all parameters."""
    ta, tb = a.tensors(), b.tensors()
    return (
        a.feature_net.tap_a == b.feature_net.tap_a
        and a.feature_net.tap_b == b.feature_net.tap_b
        and len(ta) == len(tb)
        and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(ta, tb))
    )


def init_weights(
    layer_dims: Sequence[int],
    bits: int,
    rng: np.random.Generator,
    tap_a: int | None = None,
    tap_b: int | None = None,
) -> HashModel:
    """Uniform fan-in initialisation, U(-sqrt(3/fan_in), sqrt(3/fan_in)), zero biases.

    ``layer_dims`` is ``[D, h_1, ..., h_L]`` with L >= 2 hidden layers. By default the
    hash layer taps the last two hidden layers.
    """
    dims = list(layer_dims)
    if len(dims) < 3:
        raise ValueError("need an input width and at least two hidden widths")
    if any(int(d) != d or d < 1 for d in dims):
        raise ValueError(f"all widths must be positive integers, got {dims}")
    if bits < 1:
        raise ValueError("bits must be >= 1")
    n_hidden = len(dims) - 1
    tap_a = n_hidden - 2 if tap_a is None else tap_a
    tap_b = n_hidden - 1 if tap_b is None else tap_b

    def uniform(fan_out, fan_in):
        bound = np.sqrt(3.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    weights = [uniform(dims[k + 1], dims[k]) for k in range(n_hidden)]
    biases = [np.zeros(dims[k + 1]) for k in range(n_hidden)]
    net = FeatureNet(weights, biases, tap_a, tap_b)
    d_a, d_b = net.tap_dims
    return HashModel(net, uniform(bits, d_a + d_b))


@dataclass
class DropoutMask:
    """Per-unit keep indicators, one (batch, width) bool array per hidden layer."""

    keep: list[np.ndarray]
    keep_prob: float

    def __post_init__(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep probability must lie in (0, 1]")

    @classmethod
    def sample(cls, model: HashModel, batch: int, keep_prob: float, rng: np.random.Generator) -> "DropoutMask":
        keep = [rng.random((batch, w.shape[0])) < keep_prob for w in model.feature_net.weights]
        return cls(keep, keep_prob)


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]
    act: list[np.ndarray]
    scales: list[np.ndarray | None]  # dropout multipliers per hidden layer
    hash_input: np.ndarray
    hash_pre: np.ndarray
    codes: np.ndarray
    mask: DropoutMask | None = field(default=None)


def _check_batch(model: HashModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected inputs of width {model.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    return x


def _features(model: HashModel, x: np.ndarray, mask: DropoutMask | None):
    net = model.feature_net
    pre, act, scales = [], [], []
    h = x
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        h = np.maximum(z, 0.0)
        scale = None
        if mask is not None:
            if mask.keep[k].shape != h.shape:
                raise ValueError(f"dropout mask for layer {k} has shape {mask.keep[k].shape}, expected {h.shape}")
            scale = mask.keep[k] / mask.keep_prob
            h = h * scale
        pre.append(z)
        act.append(h)
        scales.append(scale)
    hash_input = np.concatenate([act[net.tap_a], act[net.tap_b]], axis=1)
    return pre, act, scales, hash_input


def relaxed_sign(z: np.ndarray) -> np.ndarray:
    """2 * sigmoid(z) - 1, i.e. tanh(z / 2), kept strictly inside (-1, 1)."""
    h = np.tanh(0.5 * z)
    return np.clip(h, -np.nextafter(1.0, 0.0), np.nextafter(1.0, 0.0))


def forward_relaxed(model: HashModel, batch, mask: DropoutMask | None = None) -> tuple[np.ndarray, ForwardTrace]:
    x = _check_batch(model, batch)
    pre, act, scales, hash_input = _features(model, x, mask)
    hash_pre = hash_input @ model.hash_weight.T
    codes = relaxed_sign(hash_pre)
    return codes, ForwardTrace(x, pre, act, scales, hash_input, hash_pre, codes, mask)


def hash_preactivation(model: HashModel, batch) -> np.ndarray:
    x = _check_batch(model, batch)
    return _features(model, x, None)[3] @ model.hash_weight.T


def binarize(values: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1, as int8."""
    return np.where(np.asarray(values) >= 0, 1, -1).astype(np.int8)


def forward_binary(model: HashModel, batch) -> np.ndarray:
    return binarize(hash_preactivation(model, batch))


def backward(model: HashModel, trace: ForwardTrace, code_grads: np.ndarray) -> list[np.ndarray]:
    """Gradients of ``sum(code_grads * codes)`` w.r.t. ``model.tensors()``, same order and shapes."""
    g = np.asarray(code_grads, dtype=np.float64)
    if g.shape != trace.codes.shape:
        raise ValueError(f"code gradient shape {g.shape} does not match codes {trace.codes.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("code gradients must be finite")
    net = model.feature_net

    # d/dz (2 sigmoid(z) - 1) = (1 - h^2) / 2
    d_hash_pre = g * 0.5 * (1.0 - trace.codes**2)
    d_hash_w = d_hash_pre.T @ trace.hash_input
    d_input = d_hash_pre @ model.hash_weight
    d_a = net.weights[net.tap_a].shape[0]

    n = len(net.weights)
    d_act = [np.zeros_like(a) for a in trace.act]
    d_act[net.tap_a] += d_input[:, :d_a]
    d_act[net.tap_b] += d_input[:, d_a:]

    d_weights: list[np.ndarray] = [None] * n
    d_biases: list[np.ndarray] = [None] * n
    for k in range(n - 1, -1, -1):
        d = d_act[k]
        if trace.scales[k] is not None:
            d = d * trace.scales[k]
        d_pre = d * (trace.pre[k] > 0)
        below = trace.act[k - 1] if k else trace.inputs
        d_weights[k] = d_pre.T @ below
        d_biases[k] = d_pre.sum(axis=0)
        if k:
            d_act[k - 1] += d_pre @ net.weights[k]

    out = []
    for dw, db in zip(d_weights, d_biases):
        out += [dw, db]
    out.append(d_hash_w)
    return out


# -- checkpoint I/O -------------------------------------------------------

_HEADER = struct.Struct("<8sHIH")
_TAPS = struct.Struct("<HH")
_SHAPE = struct.Struct("<II")


def model_to_bytes(model: HashModel) -> bytes:
    net = model.feature_net
    layers = list(zip(net.weights, net.biases)) + [(model.hash_weight, np.zeros(0))]
    parts = [_HEADER.pack(MAGIC, VERSION, model.bits, len(layers)), _TAPS.pack(net.tap_a, net.tap_b)]
    for w, b in layers:
        parts.append(_SHAPE.pack(*w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(data: bytes) -> HashModel:
    if len(data) < _HEADER.size + _TAPS.size:
        raise ModelFormatError("checkpoint truncated in header")
    magic, version, bits, n_layers = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported checkpoint version {version}")
    tap_a, tap_b = _TAPS.unpack_from(data, _HEADER.size)
    offset = _HEADER.size + _TAPS.size
    mats, vecs = [], []
    for k in range(n_layers):
        if len(data) < offset + _SHAPE.size:
            raise ModelFormatError(f"checkpoint truncated at layer {k}")
        rows, cols = _SHAPE.unpack_from(data, offset)
        offset += _SHAPE.size
        n_bias = 0 if k == n_layers - 1 else rows
        need = 8 * (rows * cols + n_bias)
        if len(data) < offset + need:
            raise ModelFormatError(f"checkpoint truncated in layer {k} payload")
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
        b = np.frombuffer(data, dtype="<f8", count=n_bias, offset=offset + 8 * rows * cols)
        mats.append(w.astype(np.float64))
        vecs.append(b.astype(np.float64))
        offset += need
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes after last layer")
    if n_layers < 3:
        raise ModelFormatError("checkpoint needs at least two hidden layers and a hash layer")
    try:
        model = HashModel(FeatureNet(mats[:-1], vecs[:-1], tap_a, tap_b), mats[-1])
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent shapes: {exc}") from None
    if model.bits != bits:
        raise ModelFormatError(f"header says K={bits} but hash layer has {model.bits} rows")
    return model


def save_model(model: HashModel, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, model_to_bytes(model))


def load_model(path: str | os.PathLike) -> HashModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
