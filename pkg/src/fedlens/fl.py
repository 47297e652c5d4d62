"""Multilayer perceptron, local SGD and FedAvg, written directly on numpy.

Weights follow the ``out x in`` convention: layer ``l`` maps an input row
vector ``a`` to ``a @ W[l].T + b[l]``. Hidden layers use ReLU, the output is
linear.
"""
from __future__ import annotations

import base64
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from fedlens.core import ClientDataset
from fedlens.errors import (
    EmptyDataset,
    EmptyEvalSet,
    EmptyUpdateSet,
    InvalidLayout,
    InvalidSpec,
    LayoutMismatch,
    NonFiniteInput,
)
from fedlens.prng import SplitMix64, derive_seed, fisher_yates

DEFAULT_LAYOUT = (8, 24, 12, 6, 1)
L1 = "l1"
L2 = "l2"


@dataclass(frozen=True, eq=False)
class ModelParams:
    layout: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        layout = tuple(int(x) for x in self.layout)
        object.__setattr__(self, "layout", layout)
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        if len(ws) != len(layout) - 1 or len(bs) != len(ws):
            raise InvalidLayout("one weight matrix and bias per layer transition is required")
        for l, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (layout[l + 1], layout[l]) or b.shape != (layout[l + 1],):
                raise InvalidLayout(f"layer {l} has shapes {w.shape}/{b.shape}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_tensors(cls, layout, tensors: Sequence[np.ndarray]) -> ModelParams:
        return cls(layout, tuple(tensors[0::2]), tuple(tensors[1::2]))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())

    def equals(self, other: ModelParams) -> bool:
        return self.layout == other.layout and all(
            np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors())
        )


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 50
    local_epochs: int = 2
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0
    loss: str = L1

    def __post_init__(self):
        if min(self.rounds, self.local_epochs, self.batch_size) < 1:
            raise InvalidSpec("rounds, local_epochs and batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise InvalidSpec("learning_rate must be non-negative")
        if self.loss not in (L1, L2):
            raise InvalidSpec(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> TrainConfig:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    client_id: int
    params: ModelParams
    k_n: int
    local_train_loss: float = field(default=math.nan)


def _check_layout(layout) -> tuple[int, ...]:
    layout = tuple(int(x) for x in layout)
    if len(layout) < 2 or any(x < 1 for x in layout):
        raise InvalidLayout(f"invalid layout {layout!r}")
    return layout


def init_model(seed: int, layout: Sequence[int] = DEFAULT_LAYOUT) -> ModelParams:
    """Glorot-uniform weights from a per-layer SplitMix64 stream, zero biases."""
    layout = _check_layout(layout)
    weights, biases = [], []
    for l in range(len(layout) - 1):
        fan_in, fan_out = layout[l], layout[l + 1]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        rng = SplitMix64(derive_seed("init", seed, l))
        w = np.array([rng.uniform(-bound, bound) for _ in range(fan_in * fan_out)]).reshape(fan_out, fan_in)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return ModelParams(layout, tuple(weights), tuple(biases))


def _activations(params: ModelParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w.T + b
        acts.append(z if l == last else np.maximum(z, 0.0))
    return acts


def forward(params: ModelParams, x) -> float | np.ndarray:
    """Prediction for one input vector (scalar) or a batch of rows (1-D array)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("inputs contain NaN or infinity")
    single = x.ndim == 1
    out = _activations(params, x.reshape(1, -1) if single else x)[-1][:, 0]
    return float(out[0]) if single else out


def loss_and_grad(params: ModelParams, x: np.ndarray, y: np.ndarray, loss: str = L1):
    """Mean batch loss and its gradient, as tensors aligned with ``params.tensors()``.

    L1 is mean |p - y| with subgradient sign(p - y), sign(0) = 0; L2 is mean
    (p - y)^2.
    """
    acts = _activations(params, x)
    resid = acts[-1][:, 0] - y
    m = len(y)
    if loss == L1:
        value = float(np.mean(np.abs(resid)))
        delta = (np.sign(resid) / m)[:, None]
    else:
        value = float(np.mean(resid * resid))
        delta = (2.0 * resid / m)[:, None]
    grads: list[np.ndarray] = []
    for l in range(len(params.weights) - 1, -1, -1):
        gw = delta.T @ acts[l]
        gb = delta.sum(axis=0)
        grads.append(gb)
        grads.append(gw)
        if l > 0:
            delta = (delta @ params.weights[l]) * (acts[l] > 0)
    grads.reverse()
    return value, grads


def sgd_step(params: ModelParams, grads: Sequence[np.ndarray], lr: float) -> ModelParams:
    return ModelParams.from_tensors(params.layout, [t - lr * g for t, g in zip(params.tensors(), grads)])


def _batch_order(n: int, cfg: TrainConfig, client_id: int, epoch_index: int) -> list[int]:
    rng = SplitMix64(derive_seed("batches", cfg.seed, client_id, epoch_index))
    return fisher_yates(list(range(n)), rng)


def train_arrays(params, x, y, cfg: TrainConfig, client_id: int = 0, first_epoch: int = 0):
    """SGD over ``cfg.local_epochs`` epochs; returns (params, last epoch mean loss).

    ``first_epoch`` numbers the epochs globally so that shuffles depend only
    on (seed, client, global epoch), not on how epochs are split into rounds.
    """
    n = len(y)
    if n == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    epoch_loss = math.nan
    for e in range(cfg.local_epochs):
        order = np.asarray(_batch_order(n, cfg, client_id, first_epoch + e))
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            value, grads = loss_and_grad(params, x[idx], y[idx], cfg.loss)
            total += value * len(idx)
            if cfg.learning_rate:
                params = sgd_step(params, grads, cfg.learning_rate)
        epoch_loss = total / n
    return params, epoch_loss


def local_train(params: ModelParams, ds: ClientDataset, cfg: TrainConfig, round_index: int = 0,
                standardization: dict | None = None) -> ClientUpdate:
    """Local training on a client's rows.

    ``standardization`` maps feature name to ``(mean, std)``; when given, the
    predictors and target are standardized before training.
    """
    if ds.n_samples == 0:
        raise EmptyDataset(f"client {ds.client_id} has no rows")
    x, y = design_matrix(ds, standardization)
    new, loss = train_arrays(params, x, y, cfg, ds.client_id, round_index * cfg.local_epochs)
    return ClientUpdate(ds.client_id, new, ds.n_samples, loss)


def design_matrix(ds: ClientDataset, standardization: dict | None = None):
    x = ds.predictors()
    y = ds.target()
    if standardization:
        mu = np.array([standardization[f][0] for f in ds.schema.predictors])
        sd = np.array([standardization[f][1] for f in ds.schema.predictors])
        x = (x - mu) / sd
        tm, ts = standardization[ds.schema.target]
        y = (y - tm) / ts
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def fedavg(updates: Sequence[ClientUpdate]) -> ModelParams:
    """Sample-weighted average of client parameters (weights k_n / K)."""
    if not updates:
        raise EmptyUpdateSet("no client updates to aggregate")
    layout = updates[0].params.layout
    for u in updates:
        if u.params.layout != layout:
            raise LayoutMismatch(f"client {u.client_id} has layout {u.params.layout}, expected {layout}")
    total = sum(u.k_n for u in updates)
    if total <= 0:
        raise EmptyUpdateSet("updates carry no samples")
    out = []
    for i in range(len(updates[0].params.tensors())):
        stack = np.stack([u.params.tensors()[i] for u in updates])
        k = np.array([u.k_n for u in updates], dtype=np.float64)
        avg = np.tensordot(k, stack, axes=1) / total
        # rounding can leave the hull by an ulp; the exact value cannot
        out.append(np.clip(avg, stack.min(axis=0), stack.max(axis=0)))
    return ModelParams.from_tensors(layout, out)


def evaluate_mae(params: ModelParams, x, y) -> float:
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise EmptyEvalSet("evaluation set is empty")
    return float(np.mean(np.abs(forward(params, np.asarray(x, dtype=np.float64)) - y)))


# --- flat binary checkpoint ------------------------------------------------------------


def to_bytes(params: ModelParams) -> bytes:
    """``u32 count`` + ``u32`` per layer width, then each W then b, row-major f64 LE."""
    head = struct.pack(f"<I{len(params.layout)}I", len(params.layout), *params.layout)
    return head + b"".join(t.astype("<f8").tobytes(order="C") for t in params.tensors())


def from_bytes(data: bytes) -> ModelParams:
    (count,) = struct.unpack_from("<I", data, 0)
    layout = struct.unpack_from(f"<{count}I", data, 4)
    pos = 4 + 4 * count
    tensors = []
    for l in range(count - 1):
        for shape in ((layout[l + 1], layout[l]), (layout[l + 1],)):
            size = int(np.prod(shape))
            tensors.append(np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64))
            pos += 8 * size
    if pos != len(data):
        raise InvalidLayout("checkpoint has trailing bytes")
    return ModelParams.from_tensors(layout, tensors)


def to_base64(params: ModelParams) -> str:
    return base64.b64encode(to_bytes(params)).decode("ascii")


def from_base64(text: str) -> ModelParams:
    return from_bytes(base64.b64decode(text))
