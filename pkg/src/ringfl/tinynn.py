"""Minimal MLP with manual backprop, the distillation loss, and averaging.

Models are flat float64 vectors plus layer-shape metadata so they can be
averaged elementwise, shipped as bytes, and hashed content-addressably. The
layout is frozen: per layer, weights row-major then biases, layers in order.
Hidden layers use ReLU; the output layer yields raw logits.

The student loss is cross entropy plus, per teacher, the KL divergence from
the teacher's temperature-softened class distribution to the student's,
averaged over teachers so magnitude does not scale with teacher count.
Teachers are frozen references; the gradient flows only through the student.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class BadShapes(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class NotADistribution(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class EmptyList(ValueError):
    pass


PARAMS_MAGIC = b"RDFLMP1"

_Q_FLOOR = 1e-12  # clamp for log arguments in KL


def param_count(shapes) -> int:
    return sum(shapes[i] * shapes[i + 1] + shapes[i + 1] for i in range(len(shapes) - 1))


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus layer dimensions, e.g. (2, 32, 32, 4)."""

    shapes: tuple[int, ...]
    values: np.ndarray  # (param_count,) float64, treated as immutable

    def __post_init__(self):
        shapes = tuple(int(s) for s in self.shapes)
        object.__setattr__(self, "shapes", shapes)
        if len(shapes) < 2 or any(s <= 0 for s in shapes):
            raise BadShapes(f"need >=2 positive dims, got {shapes}")
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size != param_count(shapes):
            raise ShapeMismatch(
                f"expected {param_count(shapes)} values for {shapes}, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ShapeMismatch("non-finite parameter values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def layers(self):
        """Yield (W, b) read-only views, W of shape (d_in, d_out)."""
        off = 0
        for d_in, d_out in zip(self.shapes, self.shapes[1:]):
            w = self.values[off:off + d_in * d_out].reshape(d_in, d_out)
            off += d_in * d_out
            b = self.values[off:off + d_out]
            off += d_out
            yield w, b


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, d) float64 with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.ndim != 1 or features.shape[0] != labels.shape[0]:
            raise ShapeMismatch("features rows must match labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ShapeMismatch("labels out of range")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.001
    batch_size: int = 64
    local_epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.local_epochs < 0:
            raise ValueError("bad training config")


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 2.0
    base_teacher_frac: float = 0.30
    max_teacher_frac: float = 0.50
    growth_per_round: float = 0.05
    epochs: int = 1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not (0 < self.base_teacher_frac <= self.max_teacher_frac <= 1):
            raise ValueError("need 0 < base <= max <= 1")


# ---------------------------------------------------------------------------
# construction / forward
# ---------------------------------------------------------------------------

def init_model(shapes, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    shapes = tuple(int(s) for s in shapes)
    if len(shapes) < 2 or any(s <= 0 for s in shapes):
        raise BadShapes(f"need >=2 positive dims, got {shapes}")
    rng = np.random.default_rng(seed)
    parts = []
    for d_in, d_out in zip(shapes, shapes[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        parts.append(rng.uniform(-limit, limit, size=d_in * d_out))
        parts.append(np.zeros(d_out))
    return ModelParams(shapes, np.concatenate(parts))


def _forward_cached(model: ModelParams, x: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    if x.ndim != 2 or x.shape[1] != model.shapes[0]:
        raise ShapeMismatch(f"features width {x.shape} vs input dim {model.shapes[0]}")
    layers = list(model.layers())
    hs = [x]  # activations entering each layer
    zs = []
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        zs.append(z)
        h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        hs.append(h)
    return zs, hs


def forward(model: ModelParams, features: np.ndarray) -> np.ndarray:
    """Logits matrix (n, n_out); ReLU hidden layers, linear output."""
    features = np.asarray(features, dtype=np.float64)
    squeeze = features.ndim == 1
    if squeeze:
        features = features[None, :]
    _, hs = _forward_cached(model, features)
    return hs[-1][0] if squeeze else hs[-1]


def _backward(model: ModelParams, zs, hs, dz_out: np.ndarray) -> np.ndarray:
    """Backprop dloss/dlogits to a flat gradient over all parameters."""
    layers = list(model.layers())
    grads_w = [None] * len(layers)
    grads_b = [None] * len(layers)
    dz = dz_out
    for i in range(len(layers) - 1, -1, -1):
        grads_w[i] = hs[i].T @ dz
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ layers[i][0].T
            dz = dh * (zs[i - 1] > 0.0)
    flat = []
    for gw, gb in zip(grads_w, grads_b):
        flat.append(gw.ravel())
        flat.append(gb)
    return np.concatenate(flat)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax_t(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax along the last axis, max-subtracted for stability."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats; 0*log(0/q) = 0, q clamped at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    for name, row in (("p", p), ("q", q)):
        if row.ndim != 1 or row.size == 0 or np.any(row < 0) or abs(row.sum() - 1.0) > 1e-9:
            raise NotADistribution(f"{name} is not a probability row")
    if p.shape != q.shape:
        raise NotADistribution("length mismatch")
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], _Q_FLOOR)))))


def ce_loss(model: ModelParams, features: np.ndarray, labels: np.ndarray):
    """Mean cross entropy against integer labels; returns (loss, flat grad)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != features.shape[0]:
        raise ShapeMismatch("features rows must match labels")
    n = features.shape[0]
    zs, hs = _forward_cached(model, features)
    logits = hs[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeMismatch("labels out of range for output layer")
    logp = _log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    dz = np.exp(logp)
    dz[np.arange(n), labels] -= 1.0
    dz /= n
    return float(loss), _backward(model, zs, hs, dz)


def distill_loss(model: ModelParams, teachers, features: np.ndarray,
                 labels: np.ndarray, cfg: DistillConfig):
    """Cross entropy plus per-teacher softened KL; returns (loss, flat grad).

    With no teachers this is exactly ce_loss. Teacher logits are computed
    without caches; only the student receives gradient.
    """
    teachers = list(teachers)
    for t in teachers:
        if t.shapes != model.shapes:
            raise ShapeMismatch("teacher/student layer dims differ")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    zs, hs = _forward_cached(model, features)
    logits = hs[-1]
    logp = _log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    dz = np.exp(logp)
    dz[np.arange(n), labels] -= 1.0
    dz /= n
    if teachers:
        temp = cfg.temperature
        p_student = softmax_t(logits, temp)
        log_ps = _log_softmax(logits / temp)
        kl_total = 0.0
        dz_kl = np.zeros_like(dz)
        for teacher in teachers:
            p_teacher = softmax_t(forward(teacher, features), temp)
            mask = p_teacher > 0
            terms = np.where(mask, p_teacher * (np.log(np.maximum(p_teacher, _Q_FLOOR)) - log_ps), 0.0)
            kl_total += terms.sum(axis=1).mean()
            dz_kl += (p_student - p_teacher) / (temp * n)
        loss += kl_total / len(teachers)
        dz += dz_kl / len(teachers)
    return float(loss), _backward(model, zs, hs, dz)


# ---------------------------------------------------------------------------
# training / aggregation / evaluation
# ---------------------------------------------------------------------------

def _sgd(model: ModelParams, dataset: Dataset, cfg: TrainConfig, epochs: int,
         grad_fn) -> ModelParams:
    if len(dataset) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    values = model.values.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            current = ModelParams(model.shapes, values)
            _, grad = grad_fn(current, dataset.features[idx], dataset.labels[idx])
            if cfg.weight_decay:
                grad = grad + cfg.weight_decay * values
            values = values - cfg.lr * grad
    return ModelParams(model.shapes, values)


def train_local(model: ModelParams, dataset: Dataset, cfg: TrainConfig) -> ModelParams:
    """SGD over cfg.local_epochs epochs of seeded-shuffled mini-batches.

    Returns an updated copy; the input model is untouched.
    """
    return _sgd(model, dataset, cfg, cfg.local_epochs, ce_loss)


def distill_local(model: ModelParams, teachers, dataset: Dataset,
                  train_cfg: TrainConfig, distill_cfg: DistillConfig) -> ModelParams:
    """SGD on the distillation loss with frozen teachers."""
    def grad_fn(m, x, y):
        return distill_loss(m, teachers, x, y, distill_cfg)
    return _sgd(model, dataset, train_cfg, distill_cfg.epochs, grad_fn)


def average_params(models) -> ModelParams:
    """Unweighted elementwise mean of identically shaped models.

    Computed as v0 + mean(vi - v0) so that averaging k copies of the same
    model returns it bit-exactly (plain sum/k rounds twice and does not).
    """
    models = list(models)
    if not models:
        raise EmptyList("nothing to average")
    shapes = models[0].shapes
    for m in models[1:]:
        if m.shapes != shapes:
            raise ShapeMismatch("cannot average differently shaped models")
    base = models[0].values
    deltas = np.stack([m.values - base for m in models])
    return ModelParams(shapes, base + deltas.mean(axis=0))


def evaluate(model: ModelParams, dataset: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    preds = np.argmax(forward(model, dataset.features), axis=1)
    return float((preds == dataset.labels).mean())


# ---------------------------------------------------------------------------
# wire format
# ---------------------------------------------------------------------------

def serialize_params(model: ModelParams) -> bytes:
    """Frozen byte layout: magic, u32 dim count, dims as LE u32, LE f64 values.

    This is the exact byte stream the content store hashes, so it must stay
    bit-stable.
    """
    head = PARAMS_MAGIC + struct.pack("<I", len(model.shapes))
    dims = struct.pack(f"<{len(model.shapes)}I", *model.shapes)
    body = model.values.astype("<f8").tobytes()
    return head + dims + body


def deserialize_params(data: bytes) -> ModelParams:
    if data[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise ShapeMismatch("bad magic")
    off = len(PARAMS_MAGIC)
    (n_dims,) = struct.unpack_from("<I", data, off)
    off += 4
    shapes = struct.unpack_from(f"<{n_dims}I", data, off)
    off += 4 * n_dims
    values = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
    return ModelParams(tuple(shapes), values)
