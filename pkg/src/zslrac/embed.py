"""Descriptor-to-feature embedding trained with point and structural losses.

The map is a one-hidden-layer ReLU perceptron ``f(a) = W2 relu(W1 a + b1) + b2``.
Training minimizes::

    L1 = mean_i ||f(a_i) - phi_i||^2 + lambda_r (||W1||^2 + ||W2||^2)
    L2 = ||D_a - D_phi||_F^2
    L  = L1 + rho * L2

where ``D_a`` holds squared distances between embedded seen-class
descriptors and ``D_phi`` squared distances between seen-class feature
means.  Gradients are analytic.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ._rng import substream
from .data import Dataset, class_means
from .errors import DataError, DivergenceError

NET_MAGIC = b"ZSLNET01"
PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class EmbeddingNet:
    W1: np.ndarray  # h x s
    b1: np.ndarray  # h
    W2: np.ndarray  # d x h
    b2: np.ndarray  # d

    @property
    def dims(self):
        """``(s, h, d)``."""
        h, s = self.W1.shape
        return s, h, self.W2.shape[0]

    @classmethod
    def initialize(cls, s, h, d, rng):
        """Glorot-uniform weights, zero biases."""
        lim1 = np.sqrt(6.0 / (s + h))
        lim2 = np.sqrt(6.0 / (h + d))
        return cls(
            W1=rng.uniform(-lim1, lim1, size=(h, s)),
            b1=np.zeros(h),
            W2=rng.uniform(-lim2, lim2, size=(d, h)),
            b2=np.zeros(d),
        )

    def params(self):
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self):
        return EmbeddingNet(**{k: v.copy() for k, v in self.params().items()})

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.params().values())

    def save(self, path):
        s, h, d = self.dims
        with open(path, "wb") as fh:
            fh.write(NET_MAGIC)
            fh.write(struct.pack("<3i", s, h, d))
            for k in PARAM_NAMES:
                fh.write(np.ascontiguousarray(getattr(self, k), dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if raw[:8] != NET_MAGIC:
            raise DataError(f"{path}: not a ZSLNET01 file")
        if len(raw) < 20:
            raise DataError(f"{path}: truncated header")
        s, h, d = struct.unpack("<3i", raw[8:20])
        if min(s, h, d) < 1:
            raise DataError(f"{path}: bad dimensions {(s, h, d)}")
        shapes = {"W1": (h, s), "b1": (h,), "W2": (d, h), "b2": (d,)}
        expected = 20 + 8 * sum(int(np.prod(v)) for v in shapes.values())
        if len(raw) != expected:
            raise DataError(f"{path}: {len(raw)} bytes, expected {expected}")
        out, off = {}, 20
        for k in PARAM_NAMES:
            size = int(np.prod(shapes[k]))
            out[k] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shapes[k]).astype(np.float64)
            off += 8 * size
        return cls(**out)


@dataclass(frozen=True)
class TrainConfig:
    lambda_r: float = 1e-3
    rho: float = 0.1
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    hidden_dim: int = 1600
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lambda_r < 0 or self.rho < 0:
            raise ValueError("lambda_r and rho must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and hidden_dim >= 1 required")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RelationalMatrix:
    values: np.ndarray
    class_order: tuple = ()


def _check_input(net, a):
    a = np.asarray(a, dtype=np.float64)
    s = net.W1.shape[1]
    if a.shape[-1] != s:
        raise ValueError(f"descriptor dimension {a.shape[-1]} does not match net input {s}")
    return a


def forward(net: EmbeddingNet, a):
    """Embed one descriptor (shape ``(s,)``) or a batch (shape ``(n, s)``)."""
    a = _check_input(net, a)
    hidden = np.maximum(a @ net.W1.T + net.b1, 0.0)
    return hidden @ net.W2.T + net.b2


def weight_penalty(net):
    return float(np.sum(net.W1 * net.W1) + np.sum(net.W2 * net.W2))


def pointwise_loss(net, descriptors, features, lambda_r=0.0):
    descriptors = np.atleast_2d(descriptors)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if descriptors.shape[0] == 0:
        raise ValueError("empty batch")
    resid = forward(net, descriptors) - features
    return float(np.sum(resid * resid) / descriptors.shape[0]) + lambda_r * weight_penalty(net)


def pairwise_sq_dists(x):
    """Squared Euclidean distances between rows, exactly symmetric, zero diagonal."""
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("uvk,uvk->uv", diff, diff)


def relational_matrices(net, seen_descriptors, seen_means, class_order=()):
    """``(D_a, D_phi)`` for the seen classes."""
    seen_descriptors = np.atleast_2d(seen_descriptors)
    seen_means = np.atleast_2d(seen_means)
    if seen_descriptors.shape[0] != seen_means.shape[0]:
        raise ValueError("descriptor and mean row counts differ")
    order = tuple(class_order)
    return (RelationalMatrix(pairwise_sq_dists(forward(net, seen_descriptors)), order),
            RelationalMatrix(pairwise_sq_dists(seen_means), order))


def _values(m):
    return m.values if isinstance(m, RelationalMatrix) else np.asarray(m, dtype=np.float64)


def relational_loss(D_a, D_phi):
    a, p = _values(D_a), _values(D_phi)
    if a.shape != p.shape:
        raise ValueError(f"relational matrix shapes differ: {a.shape} vs {p.shape}")
    if isinstance(D_a, RelationalMatrix) and isinstance(D_phi, RelationalMatrix):
        if D_a.class_order and D_phi.class_order and D_a.class_order != D_phi.class_order:
            raise ValueError("relational matrices use different class orders")
    diff = a - p
    return float(np.sum(diff * diff))


def total_loss(net, descriptors, features, D_a, D_phi, cfg: TrainConfig):
    l1 = pointwise_loss(net, descriptors, features, cfg.lambda_r)
    if cfg.rho == 0:
        return l1
    return l1 + cfg.rho * relational_loss(D_a, D_phi)


def gradients(net, descriptors, features, seen_descriptors, seen_means, cfg: TrainConfig):
    """Analytic gradient of :func:`total_loss` for every parameter.

    The structural term flows back through the embedded seen descriptors.
    At a ReLU kink (pre-activation exactly 0) the subgradient 0 is used.
    """
    descriptors = np.atleast_2d(_check_input(net, descriptors))
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = descriptors.shape[0]
    if n == 0:
        raise ValueError("empty batch")

    inputs = [descriptors]
    if cfg.rho != 0:
        inputs.append(np.atleast_2d(seen_descriptors))
    x = np.vstack(inputs)
    z = x @ net.W1.T + net.b1
    hidden = np.maximum(z, 0.0)
    y = hidden @ net.W2.T + net.b2

    grad_y = np.empty_like(y)
    grad_y[:n] = 2.0 * (y[:n] - features) / n
    if cfg.rho != 0:
        emb = y[n:]
        diff = pairwise_sq_dists(emb) - pairwise_sq_dists(seen_means)
        # d/dy_u sum_{u,v} (D_a - D_phi)_{uv}^2 = 8 sum_v E_uv (y_u - y_v)
        grad_y[n:] = cfg.rho * 8.0 * (diff.sum(axis=1)[:, None] * emb - diff @ emb)

    grad_hidden = grad_y @ net.W2
    grad_z = grad_hidden * (z > 0)
    return {
        "W1": grad_z.T @ x + 2.0 * cfg.lambda_r * net.W1,
        "b1": grad_z.sum(axis=0),
        "W2": grad_y.T @ hidden + 2.0 * cfg.lambda_r * net.W2,
        "b2": grad_y.sum(axis=0),
    }


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    net: EmbeddingNet
    trace: list = field(default_factory=list)  # rows (epoch, l1, l2, total)
    seen_class_ids: tuple = ()


def _epoch_losses(net, x, y, seen_desc, d_phi, cfg):
    l1 = pointwise_loss(net, x, y, cfg.lambda_r)
    l2 = relational_loss(pairwise_sq_dists(forward(net, seen_desc)), d_phi) if cfg.rho != 0 else 0.0
    return l1, l2, l1 + cfg.rho * l2 if cfg.rho != 0 else l1


def train(ds: Dataset, cfg: TrainConfig, seen_class_ids=None, net=None) -> TrainResult:
    """Minibatch Adam on the combined loss over the seen-class samples of ``ds``.

    ``D_phi`` comes from the full training set once; ``D_a`` is recomputed
    every step over all seen classes.  Epoch 0 of the trace is the
    initial network.
    """
    seen = tuple(ds.manifest.seen_class_ids if seen_class_ids is None else seen_class_ids)
    mask = np.isin(ds.labels, seen)
    if not mask.any():
        raise DataError("training set has no seen-class samples")
    feats = ds.features[mask]
    labels = ds.labels[mask]
    index = {c: i for i, c in enumerate(ds.manifest.class_ids)}
    x_all = ds.descriptors[[index[c] for c in labels.tolist()]]
    seen_desc = ds.descriptors_for(seen)
    seen_means = class_means(ds, seen)
    d_phi = pairwise_sq_dists(seen_means)

    s, d = ds.descriptors.shape[1], ds.features.shape[1]
    if net is None:
        net = EmbeddingNet.initialize(s, cfg.hidden_dim, d, substream(cfg.seed, "init"))
    else:
        net = net.copy()
    batch_rng = substream(cfg.seed, "batching")
    params = net.params()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)

    trace = [(0, *_epoch_losses(net, x_all, feats, seen_desc, d_phi, cfg))]
    n = feats.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = batch_rng.permutation(n)
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                grads = gradients(net, x_all[idx], feats[idx], seen_desc, seen_means, cfg)
                opt.step(params, grads)
            row = (epoch, *_epoch_losses(net, x_all, feats, seen_desc, d_phi, cfg))
        if not np.isfinite(row[3]) or not net.is_finite():
            raise DivergenceError(epoch, row[3])
        trace.append(row)
    return TrainResult(net, trace, seen)


def write_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "l1", "l2", "total"])
        for epoch, l1, l2, total in trace:
            w.writerow([epoch, repr(float(l1)), repr(float(l2)), repr(float(total))])


def read_trace(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), float(r["l1"]), float(r["l2"]), float(r["total"])) for r in rows]
