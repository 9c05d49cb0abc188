"""Classifier architectures, SGD with momentum, and the training loop.

Two desk-scale architectures share one parameter container: a small two-block
convnet and a one-hidden-layer MLP. The same models serve as noise-generation
source models and as victim models. Training is plain SGD with momentum,
weight decay folded into the gradient, and a step-decay learning-rate
schedule with milestones at 50% and 75% of the epochs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import LabeledDataset
from .errors import CheckpointFormatError, TrainingDivergedError

ARCH_SMALL_CONVNET = "small_convnet"
ARCH_MLP = "mlp"
ARCHITECTURES = (ARCH_SMALL_CONVNET, ARCH_MLP)

UEDM_MAGIC = b"UEDM"
UEDM_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture + input geometry; fully determines the initial weights."""

    arch: str
    in_channels: int = 1
    input_hw: tuple[int, int] = (32, 32)
    n_classes: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unsupported arch {self.arch!r}, expected one of {ARCHITECTURES}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if min(self.input_hw) < 8:
            raise ValueError(f"input sides must be >= 8, got {self.input_hw}")


@dataclass
class TrainConfig:
    """SGD hyperparameters. Velocity update: v = momentum*v + g + wd*theta."""

    lr0: float = 0.1
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def lr_at(self, epoch: int) -> float:
        """lr0 * decay^(milestones passed); milestones at 50% and 75% of epochs."""
        milestones = (int(self.epochs * 0.5), int(self.epochs * 0.75))
        passed = sum(epoch >= m for m in milestones)
        return self.lr0 * self.lr_decay**passed


class TrainedModel:
    """Named parameter tensors plus SGD momentum buffers for one ModelSpec."""

    def __init__(self, spec: ModelSpec, params: dict[str, T.Tensor]):
        self.spec = spec
        self.params = params
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def copy(self) -> "TrainedModel":
        clone = TrainedModel(
            self.spec, {name: T.Tensor(p.data.copy()) for name, p in self.params.items()}
        )
        clone.velocity = {name: v.copy() for name, v in self.velocity.items()}
        return clone

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_model(spec: ModelSpec) -> TrainedModel:
    """Seeded Glorot-uniform weights, zero biases.

    small_convnet: conv3x3(Cin->16, pad 1) + relu + pool,
    conv3x3(16->32, pad 1) + relu + pool, dense -> n_classes.
    mlp: flatten, dense(256) + relu, dense -> n_classes.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.input_hw
    params: dict[str, T.Tensor] = {}
    if spec.arch == ARCH_SMALL_CONVNET:
        c1, c2 = 16, 32
        params["conv1_w"] = T.Tensor(
            _glorot(rng, (c1, spec.in_channels, 3, 3), spec.in_channels * 9, c1 * 9)
        )
        params["conv1_b"] = T.Tensor(np.zeros(c1))
        params["conv2_w"] = T.Tensor(_glorot(rng, (c2, c1, 3, 3), c1 * 9, c2 * 9))
        params["conv2_b"] = T.Tensor(np.zeros(c2))
        d = c2 * (h // 4) * (w // 4)
        params["fc_w"] = T.Tensor(_glorot(rng, (d, spec.n_classes), d, spec.n_classes))
        params["fc_b"] = T.Tensor(np.zeros(spec.n_classes))
    else:
        d = spec.in_channels * h * w
        hidden = 256
        params["fc1_w"] = T.Tensor(_glorot(rng, (d, hidden), d, hidden))
        params["fc1_b"] = T.Tensor(np.zeros(hidden))
        params["fc2_w"] = T.Tensor(_glorot(rng, (hidden, spec.n_classes), hidden, spec.n_classes))
        params["fc2_b"] = T.Tensor(np.zeros(spec.n_classes))
    return TrainedModel(spec, params)


def forward_net(model: TrainedModel, batch: T.Tensor | np.ndarray) -> T.Tensor:
    """Logits for a batch of images (N, Cin, H, W)."""
    x = batch if isinstance(batch, T.Tensor) else T.Tensor(batch)
    if x.data.ndim != 4:
        raise ValueError(f"batch must be (N,C,H,W), got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    if c != model.spec.in_channels or (h, w) != tuple(model.spec.input_hw):
        raise ValueError(
            f"batch {c}x{h}x{w} does not match model spec "
            f"{model.spec.in_channels}x{model.spec.input_hw}"
        )
    p = model.params
    if model.spec.arch == ARCH_SMALL_CONVNET:
        z = T.maxpool2(T.relu(T.conv2d(x, p["conv1_w"], p["conv1_b"], padding=1)))
        z = T.maxpool2(T.relu(T.conv2d(z, p["conv2_w"], p["conv2_b"], padding=1)))
        return T.dense(T.flatten(z), p["fc_w"], p["fc_b"])
    z = T.relu(T.dense(T.flatten(x), p["fc1_w"], p["fc1_b"]))
    return T.dense(z, p["fc2_w"], p["fc2_b"])


def loss_and_grads(
    model: TrainedModel,
    images: np.ndarray,
    labels: np.ndarray,
    need_input_grad: bool = False,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """One forward/backward pass; returns (loss, parameter grads, input grad).

    Skipping the input gradient saves the most expensive scatter in the
    backward pass, so victim training leaves it off.
    """
    x = T.Tensor(images, requires_grad=need_input_grad)
    logits = forward_net(model, x)
    loss, _ = T.softmax_cross_entropy(logits, labels)
    T.backward(loss)
    grads = {name: p.grad_or_zeros() for name, p in model.params.items()}
    return float(loss.data), grads, x.grad_or_zeros()


def sgd_step(
    model: TrainedModel, grads: dict[str, np.ndarray], lr: float, cfg: TrainConfig
) -> TrainedModel:
    """In-place momentum SGD: v = m*v + g + wd*theta; theta -= lr*v."""
    for name, p in model.params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} != param {name} shape {p.data.shape}")
        v = model.velocity[name]
        v *= cfg.momentum
        v += g + cfg.weight_decay * p.data
        p.data -= lr * v
        if not np.isfinite(p.data).all():
            raise TrainingDivergedError(f"non-finite parameter {name} after sgd step")
    return model


def train(
    model: TrainedModel,
    data: LabeledDataset,
    cfg: TrainConfig,
    test: LabeledDataset | None = None,
) -> tuple[TrainedModel, list[tuple[int, float, float | None]]]:
    """Train in place; returns (model, per-epoch curve (epoch, train_loss, test_acc)).

    Shuffling is seeded per run, so a fixed (model seed, cfg seed) pair gives
    bit-identical parameters and curve. A non-finite loss aborts with the
    failing step named.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    if data.labels.max(initial=0) >= model.spec.n_classes:
        raise ValueError(
            f"label {data.labels.max()} out of range for {model.spec.n_classes} classes"
        )
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    curve: list[tuple[int, float, float | None]] = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads, _ = loss_and_grads(model, data.images[idx], data.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss diverged at epoch {epoch} step {step} (loss={loss})"
                )
            sgd_step(model, grads, lr, cfg)
            losses.append(loss)
            step += 1
        acc = evaluate(model, test) if test is not None else None
        curve.append((epoch, float(np.mean(losses)), acc))
    return model, curve


def predict(model: TrainedModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax-logit class per sample; ties go to the lowest class index."""
    out = np.empty(len(images), dtype=np.int64)
    for start in range(0, len(images), batch_size):
        logits = forward_net(model, images[start : start + batch_size])
        out[start : start + len(logits.data)] = np.argmax(logits.data, axis=1)
    return out


def evaluate(model: TrainedModel, data: LabeledDataset) -> float:
    """Fraction of correctly classified samples."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, data.images) == data.labels))


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(model: TrainedModel, path) -> None:
    """Binary container: magic, version, then (name, shape, f64 values) per parameter."""
    from ._binio import atomic_write_bytes

    blob = bytearray()
    blob += UEDM_MAGIC
    blob += struct.pack("<H", UEDM_VERSION)
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += struct.pack("<B", p.data.ndim)
        for extent in p.data.shape:
            blob += struct.pack("<I", extent)
        blob += p.data.astype("<f8").tobytes()
    atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path, spec: ModelSpec) -> TrainedModel:
    """Rebuild a model from a checkpoint; momentum buffers reset to zero."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != UEDM_MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r}", offset=0)
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != UEDM_VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", offset=4)
    pos = 6
    loaded: dict[str, np.ndarray] = {}
    while pos < len(blob):
        try:
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
            pos += 8 * count
        except (struct.error, ValueError) as exc:
            raise CheckpointFormatError(f"truncated checkpoint: {exc}", offset=pos) from exc
        loaded[name] = values.reshape(shape).astype(np.float64)
    model = build_model(spec)
    if set(loaded) != set(model.params):
        raise CheckpointFormatError(
            f"parameter names {sorted(loaded)} do not match spec (expect {sorted(model.params)})",
            offset=6,
        )
    for name, arr in loaded.items():
        if arr.shape != model.params[name].data.shape:
            raise CheckpointFormatError(
                f"parameter {name} shape {arr.shape} != spec shape "
                f"{model.params[name].data.shape}",
                offset=6,
            )
        model.params[name] = T.Tensor(arr)
    model.velocity = {name: np.zeros_like(p.data) for name, p in model.params.items()}
    return model
