"""Sparsity-aware error-minimizing noise crafting.

The generator co-trains a source model with per-sample (or per-class)
perturbations. Each outer step: compute the loss gradient with respect to
the noise (averaged over seeded transformation draws), keep only the top-k
percent of elements by gradient magnitude, take a signed PGD step on those
elements under the l-inf budget, then update the source model on the
perturbed minibatch. Termination is the step count alone.

Constraint handling: positions that leave the mask between refreshes are
zeroed before the update, so the l0 bound (ceil(k/100 * d) nonzeros) holds
for the returned noise, and sign(0)=0 guarantees masked-out positions never
move.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from ._binio import atomic_write_bytes, canonical_json
from .data import LabeledDataset
from .errors import NoiseFormatError, TrainingDivergedError
from .models import ModelSpec, TrainConfig, TrainedModel, build_model, forward_net, sgd_step

SCOPE_PER_SAMPLE = "per_sample"
SCOPE_PER_CLASS = "per_class"
SCOPES = (SCOPE_PER_SAMPLE, SCOPE_PER_CLASS)

TRANSFORM_IDENTITY = "identity"
TRANSFORM_SHIFT = "random_shift"
TRANSFORM_HFLIP = "random_hflip"
TRANSFORMS = (TRANSFORM_IDENTITY, TRANSFORM_SHIFT, TRANSFORM_HFLIP)

UEDN_MAGIC = b"UEDN"
UEDN_VERSION = 1


@dataclass(frozen=True)
class BudgetConfig:
    """All noise-crafting knobs.

    rho: l-inf radius in normalized pixel units. alpha: PGD step size
    (defaults to rho/4). k_percent: percentage of elements allowed to move.
    pgd_steps: PGD iterations per noise refresh. steps: outer
    generator-training iterations (the only termination condition).
    grad_samples: transformation draws averaged per gradient estimate.
    """

    rho: float = 8.0 / 255.0
    alpha: float | None = None
    k_percent: float = 10.0
    pgd_steps: int = 1
    steps: int = 500
    grad_samples: int = 1
    transform: str = TRANSFORM_IDENTITY
    seed: int = 0
    scope: str = SCOPE_PER_SAMPLE

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0,1], got {self.rho}")
        if self.alpha is not None and not 0.0 < self.alpha <= self.rho:
            raise ValueError(f"alpha must be in (0, rho], got {self.alpha}")
        if not 0.0 <= self.k_percent <= 100.0:
            raise ValueError(f"k_percent must be in [0,100], got {self.k_percent}")
        if self.pgd_steps < 1 or self.steps < 1 or self.grad_samples < 1:
            raise ValueError("pgd_steps, steps, and grad_samples must all be >= 1")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")

    @property
    def step_size(self) -> float:
        return self.alpha if self.alpha is not None else self.rho / 4.0

    def snapshot(self) -> dict:
        return {
            "rho": self.rho,
            "alpha": self.step_size,
            "k_percent": self.k_percent,
            "pgd_steps": self.pgd_steps,
            "steps": self.steps,
            "grad_samples": self.grad_samples,
            "transform": self.transform,
            "seed": self.seed,
            "scope": self.scope,
        }


@dataclass
class SparseMask:
    """Binary keep-mask over one noise element's positions."""

    bits: np.ndarray  # float64 zeros/ones, same shape as the gradient
    kept_count: int


@dataclass
class NoiseSet:
    """Crafted perturbations plus the budget that produced them.

    deltas is (count, C, H, W): one slice per sample (per_sample scope) or
    per class (per_class scope). extra carries method-specific header fields
    for crafters that are not budget-determined (target shift, block size).
    """

    scope: str
    deltas: np.ndarray
    budget: BudgetConfig
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if self.deltas.ndim != 4:
            raise ValueError(f"deltas must be (count,C,H,W), got shape {self.deltas.shape}")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")

    def __len__(self) -> int:
        return self.deltas.shape[0]


# ---------------------------------------------------------------------------
# mask construction


def element_count(k_percent: float, d: int) -> int:
    """The l0 budget: ceil(k/100 * d) elements may be perturbed."""
    return int(np.ceil(k_percent / 100.0 * d))


def percentile_threshold(grad: np.ndarray, k_percent: float) -> float:
    """Magnitude of the m-th largest |gradient|, m = ceil(k/100 * d).

    k=0 returns +inf (nothing passes); k=100 returns min|g| (everything
    passes).
    """
    flat = np.abs(np.asarray(grad, dtype=np.float64)).ravel()
    if flat.size == 0:
        raise ValueError("gradient tensor is empty")
    m = element_count(k_percent, flat.size)
    if m == 0:
        return np.inf
    return float(np.partition(flat, flat.size - m)[flat.size - m])


def sparse_mask(grad: np.ndarray, k_percent: float) -> SparseMask:
    """Keep exactly ceil(k/100 * d) positions with the largest |gradient|.

    Ties are broken by ascending row-major index, so the mask is a
    deterministic function of the gradient.
    """
    grad = np.asarray(grad, dtype=np.float64)
    flat = np.abs(grad).ravel()
    if flat.size == 0:
        raise ValueError("gradient tensor is empty")
    m = element_count(k_percent, flat.size)
    bits = np.zeros(flat.size)
    if m:
        keep = np.argsort(-flat, kind="stable")[:m]
        bits[keep] = 1.0
    return SparseMask(bits.reshape(grad.shape), kept_count=m)


def _batch_sparse_mask(grads: np.ndarray, k_percent: float) -> np.ndarray:
    """sparse_mask applied independently to each leading-axis slice."""
    b = grads.shape[0]
    flat = np.abs(grads).reshape(b, -1)
    m = element_count(k_percent, flat.shape[1])
    bits = np.zeros_like(flat)
    if m:
        keep = np.argsort(-flat, axis=1, kind="stable")[:, :m]
        np.put_along_axis(bits, keep, 1.0, axis=1)
    return bits.reshape(grads.shape)


def pgd_update(delta: np.ndarray, masked_grad: np.ndarray, budget: BudgetConfig) -> np.ndarray:
    """One signed descent step followed by projection onto the l-inf ball."""
    if delta.shape != masked_grad.shape:
        raise ValueError(f"shape mismatch: delta {delta.shape} vs grad {masked_grad.shape}")
    step = delta - budget.step_size * np.sign(masked_grad)
    return np.clip(step, -budget.rho, budget.rho)


# ---------------------------------------------------------------------------
# transformations


def _sample_transform(kind: str, rng: np.random.Generator):
    """Draw one spatial transform; returns (apply, map_grad_back)."""
    if kind == TRANSFORM_IDENTITY:
        return (lambda x: x), (lambda g: g)
    if kind == TRANSFORM_HFLIP:
        if rng.random() < 0.5:
            return (lambda x: x[..., ::-1].copy()), (lambda g: g[..., ::-1].copy())
        return (lambda x: x), (lambda g: g)
    dy, dx = (int(v) for v in rng.integers(-2, 3, size=2))

    def shift(arr: np.ndarray, sy: int, sx: int) -> np.ndarray:
        out = np.zeros_like(arr)
        h, w = arr.shape[-2:]
        ys = slice(max(sy, 0), min(h + sy, h))
        yd = slice(max(-sy, 0), min(h - sy, h))
        xs = slice(max(sx, 0), min(w + sx, w))
        xd = slice(max(-sx, 0), min(w - sx, w))
        out[..., ys, xs] = arr[..., yd, xd]
        return out

    return (lambda x: shift(x, dy, dx)), (lambda g: shift(g, -dy, -dx))


def avg_input_gradient(
    source: TrainedModel,
    batch: tuple[np.ndarray, np.ndarray],
    deltas: np.ndarray,
    budget: BudgetConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Loss gradient w.r.t. the noise, averaged over seeded transform draws.

    For spatial transforms the per-draw gradient is mapped back through the
    inverse transform before averaging, so the result always lives in noise
    coordinates. deltas must align with the batch (one slice per image).
    """
    images, labels = batch
    if deltas.shape != images.shape:
        raise ValueError(
            f"noise slice shape {deltas.shape} does not match batch {images.shape}"
        )
    if rng is None:
        rng = np.random.default_rng(budget.seed)
    perturbed = images + deltas
    total = np.zeros_like(images)
    for _ in range(budget.grad_samples):
        apply_t, grad_back = _sample_transform(budget.transform, rng)
        x = T.Tensor(apply_t(perturbed))
        logits = forward_net(source, x)
        loss, _ = T.softmax_cross_entropy(logits, labels)
        T.backward(loss)
        total += grad_back(x.grad)
    return total / budget.grad_samples


# ---------------------------------------------------------------------------
# the generator loop


def _refresh_noise(
    deltas_slice: np.ndarray, grads: np.ndarray, budget: BudgetConfig
) -> np.ndarray:
    """Mask refresh + one PGD step, per leading-axis noise element."""
    bits = _batch_sparse_mask(grads, budget.k_percent)
    return pgd_update(deltas_slice * bits, bits * grads, budget)


def craft_salm(
    train: LabeledDataset,
    spec: ModelSpec,
    budget: BudgetConfig,
    train_cfg: TrainConfig,
) -> NoiseSet:
    """Run the full generator: returns noise for every sample (or class).

    Deterministic for a fixed (budget.seed, spec.seed, train_cfg): minibatch
    order, transform draws, and the source model's updates all derive from
    one seeded stream. Raises TrainingDivergedError if the source model's
    loss goes non-finite, naming the step.
    """
    if train.labels.max(initial=0) >= spec.n_classes:
        raise ValueError(
            f"dataset label {train.labels.max()} out of range for {spec.n_classes} classes"
        )
    n = len(train)
    count = n if budget.scope == SCOPE_PER_SAMPLE else spec.n_classes
    deltas = np.zeros((count,) + train.image_shape)
    source = build_model(spec)
    rng = np.random.default_rng(budget.seed)

    order = np.empty(0, dtype=np.int64)
    cursor = 0
    milestones = (int(budget.steps * 0.5), int(budget.steps * 0.75))
    for step in range(budget.steps):
        if cursor + train_cfg.batch_size > len(order):
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + train_cfg.batch_size]
        cursor += train_cfg.batch_size
        images, labels = train.images[idx], train.labels[idx]

        if budget.scope == SCOPE_PER_SAMPLE:
            dslice = deltas[idx]
            for _ in range(budget.pgd_steps):
                g = avg_input_gradient(source, (images, labels), dslice, budget, rng)
                dslice = _refresh_noise(dslice, g, budget)
            deltas[idx] = dslice
            batch_noise = dslice
        else:
            for _ in range(budget.pgd_steps):
                g = avg_input_gradient(
                    source, (images, labels), deltas[labels], budget, rng
                )
                present = np.unique(labels)
                class_grads = np.stack(
                    [g[labels == c].mean(axis=0) for c in present]
                )
                deltas[present] = _refresh_noise(deltas[present], class_grads, budget)
            batch_noise = deltas[labels]

        apply_t, _ = _sample_transform(budget.transform, rng)
        x = T.Tensor(apply_t(images + batch_noise), requires_grad=False)
        logits = forward_net(source, x)
        loss, _ = T.softmax_cross_entropy(logits, labels)
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(f"source loss diverged at generator step {step}")
        T.backward(loss)
        grads = {name: p.grad_or_zeros() for name, p in source.params.items()}
        lr = train_cfg.lr0 * train_cfg.lr_decay ** sum(step >= m for m in milestones)
        sgd_step(source, grads, lr, train_cfg)

    return NoiseSet(budget.scope, deltas, budget)


def apply_noise(data: LabeledDataset, noise: NoiseSet) -> LabeledDataset:
    """x' = clip(x + delta, 0, 1); labels untouched; provenance noted.

    per_sample noise must be index-aligned with the dataset; per_class noise
    must provide one delta per class (zero deltas leave a class unprotected).
    """
    if noise.scope == SCOPE_PER_SAMPLE:
        if len(noise) != len(data):
            raise ValueError(f"noise has {len(noise)} deltas for {len(data)} samples")
        deltas = noise.deltas
    else:
        if len(noise) != data.n_classes:
            raise ValueError(
                f"per-class noise has {len(noise)} deltas for {data.n_classes} classes"
            )
        deltas = noise.deltas[data.labels]
    if deltas.shape[1:] != data.image_shape:
        raise ValueError(
            f"noise shape {deltas.shape[1:]} does not match images {data.image_shape}"
        )
    images = np.clip(data.images + deltas, 0.0, 1.0)
    note = (
        f"noise(scope={noise.scope},rho={noise.budget.rho:.6g},"
        f"k={noise.budget.k_percent:.6g},seed={noise.budget.seed})"
    )
    return data.with_images(images, note=note)


# ---------------------------------------------------------------------------
# noise container


def write_uedn(path, noise: NoiseSet) -> None:
    """magic, version u16, scope u8, count u32, per-delta (rank u8, extents
    u32 each, f64 values), then length-prefixed canonical-JSON header."""
    blob = bytearray()
    blob += UEDN_MAGIC
    blob += struct.pack("<HBI", UEDN_VERSION, SCOPES.index(noise.scope), len(noise))
    for delta in noise.deltas:
        blob += struct.pack("<B", delta.ndim)
        for extent in delta.shape:
            blob += struct.pack("<I", extent)
        blob += delta.astype("<f8").tobytes()
    header = dict(noise.budget.snapshot())
    header.update(noise.extra)
    raw = canonical_json(header).encode("utf-8")
    blob += struct.pack("<I", len(raw))
    blob += raw
    atomic_write_bytes(path, bytes(blob))


def read_uedn(path) -> NoiseSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != UEDN_MAGIC:
        raise NoiseFormatError(f"bad magic {blob[:4]!r}", offset=0)
    try:
        version, scope_tag, count = struct.unpack_from("<HBI", blob, 4)
    except struct.error as exc:
        raise NoiseFormatError(f"truncated header: {exc}", offset=4) from exc
    if version != UEDN_VERSION:
        raise NoiseFormatError(f"unsupported version {version}", offset=4)
    if scope_tag >= len(SCOPES):
        raise NoiseFormatError(f"unknown scope tag {scope_tag}", offset=6)
    pos = 4 + struct.calcsize("<HBI")
    deltas = []
    for _ in range(count):
        try:
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            nval = int(np.prod(shape, dtype=np.int64)) if rank else 1
            values = np.frombuffer(blob, dtype="<f8", count=nval, offset=pos)
            pos += 8 * nval
        except (struct.error, ValueError) as exc:
            raise NoiseFormatError(f"truncated delta: {exc}", offset=pos) from exc
        deltas.append(values.reshape(shape))
    try:
        (jlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        header = json.loads(blob[pos : pos + jlen].decode("utf-8"))
    except Exception as exc:
        raise NoiseFormatError(f"bad budget header: {exc}", offset=pos) from exc
    budget_keys = set(BudgetConfig().snapshot())
    budget = BudgetConfig(**{k: v for k, v in header.items() if k in budget_keys})
    extra = {k: v for k, v in header.items() if k not in budget_keys}
    return NoiseSet(SCOPES[scope_tag], np.stack(deltas), budget, extra=extra)
