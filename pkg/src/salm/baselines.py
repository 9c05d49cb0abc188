"""Comparison noise crafters: error-minimizing, targeted adversarial, synthetic.

EM is the unmasked special case of the sparsity-aware crafter (k=100), reused
bit-for-bit so the two stay comparable under one termination rule. TAP runs
targeted PGD against a frozen pretrained model, pushing each sample toward a
shifted label. SP is model-free: a fixed blockwise +/-rho pattern per class,
linearly separable by construction.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import tensor as T
from .crafting import (
    SCOPE_PER_CLASS,
    SCOPE_PER_SAMPLE,
    BudgetConfig,
    NoiseSet,
    craft_salm,
    pgd_update,
)
from .data import LabeledDataset
from .models import ModelSpec, TrainConfig, TrainedModel, evaluate, forward_net


def craft_em(
    train: LabeledDataset, spec: ModelSpec, budget: BudgetConfig, train_cfg: TrainConfig
) -> NoiseSet:
    """Error-minimizing noise: the k=100 (unmasked) generator loop."""
    return craft_salm(train, spec, replace(budget, k_percent=100.0), train_cfg)


def craft_tap(
    train: LabeledDataset,
    pretrained: TrainedModel,
    budget: BudgetConfig,
    shift: int = 1,
) -> NoiseSet:
    """Targeted adversarial poisoning against a frozen pretrained model.

    Each sample is pushed toward label (y + shift) mod n_classes with
    budget.pgd_steps signed steps under the l-inf budget; no sparsity mask.
    The pretrained model must actually fit its training data (train accuracy
    >= 60%), otherwise the attack is meaningless and is rejected.
    """
    n_classes = pretrained.spec.n_classes
    if shift % n_classes == 0:
        raise ValueError(f"target shift {shift} maps every label to itself")
    train_acc = evaluate(pretrained, train)
    if train_acc < 0.60:
        raise ValueError(
            f"pretrained model fits training data at {train_acc:.1%}; "
            "craft_tap needs an actually-trained model (>= 60%)"
        )
    targets = (train.labels + shift) % n_classes
    deltas = np.zeros_like(train.images)
    batch = 256
    for start in range(0, len(train), batch):
        sl = slice(start, start + batch)
        x0 = train.images[sl]
        d = deltas[sl]
        for _ in range(budget.pgd_steps):
            xt = T.Tensor(x0 + d)
            logits = forward_net(pretrained, xt)
            loss, _ = T.softmax_cross_entropy(logits, targets[sl])
            T.backward(loss)
            d = pgd_update(d, xt.grad, budget)
        deltas[sl] = d
    return NoiseSet(
        SCOPE_PER_SAMPLE, deltas, budget, extra={"method": "tap", "shift": shift}
    )


def craft_sp(train: LabeledDataset, budget: BudgetConfig, block: int = 4) -> NoiseSet:
    """Synthetic per-class perturbations: block-constant +/-rho patterns.

    Each class gets its own seeded pattern (sub-seed = budget.seed XOR class)
    of block x block constant patches, values drawn uniformly from
    {-rho, +rho}. Model-free and independent of pixel values.
    """
    if block < 1:
        raise ValueError(f"block size must be >= 1, got {block}")
    c, h, w = train.image_shape
    nbh, nbw = -(-h // block), -(-w // block)
    deltas = np.empty((train.n_classes, c, h, w))
    for cls in range(train.n_classes):
        rng = np.random.default_rng(budget.seed ^ cls)
        signs = rng.integers(0, 2, size=(c, nbh, nbw)) * 2.0 - 1.0
        pattern = np.repeat(np.repeat(signs, block, axis=1), block, axis=2)
        deltas[cls] = budget.rho * pattern[:, :h, :w]
    return NoiseSet(
        SCOPE_PER_CLASS, deltas, budget, extra={"method": "sp", "block": block}
    )
