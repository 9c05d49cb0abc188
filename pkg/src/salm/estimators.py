"""Scikit-learn style wrappers around the functional core.

The crafters are transformers: fit(X, y) learns a perturbation for the
training set, transform(X) returns the protected copy. The classifier is a
standard fit/predict estimator. All of them expose get_params/set_params,
so they compose with pipelines, grid search, and cloning.

Per-sample noise is tied to the samples it was fitted on, so those crafters
(like other fit-to-the-batch transformers) only transform arrays with the
fitted sample count; per-class noise applies to any batch with labels.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from . import baselines, crafting
from .data import LabeledDataset
from .models import ModelSpec, TrainConfig, build_model, evaluate, predict, train
from .validation import check_fitted, check_image_array, check_labels


def _dataset(X: np.ndarray, y: np.ndarray, n_classes: int | None) -> LabeledDataset:
    k = int(n_classes) if n_classes else int(y.max()) + 1
    return LabeledDataset(X, y, n_classes=k)


class _BaseCrafter(BaseEstimator, TransformerMixin):
    """Shared fit/transform plumbing; subclasses implement _craft."""

    def _budget(self, k_percent: float) -> crafting.BudgetConfig:
        return crafting.BudgetConfig(
            rho=self.rho,
            alpha=self.alpha,
            k_percent=k_percent,
            pgd_steps=self.pgd_steps,
            steps=self.steps,
            grad_samples=self.grad_samples,
            transform=self.transform_kind,
            seed=self.seed,
            scope=self.scope,
        )

    def _train_cfg(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed)

    def _spec(self, data: LabeledDataset) -> ModelSpec:
        c, h, w = data.image_shape
        return ModelSpec(
            arch=self.arch,
            in_channels=c,
            input_hw=(h, w),
            n_classes=data.n_classes,
            seed=self.seed,
        )

    def fit(self, X, y):
        X = check_image_array(X)
        y = check_labels(y, len(X))
        data = _dataset(X, y, self.n_classes)
        self.noise_set_ = self._craft(data)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X, y=None):
        check_fitted(self, "noise_set_")
        X = check_image_array(X)
        noise = self.noise_set_
        if noise.scope == crafting.SCOPE_PER_SAMPLE:
            if len(X) != len(noise):
                raise ValueError(
                    f"per-sample noise was fitted on {len(noise)} samples, got {len(X)}"
                )
            return np.clip(X + noise.deltas, 0.0, 1.0)
        if y is None:
            raise ValueError("per-class noise needs labels to pick each sample's delta")
        labels = check_labels(y, len(X))
        data = LabeledDataset(X, labels, n_classes=len(noise))
        return crafting.apply_noise(data, noise).images

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X, y)
        return self.transform(X, y)

    def _craft(self, data: LabeledDataset) -> crafting.NoiseSet:
        raise NotImplementedError


class SparseMaskCrafter(_BaseCrafter):
    """Sparsity-aware error-minimizing noise (the headline method)."""

    def __init__(
        self,
        k_percent: float = 10.0,
        rho: float = 8.0 / 255.0,
        alpha: float | None = None,
        steps: int = 500,
        pgd_steps: int = 1,
        grad_samples: int = 1,
        transform_kind: str = crafting.TRANSFORM_IDENTITY,
        scope: str = crafting.SCOPE_PER_SAMPLE,
        arch: str = "small_convnet",
        epochs: int = 30,
        batch_size: int = 64,
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.k_percent = k_percent
        self.rho = rho
        self.alpha = alpha
        self.steps = steps
        self.pgd_steps = pgd_steps
        self.grad_samples = grad_samples
        self.transform_kind = transform_kind
        self.scope = scope
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_classes = n_classes
        self.seed = seed

    def _craft(self, data):
        return crafting.craft_salm(
            data, self._spec(data), self._budget(self.k_percent), self._train_cfg()
        )


class ErrorMinimizingCrafter(_BaseCrafter):
    """Unmasked error-minimizing noise (the k=100 special case)."""

    def __init__(
        self,
        rho: float = 8.0 / 255.0,
        alpha: float | None = None,
        steps: int = 500,
        pgd_steps: int = 1,
        grad_samples: int = 1,
        transform_kind: str = crafting.TRANSFORM_IDENTITY,
        scope: str = crafting.SCOPE_PER_SAMPLE,
        arch: str = "small_convnet",
        epochs: int = 30,
        batch_size: int = 64,
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.rho = rho
        self.alpha = alpha
        self.steps = steps
        self.pgd_steps = pgd_steps
        self.grad_samples = grad_samples
        self.transform_kind = transform_kind
        self.scope = scope
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_classes = n_classes
        self.seed = seed

    def _craft(self, data):
        return baselines.craft_em(
            data, self._spec(data), self._budget(100.0), self._train_cfg()
        )


class TargetedPoisonCrafter(_BaseCrafter):
    """Targeted adversarial poisoning; fit trains the frozen source model first."""

    def __init__(
        self,
        shift: int = 1,
        rho: float = 8.0 / 255.0,
        alpha: float | None = None,
        pgd_steps: int = 20,
        arch: str = "small_convnet",
        epochs: int = 30,
        batch_size: int = 64,
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.shift = shift
        self.rho = rho
        self.alpha = alpha
        self.pgd_steps = pgd_steps
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_classes = n_classes
        self.seed = seed
        self.steps = 1
        self.grad_samples = 1
        self.transform_kind = crafting.TRANSFORM_IDENTITY
        self.scope = crafting.SCOPE_PER_SAMPLE

    def _craft(self, data):
        source, _ = train(build_model(self._spec(data)), data, self._train_cfg())
        return baselines.craft_tap(data, source, self._budget(100.0), shift=self.shift)


class SyntheticPatternCrafter(_BaseCrafter):
    """Model-free per-class block patterns."""

    def __init__(
        self,
        block: int = 4,
        rho: float = 8.0 / 255.0,
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.block = block
        self.rho = rho
        self.n_classes = n_classes
        self.seed = seed
        self.alpha = None
        self.steps = 1
        self.pgd_steps = 1
        self.grad_samples = 1
        self.transform_kind = crafting.TRANSFORM_IDENTITY
        self.scope = crafting.SCOPE_PER_CLASS
        self.arch = "small_convnet"
        self.epochs = 1
        self.batch_size = 64

    def _craft(self, data):
        return baselines.craft_sp(data, self._budget(100.0), block=self.block)


class ConvNetClassifier(BaseEstimator, ClassifierMixin):
    """Small convnet / MLP victim model with the standard estimator surface."""

    def __init__(
        self,
        arch: str = "small_convnet",
        epochs: int = 30,
        batch_size: int = 64,
        lr0: float = 0.1,
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.n_classes = n_classes
        self.seed = seed

    def fit(self, X, y):
        X = check_image_array(X)
        y = check_labels(y, len(X))
        data = _dataset(X, y, self.n_classes)
        spec = ModelSpec(
            arch=self.arch,
            in_channels=data.image_shape[0],
            input_hw=data.image_shape[1:],
            n_classes=data.n_classes,
            seed=self.seed,
        )
        cfg = TrainConfig(
            lr0=self.lr0, epochs=self.epochs, batch_size=self.batch_size, seed=self.seed
        )
        self.model_, self.curve_ = train(build_model(spec), data, cfg)
        self.classes_ = np.arange(data.n_classes)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X):
        check_fitted(self, "model_")
        return predict(self.model_, check_image_array(X))

    def score(self, X, y):
        check_fitted(self, "model_")
        X = check_image_array(X)
        y = check_labels(y, len(X))
        return evaluate(self.model_, _dataset(X, y, len(self.classes_)))
