"""Input validation helpers shared by the estimator API."""

from __future__ import annotations

import numpy as np


def check_image_array(X, *, name: str = "X") -> np.ndarray:
    """Coerce to a float64 (N, C, H, W) image batch in [0, 1].

    2-d input is rejected: image geometry matters to every algorithm here,
    so callers must pass explicit channel/height/width axes (a single image
    may be passed as (C, H, W)).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"{name} must be (N, C, H, W) images, got shape {X.shape}")
    if X.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} pixels must lie in [0, 1], got [{X.min()}, {X.max()}]")
    return X


def check_labels(y, n_samples: int, *, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"{name} must be 1-d with {n_samples} entries, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(y)
        if not np.array_equal(rounded, y):
            raise ValueError(f"{name} must hold integer class labels")
        y = rounded
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError(f"{name} contains negative labels")
    return y


def check_fitted(estimator, attribute: str) -> None:
    if getattr(estimator, attribute, None) is None:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
