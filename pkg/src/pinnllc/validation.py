"""Input checking shared by the estimator classes."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

__all__ = ["check_xt", "check_fitted"]


def check_xt(X):
    """Coerce X to float64 (n, 2) and split into (x, t) columns."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("expected an (n, 2) array of (x, t) inputs, "
                         f"got shape {X.shape}")
    if X.shape[0] < 1:
        raise ValueError("need at least one input row")
    if not np.isfinite(X).all():
        raise ValueError("inputs must be finite")
    return X[:, 0].copy(), X[:, 1].copy()


def check_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first")
