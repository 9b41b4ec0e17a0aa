"""Input checks shared by the estimators and the functional API."""

import numpy as np
from sklearn.utils.validation import check_array


def check_windows(X, mileage=None, *, n_channels=None, min_samples=1):
    """Validate a stack of windows shaped ``(n_samples, T, D)`` and its mileage vector.

    Returns float64 copies. ``mileage`` may be omitted, in which case ``None``
    is returned in its place.
    """
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=min_samples)
    if X.ndim != 3:
        raise ValueError(f"expected windows shaped (n_samples, T, D), got {X.shape}")
    if n_channels is not None and X.shape[2] != n_channels:
        raise ValueError(f"expected {n_channels} channels, got {X.shape[2]}")
    if mileage is None:
        return X, None
    m = np.asarray(mileage, dtype=np.float64).reshape(-1)
    if m.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} windows but {m.shape[0]} mileage values")
    if not np.all(np.isfinite(m)):
        raise ValueError("mileage contains NaN or infinity")
    if np.any(m < 0):
        raise ValueError("mileage must be non-negative")
    return X, m


def check_labels(y, n):
    y = np.asarray(y).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"expected {n} labels, got {y.shape[0]}")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 (normal) or 1 (fault)")
    return y.astype(np.int64)
