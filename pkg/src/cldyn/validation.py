"""Input checks shared by the forecasters."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_sequences(X, min_len=2):
    """Coerce sequences to a finite float64 array of shape ``(N, T, D)``.

    Accepts an array of shape ``(N, T)`` or ``(N, T, D)``, a list of
    ``Sequence`` objects or plain arrays of equal shape, or a task data set
    (its training split is used).
    """
    if hasattr(X, "train") and not isinstance(X, np.ndarray):
        X = X.train
    if isinstance(X, (list, tuple)):
        if not X:
            raise ValueError("no sequences given")
        X = np.stack([np.asarray(getattr(s, "values", s), dtype=np.float64) for s in X])
    X = check_array(X, ensure_2d=True, allow_nd=True, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ValueError(f"expected sequences of shape (N, T, D), got {X.shape}")
    if X.shape[1] < min_len:
        raise ValueError(f"sequences need at least {min_len} time steps, got {X.shape[1]}")
    return X
