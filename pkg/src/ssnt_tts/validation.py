"""Input checks for the estimator API (sequence-of-sequences inputs)."""

from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np
from sklearn.utils.validation import check_array


def check_symbol_sequences(X, vocab_size: Optional[int] = None) -> List[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 1 and X.dtype != object:
        raise ValueError("X must be a sequence of symbol sequences, got a flat array; wrap it in a list")
    out = []
    for n, seq in enumerate(X):
        arr = np.asarray(seq)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError(f"X[{n}] must be a non-empty 1-D symbol sequence")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.mod(arr, 1) == 0):
                raise ValueError(f"X[{n}] contains non-integer symbol ids")
        arr = arr.astype(np.int64)
        if arr.min() < 0:
            raise ValueError(f"X[{n}] contains negative symbol ids")
        if vocab_size is not None and arr.max() >= vocab_size:
            pos = int(np.argmax(arr >= vocab_size))
            raise ValueError(f"X[{n}] position {pos}: symbol id {int(arr[pos])} is outside the vocabulary (< {vocab_size})")
        out.append(arr)
    if not out:
        raise ValueError("X is empty")
    return out


def check_feature_sequences(Y, n_features: Optional[int] = None) -> List[np.ndarray]:
    out = []
    for n, m in enumerate(Y):
        arr = check_array(m, dtype=np.float64, ensure_2d=True, input_name=f"y[{n}]")
        if n_features is not None and arr.shape[1] != n_features:
            raise ValueError(f"y[{n}] has {arr.shape[1]} features, expected {n_features}")
        out.append(arr)
    if not out:
        raise ValueError("y is empty")
    dims = {a.shape[1] for a in out}
    if len(dims) != 1:
        raise ValueError(f"all feature sequences must share one dimension, got {sorted(dims)}")
    return out


def check_paired(X, Y, vocab_size: Optional[int] = None, n_features: Optional[int] = None):
    Xs = check_symbol_sequences(X, vocab_size)
    Ys = check_feature_sequences(Y, n_features)
    if len(Xs) != len(Ys):
        raise ValueError(f"X and y have different lengths ({len(Xs)} vs {len(Ys)})")
    return Xs, Ys
