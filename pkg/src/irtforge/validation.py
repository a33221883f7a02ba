"""Input coercion for the estimator classes."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .dataio import ResponseMatrix


def check_responses(X, item_ids=None, respondent_ids=None, sources=None) -> ResponseMatrix:
    """Coerce ``X`` to a validated :class:`ResponseMatrix`.

    ``X`` may already be a ResponseMatrix (returned unchanged), a pandas
    DataFrame (column names become item ids) or any 2-D array-like holding
    0, 1 and NaN.
    """
    if isinstance(X, ResponseMatrix):
        return X
    if item_ids is None and hasattr(X, "columns"):
        item_ids = [str(c) for c in X.columns]
    arr = check_array(X, dtype=float, ensure_all_finite="allow-nan")
    n, k = arr.shape
    if item_ids is None:
        item_ids = [f"q{j + 1}" for j in range(k)]
    if respondent_ids is None:
        respondent_ids = [f"r{i + 1}" for i in range(n)]
    if sources is None:
        sources = ["unknown"] * n
    return ResponseMatrix(respondent_ids, sources, item_ids, arr)


def check_same_items(matrix: ResponseMatrix, item_ids) -> ResponseMatrix:
    """Reorder ``matrix`` columns to ``item_ids``; any unknown column is an error."""
    unknown = [i for i in matrix.item_ids if i not in set(item_ids)]
    if unknown:
        raise ValueError(f"unknown items: {', '.join(unknown)}")
    if tuple(matrix.item_ids) == tuple(item_ids):
        return matrix
    return matrix.reorder_items(list(item_ids))


def as_float_array(values, name="values") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr
