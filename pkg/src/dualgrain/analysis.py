"""Representation similarity analysis between branches and sessions."""

import warnings

import numpy as np


def cka_similarity(x, y):
    """Linear centered kernel alignment between two representation matrices.

    Rows are the same samples through two encoders; columns may differ.
    Invariant to orthogonal transforms and isotropic scaling.  Returns NaN
    (with a warning) when either input has zero variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"row counts differ: {x.shape[0]} vs {y.shape[0]}")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    cross = np.linalg.norm(yc.T @ xc, "fro") ** 2
    norm_x = np.linalg.norm(xc.T @ xc, "fro")
    norm_y = np.linalg.norm(yc.T @ yc, "fro")
    if norm_x == 0.0 or norm_y == 0.0:
        warnings.warn("CKA undefined for zero-variance input; returning NaN", RuntimeWarning, stacklevel=2)
        return float("nan")
    return float(cross / (norm_x * norm_y))


def cka_matrix(named_representations):
    """Pairwise CKA over an ordered {label: matrix} dict; returns (labels, matrix)."""
    labels = list(named_representations)
    n = len(labels)
    out = np.ones((n, n))
    for i in range(n):
        for j in range(i, n):
            value = cka_similarity(named_representations[labels[i]], named_representations[labels[j]])
            out[i, j] = out[j, i] = value
    return labels, out


def mean_cross_session(matrix, indices):
    """Mean of the upper-triangle CKA values restricted to the given indices."""
    values = [matrix[i, j] for a, i in enumerate(indices) for j in indices[a + 1 :]]
    return float(np.mean(values)) if values else float("nan")
