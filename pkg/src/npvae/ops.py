"""Dense float64 matrix helpers with explicit shape discipline.

Matrices are plain 2-D numpy float64 arrays throughout the package;
these wrappers add the shape checks and the numerically careful kernels
the model depends on. Elementwise arithmetic, transposes, reductions and
stacking are used directly from numpy.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateBatchError, DimensionError


def as_matrix(a, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a shape check that names both operands."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"cannot multiply shapes {tuple(a.shape)} and {tuple(b.shape)}"
        )
    return a @ b


def pairwise_sqdist(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between all row pairs of x (n x d).

    Computed by direct subtraction, never via the expanded dot-product
    identity, so entries are exact squares: non-negative, symmetric,
    zero diagonal.
    """
    x = as_matrix(x, "x")
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def row_softmax_masked(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over off-diagonal entries; diagonal forced to zero.

    Each row is shifted by its off-diagonal maximum before
    exponentiation, so rows sum to one even when logits reach 1e6 or
    every distance underflows the naive exp.
    """
    logits = as_matrix(logits, "logits")
    n, m = logits.shape
    if n != m:
        raise DimensionError(f"logits must be square, got shape {(n, m)}")
    if n < 2:
        raise DegenerateBatchError(
            f"masked row softmax needs at least 2 rows, got {n}"
        )
    shifted = logits.copy()
    np.fill_diagonal(shifted, -np.inf)
    rowmax = shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted - rowmax)  # diagonal: exp(-inf) == 0 exactly
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function; output in (0, 1)."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
