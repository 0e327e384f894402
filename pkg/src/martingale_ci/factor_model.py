"""Common-factor estimation by principal components.

The factor count is chosen by minimizing an information criterion over
k = 1..k_max, and the factor matrix is rescaled so that F^T F / n equals the
identity. With that normalization the least-squares loadings for a given k
are Lambda = X^T F / n and the residual sum of squares V(k) is the tail sum
of squared singular values of X, which is how it is computed here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericInputError(ValueError):
    """Raised when an input matrix contains non-finite entries."""


class DecompositionError(RuntimeError):
    """Raised when the underlying eigensolver fails to converge."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a projection target is rank deficient."""


@dataclass
class FactorEstimate:
    """Estimated factor count and rescaled factor matrix.

    ``ic_values[k-1]`` and ``v_values[k-1]`` hold IC(k) and V(k) for
    k = 1..k_max; ``k_hat`` is the IC argmin (smallest k on ties).
    """

    k_hat: int
    F_hat: np.ndarray
    ic_values: np.ndarray
    v_values: np.ndarray


def estimate_factors(X: np.ndarray, k_max: int) -> FactorEstimate:
    """Estimate the number of factors and the rescaled factor matrix.

    For each k the factors are sqrt(n) times the top-k left singular
    vectors of X (equivalently: X Lambda / p with Lambda built from the
    leading eigenvectors of X^T X, rescaled to F^T F / n = I), and

        V(k)  = min_Lambda ||X - F^k Lambda^T||_F^2
        IC(k) = log V(k) + k ((n+p)/(np)) log(np/(n+p))
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise NumericInputError("X must be a 2-d array")
    n, p = X.shape
    if not np.all(np.isfinite(X)):
        raise NumericInputError("X contains non-finite entries")
    if not 1 <= k_max <= min(n, p):
        raise ValueError(f"k_max must be in [1, min(n, p)]={min(n, p)}, got {k_max}")

    try:
        U, s, _ = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("SVD of the design matrix failed") from exc

    sq = s**2
    total = sq.sum()
    # V(k) = sum of squared singular values beyond the first k.
    v_values = total - np.cumsum(sq[:k_max])
    # Guard tiny negative round-off from the subtraction.
    v_values = np.maximum(v_values, 0.0)

    penalty = (n + p) / (n * p) * np.log(n * p / (n + p))
    ks = np.arange(1, k_max + 1)
    with np.errstate(divide="ignore"):
        ic_values = np.log(v_values) + ks * penalty

    k_hat = int(np.argmin(ic_values)) + 1
    F_hat = np.sqrt(n) * U[:, :k_hat]
    return FactorEstimate(k_hat=k_hat, F_hat=F_hat, ic_values=ic_values,
                          v_values=v_values)


def complement_projection(F_hat: np.ndarray | None, A: np.ndarray) -> np.ndarray:
    """Project A onto the orthogonal complement of the columns of F_hat.

    Returns (I - F (F^T F)^{-1} F^T) A. An empty (or None) F_hat means no
    factors: A is returned unchanged. Raises SingularMatrixError if F_hat
    is rank deficient.
    """
    A = np.asarray(A, dtype=float)
    if F_hat is None:
        return A.copy()
    F_hat = np.asarray(F_hat, dtype=float)
    if F_hat.ndim != 2 or F_hat.shape[1] == 0:
        return A.copy()
    if F_hat.shape[0] != A.shape[0]:
        raise ValueError("F_hat and A must have the same number of rows")

    Q, R = np.linalg.qr(F_hat)
    diag = np.abs(np.diag(R))
    if diag.min() <= diag.max() * np.finfo(float).eps * max(F_hat.shape):
        raise SingularMatrixError("F_hat is rank deficient")
    # Two projection passes keep the result orthogonal to F_hat at the
    # 1e-10 level even for ill-scaled inputs.
    out = A - Q @ (Q.T @ A)
    out -= Q @ (Q.T @ out)
    return out
