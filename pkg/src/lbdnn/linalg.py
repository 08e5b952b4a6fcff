"""Dense real matrix/vector kernels: vectorization, Kronecker, trace, right
pseudo-inverse, and the norms used by the stability certificate.

All routines operate on plain ``numpy`` arrays in 64-bit floats.  ``vec`` uses
column-major (column-stacking) order throughout the package; the weight
flattening in :mod:`lbdnn.dnn` and the gradient layout depend on it.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "RankDeficiencyError",
    "vec",
    "unvec",
    "kron",
    "trace",
    "pinv_right",
    "frobenius_norm",
    "inf_norm",
]

# Relative eigenvalue cutoff below which A A^T is treated as singular.
RANK_RTOL = 1e-12


class RankDeficiencyError(ValueError):
    """Raised when a matrix required to have full row rank does not."""


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    return a


def vec(a) -> np.ndarray:
    """Column-stacking vectorization: [a11, ..., an1, a12, ..., anm]."""
    return _as_matrix(a).flatten(order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec` for a ``rows x cols`` matrix."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != rows * cols:
        raise ValueError(f"cannot reshape {v.shape} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def kron(a, b) -> np.ndarray:
    """Kronecker product A (x) B."""
    return np.kron(_as_matrix(a), _as_matrix(b))


def trace(a) -> float:
    """Sum of diagonal entries; rejects non-square input."""
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"trace requires a square matrix, got {a.shape}")
    return float(np.trace(a))


def pinv_right(a, rtol: float = RANK_RTOL) -> np.ndarray:
    """Right pseudo-inverse A^T (A A^T)^-1 of a full-row-rank matrix.

    Raises
    ------
    RankDeficiencyError
        If the smallest eigenvalue of ``A A^T`` is below ``rtol`` times the
        largest, i.e. the matrix is numerically rank deficient.
    """
    a = _as_matrix(a)
    gram = a @ a.T
    w = np.linalg.eigvalsh(gram)
    if w[0] < rtol * max(w[-1], 0.0) or w[-1] <= 0.0:
        raise RankDeficiencyError(
            f"matrix of shape {a.shape} is not full row rank "
            f"(eig range [{w[0]:.3e}, {w[-1]:.3e}])"
        )
    return np.linalg.solve(gram, a).T


def frobenius_norm(a) -> float:
    """Frobenius norm, equal to the 2-norm of vec(A)."""
    return float(np.linalg.norm(_as_matrix(a)))


def inf_norm(a) -> float:
    """Induced infinity norm: maximum absolute row sum."""
    a = _as_matrix(a)
    return float(np.max(np.sum(np.abs(a), axis=1)))
