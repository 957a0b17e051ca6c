"""Dense Cholesky factorization of the regularized Gram matrix.

No jitter is ever added: ``K + lambda*n*I`` is already regularized and a
failed factorization is reported, not hidden.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

__all__ = ["NotPositiveDefinite", "SpdFactor", "factor", "solve", "quad_form_inv_sq"]


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Cholesky pivot was not positive."""


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor ``L`` with ``A = L L^T``."""

    L: np.ndarray = field(repr=False)
    scale: float

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def _check(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"right-hand side has length {b.shape[0]}, factor has order {self.n}")
        return b

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``A^{-1} b`` for a vector or a matrix of right-hand sides."""
        return cho_solve((self.L, True), self._check(b), check_finite=False)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """``L^{-1} b``."""
        return solve_triangular(self.L, self._check(b), lower=True, check_finite=False)

    def quad_form_inv_sq(self, w: np.ndarray) -> float | np.ndarray:
        """``w^T A^{-2} w`` computed as ``||A^{-1} w||^2``.

        For a matrix ``W`` the column-wise values are returned.
        """
        v = self.solve(w)
        return float(v @ v) if v.ndim == 1 else np.einsum("ij,ij->j", v, v)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))

    def reconstruct(self) -> np.ndarray:
        return self.L @ self.L.T


def factor(A: np.ndarray) -> SpdFactor:
    """Cholesky-factor a symmetric positive-definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is not positive, which for ``K + lambda*n*I`` means
        ``lambda <= 0`` or a corrupted matrix.
    ValueError
        If ``A`` is not square or not symmetric to ``1e-12`` relative.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = float(np.max(np.abs(np.diag(A)))) if A.size else 0.0
    if A.size and np.max(np.abs(A - A.T)) > 1e-12 * max(scale, np.max(np.abs(A))):
        raise ValueError("matrix is not symmetric")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    try:
        L = cholesky(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    if np.any(np.diag(L) <= 0):
        raise NotPositiveDefinite("non-positive Cholesky pivot")
    return SpdFactor(L=L, scale=scale)


def solve(f: SpdFactor, b: np.ndarray) -> np.ndarray:
    return f.solve(b)


def quad_form_inv_sq(f: SpdFactor, w: np.ndarray) -> float:
    return f.quad_form_inv_sq(w)
