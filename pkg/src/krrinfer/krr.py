"""Kernel ridge regression: fitting, prediction and leave-one-out selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import MaternKernel, MultiIndex
from .linalg import SpdFactor, factor

__all__ = [
    "DEFAULT_PHI_GRID",
    "DEFAULT_LAMBDA_MULTIPLIERS",
    "Dataset",
    "DegenerateLeverage",
    "KrrFit",
    "fit",
    "predict",
    "predict_deriv",
    "loocv_score",
    "CvTable",
    "cv_table",
    "cv_scores",
    "select_hyperparams",
]

DEFAULT_PHI_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)
DEFAULT_LAMBDA_MULTIPLIERS = (0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0)

_LEVERAGE_FLOOR = 1e-12


class DegenerateLeverage(ArithmeticError):
    """Some ``1 - H_ii`` fell to ~0, i.e. the smoother interpolates."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has shape {X.shape} but Y has length {Y.shape[0]}")
        if X.shape[0] < 1:
            raise ValueError("dataset is empty")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset has non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def with_response(self, Y: np.ndarray) -> "Dataset":
        return Dataset(self.X, Y)


@dataclass(frozen=True)
class KrrFit:
    """A fitted KRR model ``f_hat(x) = K(x, X) (K + lambda n I)^{-1} Y``."""

    dataset: Dataset
    kernel: MaternKernel
    lam: float
    gram: np.ndarray = field(repr=False)
    factor: SpdFactor = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    sigma_hat_sq: float

    @property
    def X(self) -> np.ndarray:
        return self.dataset.X

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def ridge(self) -> float:
        """The diagonal shift ``lambda * n``."""
        return self.lam * self.dataset.n

    def fitted(self) -> np.ndarray:
        return self.gram @ self.alpha

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.kernel.matrix(x, self.X) @ self.alpha

    def predict_deriv(self, alpha: MultiIndex | Sequence[int], x: np.ndarray) -> np.ndarray:
        return self.kernel.deriv_matrix(alpha, x, self.X) @ self.alpha

    def gradient(self, x: np.ndarray) -> np.ndarray:
        d = self.kernel.dim
        return np.array([self.predict_deriv(MultiIndex.unit(i, d), x)[0] for i in range(d)])

    def hessian(self, x: np.ndarray) -> np.ndarray:
        d = self.kernel.dim
        H = np.empty((d, d))
        for i in range(d):
            for j in range(i, d):
                H[i, j] = H[j, i] = self.predict_deriv(MultiIndex.unit(i, d) + MultiIndex.unit(j, d), x)[0]
        return H


def fit(dataset: Dataset, kernel: MaternKernel, lam: float) -> KrrFit:
    """Solve ``(K + lambda n I) alpha = Y`` and store ``sigma_hat^2 = mean(residual^2)``."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if kernel.dim != dataset.d:
        raise ValueError(f"kernel dimension {kernel.dim} does not match data dimension {dataset.d}")
    n = dataset.n
    K = kernel.gram(dataset.X)
    f = factor(K + lam * n * np.eye(n))
    alpha = f.solve(dataset.Y)
    # Y - K alpha = lambda n alpha exactly
    resid = lam * n * alpha
    return KrrFit(
        dataset=dataset,
        kernel=kernel,
        lam=float(lam),
        gram=K,
        factor=f,
        alpha=alpha,
        sigma_hat_sq=float(resid @ resid / n),
    )


def predict(fit: KrrFit, x) -> float:
    return float(fit.predict(np.atleast_2d(np.asarray(x, dtype=float)).reshape(1, -1))[0])


def predict_deriv(fit: KrrFit, alpha, x) -> float:
    return float(fit.predict_deriv(alpha, np.asarray(x, dtype=float).reshape(1, -1))[0])


def loocv_score(dataset: Dataset, kernel: MaternKernel, lam: float) -> float:
    """Closed-form leave-one-out squared error.

    With ``A = K + lambda n I`` the leave-one-out residual of point ``i`` is
    ``(A^{-1} Y)_i / (A^{-1})_ii``, the same as ``(y_i - f_hat(x_i)) / (1 - H_ii)``
    for the smoother ``H = K A^{-1}``.
    """
    f = fit(dataset, kernel, lam)
    inv_diag = np.diag(f.factor.inverse())
    leverage_gap = f.ridge * inv_diag
    if np.any(leverage_gap <= _LEVERAGE_FLOOR):
        raise DegenerateLeverage(f"1 - H_ii <= {_LEVERAGE_FLOOR} at lambda={lam}")
    loo = f.alpha / inv_diag
    return float(np.mean(loo * loo))


@dataclass(frozen=True)
class CvTable:
    """Leave-one-out results over a ``phi x lambda-multiplier`` grid.

    ``score`` is the mean squared LOO residual, ``se`` its standard error
    ``std(loo^2)/sqrt(n)`` and ``dof`` the effective degrees of freedom
    ``tr(H)``. Degenerate candidates carry ``inf`` scores.
    """

    phi_grid: tuple[float, ...]
    multipliers: tuple[float, ...]
    n: int
    score: np.ndarray
    se: np.ndarray
    dof: np.ndarray

    def choose(self, rule: str = "min") -> tuple[float, float]:
        """Return ``(phi, lambda)``.

        ``"min"`` takes the smallest score; ``"1se"`` takes the candidate with
        the fewest effective degrees of freedom whose score is within one
        standard error of the smallest. Ties go to the smaller ``lambda``, then
        the smaller ``phi``.
        """
        finite = np.isfinite(self.score)
        if not finite.any():
            raise DegenerateLeverage("every hyperparameter candidate has degenerate leverage")
        idx = [(a, b) for a in range(len(self.phi_grid)) for b in range(len(self.multipliers)) if finite[a, b]]
        best = min(idx, key=lambda ab: (self.score[ab], self.multipliers[ab[1]], self.phi_grid[ab[0]]))
        if rule == "min":
            a, b = best
        elif rule == "1se":
            cutoff = self.score[best] + self.se[best]
            ok = [ab for ab in idx if self.score[ab] <= cutoff]
            a, b = min(ok, key=lambda ab: (self.dof[ab], self.multipliers[ab[1]], self.phi_grid[ab[0]]))
        else:
            raise ValueError(f"unknown selection rule {rule!r}")
        return self.phi_grid[a], self.multipliers[b] / self.n


def cv_table(
    dataset: Dataset,
    phi_grid: Sequence[float] = DEFAULT_PHI_GRID,
    lambda_multipliers: Sequence[float] = DEFAULT_LAMBDA_MULTIPLIERS,
    nu: float = 3.0,
) -> CvTable:
    """Closed-form LOO over the grid with one eigendecomposition per ``phi``.

    With ``K = U diag(s) U^T`` and ``ln = lambda n`` the residual is
    ``U diag(ln/(s+ln)) U^T Y`` and ``1 - H_ii = sum_j U_ij^2 ln/(s_j+ln)``,
    so every ``lambda`` costs only ``O(n^2)``.
    """
    n = dataset.n
    shape = (len(phi_grid), len(lambda_multipliers))
    score, se, dof = np.full(shape, np.inf), np.full(shape, np.inf), np.full(shape, np.nan)
    for a, phi in enumerate(phi_grid):
        kernel = MaternKernel(nu, phi, dataset.d)
        s, U = np.linalg.eigh(kernel.gram(dataset.X))
        UtY = U.T @ dataset.Y
        U2 = U * U
        for b, c in enumerate(lambda_multipliers):
            ln = float(c)
            shrink = ln / (s + ln)
            dof[a, b] = float(np.sum(1.0 - shrink))
            gap = U2 @ shrink
            if np.any(gap <= _LEVERAGE_FLOOR):
                continue
            loo_sq = (U @ (shrink * UtY) / gap) ** 2
            score[a, b] = float(loo_sq.mean())
            se[a, b] = float(loo_sq.std() / math.sqrt(n))
    return CvTable(tuple(map(float, phi_grid)), tuple(map(float, lambda_multipliers)), n, score, se, dof)


def cv_scores(
    dataset: Dataset,
    phi_grid: Sequence[float] = DEFAULT_PHI_GRID,
    lambda_multipliers: Sequence[float] = DEFAULT_LAMBDA_MULTIPLIERS,
    nu: float = 3.0,
) -> np.ndarray:
    """LOO scores, shape ``(len(phi_grid), len(lambda_multipliers))``."""
    return cv_table(dataset, phi_grid, lambda_multipliers, nu).score


def select_hyperparams(
    dataset: Dataset,
    phi_grid: Sequence[float] = DEFAULT_PHI_GRID,
    lambda_multipliers: Sequence[float] = DEFAULT_LAMBDA_MULTIPLIERS,
    nu: float = 3.0,
    rule: str = "min",
) -> tuple[MaternKernel, float]:
    """Pick ``(phi, lambda = c/n)`` by leave-one-out cross-validation.

    The default rule minimizes the LOO score; see :meth:`CvTable.choose`.
    """
    if not len(phi_grid) or not len(lambda_multipliers):
        raise ValueError("hyperparameter grids must be non-empty")
    phi, lam = cv_table(dataset, phi_grid, lambda_multipliers, nu).choose(rule)
    return MaternKernel(nu, phi, dataset.d), lam
