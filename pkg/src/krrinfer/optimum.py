"""Plug-in estimation of the minimizer of the regression function.

``x_hat = argmin f_hat`` is located by a dense grid scan followed by damped
Newton steps. Its uncertainty comes from linearizing the first-order
condition around the true minimizer, which gives the sandwich

    S = H_hat^{-1} COV_hat H_hat^{-1},

with ``H_hat`` the Hessian of ``f_hat`` at ``x_hat`` and ``COV_hat`` the
estimated covariance of the gradient estimate there.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .functionals import DerivEval, bind, cov_matrix
from .kernels import MultiIndex
from .krr import KrrFit
from .stats import z_upper

__all__ = [
    "SingularHessian",
    "OptimumResult",
    "find_min",
    "hessian_hat",
    "optimum_cov",
    "optimum_ci",
    "standardized_optimum_stat",
    "estimate_optimum",
    "default_grid_per_axis",
]

_MAX_HALVINGS = 20


class SingularHessian(ArithmeticError):
    """The Hessian at the estimated optimum is numerically singular."""


def default_grid_per_axis(d: int) -> int:
    return 512 if d == 1 else 64


@dataclass(frozen=True)
class OptimumResult:
    x_min_hat: np.ndarray
    f_min_hat: float
    hessian_hat: np.ndarray = field(repr=False)
    cov_hat: np.ndarray = field(repr=False)
    n_grid: int
    newton_iters: int
    refined: bool = True

    def ci(self, level: float = 0.95) -> np.ndarray:
        """Per-coordinate intervals as a ``d x 2`` array."""
        return optimum_ci(self.hessian_hat, self.cov_hat, self.x_min_hat, level)


def _box(box, d: int) -> np.ndarray:
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape != (d, 2) or not np.all(np.isfinite(box)) or np.any(box[:, 0] >= box[:, 1]):
        raise ValueError(f"search box must be a finite {d} x 2 array with lo < hi, got {box.tolist()}")
    return box


def find_min(
    fit: KrrFit, box, grid_per_axis: int | None = None, newton_iters: int = 20
) -> tuple[np.ndarray, float, bool]:
    """Global minimizer of ``f_hat`` over ``box``.

    Returns ``(x, f_hat(x), refined)``; ``refined`` is False when the Newton
    stage was skipped because the Hessian at the best grid point is singular
    or not positive definite.
    """
    d = fit.kernel.dim
    box = _box(box, d)
    m = default_grid_per_axis(d) if grid_per_axis is None else grid_per_axis
    if m < 16:
        raise ValueError("grid_per_axis must be at least 16")
    axes = [np.linspace(lo, hi, m) for lo, hi in box]
    # itertools.product walks the grid in lexicographic order
    grid = np.array(list(itertools.product(*axes)))
    values = fit.predict(grid)
    # argmin returns the first minimum, i.e. the lexicographically smallest point
    k = int(np.argmin(values))
    x = grid[k].copy()
    fx = float(values[k])

    refined = True
    H = fit.hessian(x.reshape(1, -1))
    eig = np.linalg.eigvalsh(H)
    if not (eig.min() > 1e-10 * max(abs(eig).max(), 1e-300)):
        return x, fx, False

    for _ in range(newton_iters):
        g = fit.gradient(x.reshape(1, -1))
        H = fit.hessian(x.reshape(1, -1))
        eig = np.linalg.eigvalsh(H)
        if not (eig.min() > 1e-10 * max(abs(eig).max(), 1e-300)):
            break
        step = np.linalg.solve(H, g)
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) == 0.0:
            break
        t = 1.0
        for _ in range(_MAX_HALVINGS):
            cand = np.clip(x - t * step, box[:, 0], box[:, 1])
            fc = float(fit.predict(cand.reshape(1, -1))[0])
            if fc <= fx:
                break
            t *= 0.5
        else:
            break
        moved = np.max(np.abs(cand - x))
        x, fx = cand, fc
        if moved <= 1e-14 * max(1.0, np.max(np.abs(x))):
            break
    return x, fx, refined


def hessian_hat(fit: KrrFit, x) -> np.ndarray:
    """Hessian of ``f_hat`` at ``x``, symmetric by construction."""
    H = fit.hessian(np.asarray(x, dtype=float).reshape(1, -1))
    return 0.5 * (H + H.T)


def optimum_cov(fit: KrrFit, x, sigma_sq: float | None = None) -> np.ndarray:
    """Covariance of the gradient estimate at ``x`` (``sigma_hat^2`` by default)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    d = fit.kernel.dim
    bounds = [bind(DerivEval(x, MultiIndex.unit(i, d)), fit) for i in range(d)]
    return cov_matrix(fit, bounds, sigma_sq)


def _check_hessian(H: np.ndarray) -> None:
    eig = np.abs(np.linalg.eigvalsh(H))
    if not eig.max() > 0 or eig.min() <= 1e-10 * eig.max():
        raise SingularHessian("Hessian at the estimated optimum is singular")


def sandwich(H: np.ndarray, C: np.ndarray) -> np.ndarray:
    _check_hessian(H)
    Hinv = np.linalg.inv(H)
    S = Hinv @ C @ Hinv.T
    return 0.5 * (S + S.T)


def optimum_ci(H: np.ndarray, C: np.ndarray, x_hat, level: float = 0.95) -> np.ndarray:
    """``x_hat_i +/- z sqrt(S_ii)`` with ``S = H^{-1} C H^{-1}``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
    z = z_upper(level)
    half = z * np.sqrt(np.clip(np.diag(sandwich(H, C)), 0.0, None))
    return np.column_stack([x_hat - half, x_hat + half])


def _inv_sqrt_psd(C: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    w = np.clip(w, 0.0, None)
    if not w.max() > 0 or w.min() <= 1e-14 * w.max():
        raise ArithmeticError("covariance estimate is singular")
    return (V / np.sqrt(w)) @ V.T


def standardized_optimum_stat(result: OptimumResult, x_true) -> np.ndarray:
    """``COV_hat^{-1/2} H_hat (x_hat - x_true)``, approximately N(0, I)."""
    diff = result.x_min_hat - np.asarray(x_true, dtype=float).reshape(-1)
    return _inv_sqrt_psd(result.cov_hat) @ (result.hessian_hat @ diff)


def estimate_optimum(
    fit: KrrFit, box, grid_per_axis: int | None = None, newton_iters: int = 20
) -> OptimumResult:
    """Locate the minimizer and attach ``H_hat`` and ``COV_hat`` there."""
    d = fit.kernel.dim
    m = default_grid_per_axis(d) if grid_per_axis is None else grid_per_axis
    x, fx, refined = find_min(fit, box, m, newton_iters)
    H = hessian_hat(fit, x)
    C = optimum_cov(fit, x)
    return OptimumResult(x, fx, H, C, m, newton_iters, refined)
