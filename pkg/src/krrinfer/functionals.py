"""Linear functionals of the KRR estimate: estimates, variances and intervals.

A functional ``l(f) = <f, g>_H`` is carried by its representer ``g``; once
bound to a design ``X`` only the weight vector ``g(X)`` is needed, since

    <f_hat, g>_H = g(X)^T (K + lambda n I)^{-1} Y,
    VAR          = sigma^2 g(X)^T (K + lambda n I)^{-2} g(X).

The noiseless fit ``g_hat`` (KRR applied to the exact values ``g(X)``) gives
the second route to both quantities used by the diagnostics here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .kernels import MaternKernel, MultiIndex, UnsupportedKernelError
from .krr import KrrFit
from .linalg import SpdFactor, factor
from .stats import z_upper

__all__ = [
    "PointEval",
    "DerivEval",
    "L2Inner",
    "Functional",
    "BoundFunctional",
    "FunctionalEstimate",
    "NoiselessKrr",
    "gauss_legendre_box",
    "bind",
    "bind_design",
    "estimate",
    "var_exact",
    "var_hat",
    "confidence_interval",
    "cov_matrix",
    "noiseless_fit",
    "var_identity_check",
    "bias_oracle",
    "worst_case_bias",
    "rkhs_norm_sq",
]


@dataclass(frozen=True)
class PointEval:
    x0: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))


@dataclass(frozen=True)
class DerivEval:
    x0: tuple[float, ...]
    alpha: MultiIndex

    def __post_init__(self) -> None:
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "alpha", MultiIndex.coerce(self.alpha, len(x0)))


@dataclass(frozen=True)
class L2Inner:
    """``l(f) = int_box f(s) h(s) ds`` with a continuous weight ``h``.

    ``h`` maps an ``m x d`` array of points to ``m`` values.
    """

    h: Callable[[np.ndarray], np.ndarray]
    box: tuple[tuple[float, float], ...]
    quad_order: int = 60

    def __post_init__(self) -> None:
        box = tuple((float(lo), float(hi)) for lo, hi in np.atleast_2d(self.box))
        if any(not (math.isfinite(lo) and math.isfinite(hi) and lo < hi) for lo, hi in box):
            raise ValueError(f"box must be finite with lo < hi, got {box}")
        if self.quad_order < 2:
            raise ValueError("quad_order must be at least 2")
        object.__setattr__(self, "box", box)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return gauss_legendre_box(self.box, self.quad_order)


Functional = Union[PointEval, DerivEval, L2Inner]


def gauss_legendre_box(box, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre nodes (``m x d``) and weights for a box, d <= 2."""
    box = np.atleast_2d(np.asarray(box, dtype=float))
    d = box.shape[0]
    if d > 2:
        raise ValueError(f"quadrature is supported for d <= 2, got d={d}")
    t, w = np.polynomial.legendre.leggauss(order)
    axes, wts = [], []
    for lo, hi in box:
        half = 0.5 * (hi - lo)
        axes.append(lo + half * (t + 1.0))
        wts.append(half * w)
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in np.meshgrid(*wts, indexing="ij")], axis=1), axis=1)
    return nodes, weights


def _functional_dim(functional: Functional) -> int:
    return len(functional.box) if isinstance(functional, L2Inner) else len(functional.x0)


def representer_values(functional: Functional, kernel: MaternKernel, points: np.ndarray) -> np.ndarray:
    """``g(points)`` for the representer ``g`` of ``functional`` under ``kernel``."""
    if _functional_dim(functional) != kernel.dim:
        raise ValueError(f"functional has dimension {_functional_dim(functional)}, kernel has {kernel.dim}")
    x0_row = None if isinstance(functional, L2Inner) else np.array(functional.x0).reshape(1, -1)
    if isinstance(functional, PointEval):
        return kernel.matrix(x0_row, points)[0]
    if isinstance(functional, DerivEval):
        # g(s) = D^alpha_y K(s, y)|_{y=x0} = D^alpha_x K(x0, s) by symmetry
        return kernel.deriv_matrix(functional.alpha, x0_row, points)[0]
    nodes, weights = functional.nodes()
    hw = weights * np.asarray(functional.h(nodes), dtype=float).reshape(-1)
    return hw @ kernel.matrix(nodes, points)


def rkhs_norm_sq(functional: Functional, kernel: MaternKernel) -> float:
    """``||g||_H^2 = l(g)``."""
    if isinstance(functional, PointEval):
        return 1.0
    if isinstance(functional, DerivEval):
        x0 = np.array(functional.x0).reshape(1, -1)
        return float(kernel.cross_deriv_matrix(functional.alpha, functional.alpha, x0, x0)[0, 0])
    nodes, weights = functional.nodes()
    hw = weights * np.asarray(functional.h(nodes), dtype=float).reshape(-1)
    return float(hw @ kernel.matrix(nodes) @ hw)


@dataclass(frozen=True)
class BoundFunctional:
    functional: Functional
    weights: np.ndarray = field(repr=False)


def bind_design(functional: Functional, kernel: MaternKernel, X: np.ndarray) -> BoundFunctional:
    return BoundFunctional(functional, representer_values(functional, kernel, X))


def bind(functional: Functional, fit: KrrFit) -> BoundFunctional:
    """Attach the weights ``g(X)`` for the design of ``fit``."""
    return bind_design(functional, fit.kernel, fit.X)


@dataclass(frozen=True)
class FunctionalEstimate:
    value: float
    var_hat: float
    level: float
    ci_lo: float
    ci_hi: float

    @property
    def width(self) -> float:
        return self.ci_hi - self.ci_lo

    def covers(self, truth: float) -> bool:
        return self.ci_lo <= truth <= self.ci_hi


def estimate(fit: KrrFit, bound: BoundFunctional) -> float:
    return float(bound.weights @ fit.alpha)


def var_exact(fit: KrrFit, sigma_sq: float, bound: BoundFunctional) -> float:
    """``sigma^2 g(X)^T (K + lambda n I)^{-2} g(X)`` for a known noise variance."""
    if sigma_sq < 0:
        raise ValueError("sigma_sq must be non-negative")
    return sigma_sq * fit.factor.quad_form_inv_sq(bound.weights)


def var_hat(fit: KrrFit, bound: BoundFunctional) -> float:
    return var_exact(fit, fit.sigma_hat_sq, bound)


def confidence_interval(fit: KrrFit, bound: BoundFunctional, level: float = 0.95) -> FunctionalEstimate:
    z = z_upper(level)
    value = estimate(fit, bound)
    v = var_hat(fit, bound)
    half = z * math.sqrt(v)
    return FunctionalEstimate(value, v, level, value - half, value + half)


def cov_matrix(fit: KrrFit, bounds: Sequence[BoundFunctional], sigma_sq: float | None = None) -> np.ndarray:
    """Joint covariance ``sigma^2 W^T A^{-2} W`` of several estimates (default ``sigma_hat^2``)."""
    s2 = fit.sigma_hat_sq if sigma_sq is None else sigma_sq
    W = np.column_stack([b.weights for b in bounds])
    S = fit.factor.solve(W)
    C = s2 * (S.T @ S)
    return 0.5 * (C + C.T)


@dataclass(frozen=True)
class NoiselessKrr:
    """KRR fitted to the exact representer values ``g(X)``."""

    X: np.ndarray = field(repr=False)
    kernel: MaternKernel
    lam: float
    g_at_X: np.ndarray = field(repr=False)
    coeff: np.ndarray = field(repr=False)
    ghat_at_X: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    factor: SpdFactor = field(repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def predict(self, points: np.ndarray) -> np.ndarray:
        return self.kernel.matrix(points, self.X) @ self.coeff

    def residual_norm_n_sq(self) -> float:
        """``||g_hat - g||_n^2``."""
        r = self.ghat_at_X - self.g_at_X
        return float(r @ r / self.n)


def noiseless_fit(
    X: np.ndarray,
    kernel: MaternKernel,
    lam: float,
    bound: BoundFunctional,
    factor_: SpdFactor | None = None,
    gram: np.ndarray | None = None,
) -> NoiselessKrr:
    X = kernel._as_points(X)
    n = X.shape[0]
    K = kernel.gram(X) if gram is None else gram
    f = factor(K + lam * n * np.eye(n)) if factor_ is None else factor_
    coeff = f.solve(bound.weights)
    return NoiselessKrr(X, kernel, float(lam), bound.weights, coeff, K @ coeff, K, f)


def var_identity_check(
    fit: KrrFit, bound: BoundFunctional, sigma_sq: float | None = None
) -> tuple[float, float, float]:
    """Compare ``VAR`` with ``sigma^2 n^{-1} lambda^{-2} ||g_hat - g||_n^2``.

    The right-hand side comes from the noiseless fit, i.e. from ``K coeff - g(X)``,
    not from the quadratic form. Returns ``(lhs, rhs, rel_err)``.
    """
    s2 = fit.sigma_hat_sq if sigma_sq is None else sigma_sq
    lhs = var_exact(fit, s2, bound)
    nk = noiseless_fit(fit.X, fit.kernel, fit.lam, bound, factor_=fit.factor, gram=fit.gram)
    rhs = s2 / (fit.n * fit.lam**2) * nk.residual_norm_n_sq()
    return lhs, rhs, _rel_err(lhs, rhs)


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def _check_bias_order(functional: Functional) -> None:
    if isinstance(functional, DerivEval) and functional.alpha.order > 1:
        raise UnsupportedKernelError("bias diagnostics need |alpha| <= 1")


def bias_oracle(
    X: np.ndarray,
    kernel: MaternKernel,
    lam: float,
    centers: np.ndarray,
    coefs: np.ndarray,
    functional: Functional,
) -> tuple[float, float, float]:
    """Two routes to ``BIAS`` for ``f = sum_j c_j K(., z_j)``.

    Direct: ``g(X)^T (K + lambda n I)^{-1} F - <f, g>_H`` with ``F = f(X)``.
    Noiseless: ``<g_hat - g, f>_H = sum_j c_j (g_hat(z_j) - g(z_j))``.
    Both use ``<K(., z), g>_H = g(z)``. Returns ``(direct, inner, rel_err)``.
    """
    _check_bias_order(functional)
    X = kernel._as_points(X)
    Z = kernel._as_points(centers)
    c = np.asarray(coefs, dtype=float).reshape(-1)
    n = X.shape[0]
    K = kernel.gram(X)
    f = factor(K + lam * n * np.eye(n))
    g_X = representer_values(functional, kernel, X)
    g_Z = representer_values(functional, kernel, Z)
    K_XZ = kernel.matrix(X, Z)

    F = K_XZ @ c
    f_inner_g = float(c @ g_Z)
    direct = float(g_X @ f.solve(F)) - f_inner_g

    coeff = f.solve(g_X)
    ghat_Z = K_XZ.T @ coeff
    inner = float(c @ (ghat_Z - g_Z))
    return direct, inner, _rel_err(direct, inner)


def worst_case_bias(X: np.ndarray, kernel: MaternKernel, lam: float, functional: Functional) -> float:
    """``sup_{||f||_H <= 1} |BIAS_f| = ||g_hat - g||_H``.

    Expanded as ``||g||^2 - 2 <g_hat, g> + ||g_hat||^2`` with
    ``<g_hat, g> = coeff^T g(X)`` and ``||g_hat||^2 = coeff^T K coeff``.
    """
    _check_bias_order(functional)
    X = kernel._as_points(X)
    bound = bind_design(functional, kernel, X)
    nk = noiseless_fit(X, kernel, lam, bound)
    g_sq = rkhs_norm_sq(functional, kernel)
    cross = float(nk.coeff @ nk.g_at_X)
    ghat_sq = float(nk.coeff @ nk.ghat_at_X)
    rad = g_sq - 2.0 * cross + ghat_sq
    if rad < -1e-10 * max(1.0, g_sq):
        raise ArithmeticError(f"negative squared norm {rad:.3e} in worst-case bias")
    return math.sqrt(max(rad, 0.0))
