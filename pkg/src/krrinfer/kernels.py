"""Matérn kernels with analytic derivatives up to total order two.

The kernel is the isotropic Matérn correlation

    Phi(r) = z^nu K_nu(z) / (Gamma(nu) 2^(nu-1)),    z = 2 sqrt(nu) phi r,

with no variance multiplier. Every derivative is written through the scaled
Bessel functions ``G_mu(z) = z^mu K_mu(z)`` using

    d/dz [z^mu K_mu(z)] = -z^mu K_(mu-1)(z),

so that no ``1/r`` factor ever appears explicitly:

    dK/dx_i        = -(c^2/N) G_(nu-1)(z) u_i
    d2K/dx_i dx_j  = -(c^2/N) G_(nu-1)(z) delta_ij + (c^4/N) G_(nu-2)(z) u_i u_j

where ``u = x - y``, ``c = 2 sqrt(nu) phi`` and ``N = Gamma(nu) 2^(nu-1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import k0e, k1e

__all__ = [
    "SUPPORTED_NU",
    "MaternKernel",
    "MultiIndex",
    "UnsupportedKernelError",
    "matern_radial",
    "kernel_eval",
    "kernel_deriv",
    "kernel_cross_deriv",
    "gram",
    "cross_weights",
]

SUPPORTED_NU = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5)

# below this value of z the Bessel forms are replaced by their series limits
SMALL_Z = 1e-4

_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
_EULER_GAMMA = 0.5772156649015329

# z^(k+1/2) K_(k+1/2)(z) = sqrt(pi/2) e^-z P_k(z); coefficients in increasing powers
_HALF_INTEGER_POLY = {
    0.5: (1.0,),
    1.5: (1.0, 1.0),
    2.5: (3.0, 3.0, 1.0),
    3.5: (15.0, 15.0, 6.0, 1.0),
}


class UnsupportedKernelError(ValueError):
    """Requested smoothness / derivative order combination is not available."""


def _min_nu_for_order(order: int) -> float:
    return {0: 0.5, 1: 1.0, 2: 2.0}[order]


@dataclass(frozen=True)
class MultiIndex:
    """Derivative multi-index ``alpha = (alpha_1, ..., alpha_d)``."""

    alpha: tuple[int, ...]

    def __post_init__(self) -> None:
        alpha = tuple(int(a) for a in self.alpha)
        if not alpha or any(a < 0 for a in alpha):
            raise ValueError(f"multi-index must be non-empty and non-negative, got {self.alpha}")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def coerce(cls, alpha: "MultiIndex | Sequence[int] | int", dim: int | None = None) -> "MultiIndex":
        if isinstance(alpha, MultiIndex):
            out = alpha
        elif isinstance(alpha, (int, np.integer)):
            out = cls((int(alpha),))
        else:
            out = cls(tuple(alpha))
        if dim is not None and out.dim != dim:
            raise ValueError(f"multi-index {out.alpha} has length {out.dim}, expected {dim}")
        return out

    @classmethod
    def zero(cls, dim: int) -> "MultiIndex":
        return cls((0,) * dim)

    @classmethod
    def unit(cls, i: int, dim: int) -> "MultiIndex":
        a = [0] * dim
        a[i] = 1
        return cls(tuple(a))

    @property
    def dim(self) -> int:
        return len(self.alpha)

    @property
    def order(self) -> int:
        return sum(self.alpha)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        if other.dim != self.dim:
            raise ValueError("multi-index dimension mismatch")
        return MultiIndex(tuple(a + b for a, b in zip(self.alpha, other.alpha)))

    def axes(self) -> list[int]:
        """Coordinate indices with multiplicity, e.g. (2, 0, 1) -> [0, 0, 2]."""
        out: list[int] = []
        for i, a in enumerate(self.alpha):
            out.extend([i] * a)
        return out


def _scaled_bessel(mu: float, z: np.ndarray) -> np.ndarray:
    """Return ``G_mu(z) = z^mu K_mu(z)`` for mu in {0, 1/2, 1, 3/2, 2, 5/2, 3, 7/2}.

    Half-integer orders use closed forms. Integer orders start from K_0 and
    K_1 and recur upwards with K_(n+1) = K_(n-1) + (2n/z) K_n, which is stable
    for the second-kind functions. ``G_0`` is infinite at z = 0.
    """
    z = np.asarray(z, dtype=float)
    if mu in _HALF_INTEGER_POLY:
        coeffs = _HALF_INTEGER_POLY[mu]
        poly = np.zeros_like(z)
        for c in reversed(coeffs):
            poly = poly * z + c
        return _SQRT_HALF_PI * np.exp(-z) * poly
    if mu not in (0.0, 1.0, 2.0, 3.0):
        raise UnsupportedKernelError(f"no Bessel path for order {mu}")

    out = np.empty_like(z)
    small = z < SMALL_Z
    big = ~small
    zb = z[big]
    e = np.exp(-zb)
    k0 = k0e(zb) * e
    k1 = k1e(zb) * e
    if mu == 0.0:
        out[big] = k0
    elif mu == 1.0:
        out[big] = zb * k1
    else:
        # z^2 K_2 = z^2 K_0 + 2 z K_1
        g2 = zb * zb * k0 + 2.0 * zb * k1
        if mu == 2.0:
            out[big] = g2
        else:
            # z^3 K_3 = z^3 K_1 + 4 z^2 K_2
            out[big] = zb**3 * k1 + 4.0 * g2

    zs = z[small]
    if zs.size:
        with np.errstate(divide="ignore"):
            log_half = np.log(zs / 2.0)
        # 0 * log(0) gives nan at z = 0 before the series replaces it
        with np.errstate(invalid="ignore"):
            out[small] = _small_z_series(mu, zs, log_half)
    return out


def _small_z_series(mu: float, zs: np.ndarray, log_half: np.ndarray) -> np.ndarray:
    if mu == 0.0:
        z2 = 0.25 * zs * zs
        return -(log_half + _EULER_GAMMA) * (1.0 + z2) + z2
    if mu == 1.0:
        vals = 1.0 + 0.5 * zs * zs * (log_half + _EULER_GAMMA - 0.5)
        return np.where(zs == 0.0, 1.0, vals)
    lim = math.gamma(mu) * 2.0 ** (mu - 1.0)
    return lim * (1.0 - zs * zs / (4.0 * (mu - 1.0)))


@dataclass(frozen=True)
class MaternKernel:
    """Isotropic Matérn correlation kernel.

    Parameters
    ----------
    nu : float
        Smoothness. One of 1/2, 1, 3/2, 2, 5/2, 3, 7/2.
    phi : float
        Scale (inverse length). Larger ``phi`` gives a rougher, shorter-range kernel.
    dim : int
        Input dimension.
    """

    nu: float
    phi: float = 1.0
    dim: int = 1

    def __post_init__(self) -> None:
        nu = float(self.nu)
        if not any(abs(nu - s) < 1e-12 for s in SUPPORTED_NU):
            raise UnsupportedKernelError(f"nu={self.nu} is not supported; choose from {SUPPORTED_NU}")
        if not (self.phi > 0 and math.isfinite(self.phi)):
            raise ValueError(f"phi must be positive, got {self.phi}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        object.__setattr__(self, "nu", min(SUPPORTED_NU, key=lambda s: abs(s - nu)))
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def scale(self) -> float:
        """``c = 2 sqrt(nu) phi``, so that ``z = c r``."""
        return 2.0 * math.sqrt(self.nu) * self.phi

    @property
    def norm(self) -> float:
        return math.gamma(self.nu) * 2.0 ** (self.nu - 1.0)

    @property
    def smoothness_order(self) -> float:
        """Sobolev order ``m = nu + d/2`` of the native space."""
        return self.nu + self.dim / 2.0

    @property
    def max_deriv_order(self) -> int:
        return max(k for k in (0, 1, 2) if self.nu >= _min_nu_for_order(k))

    def check_order(self, order: int) -> None:
        if order > 2:
            raise UnsupportedKernelError(f"derivative order {order} > 2 is not implemented")
        if self.nu < _min_nu_for_order(order):
            raise UnsupportedKernelError(
                f"order-{order} derivatives need nu >= {_min_nu_for_order(order)}, kernel has nu={self.nu}"
            )

    def with_phi(self, phi: float) -> "MaternKernel":
        return MaternKernel(self.nu, phi, self.dim)

    # -- radial profile --------------------------------------------------

    def radial(self, r: np.ndarray | float, order: int = 0) -> np.ndarray:
        """``d^k Phi / dr^k`` evaluated at distances ``r``."""
        self.check_order(order)
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("distance must be non-negative")
        c, N, nu = self.scale, self.norm, self.nu
        z = c * r
        if order == 0:
            # Phi(0) = 1 exactly; the scaled Bessel value carries rounding
            return np.where(r == 0.0, 1.0, _scaled_bessel(nu, z) / N)
        g1 = _scaled_bessel(nu - 1.0, z)
        if order == 1:
            with np.errstate(invalid="ignore"):
                out = -(c * c / N) * r * g1
            return np.where(r == 0.0, 0.0, out)
        g2 = _scaled_bessel(nu - 2.0, z)
        with np.errstate(invalid="ignore"):
            tail = (c**4 / N) * r * r * g2
        return -(c * c / N) * g1 + np.where(r == 0.0, 0.0, tail)

    # -- matrices ----------------------------------------------------------

    def _as_points(self, A: np.ndarray) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(-1, 1) if self.dim == 1 else A.reshape(1, -1)
        if A.ndim != 2 or A.shape[1] != self.dim:
            raise ValueError(f"expected points with {self.dim} columns, got shape {A.shape}")
        return A

    def matrix(self, A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
        """``K(A, B)`` with rows of ``A`` and ``B`` as points."""
        return self.deriv_matrix(MultiIndex.zero(self.dim), A, B)

    def deriv_matrix(
        self, alpha: MultiIndex | Sequence[int], A: np.ndarray, B: np.ndarray | None = None
    ) -> np.ndarray:
        """Matrix of ``D^alpha_x K(a_i, b_j)``, derivatives in the first argument."""
        alpha = MultiIndex.coerce(alpha, self.dim)
        self.check_order(alpha.order)
        A = self._as_points(A)
        B = A if B is None else self._as_points(B)
        U = A[:, None, :] - B[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", U, U))
        c, N, nu = self.scale, self.norm, self.nu
        z = c * r
        zero = r == 0.0
        if alpha.order == 0:
            return np.where(zero, 1.0, _scaled_bessel(nu, z) / N)
        g1 = _scaled_bessel(nu - 1.0, z)
        axes = alpha.axes()
        if alpha.order == 1:
            with np.errstate(invalid="ignore"):
                out = -(c * c / N) * g1 * U[:, :, axes[0]]
            out[zero] = 0.0
            return out
        i, j = axes
        g2 = _scaled_bessel(nu - 2.0, z)
        with np.errstate(invalid="ignore"):
            tail = (c**4 / N) * g2 * U[:, :, i] * U[:, :, j]
        tail[zero] = 0.0
        out = tail
        if i == j:
            out = out - (c * c / N) * g1
        return out

    def cross_deriv_matrix(
        self,
        alpha: MultiIndex | Sequence[int],
        beta: MultiIndex | Sequence[int],
        A: np.ndarray,
        B: np.ndarray | None = None,
    ) -> np.ndarray:
        """``D^alpha_x D^beta_y K(a_i, b_j)``; stationarity gives ``(-1)^|beta| D^(alpha+beta)_x K``."""
        alpha = MultiIndex.coerce(alpha, self.dim)
        beta = MultiIndex.coerce(beta, self.dim)
        total = alpha + beta
        if total.order > 2:
            raise UnsupportedKernelError(f"total derivative order {total.order} > 2 is not implemented")
        sign = -1.0 if beta.order % 2 else 1.0
        return sign * self.deriv_matrix(total, A, B)

    def gram(self, X: np.ndarray) -> np.ndarray:
        """Symmetric Gram matrix ``K(X, X)`` with an exact unit diagonal."""
        K = self.matrix(X)
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
        return K


# -- scalar entry points -------------------------------------------------------


def _point(x: np.ndarray | Sequence[float] | float, dim: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (dim,):
        raise ValueError(f"point has shape {x.shape}, expected ({dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("point has non-finite coordinates")
    return x.reshape(1, dim)


def matern_radial(kernel: MaternKernel, r: float, deriv_order: int = 0) -> float:
    """Radial profile ``Phi`` or one of its first two derivatives at a single distance."""
    if r < 0:
        raise ValueError("distance must be non-negative")
    return float(kernel.radial(np.array([r]), deriv_order)[0])


def kernel_eval(kernel: MaternKernel, x, y) -> float:
    return float(kernel.matrix(_point(x, kernel.dim), _point(y, kernel.dim))[0, 0])


def kernel_deriv(kernel: MaternKernel, alpha, x, y) -> float:
    """``D^alpha K(x, y)`` with respect to the first argument."""
    return float(kernel.deriv_matrix(alpha, _point(x, kernel.dim), _point(y, kernel.dim))[0, 0])


def kernel_cross_deriv(kernel: MaternKernel, alpha, beta, x, y) -> float:
    return float(kernel.cross_deriv_matrix(alpha, beta, _point(x, kernel.dim), _point(y, kernel.dim))[0, 0])


def gram(kernel: MaternKernel, X: np.ndarray) -> np.ndarray:
    return kernel.gram(X)


def cross_weights(
    kernel: MaternKernel,
    kind: str,
    X: np.ndarray,
    *,
    x0=None,
    alpha=None,
    nodes: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    h: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Representer ``g`` of a linear functional evaluated at the design points.

    ``kind`` is ``"point"`` (g = K(., x0)), ``"deriv"`` (g = D^alpha K(., x0),
    derivative taken at x0) or ``"l2"`` (g = sum_q w_q h(s_q) K(s_q, .) for a
    quadrature rule ``(nodes, weights)``).
    """
    X = kernel._as_points(X)
    if kind == "point":
        return kernel.matrix(_point(x0, kernel.dim), X)[0]
    if kind == "deriv":
        return kernel.deriv_matrix(alpha, _point(x0, kernel.dim), X)[0]
    if kind == "l2":
        if nodes is None or weights is None or h is None:
            raise ValueError("l2 weights need quadrature nodes, weights and h")
        nodes = kernel._as_points(nodes)
        hw = np.asarray(weights, dtype=float) * np.asarray(h(nodes), dtype=float)
        return hw @ kernel.matrix(nodes, X)
    raise ValueError(f"unknown functional kind {kind!r}")
