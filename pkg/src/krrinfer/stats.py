"""Normal distribution helpers, Kolmogorov-Smirnov distance and log-log rate fits."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = ["normal_cdf", "normal_ppf", "z_upper", "ks_statistic", "qq_data", "rate_fit"]

# Acklam's rational approximation to the inverse normal CDF
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_cdf(x):
    x = np.asarray(x, dtype=float)
    out = 0.5 * np.vectorize(math.erfc)(-x / math.sqrt(2.0))
    return out if out.ndim else float(out)


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )


def _ppf_scalar(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    x = _acklam(p)
    # one Halley step against erfc takes the 1e-9 rational fit to full precision
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_ppf(p):
    """Standard normal quantile function."""
    p = np.asarray(p, dtype=float)
    out = np.vectorize(_ppf_scalar, otypes=[float])(p)
    return out if out.ndim else float(out)


def z_upper(level: float) -> float:
    """Upper ``alpha/2`` normal quantile for a two-sided interval at ``level = 1 - alpha``."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    return _ppf_scalar(0.5 + 0.5 * level)


def ks_statistic(sample: Sequence[float]) -> float:
    """``sup_x |F_N(x) - Phi(x)|`` against the standard normal."""
    x = np.sort(np.asarray(sample, dtype=float))
    N = x.size
    if N < 20:
        raise ValueError(f"need at least 20 observations, got {N}")
    F = normal_cdf(x)
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))


def qq_data(sample: Sequence[float]) -> np.ndarray:
    """Pairs ``(Phi^{-1}((i - 0.5)/N), x_(i))`` as an ``N x 2`` array."""
    x = np.sort(np.asarray(sample, dtype=float))
    N = x.size
    if N < 20:
        raise ValueError(f"need at least 20 observations, got {N}")
    theo = normal_ppf((np.arange(1, N + 1) - 0.5) / N)
    return np.column_stack([theo, x])


def rate_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line through ``(log x, log y)``: ``(slope, intercept, r^2)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("need at least three (x, y) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("rate fits need strictly positive inputs")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return float(slope), float(intercept), r2
