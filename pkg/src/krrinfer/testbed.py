"""Reference regression functions, designs and noise for the simulation studies.

Random streams use numpy's Philox4x32-10 counter-based generator. The key of
replication ``r`` under base seed ``s`` is derived by ``SeedSequence(s,
spawn_key=(r,))``, so each replication owns an independent stream that does
not depend on how replications are scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "TestFunction",
    "Extremum",
    "NoiseSpec",
    "DesignSpec",
    "TEST_FUNCTIONS",
    "beta_pdf",
    "beta_pdf_deriv",
    "get_test_function",
    "eval_test_function",
    "eval_test_function_deriv",
    "registered_extremum",
    "compute_extremum",
    "substream",
    "gen_design",
    "gen_noise",
    "fill_separation_ratio",
]


def beta_pdf(a: float, b: float, x):
    """Beta(a, b) density, zero outside [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("Beta parameters must be positive")
    x = np.asarray(x, dtype=float)
    log_b = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    inside = (x >= 0.0) & (x <= 1.0)
    xc = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logpdf = (a - 1.0) * np.log(xc) + (b - 1.0) * np.log1p(-xc) - log_b
        out = np.where(inside, np.exp(logpdf), 0.0)
        # endpoint conventions for a == 1 or b == 1 (0 * log 0)
        if a == 1.0:
            out = np.where(inside & (xc == 0.0), np.exp((b - 1.0) * np.log1p(-xc) - log_b), out)
        if b == 1.0:
            out = np.where(inside & (xc == 1.0), np.exp((a - 1.0) * np.log(np.where(xc > 0, xc, 1.0)) - log_b), out)
    return out if out.ndim else float(out)


def beta_pdf_deriv(a: float, b: float, x):
    """d/dx of the Beta(a, b) density on the open interval (0, 1)."""
    x = np.asarray(x, dtype=float)
    # p' = (a-1) x^(a-2)(1-x)^(b-1)/B - (b-1) x^(a-1)(1-x)^(b-2)/B
    out = np.zeros_like(x)
    if a != 1.0:
        out = out + (a - 1.0) * _xpow(a - 2.0, b - 1.0, x, a, b)
    if b != 1.0:
        out = out - (b - 1.0) * _xpow(a - 1.0, b - 2.0, x, a, b)
    return out if out.ndim else float(out)


def _xpow(p: float, q: float, x: np.ndarray, a: float, b: float) -> np.ndarray:
    log_b = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    inside = (x > 0.0) & (x < 1.0)
    xc = np.where(inside, x, 0.5)
    return np.where(inside, np.exp(p * np.log(xc) + q * np.log1p(-xc) - log_b), 0.0)


# -- test functions -----------------------------------------------------------


def _f1(x):
    return 1.8 * (beta_pdf(10, 5, x) + beta_pdf(7, 7, x) + beta_pdf(5, 10, x))


def _df1(x):
    return 1.8 * (beta_pdf_deriv(10, 5, x) + beta_pdf_deriv(7, 7, x) + beta_pdf_deriv(5, 10, x))


def _f2(x):
    return 2.4 * beta_pdf(30, 17, x) + 2.8 * beta_pdf(4, 11, x)


def _df2(x):
    return 2.4 * beta_pdf_deriv(30, 17, x) + 2.8 * beta_pdf_deriv(4, 11, x)


def _f3(x):
    x = np.asarray(x, dtype=float)
    return (
        1.4 * beta_pdf(15, 30, x)
        + 8.0 * np.sin(32 * math.pi * x - 4 * math.pi / 3)
        - 6.0 * np.cos(16 * math.pi * x)
        - 0.2 * np.cos(64 * math.pi * x)
    )


def _df3(x):
    x = np.asarray(x, dtype=float)
    return (
        1.4 * beta_pdf_deriv(15, 30, x)
        + 8.0 * 32 * math.pi * np.cos(32 * math.pi * x - 4 * math.pi / 3)
        + 6.0 * 16 * math.pi * np.sin(16 * math.pi * x)
        + 0.2 * 64 * math.pi * np.sin(64 * math.pi * x)
    )


def _f4(x):
    u = 1.0 - 2.0 * np.asarray(x, dtype=float)
    return 5.0 * np.exp(-2.0 * u * u) * u


def _df4(x):
    u = 1.0 - 2.0 * np.asarray(x, dtype=float)
    # d/du [5 u e^{-2u^2}] = 5 e^{-2u^2} (1 - 4u^2), du/dx = -2
    return -10.0 * np.exp(-2.0 * u * u) * (1.0 - 4.0 * u * u)


def _f5(x):
    x = np.asarray(x, dtype=float)
    return np.sin(8.5 * x) + np.cos(8.5 * x) + np.log(2.0 + x)


def _df5(x):
    x = np.asarray(x, dtype=float)
    return 8.5 * np.cos(8.5 * x) - 8.5 * np.sin(8.5 * x) + 1.0 / (2.0 + x)


@dataclass(frozen=True)
class Extremum:
    id: str
    x_star: float
    f_star: float
    kind: str
    tolerance: float


@dataclass(frozen=True)
class TestFunction:
    """A one-dimensional reference regression function on ``[lo, hi]``."""

    __test__ = False  # not a pytest class

    id: str
    lo: float
    hi: float
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    extremum_kind: str

    @property
    def box(self) -> np.ndarray:
        return np.array([[self.lo, self.hi]])

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any((x < self.lo) | (x > self.hi)):
            raise ValueError(f"{self.id} is defined on [{self.lo}, {self.hi}]")
        return x

    def __call__(self, x):
        x = self._check(x)
        out = np.asarray(self.f(x), dtype=float)
        return out.reshape(x.shape) if out.ndim else float(out)

    def deriv(self, x):
        x = self._check(x)
        out = np.asarray(self.df(x), dtype=float)
        return out.reshape(x.shape) if out.ndim else float(out)


TEST_FUNCTIONS: dict[str, TestFunction] = {
    "f1": TestFunction("f1", 0.0, 1.0, _f1, _df1, "max"),
    "f2": TestFunction("f2", 0.0, 1.0, _f2, _df2, "max"),
    "f3": TestFunction("f3", 0.0, 1.0, _f3, _df3, "max"),
    "f4": TestFunction("f4", 0.0, 1.0, _f4, _df4, "max"),
    "f5": TestFunction("f5", -1.0, 1.0, _f5, _df5, "max"),
}


def get_test_function(id: str) -> TestFunction:
    try:
        return TEST_FUNCTIONS[id]
    except KeyError:
        raise KeyError(f"unknown test function {id!r}; known: {sorted(TEST_FUNCTIONS)}") from None


def eval_test_function(id: str, x):
    return get_test_function(id)(x)


def eval_test_function_deriv(id: str, x):
    return get_test_function(id).deriv(x)


def compute_extremum(id: str, kind: str | None = None, grid_points: int = 2**20) -> Extremum:
    """Locate the global extremum by a dense scan, then bisect on the derivative.

    Used to build the shipped extrema table; ``registered_extremum`` reads the table.
    """
    tf = get_test_function(id)
    kind = kind or tf.extremum_kind
    sign = 1.0 if kind == "min" else -1.0
    x = np.linspace(tf.lo, tf.hi, grid_points)
    k = int(np.argmin(sign * tf(x)))
    if k in (0, grid_points - 1):
        raise ValueError(f"{kind} of {id} is on the boundary")
    a, b = x[k - 1], x[k + 1]
    da = sign * tf.deriv(a)
    for _ in range(200):
        m = 0.5 * (a + b)
        dm = sign * tf.deriv(m)
        if dm == 0.0 or b - a < 1e-15:
            break
        if (dm < 0) == (da < 0):
            a, da = m, dm
        else:
            b = m
    xs = 0.5 * (a + b)
    return Extremum(id, float(xs), float(tf(xs)), kind, 1e-9)


@lru_cache(maxsize=None)
def _extrema_table() -> dict[tuple[str, str], Extremum]:
    table: dict[tuple[str, str], Extremum] = {}
    text = resources.files("krrinfer.data").joinpath("extrema.csv").read_text(encoding="utf-8")
    rows = [line for line in text.splitlines() if line and not line.startswith("#")]
    for row in csv.DictReader(rows):
        e = Extremum(row["id"], float(row["x_star"]), float(row["f_star"]), row["kind"], float(row["tolerance"]))
        table[(e.id, e.kind)] = e
    return table


def registered_extremum(id: str, kind: str | None = None) -> Extremum:
    """Ground-truth extremum from the shipped table (default kind per function)."""
    kind = kind or get_test_function(id).extremum_kind
    try:
        return _extrema_table()[(id, kind)]
    except KeyError:
        raise KeyError(f"no registered {kind} for {id}") from None


# -- random streams -----------------------------------------------------------


def substream(base_seed: int, index: int | None = None) -> np.random.Generator:
    """Philox generator keyed by ``(base_seed, index)``."""
    spawn_key = () if index is None else (int(index),)
    ss = np.random.SeedSequence(int(base_seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoiseSpec:
    """Centered noise with standard deviation ``sigma``.

    ``student_t3`` draws are rescaled by ``sigma / sqrt(3)`` so the variance is ``sigma^2``.
    """

    family: str = "gaussian"
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in ("gaussian", "student_t3"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class DesignSpec:
    family: str = "iid_uniform"
    n: int = 100
    box: tuple[tuple[float, float], ...] = ((0.0, 1.0),)

    def __post_init__(self) -> None:
        if self.family not in ("iid_uniform", "jittered_grid"):
            raise ValueError(f"unknown design family {self.family!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        object.__setattr__(self, "box", tuple((float(lo), float(hi)) for lo, hi in self.box))

    @property
    def dim(self) -> int:
        return len(self.box)


def gen_noise(spec: NoiseSpec, n: int, rng: np.random.Generator | int) -> np.ndarray:
    rng = substream(rng) if isinstance(rng, (int, np.integer)) else rng
    if spec.family == "gaussian":
        z = rng.standard_normal(n)
    else:
        z = rng.standard_normal(n) / np.sqrt(rng.chisquare(3, n) / 3.0) / math.sqrt(3.0)
    return spec.sigma * z


def gen_design(spec: DesignSpec, rng: np.random.Generator | int) -> np.ndarray:
    """``n x d`` design matrix.

    ``jittered_grid`` places one point uniformly in the central 30% of each cell
    of a regular grid (d = 1: n cells; d = 2: ceil(sqrt n)^2 cells, first n
    in row-major order), so fill distance and separation stay within a fixed
    ratio.
    """
    rng = substream(rng) if isinstance(rng, (int, np.integer)) else rng
    lo = np.array([b[0] for b in spec.box])
    hi = np.array([b[1] for b in spec.box])
    d = spec.dim
    if spec.family == "iid_uniform":
        return lo + (hi - lo) * rng.random((spec.n, d))
    m = spec.n if d == 1 else math.ceil(spec.n ** (1.0 / d))
    idx = np.array(np.unravel_index(np.arange(spec.n), (m,) * d)).T
    jitter = 0.35 + 0.3 * rng.random((spec.n, d))
    return lo + (hi - lo) * (idx + jitter) / m


def fill_separation_ratio(X: np.ndarray, box, probe_per_axis: int = 2000) -> float:
    """Fill distance over the probe grid divided by half the minimum separation."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    box = np.asarray(box, dtype=float)
    tree = cKDTree(X)
    dd, _ = tree.query(X, k=2)
    q = 0.5 * dd[:, 1].min()
    axes = [np.linspace(lo, hi, probe_per_axis if X.shape[1] == 1 else 200) for lo, hi in box]
    probe = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, X.shape[1])
    h = tree.query(probe)[0].max()
    return float(h / q)
