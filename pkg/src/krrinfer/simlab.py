"""Monte Carlo replication engine and simulation statistics.

A :class:`Scenario` fixes a data-generating process (test function, design,
noise), a smoothing rule and an inference target. Replication ``r`` draws its
design and noise from the substream keyed by ``(base_seed, r)``, so results do
not depend on how replications are spread over worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Callable, Sequence

import numpy as np

from . import stats
from .functionals import DerivEval, PointEval, bind, bind_design, confidence_interval, worst_case_bias
from .kernels import MaternKernel, MultiIndex
from .krr import (
    DEFAULT_LAMBDA_MULTIPLIERS,
    DEFAULT_PHI_GRID,
    Dataset,
    KrrFit,
    fit as krr_fit,
    select_hyperparams,
)
from .linalg import factor
from .optimum import default_grid_per_axis, estimate_optimum, standardized_optimum_stat
from .testbed import DesignSpec, NoiseSpec, gen_design, gen_noise, get_test_function, registered_extremum, substream

__all__ = [
    "LAMBDA_RULES",
    "TARGETS",
    "Scenario",
    "ReplicationRecord",
    "CoverageSummary",
    "RateTable",
    "AllReplicationsFailed",
    "run_replication",
    "run_scenario",
    "coverage",
    "mean_ci_width",
    "summarize",
    "qq_data",
    "ks_statistic",
    "rate_fit",
    "uniform_error",
    "variance_vs_lambda",
    "wcb_vs_lambda",
    "uniform_error_vs_n",
    "format_float",
    "csv_text",
    "records_csv",
    "coverage_csv",
    "qq_csv",
    "rate_csv",
]

qq_data = stats.qq_data
ks_statistic = stats.ks_statistic
rate_fit = stats.rate_fit

LAMBDA_RULES = ("cv", "fixed", "c_over_n", "c_log_n_over_n")
TARGETS = ("optimum", "point", "deriv", "variance_term")

# step for the second derivative of a test function, taken from its analytic first derivative
_FD_STEP = 1e-5


class AllReplicationsFailed(RuntimeError):
    """Every replication of a batch was flagged as failed."""


@dataclass(frozen=True)
class Scenario:
    """One simulation setting.

    ``lambda_rule`` is one of ``"cv"`` (leave-one-out over ``phi_grid`` x
    ``lambda_multipliers / n`` with selection rule ``cv_rule``), ``"fixed"``
    (``lambda = lambda_c``), ``"c_over_n"`` or ``"c_log_n_over_n"``. Outside
    ``"cv"`` the kernel scale is ``phi``.

    Targets: ``"optimum"`` (location of the test function's extremum of kind
    ``extremum``), ``"point"`` and ``"deriv"`` (``f(x0)`` and ``f^(alpha)(x0)``
    with plug-in variance) and ``"variance_term"`` (the centered point estimate
    standardized by its exact variance under the known noise level).
    """

    test_function: str = "f1"
    n: int = 100
    replications: int = 800
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    design: str = "iid_uniform"
    lambda_rule: str = "cv"
    lambda_c: float = 1.0
    nu: float = 3.0
    phi: float = 1.0
    phi_grid: tuple[float, ...] = DEFAULT_PHI_GRID
    lambda_multipliers: tuple[float, ...] = DEFAULT_LAMBDA_MULTIPLIERS
    cv_rule: str = "1se"
    target: str = "optimum"
    extremum: str | None = None
    x0: float | None = None
    alpha: int = 1
    level: float = 0.95
    base_seed: int = 0

    def __post_init__(self) -> None:
        tf = get_test_function(self.test_function)
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseSpec(**self.noise))
        object.__setattr__(self, "phi_grid", tuple(float(p) for p in self.phi_grid))
        object.__setattr__(self, "lambda_multipliers", tuple(float(c) for c in self.lambda_multipliers))
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.lambda_rule not in LAMBDA_RULES:
            raise ValueError(f"lambda_rule must be one of {LAMBDA_RULES}, got {self.lambda_rule!r}")
        if self.lambda_rule != "cv" and not self.lambda_c > 0:
            raise ValueError("lambda_c must be positive")
        if self.lambda_rule == "cv" and not (self.phi_grid and self.lambda_multipliers):
            raise ValueError("cross-validation needs non-empty phi and lambda grids")
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.extremum not in (None, "min", "max"):
            raise ValueError("extremum must be 'min' or 'max'")
        if self.target == "deriv" and self.alpha not in (1, 2):
            raise ValueError("deriv target supports alpha 1 or 2")
        if self.x0 is not None and not tf.lo <= self.x0 <= tf.hi:
            raise ValueError(f"x0={self.x0} lies outside the domain of {self.test_function}")
        if self.base_seed < 0:
            raise ValueError("base_seed must be non-negative")
        DesignSpec(self.design, self.n, ((tf.lo, tf.hi),))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["phi_grid"] = list(self.phi_grid)
        out["lambda_multipliers"] = list(self.lambda_multipliers)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        data = dict(data)
        if "noise" in data:
            data["noise"] = NoiseSpec(**data["noise"])
        return cls(**data)

    def with_seed(self, base_seed: int) -> "Scenario":
        return replace(self, base_seed=int(base_seed))

    @property
    def hash(self) -> str:
        """Short digest of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def x0_value(self) -> float:
        tf = get_test_function(self.test_function)
        return 0.5 * (tf.lo + tf.hi) if self.x0 is None else float(self.x0)

    def lam_for(self, n: int) -> float:
        if self.lambda_rule == "fixed":
            return self.lambda_c
        if self.lambda_rule == "c_over_n":
            return self.lambda_c / n
        if self.lambda_rule == "c_log_n_over_n":
            return self.lambda_c * math.log(n) / n
        raise ValueError("lambda is data-driven under the cv rule")


@dataclass(frozen=True)
class ReplicationRecord:
    """Outcome of one replication; ``error`` is empty unless it failed."""

    index: int
    estimate: float
    ci_lo: float
    ci_hi: float
    covered: bool
    stat: float
    phi: float
    lam: float
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)

    @property
    def width(self) -> float:
        return self.ci_hi - self.ci_lo


@dataclass(frozen=True)
class CoverageSummary:
    scenario_hash: str
    n: int
    sigma: float
    noise: str
    cp: float
    mean_width: float
    failure_rate: float
    replications: int


def _simulate_data(scenario: Scenario, index: int) -> tuple[Dataset, np.ndarray]:
    tf = get_test_function(scenario.test_function)
    rng = substream(scenario.base_seed, index)
    X = gen_design(DesignSpec(scenario.design, scenario.n, ((tf.lo, tf.hi),)), rng)
    noise = gen_noise(scenario.noise, scenario.n, rng)
    return Dataset(X, tf(X[:, 0]) + noise), noise


def _fit(scenario: Scenario, data: Dataset) -> KrrFit:
    if scenario.lambda_rule == "cv":
        kernel, lam = select_hyperparams(
            data, scenario.phi_grid, scenario.lambda_multipliers, scenario.nu, scenario.cv_rule
        )
    else:
        kernel, lam = MaternKernel(scenario.nu, scenario.phi, 1), scenario.lam_for(data.n)
    return krr_fit(data, kernel, lam)


def _deriv_truth(scenario: Scenario, x0: float) -> float:
    tf = get_test_function(scenario.test_function)
    if scenario.alpha == 1:
        return float(tf.deriv(x0))
    lo, hi = max(tf.lo, x0 - _FD_STEP), min(tf.hi, x0 + _FD_STEP)
    return float((tf.deriv(hi) - tf.deriv(lo)) / (hi - lo))


def run_replication(scenario: Scenario, index: int) -> ReplicationRecord:
    """Run replication ``index``; numerical failures come back as flagged records."""
    nan = float("nan")
    phi = lam = nan
    try:
        data, noise = _simulate_data(scenario, index)
        if scenario.target == "optimum":
            tf = get_test_function(scenario.test_function)
            kind = scenario.extremum or tf.extremum_kind
            truth = registered_extremum(scenario.test_function, kind).x_star
            sign = -1.0 if kind == "max" else 1.0
            fit = _fit(scenario, data.with_response(sign * data.Y))
            phi, lam = fit.kernel.phi, fit.lam
            res = estimate_optimum(fit, tf.box)
            lo, hi = res.ci(scenario.level)[0]
            est = float(res.x_min_hat[0])
            stat = float(standardized_optimum_stat(res, [truth])[0])
            if not res.refined:
                raise ArithmeticError("Newton refinement skipped: Hessian not positive definite")
        elif scenario.target in ("point", "deriv"):
            x0 = scenario.x0_value
            fit = _fit(scenario, data)
            phi, lam = fit.kernel.phi, fit.lam
            if scenario.target == "point":
                functional, truth = PointEval([x0]), float(get_test_function(scenario.test_function)(x0))
            else:
                functional, truth = DerivEval([x0], (scenario.alpha,)), _deriv_truth(scenario, x0)
            ci = confidence_interval(fit, bind(functional, fit), scenario.level)
            est, lo, hi = ci.value, ci.ci_lo, ci.ci_hi
            # a noiseless fit gives a degenerate interval and no standardized statistic
            stat = (est - truth) / math.sqrt(ci.var_hat) if ci.var_hat > 0 else nan
        else:
            x0 = scenario.x0_value
            fit = _fit(scenario, data)
            phi, lam = fit.kernel.phi, fit.lam
            w = bind(PointEval([x0]), fit).weights
            sol = fit.factor.solve(w)
            est = float(sol @ data.Y)
            truth = est - float(sol @ noise)
            sd = scenario.noise.sigma * math.sqrt(float(sol @ sol))
            if not sd > 0:
                raise ArithmeticError("variance term has zero variance")
            half = stats.z_upper(scenario.level) * sd
            lo, hi = est - half, est + half
            stat = float(sol @ noise) / sd
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return ReplicationRecord(index, nan, nan, nan, False, nan, phi, lam, f"{type(exc).__name__}: {exc}")
    return ReplicationRecord(index, float(est), float(lo), float(hi), bool(lo <= truth <= hi), float(stat), phi, lam)


def run_scenario(scenario: Scenario, workers: int = 1) -> list[ReplicationRecord]:
    """All replications, ordered by index; identical for any ``workers``."""
    if workers < 1:
        raise ValueError("workers must be at least 1")
    indices = range(scenario.replications)
    job = partial(run_replication, scenario)
    if workers == 1 or scenario.replications == 1:
        records = [job(i) for i in indices]
    else:
        chunk = max(1, scenario.replications // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, indices, chunksize=chunk))
    return sorted(records, key=lambda r: r.index)


def _succeeded(records: Sequence[ReplicationRecord]) -> list[ReplicationRecord]:
    if not records:
        raise ValueError("no replication records")
    ok = [r for r in records if not r.failed]
    if not ok:
        raise AllReplicationsFailed(f"all {len(records)} replications failed")
    return ok


def coverage(records: Sequence[ReplicationRecord]) -> float:
    """Share of successful replications whose interval covers the truth."""
    ok = _succeeded(records)
    return sum(r.covered for r in ok) / len(ok)


def mean_ci_width(records: Sequence[ReplicationRecord]) -> float:
    ok = _succeeded(records)
    return math.fsum(r.width for r in ok) / len(ok)


def summarize(scenario: Scenario, records: Sequence[ReplicationRecord]) -> CoverageSummary:
    failed = sum(r.failed for r in records)
    return CoverageSummary(
        scenario_hash=scenario.hash,
        n=scenario.n,
        sigma=scenario.noise.sigma,
        noise=scenario.noise.family,
        cp=coverage(records),
        mean_width=mean_ci_width(records),
        failure_rate=failed / len(records),
        replications=len(records),
    )


def uniform_error(
    fit: KrrFit,
    f_true: Callable[[np.ndarray], np.ndarray],
    alpha: MultiIndex | Sequence[int] | int = 0,
    grid_per_axis: int | None = None,
    box=None,
) -> float:
    """``max |D^alpha f_hat - D^alpha f|`` over a regular grid on ``box``.

    ``f_true`` maps an ``m x d`` array of points to the values of ``D^alpha f``.
    The box defaults to the bounding box of the design.
    """
    d = fit.kernel.dim
    m = default_grid_per_axis(d) if grid_per_axis is None else int(grid_per_axis)
    if m < (512 if d == 1 else 16):
        raise ValueError("grid too coarse for a uniform error")
    alpha = MultiIndex.coerce(alpha, d)
    box = np.column_stack([fit.X.min(axis=0), fit.X.max(axis=0)]) if box is None else np.atleast_2d(box)
    axes = [np.linspace(lo, hi, m) for lo, hi in box]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    est = fit.predict(grid) if alpha.order == 0 else fit.predict_deriv(alpha, grid)
    truth = np.asarray(f_true(grid), dtype=float).reshape(-1)
    return float(np.max(np.abs(est - truth)))


# -- rate experiments --------------------------------------------------------


@dataclass(frozen=True)
class RateTable:
    xs: np.ndarray
    ys: np.ndarray
    slope: float
    intercept: float
    r2: float

    @classmethod
    def from_points(cls, xs, ys) -> "RateTable":
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        return cls(xs, ys, *rate_fit(xs, ys))


def _rate_design(n: int, design: str, seed: int) -> np.ndarray:
    return gen_design(DesignSpec(design, n, ((0.0, 1.0),)), substream(seed))


def variance_vs_lambda(
    lambdas: Sequence[float],
    n: int = 2000,
    nu: float = 3.0,
    phi: float = 1.0,
    x0: float = 0.5,
    design: str = "jittered_grid",
    seed: int = 0,
) -> RateTable:
    """Exact ``VAR / sigma^2`` of a point evaluation at ``x0`` against ``lambda``."""
    X = _rate_design(n, design, seed)
    kernel = MaternKernel(nu, phi, 1)
    K = kernel.gram(X)
    w = bind_design(PointEval([x0]), kernel, X).weights
    ys = [factor(K + lam * n * np.eye(n)).quad_form_inv_sq(w) for lam in lambdas]
    return RateTable.from_points(lambdas, ys)


def wcb_vs_lambda(
    lambdas: Sequence[float],
    n: int = 4000,
    nu: float = 3.0,
    phi: float = 1.0,
    x0: float = 0.5,
    design: str = "jittered_grid",
    seed: int = 0,
) -> RateTable:
    """Worst-case bias ``||g_hat - g||_H`` of a point evaluation against ``lambda``."""
    X = _rate_design(n, design, seed)
    kernel = MaternKernel(nu, phi, 1)
    ys = [worst_case_bias(X, kernel, lam, PointEval([x0])) for lam in lambdas]
    return RateTable.from_points(lambdas, ys)


def uniform_error_vs_n(
    ns: Sequence[int],
    test_function: str = "f1",
    noise: NoiseSpec = NoiseSpec("gaussian", 0.5),
    reps: int = 20,
    nu: float = 3.0,
    phi: float = 1.0,
    lambda_c: float = 1.0,
    design: str = "iid_uniform",
    seed: int = 0,
    grid_per_axis: int = 1024,
) -> RateTable:
    """Median sup-norm error of ``f_hat`` under ``lambda = c log(n)/n`` against ``n``."""
    tf = get_test_function(test_function)
    kernel = MaternKernel(nu, phi, 1)
    box = tf.box
    medians = []
    for k, n in enumerate(ns):
        errs = []
        for r in range(reps):
            rng = substream(seed, k * reps + r)
            X = gen_design(DesignSpec(design, int(n), ((tf.lo, tf.hi),)), rng)
            Y = tf(X[:, 0]) + gen_noise(noise, int(n), rng)
            f = krr_fit(Dataset(X, Y), kernel, lambda_c * math.log(n) / n)
            errs.append(uniform_error(f, lambda g: tf(g[:, 0]), 0, grid_per_axis, box))
        medians.append(float(np.median(errs)))
    return RateTable.from_points(ns, medians)


# -- CSV output --------------------------------------------------------------


def format_float(x: float) -> str:
    """Shortest round-trip decimal form."""
    return repr(float(x))


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def csv_text(header: Sequence[str], rows, comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def records_csv(records: Sequence[ReplicationRecord]) -> str:
    header = ["index", "estimate", "ci_lo", "ci_hi", "covered", "stat", "phi", "lambda", "error"]
    rows = ([r.index, r.estimate, r.ci_lo, r.ci_hi, r.covered, r.stat, r.phi, r.lam, r.error] for r in records)
    return csv_text(header, rows)


def coverage_csv(summaries: Sequence[CoverageSummary]) -> str:
    header = ["scenario_hash", "n", "sigma", "noise", "cp", "mean_width", "failure_rate", "replications"]
    rows = (
        [s.scenario_hash, s.n, s.sigma, s.noise, s.cp, s.mean_width, s.failure_rate, s.replications]
        for s in summaries
    )
    return csv_text(header, rows)


def qq_csv(sample: Sequence[float]) -> str:
    """Q-Q pairs against the standard normal with the KS distance in a header comment."""
    pts = qq_data(sample)
    ks = ks_statistic(sample)
    return csv_text(["theoretical", "empirical"], pts.tolist(), [f"ks={format_float(ks)} N={len(pts)}"])


def rate_csv(table: RateTable) -> str:
    comments = [
        f"slope={format_float(table.slope)} intercept={format_float(table.intercept)} r2={format_float(table.r2)}"
    ]
    rows = ([x, y, table.slope] for x, y in zip(table.xs, table.ys))
    return csv_text(["x", "y", "fitted_slope"], rows, comments)
