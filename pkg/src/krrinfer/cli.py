"""Command-line front end.

Every command reads a JSON config (validated against the shipped schema
before any computation) and writes its reports under ``--out``. Relative
paths inside a config resolve against the config file's directory.

Exit codes: 0 success, 2 config or schema error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import jsonschema
import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import __version__, simlab
from .functionals import DerivEval, L2Inner, PointEval, bind, confidence_interval
from .kernels import MaternKernel, UnsupportedKernelError
from .krr import (
    DEFAULT_LAMBDA_MULTIPLIERS,
    DEFAULT_PHI_GRID,
    Dataset,
    DegenerateLeverage,
    KrrFit,
    fit as krr_fit,
    loocv_score,
    select_hyperparams,
)
from .optimum import estimate_optimum
from .testbed import NoiseSpec

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_DATA",
    "EXIT_NUMERICAL",
    "ConfigError",
    "DataError",
    "MODEL_FORMAT_VERSION",
    "load_config",
    "read_dataset",
    "read_h_table",
    "save_model",
    "load_model",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

MODEL_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1

# default search box trims this fraction of the data range, half from each side
_BOX_SHRINK = 0.01

log = logging.getLogger("krrinfer")


class ConfigError(Exception):
    """Invalid command configuration."""


class DataError(Exception):
    """Unreadable or malformed input data."""


# -- config ------------------------------------------------------------------


def _schema() -> dict:
    text = resources.files("krrinfer.schemas").joinpath("config.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _pointer(path: Sequence) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path) or "/"


def _describe(err: jsonschema.ValidationError) -> str:
    path = list(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        return "; ".join(f"{_pointer(path + [k])}: unknown key" for k in extra)
    return f"{_pointer(path)}: {err.message}"


def validate_config(config: object, command: str) -> None:
    """Raise :class:`ConfigError` listing every violation by JSON pointer."""
    schema = _schema()
    validator = jsonschema.Draft202012Validator({"$ref": f"#/$defs/{command}", "$defs": schema["$defs"]})
    errors = sorted(validator.iter_errors(config), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise ConfigError("invalid config: " + "; ".join(_describe(e) for e in errors))


def load_config(path: str | Path, command: str) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    validate_config(config, command)
    return config


# -- data --------------------------------------------------------------------


def _read_table(path: Path, what: str) -> tuple[list[str], np.ndarray]:
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(enumerate(csv.reader(fh), start=1))
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc.strerror or exc}") from None
    except (UnicodeDecodeError, csv.Error) as exc:
        raise DataError(f"{path}: not a UTF-8 CSV file: {exc}") from None
    rows = [(i, r) for i, r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    _, header = rows[0]
    header = [h.strip() for h in header]
    if all(_is_number(h) for h in header):
        raise DataError(f"{path}: line 1: a header row is required")
    if len(header) < 2:
        raise DataError(f"{path}: line 1: need at least two columns")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    out = np.empty((len(body), len(header)))
    for k, (line, row) in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: line {line}: expected {len(header)} fields, found {len(row)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {line}: non-numeric value {cell.strip()!r} in column {header[j]!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {line}: non-finite value in column {header[j]!r}")
            out[k, j] = v
    return header, out


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_dataset(path: str | Path) -> Dataset:
    """Feature columns followed by one response column, with a header row."""
    _, table = _read_table(Path(path), "data file")
    return Dataset(table[:, :-1], table[:, -1])


def read_h_table(path: str | Path) -> tuple[Callable[[np.ndarray], np.ndarray], np.ndarray]:
    """Tabulated weight function, linearly interpolated.

    Returns ``(h, box)``. For ``d = 1`` the rows are ``(x, h)``; for ``d = 2``
    they must cover a full rectangular grid ``(x1, x2, h)``.
    """
    path = Path(path)
    _, table = _read_table(path, "h table")
    d = table.shape[1] - 1
    if d == 1:
        order = np.argsort(table[:, 0], kind="stable")
        x, y = table[order, 0], table[order, 1]
        if np.any(np.diff(x) <= 0):
            raise DataError(f"{path}: abscissae must be distinct")
        if x.size < 2:
            raise DataError(f"{path}: need at least two rows")
        return (lambda p: np.interp(np.asarray(p)[:, 0], x, y)), np.array([[x[0], x[-1]]])
    if d == 2:
        u, v = np.unique(table[:, 0]), np.unique(table[:, 1])
        if u.size < 2 or v.size < 2 or table.shape[0] != u.size * v.size:
            raise DataError(f"{path}: two-dimensional h tables must cover a full rectangular grid")
        grid = np.full((u.size, v.size), np.nan)
        grid[np.searchsorted(u, table[:, 0]), np.searchsorted(v, table[:, 1])] = table[:, 2]
        if np.isnan(grid).any():
            raise DataError(f"{path}: duplicate grid points")
        interp = RegularGridInterpolator((u, v), grid, bounds_error=False, fill_value=None)
        return (lambda p: interp(np.asarray(p))), np.array([[u[0], u[-1]], [v[0], v[-1]]])
    raise DataError(f"{path}: h tables support one or two input columns")


# -- model cache -------------------------------------------------------------


def save_model(fit: KrrFit, path: str | Path) -> None:
    """Self-describing JSON cache; floats keep their shortest round-trip form."""
    doc = {
        "format": "krrinfer.krr_fit",
        "format_version": MODEL_FORMAT_VERSION,
        "kernel": {"family": "matern", "nu": fit.kernel.nu, "phi": fit.kernel.phi, "dim": fit.kernel.dim},
        "lambda": fit.lam,
        "X": fit.X.tolist(),
        "Y": fit.dataset.Y.tolist(),
        "sigma_hat_sq": fit.sigma_hat_sq,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> KrrFit:
    """Rebuild a cached fit; the stored data and hyperparameters are refitted exactly."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"model {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != "krrinfer.krr_fit":
        raise DataError(f"{path}: not a krrinfer model cache")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported model format_version {doc.get('format_version')!r}")
    try:
        k = doc["kernel"]
        kernel = MaternKernel(float(k["nu"]), float(k["phi"]), int(k["dim"]))
        return krr_fit(Dataset(np.array(doc["X"], dtype=float), np.array(doc["Y"], dtype=float)), kernel, float(doc["lambda"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model cache: {exc}") from None


# -- shared fitting ----------------------------------------------------------


class _Context:
    def __init__(self, args: argparse.Namespace, config: dict):
        self.config = config
        self.base = Path(args.config).resolve().parent
        self.out = Path(args.out)
        self.seed = args.seed if args.seed is not None else config.get("seed")
        self.workers = args.workers if args.workers is not None else config.get("workers", 1)

    def input_path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q

    def output_path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name


def _fit_dataset(cfg: dict, data: Dataset) -> KrrFit:
    nu = float(cfg.get("nu", 3.0))
    rule = cfg.get("lambda", {"rule": "cv"})
    phi = cfg.get("phi")
    phi_grid = [phi] if phi is not None else cfg.get("phi_grid", DEFAULT_PHI_GRID)
    n = data.n
    if rule["rule"] == "cv":
        multipliers = cfg.get("lambda_multipliers", DEFAULT_LAMBDA_MULTIPLIERS)
    else:
        c = float(rule.get("c", 1.0))
        lam = {"fixed": c, "c_over_n": c / n, "c_log_n_over_n": c * math.log(max(n, 2)) / n}[rule["rule"]]
        multipliers = [lam * n]
    if len(phi_grid) == 1 and len(multipliers) == 1:
        kernel, lam = MaternKernel(nu, float(phi_grid[0]), data.d), multipliers[0] / n
    else:
        kernel, lam = select_hyperparams(data, phi_grid, multipliers, nu, cfg.get("cv_rule", "min"))
    return krr_fit(data, kernel, lam)


def _obtain_fit(ctx: _Context) -> KrrFit:
    cfg = ctx.config
    if "model" in cfg:
        return load_model(ctx.input_path(cfg["model"]))
    return _fit_dataset(cfg, read_dataset(ctx.input_path(cfg["data"])))


def _fmt(x) -> str:
    return simlab.format_float(x)


def _write(ctx: _Context, name: str, text: str) -> Path:
    path = ctx.output_path(name)
    path.write_text(text, encoding="utf-8")
    return path


def _check_interior(fit: KrrFit, x0: np.ndarray, label: str) -> None:
    lo, hi = fit.X.min(axis=0), fit.X.max(axis=0)
    if np.any(x0 <= lo) or np.any(x0 >= hi):
        log.warning("%s: x0=%s is not inside the bounding box of the data; the interval assumes an interior point",
                    label, x0.tolist())


# -- commands ----------------------------------------------------------------


def cmd_fit(ctx: _Context) -> int:
    cfg = ctx.config
    data = read_dataset(ctx.input_path(cfg["data"]))
    fit = _fit_dataset(cfg, data)
    try:
        score = loocv_score(data, fit.kernel, fit.lam)
    except DegenerateLeverage:
        score = math.inf
    lines = [
        f"n: {data.n}",
        f"d: {data.d}",
        f"nu: {_fmt(fit.kernel.nu)}",
        f"phi: {_fmt(fit.kernel.phi)}",
        f"lambda: {_fmt(fit.lam)}",
        f"sigma_hat_sq: {_fmt(fit.sigma_hat_sq)}",
        f"loocv: {_fmt(score)}",
    ]
    print("\n".join(lines))
    if "cache" in cfg:
        save_model(fit, ctx.output_path(cfg["cache"]))
    return EXIT_OK


def _build_functional(ctx: _Context, fit: KrrFit, spec: dict, label: str):
    d = fit.kernel.dim
    kind = spec["kind"]
    if kind in ("point", "deriv"):
        x0 = np.asarray(spec["x0"], dtype=float)
        if x0.size != d:
            raise ConfigError(f"{label}/x0: expected {d} coordinates, got {x0.size}")
        _check_interior(fit, x0, label)
        if kind == "point":
            return PointEval(x0)
        if len(spec["alpha"]) != d:
            raise ConfigError(f"{label}/alpha: expected {d} entries, got {len(spec['alpha'])}")
        return DerivEval(x0, tuple(spec["alpha"]))
    h, table_box = read_h_table(ctx.input_path(spec["h"][len("table:"):]))
    box = np.asarray(spec.get("box", table_box), dtype=float)
    if box.shape != (d, 2) or table_box.shape[0] != d:
        raise ConfigError(f"{label}: h table and box must both have dimension {d}")
    return L2Inner(h, box, spec.get("quad_order", 60))


def cmd_infer(ctx: _Context) -> int:
    fit = _obtain_fit(ctx)
    rows = []
    for k, spec in enumerate(ctx.config["functionals"]):
        label = f"/functionals/{k}"
        functional = _build_functional(ctx, fit, spec, label)
        try:
            bound = bind(functional, fit)
        except UnsupportedKernelError as exc:
            raise ConfigError(f"{label}: {exc}") from None
        est = confidence_interval(fit, bound, spec.get("level", 0.95))
        rows.append([k, spec["kind"], est.value, est.var_hat, est.level, est.ci_lo, est.ci_hi])
    text = simlab.csv_text(["index", "kind", "estimate", "var_hat", "level", "lo", "hi"], rows)
    _write(ctx, ctx.config.get("output", "estimates.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


def default_search_box(X: np.ndarray) -> np.ndarray:
    lo, hi = X.min(axis=0), X.max(axis=0)
    pad = 0.5 * _BOX_SHRINK * (hi - lo)
    return np.column_stack([lo + pad, hi - pad])


def cmd_optimum(ctx: _Context) -> int:
    cfg = ctx.config
    fit = _obtain_fit(ctx)
    sign = -1.0 if cfg.get("maximize", False) else 1.0
    if sign < 0:
        fit = krr_fit(fit.dataset.with_response(-fit.dataset.Y), fit.kernel, fit.lam)
    d = fit.kernel.dim
    box = np.asarray(cfg["box"], dtype=float) if "box" in cfg else default_search_box(fit.X)
    if box.shape != (d, 2) or np.any(box[:, 0] >= box[:, 1]):
        raise ConfigError(f"/box: expected {d} rows of increasing [lo, hi] pairs")
    try:
        fit.kernel.check_order(2)
    except UnsupportedKernelError as exc:
        raise ConfigError(f"/nu: {exc}") from None
    res = estimate_optimum(fit, box, cfg.get("grid_per_axis"), cfg.get("newton_iters", 20))
    level = cfg.get("level", 0.95)
    ci = res.ci(level)
    if not res.refined:
        log.warning("Newton refinement skipped: the Hessian at the best grid point is not positive definite")
    on_edge = np.isclose(res.x_min_hat, box[:, 0], rtol=0, atol=1e-12) | np.isclose(res.x_min_hat, box[:, 1], rtol=0, atol=1e-12)
    if on_edge.any():
        log.warning("the optimum lies on the search box boundary; the interval assumes an interior optimum")
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "maximize": sign < 0,
        "x_hat": res.x_min_hat.tolist(),
        "f_hat": sign * res.f_min_hat,
        "level": level,
        "ci": ci.tolist(),
        "hessian": (sign * res.hessian_hat).tolist(),
        "cov": res.cov_hat.tolist(),
        "box": box.tolist(),
        "phi": fit.kernel.phi,
        "lambda": fit.lam,
        "n_grid": res.n_grid,
        "newton_iters": res.newton_iters,
        "refined": res.refined,
    }
    base = cfg.get("output", "optimum")
    _write(ctx, base + ".json", json.dumps(report, indent=1) + "\n")
    header = [f"x_hat_{i + 1}" for i in range(d)] + ["f_hat", "level"]
    header += [f"{end}_{i + 1}" for i in range(d) for end in ("lo", "hi")]
    row = list(res.x_min_hat) + [sign * res.f_min_hat, level] + [v for i in range(d) for v in ci[i]]
    text = simlab.csv_text(header, [row])
    _write(ctx, base + ".csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def _scenario(spec: dict, seed: int | None, label: str) -> simlab.Scenario:
    spec = dict(spec)
    if seed is not None:
        spec["base_seed"] = int(seed)
    try:
        return simlab.Scenario.from_dict(spec)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{label}: {exc}") from None


def cmd_simulate(ctx: _Context) -> int:
    cfg = ctx.config
    summaries = []
    for k, spec in enumerate(cfg["scenarios"]):
        scenario = _scenario(spec, ctx.seed, f"/scenarios/{k}")
        records = simlab.run_scenario(scenario, ctx.workers)
        if cfg.get("records", True):
            _write(ctx, f"records_{scenario.hash}.csv", simlab.records_csv(records))
        summaries.append(simlab.summarize(scenario, records))
    text = simlab.coverage_csv(summaries)
    _write(ctx, cfg.get("output", "coverage.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_rates(ctx: _Context) -> int:
    cfg = ctx.config
    exp = cfg["experiment"]
    seed = 0 if ctx.seed is None else int(ctx.seed)
    common = {"nu": float(cfg.get("nu", 3.0)), "phi": float(cfg.get("phi", 1.0)), "seed": seed}
    if exp in ("variance_vs_lambda", "wcb_vs_lambda"):
        lambdas = cfg.get("lambdas", np.logspace(-4, -1, 8).tolist())
        fn = simlab.variance_vs_lambda if exp == "variance_vs_lambda" else simlab.wcb_vs_lambda
        n = cfg.get("n", 2000 if exp == "variance_vs_lambda" else 4000)
        table = fn(lambdas, n=n, x0=cfg.get("x0", 0.5), design=cfg.get("design", "jittered_grid"), **common)
    else:
        noise = NoiseSpec(**cfg.get("noise", {"family": "gaussian", "sigma": 0.5}))
        table = simlab.uniform_error_vs_n(
            cfg.get("ns", [250, 500, 1000, 2000, 4000]),
            test_function=cfg.get("test_function", "f1"),
            noise=noise,
            reps=cfg.get("reps", 20),
            lambda_c=cfg.get("lambda_c", 1.0),
            design=cfg.get("design", "iid_uniform"),
            **common,
        )
    _write(ctx, cfg.get("output", f"rates_{exp}.csv"), simlab.rate_csv(table))
    print(f"slope: {_fmt(table.slope)}\nintercept: {_fmt(table.intercept)}\nr2: {_fmt(table.r2)}")
    return EXIT_OK


def cmd_qq(ctx: _Context) -> int:
    cfg = ctx.config
    scenario = _scenario(cfg["scenario"], ctx.seed, "/scenario")
    records = simlab.run_scenario(scenario, ctx.workers)
    sample = [r.stat for r in records if not r.failed]
    if len(sample) < 20:
        raise simlab.AllReplicationsFailed(f"only {len(sample)} successful replications; Q-Q data needs 20")
    _write(ctx, cfg.get("output", "qq.csv"), simlab.qq_csv(sample))
    print(f"ks: {_fmt(simlab.ks_statistic(sample))}\nN: {len(sample)}\nfailed: {len(records) - len(sample)}")
    return EXIT_OK


COMMANDS = {
    "fit": (cmd_fit, "fit KRR to a CSV dataset and print a summary"),
    "infer": (cmd_infer, "estimate linear functionals with confidence intervals"),
    "optimum": (cmd_optimum, "estimate the minimizer (or maximizer) with a sandwich interval"),
    "simulate": (cmd_simulate, "run coverage simulations"),
    "rates": (cmd_rates, "run a convergence-rate experiment"),
    "qq": (cmd_qq, "Q-Q data and KS distance of a simulated statistic"),
}


def _u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="krrinfer", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", required=True, metavar="PATH", help="JSON config file")
        p.add_argument("--seed", type=_u64, metavar="U64", help="override the base seed")
        p.add_argument("--workers", type=_positive_int, metavar="N", help="worker processes for replications")
        p.add_argument("--out", default=".", metavar="DIR", help="output directory (default: current)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(format="%(levelname)s: %(message)s", level=logging.INFO, stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    handler = COMMANDS[args.command][0]
    try:
        config = load_config(args.config, args.command)
        return handler(_Context(args, config))
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError, simlab.AllReplicationsFailed) as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
