"""Data oracle, coefficient fitting, and goodness-of-fit metrics.

The oracle samples inputs uniformly over per-variable ranges, evaluates a
ground-truth expression, and adds Gaussian noise; everything is bit-identical
under a fixed seed.  Coefficients are fitted by quasi-Newton (BFGS) descent
on the NMSE with central finite-difference gradients and a few seeded random
restarts.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .grammar import Expr, evaluate, is_complete, n_coefficients


class DataError(ValueError):
    pass


class DegenerateTargetsError(DataError):
    """Target variance is zero; normalized metrics are undefined."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    variables: tuple[str, ...]
    seed: int
    noise_std: float = 0.0

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    @property
    def sigma_y(self) -> float:
        y = self.targets
        return float(np.sqrt(np.mean((y - np.mean(y)) ** 2)))


def data_oracle(
    truth: Expr,
    truth_coeffs,
    variables,
    n_points: int = 2048,
    ranges=None,
    noise_std: float = 0.0,
    seed: int = 0,
    max_resample: int = 100,
) -> Dataset:
    """Sample a dataset from a ground-truth expression.

    `ranges` maps variable name -> (lo, hi); a single (lo, hi) pair applies
    to every variable and the default is (0.1, 4.0), which keeps log, sqrt
    and division away from their singularities.  Rows where the truth is
    non-finite are resampled.
    """
    if n_points < 1:
        raise DataError("n_points must be >= 1")
    variables = tuple(variables)
    if ranges is None:
        ranges = (0.1, 4.0)
    if isinstance(ranges, (tuple, list)) and len(ranges) == 2 and not isinstance(ranges[0], str):
        ranges = {name: tuple(ranges) for name in variables}
    missing = [v for v in variables if v not in ranges]
    if missing:
        raise DataError(f"no sampling range for variables {missing}")

    rng = np.random.default_rng(seed)
    lo = np.array([ranges[v][0] for v in variables])
    hi = np.array([ranges[v][1] for v in variables])

    def sample(count):
        x = rng.uniform(lo, hi, size=(count, len(variables)))
        y = np.asarray(evaluate(truth, x, truth_coeffs, variables), dtype=float)
        if noise_std > 0:
            y = y + rng.normal(0.0, noise_std, size=count)
        return x, np.atleast_1d(y)

    x, y = sample(n_points)
    for _ in range(max_resample):
        bad = ~np.isfinite(y)
        if not bad.any():
            break
        x_new, y_new = sample(int(bad.sum()))
        x[bad], y[bad] = x_new, y_new
    else:
        raise DataError("ground truth is not finite anywhere in the sampling ranges")
    return Dataset(x, y, variables, seed=seed, noise_std=noise_std)


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class Metrics:
    mse: float
    nmse: float
    rmse: float
    nrmse: float


def metrics(expr: Expr, coeffs, dataset: Dataset) -> Metrics:
    sigma = dataset.sigma_y
    if sigma == 0.0:
        raise DegenerateTargetsError("targets have zero variance")
    pred = np.asarray(
        evaluate(expr, dataset.inputs, coeffs, dataset.variables), dtype=float
    )
    if not np.all(np.isfinite(pred)):
        return Metrics(math.inf, math.inf, math.inf, math.inf)
    mse = float(np.mean((dataset.targets - pred) ** 2))
    return Metrics(mse, mse / sigma**2, math.sqrt(mse), math.sqrt(mse) / sigma)


def nmse(expr: Expr, coeffs, dataset: Dataset) -> float:
    return metrics(expr, coeffs, dataset).nmse


def reward_from_nmse(value: float) -> float:
    """Rollout reward 1/(1 + NMSE); an unevaluable expression scores 0."""
    if not np.isfinite(value):
        return 0.0
    return 1.0 / (1.0 + value)


def reward(expr: Expr, coeffs, dataset: Dataset) -> float:
    return reward_from_nmse(nmse(expr, coeffs, dataset))


# ---------------------------------------------------------------------------
# Coefficient fitting


@dataclass(frozen=True)
class FitConfig:
    max_coeffs: int = 20
    tol: float = 1e-6
    max_evals: int = 2000
    restarts: int = 4
    seed: int | None = None


@dataclass(frozen=True)
class FitResult:
    coefficients: tuple[float, ...]
    nmse: float
    mse: float
    rmse: float
    nrmse: float
    converged: bool
    iterations: int

    @property
    def reward(self) -> float:
        return reward_from_nmse(self.nmse)


_INVALID_FIT = FitResult((), math.inf, math.inf, math.inf, math.inf, False, 0)


def _metrics_result(expr, coeffs, dataset, converged, iterations) -> FitResult:
    m = metrics(expr, coeffs, dataset)
    return FitResult(tuple(float(c) for c in coeffs), m.nmse, m.mse, m.rmse, m.nrmse,
                     converged, iterations)


def _central_diff_grad(fun, c, step_scale=1e-6):
    grad = np.zeros_like(c)
    for i in range(c.size):
        h = step_scale * (1.0 + abs(c[i]))
        up, down = c.copy(), c.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fun(up) - fun(down)) / (2.0 * h)
    return grad


def fit_coefficients(expr: Expr, dataset: Dataset, cfg: FitConfig = FitConfig()) -> FitResult:
    """Fit the coefficient slots of `expr` to the dataset by BFGS on NMSE.

    Expressions with placeholder leaves or more than `max_coeffs` slots are
    not evaluated and come back with infinite NMSE (the -inf fitness
    convention).  Restart starting points are drawn Normal(0,1) from the
    dataset seed; the all-ones vector is always tried first and the best
    point ever seen is kept, so fitting can never worsen it.
    """
    if dataset.n_points == 0:
        raise DataError("dataset has no rows")
    if not is_complete(expr):
        return _INVALID_FIT
    m = n_coefficients(expr)
    if m > cfg.max_coeffs:
        return _INVALID_FIT
    if m == 0:
        return _metrics_result(expr, (), dataset, True, 0)

    sigma2 = dataset.sigma_y**2
    if sigma2 == 0.0:
        raise DegenerateTargetsError("targets have zero variance")
    y = dataset.targets

    best = {"c": np.ones(m), "nmse": math.inf}

    def objective(c):
        pred = np.asarray(evaluate(expr, dataset.inputs, c, dataset.variables), dtype=float)
        with np.errstate(all="ignore"):
            value = float(np.mean((y - pred) ** 2) / sigma2)
        if not np.isfinite(value):
            return 1e18
        if value < best["nmse"]:
            best["nmse"] = value
            best["c"] = np.array(c, dtype=float)
        return value

    seed = dataset.seed if cfg.seed is None else cfg.seed
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, m]))
    starts = [np.ones(m)]
    starts += [rng.normal(0.0, 1.0, size=m) for _ in range(max(0, cfg.restarts - 1))]

    iterations = 0
    converged = False
    for start in starts:
        objective(start)
        # wild candidate expressions overflow inside the line search; the
        # penalized objective and best-seen tracking make that harmless
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(
                objective,
                start,
                method="BFGS",
                jac=lambda c: _central_diff_grad(objective, np.asarray(c, dtype=float)),
                options={"gtol": cfg.tol, "maxiter": cfg.max_evals},
            )
        iterations += int(res.nit)
        converged = converged or bool(res.success)
        if best["nmse"] <= cfg.tol:
            converged = True
            break

    return _metrics_result(expr, best["c"], dataset, converged, iterations)


def _fit_one(args):
    expr, dataset, cfg, seed = args
    return fit_coefficients(expr, dataset, FitConfig(
        max_coeffs=cfg.max_coeffs, tol=cfg.tol, max_evals=cfg.max_evals,
        restarts=cfg.restarts, seed=seed,
    ))


def sequence_seed(seed: int, seq) -> int:
    """Stable per-sequence fitting seed (CRC of the canonical rule string)."""
    import zlib

    from .grammar import sequence_to_string

    return (seed * 2654435761 + zlib.crc32(sequence_to_string(seq).encode())) % (2**31)


class SequenceEvaluator:
    """Fit-and-reward for rule sequences, memoized by canonical text.

    Search algorithms revisit the same completions constantly; caching keeps
    fitting cost proportional to the number of distinct expressions.
    """

    def __init__(self, dataset: Dataset, cfg: FitConfig = FitConfig(), seed: int | None = None):
        self.dataset = dataset
        self.cfg = cfg
        self.seed = dataset.seed if seed is None else seed
        self.cache: dict[tuple, FitResult] = {}

    def fit(self, seq) -> FitResult:
        key = tuple(r.text for r in seq)
        if key not in self.cache:
            from .grammar import expand_sequence

            cfg = FitConfig(
                max_coeffs=self.cfg.max_coeffs,
                tol=self.cfg.tol,
                max_evals=self.cfg.max_evals,
                restarts=self.cfg.restarts,
                seed=sequence_seed(self.seed, seq),
            )
            self.cache[key] = fit_coefficients(expand_sequence(seq).expr, self.dataset, cfg)
        return self.cache[key]


def fit_batch(exprs, dataset: Dataset, cfg: FitConfig = FitConfig(), workers: int = 1):
    """Fit several expressions; each gets its own RNG stream derived from
    (dataset seed, expression index), so parallel and sequential runs agree."""
    base = dataset.seed if cfg.seed is None else cfg.seed
    jobs = [
        (expr, dataset, cfg, (base * 2654435761 + i) % (2**31))
        for i, expr in enumerate(exprs)
    ]
    if workers <= 1:
        return [_fit_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_fit_one, jobs))
