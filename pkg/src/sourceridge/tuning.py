"""Empirical-Bayes shrinkage tuning: CV, ML, and MAP objectives plus a
bounded multi-start Nelder-Mead search in log-shrinkage space.

All three objectives cost one n-by-n Cholesky per evaluation and the number
of sources is small, so a derivative-free simplex over log(lambda) is both
robust to the many-orders-of-magnitude scale of useful shrinkage levels and
cheap enough for a few thousand evaluations.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .data import ShrinkageVector
from .errors import NumericalError
from .fit import log_marginal
from .gram import CoreSolve, GramCache, assemble_g, core_solve

MAX_SOURCES = 32

_ESTIMATORS = ("cv", "ml", "map")


def _cv_from_core(core: CoreSolve, y: np.ndarray) -> float:
    cinv = core.inverse()
    diag = np.diag(cinv).copy()
    if np.any(diag < 1e-300):
        # cannot happen for SPD I+G, but the division below must stay safe
        raise NumericalError("degenerate diagonal in (I+G)^-1")
    resid = cinv @ y
    return float(np.sum((resid / diag) ** 2))


def cv_objective(cache: GramCache, y: np.ndarray, lam: ShrinkageVector) -> float:
    """Closed-form leave-one-out residual sum of squares.

    Equals sum_i (e_i / (1 - h_ii))^2 where e = (I+G)^-1 y and h is the ridge
    hat matrix; no refits are performed.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    core = core_solve(assemble_g(cache, lam), y)
    return _cv_from_core(core, y)


def ml_objective(core: CoreSolve, n: int) -> float:
    """Log marginal likelihood (to be maximized); same value as the fit module."""
    return log_marginal(core, n)


def map_objective(
    core: CoreSolve, n: int, lam: ShrinkageVector, lam_cv: ShrinkageVector
) -> float:
    """Log posterior of lambda under the exponential prior centered on the
    CV estimate: log-ML minus sum_k lambda_k / lambda_k_CV."""
    if np.any(lam_cv.values <= 0):
        raise ValueError("CV reference shrinkage levels must be positive")
    return log_marginal(core, n) - float(np.sum(lam.values / lam_cv.values))


@dataclass
class TuneConfig:
    estimator: str = "map"
    log_lambda_bounds: tuple[float, float] = (-12.0, 12.0)
    restarts: int = 5
    tolerance: float = 1e-6
    max_evals: int = 2000
    seed: int = 0
    keep_trace: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.estimator not in _ESTIMATORS:
            raise ValueError(f"estimator must be one of {_ESTIMATORS}")
        lo, hi = self.log_lambda_bounds
        if not lo < hi:
            raise ValueError("log_lambda_bounds must satisfy lower < upper")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class TuneResult:
    """Outcome of one tuning run.

    objective_value is in the minimized sense used internally: the LOO RSS
    for cv, and the *negative* log objective for ml/map.
    """

    lambda_hat: ShrinkageVector
    objective_value: float
    evals_used: int
    converged: bool
    starts: list = field(default_factory=list)
    trace: list | None = None
    cv_reference: ShrinkageVector | None = None


def _start_points(k: int, cfg: TuneConfig) -> list[np.ndarray]:
    lo, hi = cfg.log_lambda_bounds
    starts = [np.clip(np.zeros(k), lo, hi)]
    if cfg.restarts > 1:
        sampler = qmc.LatinHypercube(d=k, seed=cfg.seed)
        unit = sampler.random(cfg.restarts - 1)
        starts.extend(lo + (hi - lo) * row for row in unit)
    return starts


def tune(cache: GramCache, y: np.ndarray, cfg: TuneConfig) -> TuneResult:
    """Estimate the shrinkage vector by minimizing the configured objective.

    Multi-start Nelder-Mead over log(lambda) clamped to the configured box;
    the first start is log(lambda) = 0, the rest fill the box by a seeded
    Latin hypercube. Ties across restarts break to the lexicographically
    smallest lambda. For the map estimator the cv tune runs first to center
    the exponential prior.
    """
    k = cache.k
    if k > MAX_SOURCES:
        raise ValueError(f"tuning supports at most {MAX_SOURCES} sources, got {k}")
    y = np.asarray(y, dtype=np.float64).ravel()
    lo, hi = cfg.log_lambda_bounds

    cv_ref = None
    extra_evals = 0
    if cfg.estimator == "map":
        cv_cfg = TuneConfig(
            estimator="cv",
            log_lambda_bounds=cfg.log_lambda_bounds,
            restarts=cfg.restarts,
            tolerance=cfg.tolerance,
            max_evals=cfg.max_evals,
            seed=cfg.seed,
            workers=cfg.workers,
        )
        cv_result = tune(cache, y, cv_cfg)
        cv_ref = ShrinkageVector(cv_result.lambda_hat.values, estimator="cv")
        extra_evals = cv_result.evals_used

    trace = [] if cfg.keep_trace else None

    def minimized(z: np.ndarray) -> float:
        lam = ShrinkageVector(np.exp(np.clip(z, lo, hi)), estimator=cfg.estimator)
        core = core_solve(assemble_g(cache, lam), y)
        if cfg.estimator == "cv":
            val = _cv_from_core(core, y)
        elif cfg.estimator == "ml":
            val = -ml_objective(core, y.size)
        else:
            val = -map_objective(core, y.size, lam, cv_ref)
        if trace is not None:
            trace.append((lam.values.copy(), val))
        return val

    starts = _start_points(k, cfg)
    per_start = max(k + 2, cfg.max_evals // len(starts))
    counter = {"evals": 0}

    def counted(z):
        counter["evals"] += 1
        return minimized(z)

    def run_start(x0):
        return minimize(
            counted,
            x0,
            method="Nelder-Mead",
            bounds=[(lo, hi)] * k,
            options={
                "fatol": cfg.tolerance,
                "xatol": 1e-4,
                "maxfev": per_start,
            },
        )

    if cfg.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_start, starts))
    else:
        results = [run_start(x0) for x0 in starts]

    # lowest objective wins; exact ties break lexicographically on lambda
    def sort_key(res):
        lam = np.exp(np.clip(res.x, lo, hi))
        return (res.fun, tuple(lam))

    best = min(results, key=sort_key)
    lam_hat = ShrinkageVector(
        np.exp(np.clip(best.x, lo, hi)),
        estimator=cfg.estimator,
        upper_bound=max(1e15, float(np.exp(hi))),
    )
    return TuneResult(
        lambda_hat=lam_hat,
        objective_value=float(best.fun),
        evals_used=counter["evals"] + extra_evals,
        converged=bool(best.success),
        starts=[np.exp(s) for s in starts],
        trace=trace,
        cv_reference=cv_ref,
    )


def bound_hits(result: TuneResult, cfg: TuneConfig, rel_tol: float = 1e-3) -> list[int]:
    """Indices of sources whose tuned level sits on the upper bound."""
    hi = np.exp(cfg.log_lambda_bounds[1])
    return [
        i for i, v in enumerate(result.lambda_hat.values) if v >= hi * (1.0 - rel_tol)
    ]
