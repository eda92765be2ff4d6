"""Shared helpers: random multi-source instances and dense p-by-p oracles.

The oracles deliberately work from the stacked design matrix with plain
dense linear algebra, independent of the n-by-n code paths they check.
"""

import numpy as np
import pytest

from sourceridge import MultiSourceDataset, ShrinkageVector


def make_instance(rng, n, dims, y_scale=1.0, names=None):
    """Random dataset with the given per-source dims (not standardized)."""
    names = names or tuple(f"s{k}" for k in range(len(dims)))
    blocks = tuple(rng.standard_normal((n, p)) for p in dims)
    y = y_scale * rng.standard_normal(n)
    return MultiSourceDataset(y=y, names=names, blocks=blocks)


def lambda_diag(lam: ShrinkageVector, dims):
    return np.diag(lam.per_coefficient(dims))


def dense_ridge_solution(ds, lam):
    """(X'X + Lambda)^-1 X'y by direct p-by-p solve."""
    x = np.hstack(ds.blocks)
    return np.linalg.solve(x.T @ x + lambda_diag(lam, ds.source_dims), x.T @ ds.y)


def dense_covariance(ds, lam):
    """(X'X + Lambda)^-1 by direct p-by-p inversion."""
    x = np.hstack(ds.blocks)
    return np.linalg.inv(x.T @ x + lambda_diag(lam, ds.source_dims))


def loo_rss_brute(ds, lam):
    """Leave-one-out RSS by n literal refits of the p-by-p system."""
    x = np.hstack(ds.blocks)
    lam_d = lambda_diag(lam, ds.source_dims)
    n = ds.n
    total = 0.0
    for i in range(n):
        mask = np.arange(n) != i
        xi, yi = x[mask], ds.y[mask]
        beta = np.linalg.solve(xi.T @ xi + lam_d, xi.T @ yi)
        total += float((ds.y[i] - x[i] @ beta) ** 2)
    return total


def scalar_soft_threshold_oracle(beta_j, v_j, c, a_j):
    """Numerically minimize the one-coordinate penalized quadratic:
    golden-section over the smooth region plus the kink check at 0.

    Runs in extended precision; float64 function values flatten near the
    minimum and would cap localization at ~sqrt(eps) ~ 1.5e-8.
    """
    ld = np.longdouble
    beta_j, v_j, c, a_j = ld(beta_j), ld(v_j), ld(c), ld(a_j)

    def f(t):
        return ld(0.5) * c * (beta_j - t) ** 2 / v_j + a_j * abs(t)

    span = abs(beta_j) + ld(1.0)
    lo, hi = -span, span
    invphi = (np.sqrt(ld(5.0)) - 1) / 2
    a_, b_ = hi - invphi * (hi - lo), lo + invphi * (hi - lo)
    fa, fb = f(a_), f(b_)
    while hi - lo > ld(1e-12):
        if fa < fb:
            hi, b_, fb = b_, a_, fa
            a_ = hi - invphi * (hi - lo)
            fa = f(a_)
        else:
            lo, a_, fa = a_, b_, fb
            b_ = lo + invphi * (hi - lo)
            fb = f(b_)
    t = (lo + hi) / 2
    return float(t) if f(t) < f(ld(0.0)) else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
