"""Per-source Gram matrices and the shared n-by-n solve kernel.

Every downstream formula consumes (I + G)^-1 products where
G = sum_k X_k X_k^T / lambda_k, so the Gram matrices are computed once
(column-blocked, optionally in parallel, optionally persisted to disk) and
a single Cholesky factorization per lambda serves the mode, the variances,
the marginal likelihood, and the CV objective.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data import MultiSourceDataset, ShrinkageVector
from .errors import NumericalError
from .matrixio import read_sbrm, write_sbrm

DEFAULT_BLOCK_COLS = 4096


def _block_ranges(p: int, block: int):
    return [(s, min(s + block, p)) for s in range(0, p, block)]


def compute_gram(x: np.ndarray, block_cols: int = DEFAULT_BLOCK_COLS, workers: int = 1) -> np.ndarray:
    """X X^T accumulated over column blocks.

    Blocks are reduced with streaming pairwise summation in a fixed index
    order, so the result is identical for any worker count and memory stays
    O(n^2 log B + n*block). The output is explicitly symmetrized.
    """
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    if block_cols < 1:
        raise ValueError("block_cols must be >= 1")
    ranges = _block_ranges(p, block_cols)

    def partial(rng):
        xb = x[:, rng[0]:rng[1]]
        return xb @ xb.T

    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(partial, ranges)
            g = _pairwise_reduce(parts, n)
    else:
        g = _pairwise_reduce(map(partial, ranges), n)
    return 0.5 * (g + g.T)


def _pairwise_reduce(parts, n: int) -> np.ndarray:
    # stack of (level, matrix); equal levels merge, giving a pairwise tree
    # over the index-ordered stream.
    stack: list[tuple[int, np.ndarray]] = []
    for mat in parts:
        level = 0
        while stack and stack[-1][0] == level:
            prev_level, prev = stack.pop()
            mat = prev + mat
            level = prev_level + 1
        stack.append((level, mat))
    if not stack:
        return np.zeros((n, n))
    acc = stack[0][1]
    for _, mat in stack[1:]:
        acc = acc + mat
    return acc


def source_hash(x: np.ndarray) -> str:
    """Content hash of a source matrix, used to key on-disk Gram caches."""
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    h = hashlib.sha256()
    h.update(np.asarray(x.shape, dtype="<u8").tobytes())
    h.update(x.astype("<f8", copy=False).tobytes(order="C"))
    return h.hexdigest()[:32]


@dataclass(frozen=True)
class GramCache:
    """Immutable per-source Gram matrices G_k = X_k X_k^T."""

    grams: tuple[np.ndarray, ...]
    n: int
    source_dims: tuple[int, ...]
    names: tuple[str, ...]

    @classmethod
    def from_dataset(
        cls,
        ds: MultiSourceDataset,
        block_cols: int = DEFAULT_BLOCK_COLS,
        workers: int = 1,
        cache_dir=None,
    ) -> "GramCache":
        """Compute (or load from *cache_dir*) each source's Gram matrix."""
        grams = []
        for name, block in zip(ds.names, ds.blocks):
            g = None
            path = None
            if cache_dir is not None:
                os.makedirs(cache_dir, exist_ok=True)
                path = os.path.join(cache_dir, f"{source_hash(block)}.gram")
                if os.path.exists(path):
                    g = read_sbrm(path)
            if g is None:
                g = compute_gram(block, block_cols=block_cols, workers=workers)
                if path is not None:
                    write_sbrm(path, g)
            grams.append(g)
        return cls(
            grams=tuple(grams), n=ds.n, source_dims=ds.source_dims, names=ds.names
        )

    @property
    def k(self) -> int:
        return len(self.grams)


def assemble_g(cache: GramCache, lam: ShrinkageVector) -> np.ndarray:
    """G_lambda = sum_k G_k / lambda_k."""
    if len(lam) != cache.k:
        raise ValueError(f"{len(lam)} shrinkage levels for {cache.k} sources")
    g = np.zeros((cache.n, cache.n))
    for gk, lk in zip(cache.grams, lam.values):
        g += gk / lk
    return g


@dataclass(frozen=True)
class CoreSolve:
    """One Cholesky factorization of I + G_lambda and the quantities it buys.

    w_lambda = (I+G)^-1 y, q_lambda = y^T w_lambda, logdet = log|I+G|.
    """

    w_lambda: np.ndarray
    q_lambda: float
    logdet: float
    chol_lower: np.ndarray
    n: int

    def apply_inverse(self, b: np.ndarray) -> np.ndarray:
        """(I + G)^-1 b through the stored factor."""
        return cho_solve((self.chol_lower, True), b)

    def inverse(self) -> np.ndarray:
        """Dense (I + G)^-1; only sensible because n is small."""
        return self.apply_inverse(np.eye(self.n))


def core_solve(g_lambda: np.ndarray, y: np.ndarray) -> CoreSolve:
    """Factor I + G_lambda (SPD for lambda > 0) and solve for y.

    The literal form y - (I+G)^-1 G y equals (I+G)^-1 y, which needs one
    triangular solve pair instead of an extra matrix-vector product.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    c = np.asarray(g_lambda, dtype=np.float64) + np.eye(n)
    try:
        lower, _ = cho_factor(c, lower=True)
    except LinAlgError as exc:
        # scipy's message carries the failing leading-minor index
        raise NumericalError(f"Cholesky of I + G_lambda failed: {exc}") from None
    w = cho_solve((lower, True), y)
    q = float(y @ w)
    logdet = float(2.0 * np.sum(np.log(np.diag(lower))))
    return CoreSolve(w_lambda=w, q_lambda=max(q, 0.0), logdet=logdet, chol_lower=lower, n=n)
