"""Dense posterior inference in n-by-n space.

The posterior mode, predictions, coefficient variances, the error-variance
posterior, and the (proportional) log marginal likelihood are all driven by
the single CoreSolve factorization; nothing here ever forms a p-by-p matrix.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import ColumnStats, MultiSourceDataset, ShrinkageVector, apply_column_stats
from .errors import DataError, NumericalError
from .gram import CoreSolve, GramCache, assemble_g, core_solve
from .matrixio import read_blob_file, write_blob_file


def log_marginal(core: CoreSolve, n: int) -> float:
    """Log marginal likelihood of y given the shrinkage levels, up to a
    lambda-independent constant: -logdet/2 - (n/2) log q.

    Only differences across shrinkage levels are ever used, so the dropped
    normalizer (Gamma functions of n alone) never matters.
    """
    if core.q_lambda <= 0.0:
        raise NumericalError("q_lambda is zero (is the response identically zero?)")
    return -0.5 * core.logdet - 0.5 * n * np.log(core.q_lambda)


def sigma2_posterior(core: CoreSolve, n: int) -> tuple[float, float]:
    """Inverse-gamma shape and scale of the error-variance posterior."""
    return 0.5 * n, 0.5 * core.q_lambda


@dataclass(frozen=True)
class SbrFit:
    """Posterior summary for one shrinkage configuration.

    beta_hat is the length-p mode partitioned by source; var_diag (when
    computed) is the posterior variance diagonal *not* scaled by sigma^2.
    """

    beta_hat: np.ndarray
    lam: ShrinkageVector
    n: int
    source_names: tuple[str, ...]
    source_dims: tuple[int, ...]
    q_lambda: float
    log_marginal: float
    sigma2_shape: float
    sigma2_scale: float
    w_lambda: np.ndarray
    var_diag: np.ndarray | None = None
    column_stats: ColumnStats | None = None

    @property
    def p(self) -> int:
        return int(self.beta_hat.size)

    def beta_blocks(self) -> list[np.ndarray]:
        splits = np.cumsum(self.source_dims)[:-1]
        return np.split(self.beta_hat, splits)

    def with_variances(self, var_diag: np.ndarray) -> "SbrFit":
        return replace(self, var_diag=np.asarray(var_diag, dtype=np.float64))


def posterior_mode(
    cache: GramCache,
    ds: MultiSourceDataset,
    lam: ShrinkageVector,
    core: CoreSolve | None = None,
) -> SbrFit:
    """Posterior mode beta_k = X_k^T w / lambda_k from the shared n-vector w.

    Expects a standardized dataset (the model is stated for standardized
    data); pass a precomputed *core* to reuse its factorization.
    """
    if core is None:
        core = core_solve(assemble_g(cache, lam), ds.y)
    blocks = [
        (xk.T @ core.w_lambda) / lk for xk, lk in zip(ds.blocks, lam.values)
    ]
    n = ds.n
    a, b = sigma2_posterior(core, n)
    return SbrFit(
        beta_hat=np.concatenate(blocks) if blocks else np.zeros(0),
        lam=lam,
        n=n,
        source_names=ds.names,
        source_dims=ds.source_dims,
        q_lambda=core.q_lambda,
        log_marginal=log_marginal(core, n),
        sigma2_shape=a,
        sigma2_scale=b,
        w_lambda=core.w_lambda.copy(),
        column_stats=ds.stats,
    )


def predict(
    fit: SbrFit,
    blocks,
    assume_standardized: bool = False,
    original_scale: bool = False,
) -> np.ndarray:
    """Predict responses for new per-source blocks via X_pred beta_hat.

    Raw inputs are mapped into the training scale using the stored column
    statistics unless *assume_standardized*; *original_scale* maps the
    predictions back to the training response units.
    """
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    if len(blocks) != len(fit.source_dims):
        raise DataError(f"expected {len(fit.source_dims)} sources, got {len(blocks)}")
    for name, pk, b in zip(fit.source_names, fit.source_dims, blocks):
        if b.ndim != 2 or b.shape[1] != pk:
            raise DataError(
                f"source '{name}': prediction block has {b.shape[1] if b.ndim == 2 else '?'} "
                f"columns, fit expects {pk}"
            )
    if not assume_standardized:
        if fit.column_stats is None:
            raise DataError("fit carries no column statistics; pass standardized inputs")
        blocks = apply_column_stats(fit.column_stats, blocks)
    m = blocks[0].shape[0]
    yhat = np.zeros(m)
    for b, beta_k in zip(blocks, fit.beta_blocks()):
        yhat += b @ beta_k
    if original_scale:
        if fit.column_stats is None:
            raise DataError("fit carries no response statistics")
        yhat = yhat * fit.column_stats.y_sd + fit.column_stats.y_mean
    return yhat


def predict_gram(
    pred_blocks,
    train_blocks,
    lam: ShrinkageVector,
    w_lambda: np.ndarray,
) -> np.ndarray:
    """Prediction without forming beta: [sum_k X_k^pred X_k^T / lambda_k] w.

    Equals X_pred beta_hat; useful when only w is kept. Inputs must already
    be in the training scale.
    """
    pred_blocks = [np.asarray(b, dtype=np.float64) for b in pred_blocks]
    m = pred_blocks[0].shape[0] if pred_blocks else 0
    n = np.asarray(w_lambda).size
    cross = np.zeros((m, n))
    for bp, bt, lk in zip(pred_blocks, train_blocks, lam.values):
        if bp.shape[1] != bt.shape[1]:
            raise DataError(
                f"prediction block has {bp.shape[1]} columns, training block {bt.shape[1]}"
            )
        cross += (bp @ bt.T) / lk
    return cross @ np.asarray(w_lambda, dtype=np.float64).ravel()


def posterior_variances(
    cache: GramCache,
    ds: MultiSourceDataset,
    lam: ShrinkageVector,
    block_size: int | None = None,
    workers: int = 1,
    core: CoreSolve | None = None,
) -> np.ndarray:
    """Posterior variance diagonal v_j (unscaled by sigma^2), blockwise.

    For each column block of source k:
    diag(I - X_b^T (I+G)^-1 X_b / lambda_k) / lambda_k. Block boundaries do
    not affect the result; they only bound memory and enable parallelism.
    """
    if block_size is not None and block_size < 1:
        raise ValueError("block_size must be >= 1")
    if core is None:
        core = core_solve(assemble_g(cache, lam), ds.y)

    jobs = []
    offset = 0
    for k, (xk, lk) in enumerate(zip(ds.blocks, lam.values)):
        pk = xk.shape[1]
        bs = block_size if block_size is not None else max(1, -(-pk // (4 * workers)))
        for start in range(0, pk, bs):
            stop = min(start + bs, pk)
            jobs.append((xk, lk, start, stop, offset + start))
        offset += pk

    out = np.empty(ds.total_p)

    def run(job):
        xk, lk, start, stop, dest = job
        xb = xk[:, start:stop]
        ssq = np.einsum("ij,ij->j", xb, core.apply_inverse(xb))
        out[dest:dest + (stop - start)] = (1.0 - ssq / lk) / lk

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)
    # strictly positive in exact arithmetic; guard FP cancellation near zero
    return np.maximum(out, 1e-300)


# ---------------------------------------------------------------------------
# fit file format: key-value header + SBRM blobs

def save_fit(fit: SbrFit, path, estimator: str | None = None) -> None:
    header = {
        "format": "sourceridge-fit-1",
        "n": fit.n,
        "p": fit.p,
        "k": len(fit.source_dims),
        "source_names": list(fit.source_names),
        "source_dims": list(fit.source_dims),
        "lambda": fit.lam.values,
        "estimator": estimator or fit.lam.estimator,
        "sigma2_shape": fit.sigma2_shape,
        "sigma2_scale": fit.sigma2_scale,
        "q_lambda": fit.q_lambda,
        "log_marginal": fit.log_marginal,
    }
    blobs = {"beta_hat": fit.beta_hat, "w_lambda": fit.w_lambda}
    if fit.var_diag is not None:
        blobs["var_diag"] = fit.var_diag
    if fit.column_stats is not None:
        header["y_mean"] = fit.column_stats.y_mean
        header["y_sd"] = fit.column_stats.y_sd
        blobs["col_means"] = np.concatenate(fit.column_stats.means)
        blobs["col_sds"] = np.concatenate(fit.column_stats.sds)
    write_blob_file(path, header, blobs)


def load_fit(path) -> SbrFit:
    header, blobs = read_blob_file(path)
    if header.get("format") != "sourceridge-fit-1":
        raise DataError(f"{path}: not a sourceridge fit file")
    dims = tuple(int(d) for d in header["source_dims"].split(","))
    names = tuple(header["source_names"].split(","))
    lam = ShrinkageVector(
        np.array([float(v) for v in header["lambda"].split(",")]),
        estimator=header.get("estimator", "user"),
    )
    stats = None
    if "col_means" in blobs:
        splits = np.cumsum(dims)[:-1]
        stats = ColumnStats(
            tuple(np.split(blobs["col_means"].ravel(), splits)),
            tuple(np.split(blobs["col_sds"].ravel(), splits)),
            float(header["y_mean"]),
            float(header["y_sd"]),
        )
    return SbrFit(
        beta_hat=blobs["beta_hat"].ravel(),
        lam=lam,
        n=int(header["n"]),
        source_names=names,
        source_dims=dims,
        q_lambda=float(header["q_lambda"]),
        log_marginal=float(header["log_marginal"]),
        sigma2_shape=float(header["sigma2_shape"]),
        sigma2_scale=float(header["sigma2_scale"]),
        w_lambda=blobs["w_lambda"].ravel(),
        var_diag=blobs["var_diag"].ravel() if "var_diag" in blobs else None,
        column_stats=stats,
    )
