"""Multi-source dataset container, standardization, and shrinkage vector.

A dataset is a response vector plus K named covariate blocks sharing the same
rows. Everything here is immutable after construction so datasets and
shrinkage vectors can be shared freely across worker threads.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .matrixio import (
    check_finite,
    load_matrix,
    read_kv,
    read_sbrm,
    write_kv,
    write_sbrm,
)

# Relative floor below which a column counts as constant.
_ZERO_SD = 1e-13


@dataclass(frozen=True)
class ColumnStats:
    """Per-column means/sds recorded when a dataset was standardized.

    These are in original data units, so new observations can be mapped into
    the training scale and predictions mapped back.
    """

    means: tuple[np.ndarray, ...]
    sds: tuple[np.ndarray, ...]
    y_mean: float
    y_sd: float


@dataclass(frozen=True)
class ShrinkageVector:
    """One strictly positive shrinkage level per covariate source."""

    values: np.ndarray
    estimator: str = "user"  # cv | ml | map | user
    upper_bound: float = 1e15

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "values", vals)
        if vals.size < 1:
            raise ValueError("shrinkage vector must have at least one entry")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError(f"shrinkage levels must be finite and > 0, got {vals}")
        if np.any(vals > self.upper_bound):
            raise ValueError(
                f"shrinkage level exceeds upper bound {self.upper_bound:g}: {vals}"
            )

    def __len__(self):
        return self.values.size

    def inverse(self) -> np.ndarray:
        return 1.0 / self.values

    def per_coefficient(self, source_dims) -> np.ndarray:
        """Expand to a length-p vector, repeating each level over its block."""
        if len(source_dims) != len(self):
            raise ValueError("source count mismatch")
        return np.repeat(self.values, np.asarray(source_dims, dtype=np.int64))


@dataclass(frozen=True)
class MultiSourceDataset:
    """Response vector plus K named covariate blocks with n rows each."""

    y: np.ndarray
    names: tuple[str, ...]
    blocks: tuple[np.ndarray, ...]
    standardized: tuple[bool, ...] = ()
    y_standardized: bool = False
    stats: ColumnStats | None = None
    column_names: tuple[tuple[str, ...] | None, ...] = field(default=None)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).ravel()
        object.__setattr__(self, "y", y)
        blocks = tuple(np.asarray(b, dtype=np.float64) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if len(blocks) < 1:
            raise DataError("dataset needs at least one covariate source")
        if len(self.names) != len(blocks):
            raise DataError("one name per source required")
        if not self.standardized:
            object.__setattr__(self, "standardized", (False,) * len(blocks))
        if self.column_names is None:
            object.__setattr__(self, "column_names", (None,) * len(blocks))
        n = y.size
        for name, b in zip(self.names, blocks):
            if b.ndim != 2 or b.shape[1] < 1:
                raise DataError(f"source '{name}': expected a 2-D block with >= 1 column")
            if b.shape[0] != n:
                raise DataError(
                    f"source '{name}' has {b.shape[0]} rows but the response has {n}"
                )
        check_finite(y.reshape(-1, 1), "response")
        for name, b in zip(self.names, blocks):
            check_finite(b, f"source '{name}'")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def k(self) -> int:
        return len(self.blocks)

    @property
    def source_dims(self) -> tuple[int, ...]:
        return tuple(b.shape[1] for b in self.blocks)

    @property
    def total_p(self) -> int:
        return sum(self.source_dims)


def load_dataset(source_paths, response_path) -> MultiSourceDataset:
    """Load per-source matrices plus the response from CSV or SBRM files.

    ``source_paths`` is an ordered mapping of name -> path (or a list of
    (name, path) pairs). Row counts must agree everywhere.
    """
    if isinstance(source_paths, dict):
        items = list(source_paths.items())
    else:
        items = [tuple(it) for it in source_paths]
    if not items:
        raise DataError("at least one covariate source is required")

    yraw, _ = load_matrix(response_path)
    if 1 not in yraw.shape and yraw.ndim == 2:
        raise DataError(f"response {response_path}: expected a single row or column")
    y = yraw.ravel()

    names, blocks, colnames = [], [], []
    for name, path in items:
        mat, cols = load_matrix(path)
        names.append(str(name))
        blocks.append(mat)
        colnames.append(tuple(cols) if cols is not None else None)

    return MultiSourceDataset(
        y=y, names=tuple(names), blocks=tuple(blocks), column_names=tuple(colnames)
    )


def _column_sds(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    means = block.mean(axis=0)
    sds = block.std(axis=0, ddof=1) if block.shape[0] > 1 else np.zeros(block.shape[1])
    return means, sds


def _constant_cols(means: np.ndarray, sds: np.ndarray) -> np.ndarray:
    return np.flatnonzero(sds <= _ZERO_SD * np.maximum(1.0, np.abs(means)))


def standardize(ds: MultiSourceDataset) -> MultiSourceDataset:
    """Rescale every column (and y) to mean 0, sd 1 (n-1 denominator).

    Column statistics are recorded in original units so that later inputs can
    reuse the training scale; restandardizing composes the stats instead of
    overwriting them. Zero-variance columns are a hard error, see
    :func:`drop_constant_columns`.
    """
    new_blocks, means_all, sds_all = [], [], []
    for name, block in zip(ds.names, ds.blocks):
        means, sds = _column_sds(block)
        bad = _constant_cols(means, sds)
        if bad.size:
            raise DataError(
                f"source '{name}': zero-variance column(s) at indices {bad.tolist()}; "
                "clean the data or pass --drop-constant"
            )
        new_blocks.append((block - means) / sds)
        means_all.append(means)
        sds_all.append(sds)

    y_mean = float(ds.y.mean())
    y_sd = float(ds.y.std(ddof=1)) if ds.n > 1 else 0.0
    if y_sd <= _ZERO_SD * max(1.0, abs(y_mean)):
        raise DataError("response has zero variance")
    new_y = (ds.y - y_mean) / y_sd

    if ds.stats is None:
        stats = ColumnStats(tuple(means_all), tuple(sds_all), y_mean, y_sd)
    else:
        # compose with the earlier transform: total = old then new
        stats = ColumnStats(
            tuple(om + os * m for om, os, m in zip(ds.stats.means, ds.stats.sds, means_all)),
            tuple(os * s for os, s in zip(ds.stats.sds, sds_all)),
            ds.stats.y_mean + ds.stats.y_sd * y_mean,
            ds.stats.y_sd * y_sd,
        )

    return replace(
        ds,
        y=new_y,
        blocks=tuple(new_blocks),
        standardized=(True,) * ds.k,
        y_standardized=True,
        stats=stats,
    )


def drop_constant_columns(ds: MultiSourceDataset):
    """Remove zero-variance columns, returning (dataset, kept-index tuple).

    Raises if a source would lose all of its columns.
    """
    new_blocks, kept_all, new_colnames = [], [], []
    dropped = 0
    for name, block, cols in zip(ds.names, ds.blocks, ds.column_names):
        means, sds = _column_sds(block)
        bad = _constant_cols(means, sds)
        keep = np.setdiff1d(np.arange(block.shape[1]), bad)
        if keep.size == 0:
            raise DataError(f"source '{name}': every column is constant")
        dropped += bad.size
        new_blocks.append(block[:, keep])
        kept_all.append(keep)
        new_colnames.append(tuple(cols[i] for i in keep) if cols is not None else None)
    out = replace(ds, blocks=tuple(new_blocks), column_names=tuple(new_colnames))
    return out, tuple(kept_all), dropped


def apply_column_stats(stats: ColumnStats, blocks) -> list[np.ndarray]:
    """Map raw blocks into the training scale recorded in *stats*."""
    if len(blocks) != len(stats.means):
        raise DataError(f"expected {len(stats.means)} sources, got {len(blocks)}")
    out = []
    for k, block in enumerate(blocks):
        block = np.asarray(block, dtype=np.float64)
        if block.shape[1] != stats.means[k].size:
            raise DataError(
                f"source index {k}: {block.shape[1]} columns, "
                f"training data had {stats.means[k].size}"
            )
        out.append((block - stats.means[k]) / stats.sds[k])
    return out


# ---------------------------------------------------------------------------
# dataset directory serialization

def save_dataset(ds: MultiSourceDataset, directory) -> None:
    """Write a dataset as one SBRM file per source plus a manifest."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format": "sourceridge-dataset-1",
        "n": ds.n,
        "k": ds.k,
        "response_file": "y.sbrm",
        "y_standardized": int(ds.y_standardized),
    }
    write_sbrm(os.path.join(directory, "y.sbrm"), ds.y)
    for i, (name, block) in enumerate(zip(ds.names, ds.blocks)):
        fname = f"source_{i:02d}_{name}.sbrm"
        write_sbrm(os.path.join(directory, fname), block)
        manifest[f"source_{i}_name"] = name
        manifest[f"source_{i}_file"] = fname
        manifest[f"source_{i}_standardized"] = int(ds.standardized[i])
    if ds.stats is not None:
        manifest["stats"] = "stats.sbrm"
        manifest["y_mean"] = ds.stats.y_mean
        manifest["y_sd"] = ds.stats.y_sd
        packed = np.vstack(
            [np.concatenate(ds.stats.means), np.concatenate(ds.stats.sds)]
        )
        write_sbrm(os.path.join(directory, "stats.sbrm"), packed)
    write_kv(os.path.join(directory, "dataset.manifest"), manifest)


def load_dataset_dir(directory) -> MultiSourceDataset:
    """Load a dataset previously written by :func:`save_dataset`."""
    manifest_path = os.path.join(directory, "dataset.manifest")
    if not os.path.exists(manifest_path):
        raise DataError(f"{directory}: no dataset.manifest found")
    mf = read_kv(manifest_path)
    k = int(mf["k"])
    y = read_sbrm(os.path.join(directory, mf["response_file"])).ravel()
    names, blocks, flags = [], [], []
    for i in range(k):
        names.append(mf[f"source_{i}_name"])
        blocks.append(read_sbrm(os.path.join(directory, mf[f"source_{i}_file"])))
        flags.append(bool(int(mf.get(f"source_{i}_standardized", "0"))))
    stats = None
    if "stats" in mf:
        packed = read_sbrm(os.path.join(directory, mf["stats"]))
        dims = [b.shape[1] for b in blocks]
        splits = np.cumsum(dims)[:-1]
        stats = ColumnStats(
            tuple(np.split(packed[0], splits)),
            tuple(np.split(packed[1], splits)),
            float(mf["y_mean"]),
            float(mf["y_sd"]),
        )
    return MultiSourceDataset(
        y=y,
        names=tuple(names),
        blocks=tuple(blocks),
        standardized=tuple(flags),
        y_standardized=bool(int(mf.get("y_standardized", "0"))),
        stats=stats,
    )
