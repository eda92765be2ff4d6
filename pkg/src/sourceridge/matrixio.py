"""Matrix file formats: delimited text (CSV) and the SBRM binary container.

SBRM layout: 8-byte magic ``SBRMAT01``, two little-endian uint64 (rows, cols),
then rows*cols little-endian float64 in row-major order. Round-trips are
bit-exact, which the on-disk caches and dataset serialization rely on.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

SBRM_MAGIC = b"SBRMAT01"
_HEADER = struct.Struct("<8sQQ")


def write_sbrm(path, values: np.ndarray) -> None:
    """Write a 1-D or 2-D float array to *path* in SBRM format."""
    arr = np.ascontiguousarray(np.atleast_2d(np.asarray(values, dtype=np.float64)))
    if arr.ndim != 2:
        raise ValueError("SBRM stores 1-D or 2-D arrays only")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SBRM_MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def read_sbrm(path) -> np.ndarray:
    """Read an SBRM file back into a float64 matrix."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise DataError(f"{path}: truncated SBRM header")
        magic, rows, cols = _HEADER.unpack(head)
        if magic != SBRM_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, not an SBRM file")
        payload = fh.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise DataError(f"{path}: expected {rows}x{cols} float64 payload, file is short")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)


def is_sbrm(path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(8) == SBRM_MAGIC
    except OSError:
        return False


def read_csv_matrix(path) -> tuple[np.ndarray, list[str] | None]:
    """Read a comma-separated numeric matrix.

    The header row is optional: if every token of the first line parses as a
    float the line is data, otherwise it supplies column names. Returns
    ``(matrix, column_names_or_None)``. Non-finite entries are accepted here
    and rejected later with their coordinates (see :func:`check_finite`).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty file")

    names = None
    first = lines[0].split(",")
    try:
        [float(tok) for tok in first]
    except ValueError:
        names = [tok.strip() for tok in first]
        lines = lines[1:]
        if not lines:
            raise DataError(f"{path}: header but no data rows")

    rows = []
    width = None
    for i, ln in enumerate(lines):
        toks = ln.split(",")
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise DataError(f"{path}: row {i} has {len(toks)} fields, expected {width}")
        try:
            rows.append([float(tok) for tok in toks])
        except ValueError as exc:
            raise DataError(f"{path}: row {i}: {exc}") from None
    mat = np.asarray(rows, dtype=np.float64)
    if names is not None and len(names) != mat.shape[1]:
        raise DataError(f"{path}: {len(names)} header names for {mat.shape[1]} columns")
    return mat, names


def write_csv_matrix(path, values: np.ndarray, names: list[str] | None = None) -> None:
    """Write a matrix as CSV with 17 significant digits (round-trip safe)."""
    arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        if names is not None:
            fh.write(",".join(names) + "\n")
        for row in arr:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def load_matrix(path) -> tuple[np.ndarray, list[str] | None]:
    """Load either format, sniffing the SBRM magic bytes."""
    if is_sbrm(path):
        return read_sbrm(path), None
    return read_csv_matrix(path)


def check_finite(mat: np.ndarray, label: str) -> None:
    """Reject NaN/Inf entries, reporting the first offending coordinate."""
    if np.isfinite(mat).all():
        return
    bad = np.argwhere(~np.isfinite(np.atleast_2d(mat)))
    r, c = bad[0]
    raise DataError(
        f"{label}: non-finite entry at row {r}, column {c} "
        f"({bad.shape[0]} non-finite total)"
    )


def format_float(v: float) -> str:
    """17 significant digits: enough for exact float64 round-trip."""
    return format(float(v), ".17g")


def sbrm_bytes(values: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(np.atleast_2d(np.asarray(values, dtype=np.float64)))
    return _HEADER.pack(SBRM_MAGIC, arr.shape[0], arr.shape[1]) + arr.astype(
        "<f8", copy=False
    ).tobytes(order="C")


def sbrm_from_bytes(payload: bytes, label: str = "blob") -> np.ndarray:
    if len(payload) < _HEADER.size:
        raise DataError(f"{label}: truncated SBRM blob")
    magic, rows, cols = _HEADER.unpack(payload[: _HEADER.size])
    if magic != SBRM_MAGIC:
        raise DataError(f"{label}: bad SBRM magic in blob")
    body = payload[_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise DataError(f"{label}: SBRM blob length mismatch")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(rows, cols)


def write_blob_file(path, header: dict, blobs: dict) -> None:
    """Plain-text key-value header followed by named SBRM blobs.

    Used for fit and sparse-solution files: human-readable metadata up front,
    bit-exact arrays behind it.
    """
    with open(path, "wb") as fh:
        for key, val in header.items():
            if isinstance(val, float):
                val = format_float(val)
            elif isinstance(val, (list, tuple, np.ndarray)):
                val = ",".join(
                    format_float(v) if isinstance(v, (float, np.floating)) else str(v)
                    for v in val
                )
            fh.write(f"{key} = {val}\n".encode("utf-8"))
        fh.write(b"---\n")
        for name, arr in blobs.items():
            payload = sbrm_bytes(arr)
            fh.write(f"blob {name} {len(payload)}\n".encode("utf-8"))
            fh.write(payload)


def read_blob_file(path) -> tuple[dict, dict]:
    """Read back a header+blobs file written by :func:`write_blob_file`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\n---\n")
    if sep < 0:
        raise DataError(f"{path}: missing header terminator")
    header = {}
    for lineno, line in enumerate(raw[:sep].decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        header[key.strip()] = val.strip()
    blobs = {}
    pos = sep + len(b"\n---\n")
    while pos < len(raw):
        eol = raw.find(b"\n", pos)
        if eol < 0:
            raise DataError(f"{path}: truncated blob descriptor")
        parts = raw[pos:eol].decode("utf-8").split()
        if len(parts) != 3 or parts[0] != "blob":
            raise DataError(f"{path}: malformed blob descriptor {raw[pos:eol]!r}")
        name, nbytes = parts[1], int(parts[2])
        start = eol + 1
        blobs[name] = sbrm_from_bytes(raw[start:start + nbytes], label=name)
        pos = start + nbytes
    return header, blobs


def write_kv(path, entries: dict) -> None:
    """Write a plain-text key-value file, one ``key = value`` per line.

    Floats go through :func:`format_float`; sequences are comma-joined.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in entries.items():
            if isinstance(val, float):
                val = format_float(val)
            elif isinstance(val, (list, tuple, np.ndarray)):
                val = ",".join(
                    format_float(v) if isinstance(v, (float, np.floating)) else str(v)
                    for v in val
                )
            fh.write(f"{key} = {val}\n")


def read_kv(path) -> dict:
    """Read a ``key = value`` file into an ordered dict of strings."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out
