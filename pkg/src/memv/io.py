"""CSV and text-file plumbing for the command line front end."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np

from memv.core import DataError, Dataset

__all__ = [
    "load_csv",
    "save_csv",
    "read_matrix",
    "read_config",
    "atomic_write",
    "fmt",
    "write_rows",
]


def fmt(x) -> str:
    """Format a value for text output; floats keep 12 significant digits."""
    if x is None:
        return "n/a"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".12g")
    return str(x)


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_rows(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _parse_number(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}: column {column!r} has non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}: column {column!r} is not finite ({text!r})")
    return value


def load_csv(
    path: str | os.PathLike,
    response: str,
    covariates: Sequence[str],
    filters: Mapping[str, float] | None = None,
) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    ``filters`` keeps only rows whose named columns equal the given numeric
    values (e.g. ``{"Fat": 0}``).  Row numbers in error messages count data
    rows from 1.
    """
    covariates = list(covariates)
    if not covariates:
        raise DataError("at least one covariate column is required")
    selected = [response, *covariates]
    if len(set(selected)) != len(selected):
        raise DataError("response and covariate selectors must name distinct columns")
    filters = dict(filters or {})
    try:
        fh = open(path, encoding="utf-8-sig", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path} is empty")
        header = [h.strip() for h in header]
        for name in [*selected, *filters]:
            if name not in header:
                raise DataError(f"column {name!r} not found in {path}")
        pos = {name: header.index(name) for name in header}
        ys, ws = [], []
        for i, raw in enumerate(reader, start=1):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) < len(header):
                raise DataError(f"row {i}: expected {len(header)} fields, got {len(raw)}")
            if any(_parse_number(raw[pos[c]].strip(), i, c) != v for c, v in filters.items()):
                continue
            ys.append(_parse_number(raw[pos[response]].strip(), i, response))
            ws.append([_parse_number(raw[pos[c]].strip(), i, c) for c in covariates])
    if not ys:
        raise DataError(f"no data rows in {path}" + (" after filtering" if filters else ""))
    return Dataset(np.array(ys), np.array(ws), covariates)


def save_csv(d: Dataset, path: str | os.PathLike, response: str = "y") -> None:
    names = list(d.column_names or [f"w{j + 1}" for j in range(d.m)])
    rows = ([repr(float(y)), *(repr(float(v)) for v in w)] for y, w in zip(d.y, d.w))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([response, *names])
    writer.writerows(rows)
    atomic_write(path, buf.getvalue())


def read_matrix(path: str | os.PathLike, m: int | None = None) -> np.ndarray:
    """Read an ``m x m`` matrix stored as ``m`` lines of comma-separated values."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rows.append([_parse_number(v.strip(), lineno, f"matrix col {j + 1}") for j, v in enumerate(line.split(","))])
    if not rows or any(len(r) != len(rows) for r in rows):
        raise DataError(f"{path} does not hold a square matrix")
    if m is not None and len(rows) != m:
        raise DataError(f"{path} holds a {len(rows)}x{len(rows)} matrix, expected {m}x{m}")
    return np.array(rows)


def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment line.

    Keys are normalized to underscores so ``sigma0-rel`` and ``sigma0_rel``
    are the same key.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        out[key.strip().lstrip("-").replace("-", "_")] = value
    return out
