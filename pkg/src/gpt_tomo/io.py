"""Counts files, JSON reports and CSV plot tables."""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import ValidationError


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# counts CSV
#
#   m,n                 first line: matrix dimensions (unit column included in n)
#   i,j,n0,n1           one line per measured cell, 0-based, j >= 1
#
# The unit column is implicit and must not appear.

def format_counts(n0, n1, mask=None) -> str:
    n0 = np.asarray(n0)
    n1 = np.asarray(n1)
    m, n = n0.shape
    if mask is None:
        mask = (n0 + n1) > 0
    out = [f"{m},{n}"]
    for i, j in zip(*np.nonzero(mask)):
        if j == 0:
            continue
        out.append(f"{i},{j},{int(n0[i, j])},{int(n1[i, j])}")
    return "\n".join(out) + "\n"


def write_counts(path, n0, n1, mask=None) -> None:
    write_atomic(path, format_counts(n0, n1, mask))


def parse_counts(text: str):
    """Parse a counts file.

    Returns
    -------
    n0, n1 : (m, n) int arrays
    mask : (m, n) bool array, the unit column included

    Raises
    ------
    ValidationError
        On malformed lines, out-of-range indices, duplicate cells, negative
        counts, or any cell in the (implicit) unit column 0.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValidationError("empty counts file")
    try:
        m, n = (int(x) for x in lines[0].split(","))
    except ValueError as exc:
        raise ValidationError(f"first line must be 'm,n', got {lines[0]!r}") from exc
    if m < 1 or n < 2:
        raise ValidationError(f"invalid dimensions m={m}, n={n}")
    n0 = np.zeros((m, n), dtype=np.int64)
    n1 = np.zeros((m, n), dtype=np.int64)
    mask = np.zeros((m, n), dtype=bool)
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        try:
            i, j, a, b = (int(x) for x in parts)
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: expected 'i,j,n0,n1', got {ln!r}") from exc
        if j == 0:
            raise ValidationError(f"line {lineno}: column 0 is the exact unit column and "
                                  "must not appear in a counts file")
        if not (0 <= i < m and 0 < j < n):
            raise ValidationError(f"line {lineno}: cell ({i},{j}) outside {m}x{n}")
        if a < 0 or b < 0 or a + b == 0:
            raise ValidationError(f"line {lineno}: counts must be non-negative with a positive total")
        if mask[i, j]:
            raise ValidationError(f"line {lineno}: duplicate cell ({i},{j})")
        n0[i, j], n1[i, j] = a, b
        mask[i, j] = True
    mask[:, 0] = True
    return n0, n1, mask


def read_counts(path):
    return parse_counts(Path(path).read_text())


# ---------------------------------------------------------------------------
# JSON with 17 significant digits

def _encode(obj, out: list) -> None:
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        out.append(format(x, ".17g") if math.isfinite(x) else "null")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for n, (k, v) in enumerate(obj.items()):
            if n:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        out.append("[")
        for n, v in enumerate(seq):
            if n:
                out.append(", ")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON text with every float written to 17 significant digits; non-finite floats become null."""
    out: list = []
    _encode(obj, out)
    return "".join(out) + "\n"


def write_json(path, obj) -> None:
    write_atomic(path, dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# CSV tables

def format_table(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for r in rows:
        w.writerow(["" if (isinstance(x, float) and not math.isfinite(x)) else
                    (format(x, ".17g") if isinstance(x, float) else x) for x in r])
    return buf.getvalue()


def write_table(path, header, rows) -> None:
    write_atomic(path, format_table(header, rows))
