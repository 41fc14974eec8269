"""Line-oriented text serialization for arrays and tagged records.

All floats are printed with 17 significant digits so that float64 values
round-trip bit-exactly.  A file is a sequence of sections; each section
starts with a `key value...` header line and array sections are followed
by one row per line.
"""

from __future__ import annotations

import io
from typing import TextIO

import numpy as np

FLOAT_FMT = "%.17g"


def format_real(x: float) -> str:
    return FLOAT_FMT % float(x)


def format_row(row) -> str:
    return " ".join(FLOAT_FMT % v for v in np.asarray(row, dtype=float).ravel())


def write_matrix(out: TextIO, key: str, a) -> None:
    """Write `key nrows ncols` then one line per row."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    out.write(f"{key} {a.shape[0]} {a.shape[1]}\n")
    for row in a:
        out.write(format_row(row) + "\n")


def write_vector(out: TextIO, key: str, v) -> None:
    v = np.asarray(v, dtype=float).ravel()
    out.write(f"{key} {v.size}\n")
    out.write(format_row(v) + "\n" if v.size else "\n")


def write_scalar(out: TextIO, key: str, x: float) -> None:
    out.write(f"{key} {format_real(x)}\n")


def write_int(out: TextIO, key: str, x: int) -> None:
    out.write(f"{key} {int(x)}\n")


def write_str(out: TextIO, key: str, s: str) -> None:
    out.write(f"{key} {s}\n")


class SectionReader:
    """Pull-parser over the section format written by the helpers above."""

    def __init__(self, text: str):
        self._lines = [ln for ln in text.splitlines() if ln.strip() != ""]
        self._pos = 0

    def peek_key(self) -> str | None:
        if self._pos >= len(self._lines):
            return None
        return self._lines[self._pos].split(maxsplit=1)[0]

    def _next(self) -> list[str]:
        if self._pos >= len(self._lines):
            raise ValueError("unexpected end of input")
        parts = self._lines[self._pos].split()
        self._pos += 1
        return parts

    def read_str(self, key: str) -> str:
        parts = self._next()
        if parts[0] != key:
            raise ValueError(f"expected section '{key}', found '{parts[0]}'")
        return " ".join(parts[1:])

    def read_int(self, key: str) -> int:
        return int(self.read_str(key))

    def read_scalar(self, key: str) -> float:
        return float(self.read_str(key))

    def read_vector(self, key: str) -> np.ndarray:
        n = self.read_int(key)
        if n == 0:
            # the empty row may have been dropped by the blank-line filter
            return np.zeros(0)
        vals = self._next()
        if len(vals) != n:
            raise ValueError(f"section '{key}': expected {n} values, found {len(vals)}")
        return np.array([float(v) for v in vals])

    def read_matrix(self, key: str) -> np.ndarray:
        parts = self._next()
        if parts[0] != key:
            raise ValueError(f"expected section '{key}', found '{parts[0]}'")
        nrows, ncols = int(parts[1]), int(parts[2])
        rows = []
        for _ in range(nrows):
            vals = self._next()
            if len(vals) != ncols:
                raise ValueError(f"section '{key}': ragged row")
            rows.append([float(v) for v in vals])

        return np.array(rows, dtype=float).reshape(nrows, ncols)


def dumps(writer) -> str:
    """Run `writer(out)` against a string buffer and return the text."""
    buf = io.StringIO()
    writer(buf)
    return buf.getvalue()
