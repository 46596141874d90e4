"""Shared file helpers for the CSV codecs."""

from __future__ import annotations

import math
import os
import tempfile


class FileFormatError(ValueError):
    """A delimited input file violates its documented schema."""

    def __init__(self, path: str, row: int | None, message: str):
        self.path = str(path)
        self.row = row
        where = self.path if row is None else f"{self.path}:row {row}"
        super().__init__(f"{where}: {message}")


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path via a sibling temp file and rename.

    Readers never observe a partial file: the rename is atomic on POSIX,
    and a crash mid-write leaves the original untouched.
    """
    parent = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(value: float) -> str:
    """Shortest decimal string that round-trips the exact double."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def parse_float(text: str, path: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FileFormatError(path, row, f"column {column!r} is not a number: {text!r}") from None


def parse_int(text: str, path: str, row: int, column: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise FileFormatError(path, row, f"column {column!r} is not an integer: {text!r}") from None


def parse_bool(text: str, path: str, row: int, column: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1"):
        return True
    if lowered in ("false", "0"):
        return False
    raise FileFormatError(path, row, f"column {column!r} is not a boolean: {text!r}")
