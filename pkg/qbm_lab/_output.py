"""
CSV and JSON emission with bit faithful float formatting and atomic replacement
"""

import os
import io
import csv
import json
import tempfile
from pathlib import Path
from typing import Iterable, Sequence, Union, Any

from .testing import test

PathLike = Union[str, "os.PathLike[str]"]


def format_float(x: float, /) -> str:
    """
    Formats a float with 17 significant digits, '.' decimal and no grouping
    """
    return format(float(x), ".17g")


def atomic_write_text(path: PathLike, text: str) -> None:
    """
    Writes text to path through a temporary file in the same directory and os.replace
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, target)
    except BaseException:
        os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence[float]]) -> str:
    """
    Renders rows of floats as csv text under a header line
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(i) for i in row])
    return buf.getvalue()


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    """
    Writes a csv file of floats
    """
    atomic_write_text(path, csv_text(header, rows))


def write_json(path: PathLike, obj: Any) -> None:
    """
    Writes a json document with sorted keys and a trailing newline
    """
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


@test
def test_csv_float_format() -> None:
    """
    Tests csv formatting keeps every bit of a float
    """
    text = csv_text(["t", "v"], [(0.1, 1 / 3), (1e-300, -2.5)])
    lines = text.split("\n")

    assert lines[0] == "t,v"
    assert lines[-1] == ""
    assert float(lines[1].split(",")[1]) == 1 / 3
    assert float(lines[2].split(",")[0]) == 1e-300
    assert lines[2].split(",")[1] == "-2.5"
    assert "," not in format_float(1234567.0)
