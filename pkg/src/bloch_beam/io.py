"""Result files: RFC-4180 CSV, JSON summaries and optional ``.dat`` mirrors.

Floats are written with ``repr`` so reruns are byte-identical and values
round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import OutputError


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats for strict JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(float(obj.real)), "im": jsonable(float(obj.imag))}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


class Emitter:
    """Single owner of the output directory."""

    def __init__(self, directory, formats: Iterable[str] = ("csv", "json")):
        self.dir = Path(directory)
        self.formats = set(formats)
        self.written: list[Path] = []
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {self.dir}: {exc}") from None

    def _write(self, name: str, text: str) -> Path:
        path = self.dir / name
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from None
        self.written.append(path)
        return path

    def table(self, stem: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
        rows = [[_cell(x) for x in r] for r in rows]
        if "csv" in self.formats:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\r\n")
            w.writerow(header)
            w.writerows(rows)
            self._write(f"{stem}.csv", buf.getvalue())
        if "dat" in self.formats:
            lines = ["# " + " ".join(header)] + [" ".join(r) for r in rows]
            self._write(f"{stem}.dat", "\n".join(lines) + "\n")

    def json(self, stem: str, obj) -> None:
        if "json" in self.formats:
            self._write(f"{stem}.json", dumps(obj))

    def always_json(self, stem: str, obj) -> None:
        self._write(f"{stem}.json", dumps(obj))
