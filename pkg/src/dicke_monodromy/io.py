"""Deterministic CSV/JSON output with atomic writes and a checksummed manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(value) -> str:
    """12 significant digits for floats, plain text otherwise."""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # round-trip through the 12-digit format so reruns are byte-identical
        return float(f"{v:.12g}") if np.isfinite(v) else str(v)
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to a temp file in the target directory, then rename."""
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
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class OutputSet:
    """Collects rendered outputs in memory so nothing is written on failure."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def csv(self, name, header, rows):
        self.files[name] = csv_text(header, rows)

    def json(self, name, obj):
        self.files[name] = json_text(obj)

    def text(self, name, text):
        self.files[name] = text

    def commit(self, out_dir) -> dict[str, str]:
        """Write all files atomically in name order; returns name -> sha256."""
        out_dir = Path(out_dir)
        sums = {}
        for name in sorted(self.files):
            p = atomic_write(out_dir / name, self.files[name])
            sums[name] = sha256(p)
        return sums


# preferred (x, y) axes per CSV header; first match wins
PLOT_AXES = [("abscissa", "E"), ("xp", "pp"), ("E", "rho"), ("exp_M", "E")]


def gnuplot_script(files: dict[str, str]) -> str:
    """Render a gnuplot script drawing one panel per CSV in ``files``.

    Only the header line of each CSV is inspected, so the script stays
    valid for any output set.  Files without a recognised axis pair are
    skipped.
    """
    lines = ['set datafile separator ","', "set terminal pngcairo size 800,600",
             "unset key"]
    for name in sorted(files):
        if not name.endswith(".csv"):
            continue
        header = files[name].split("\n", 1)[0].split(",")
        for xa, ya in PLOT_AXES:
            if xa in header and ya in header:
                ix, iy = header.index(xa) + 1, header.index(ya) + 1
                stem = name[:-4]
                lines += [f'set output "{stem}.png"', f'set xlabel "{xa}"',
                          f'set ylabel "{ya}"',
                          f'plot "{name}" every ::1 using {ix}:{iy} with points pt 7 ps 0.4']
                break
    return "\n".join(lines) + "\n"
