"""On-disk formats: event log, manifest, snapshots and plot-ready CSV.

Event log: one JSON object per line, keys in fixed order::

    {"traj": 0, "k": 1, "t": ..., "i": 1, "X": [...], "Z": [...], "C": ...,
     "mode": "grwp", "Q": [...]}

``i`` is 1-based, ``Q`` the full configuration at the collapse time.  Floats
carry 17 significant digits so logs round-trip exactly.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import CollapseEvent


class LogFormatError(ValueError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _vec(v) -> str:
    return "[" + ", ".join(fmt(c) for c in v) + "]"


def event_line(traj: int, ev: CollapseEvent) -> str:
    return (f'{{"traj": {traj}, "k": {ev.k}, "t": {fmt(ev.t)}, "i": {ev.particle + 1}, '
            f'"X": {_vec(ev.center)}, "Z": {_vec(ev.offset)}, "C": {fmt(ev.norm_const)}, '
            f'"mode": "{ev.mode.value}", "Q": {_vec(ev.position)}}}')


def event_log_text(result) -> str:
    return "".join(event_line(traj, ev) + "\n" for traj, ev in result.events())


def write_event_log(result, path) -> None:
    Path(path).write_text(event_log_text(result))


_REQUIRED = {"traj": int, "k": int, "t": float, "i": int, "X": list, "Z": list, "C": float,
             "mode": str}


def parse_event_lines(lines: Iterable[str]) -> list[dict]:
    out = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(no, f"not JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise LogFormatError(no, "record is not an object")
        for key, typ in _REQUIRED.items():
            if key not in rec:
                raise LogFormatError(no, f"missing key {key!r}")
            val = rec[key]
            ok = isinstance(val, (int, float)) if typ is float else isinstance(val, typ)
            if not ok or isinstance(val, bool):
                raise LogFormatError(no, f"bad type for {key!r}")
        if len(rec["X"]) != len(rec["Z"]) or not rec["X"]:
            raise LogFormatError(no, "X and Z must be equal-length vectors")
        out.append(rec)
    return out


def read_event_log(path) -> list[dict]:
    with open(path) as fh:
        return parse_event_lines(fh)


def write_manifest(result, path) -> None:
    Path(path).write_text(json.dumps(result.manifest(), indent=2, sort_keys=True) + "\n")


def snapshot_text(result) -> str:
    d = result.config.grid.ndim
    buf = io.StringIO()
    buf.write("traj,t," + ",".join(f"q{k + 1}" for k in range(d)) + "\n")
    for rec in result.survivors:
        for t, q in zip(rec.snapshot_times, rec.snapshots):
            if np.all(np.isfinite(q)):
                buf.write(f"{rec.index},{fmt(t)}," + ",".join(fmt(c) for c in q) + "\n")
    return buf.getvalue()


def write_snapshots(result, path) -> None:
    Path(path).write_text(snapshot_text(result))


def read_snapshots(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        q = [float(row[k]) for k in row if k.startswith("q")]
        out.append({"traj": int(row["traj"]), "t": float(row["t"]), "q": q})
    return out


def histogram_rows(values, bins: int, value_range: Optional[tuple] = None):
    counts, edges = np.histogram(np.asarray(values, float), bins=bins, range=value_range)
    return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def cdf_rows(values):
    x = np.sort(np.asarray(values, float))
    f = np.arange(1, x.size + 1) / x.size
    return list(zip(x.tolist(), f.tolist()))


def write_csv(rows, header, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in row])
