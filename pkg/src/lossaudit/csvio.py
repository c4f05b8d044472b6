"""Flat-file formats.

Signal matrix CSV::

    #kind=<Shadow|Population|Reference|Distilled|LeaveOneOut|External>
    #config=<hash>            (optional)
    #labels=<l1>,<l2>,...     (optional, one label per record column)
    model_id,<record_id>,<record_id>,...
    <model_id>,<loss>,<loss>,...

Losses are written with ``repr(float)``, the shortest decimal string that
round-trips to the same double. A membership companion ``<name>.membership.csv``
has the same layout with 0/1 cells.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
import numpy as np

from .core import SignalMatrix, ValidationError, validate_matrix

KINDS = ("Shadow", "Population", "Reference", "Distilled", "LeaveOneOut", "External")


def fmt(x: float) -> str:
    return repr(float(x))


def membership_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name[:-4] + ".membership.csv") if path.name.endswith(".csv") \
        else path.with_name(path.name + ".membership.csv")


def write_matrix(path, matrix: SignalMatrix, kind: str, *, config_hash: str = "",
                 labels=None) -> Path:
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    matrix.check()
    path = Path(path)

    def _write(p, cells, fmt_cell):
        with open(p, "w", newline="") as fh:
            fh.write(f"#kind={kind}\n")
            if config_hash:
                fh.write(f"#config={config_hash}\n")
            if labels is not None:
                fh.write("#labels=" + ",".join(str(int(l)) for l in labels) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_id"] + [str(r) for r in matrix.record_ids])
            for mid, row in zip(matrix.model_ids, cells):
                w.writerow([mid] + [fmt_cell(v) for v in row])

    _write(path, matrix.values, fmt)
    if matrix.membership is not None:
        _write(membership_path(path), matrix.membership, lambda v: str(int(v)))
    return path


def _parse(path) -> tuple[str, dict, list[int], list[str], list[list[str]], list[int]]:
    with open(path, newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith("#kind="):
        raise ValidationError(f"{path}: line 1: expected '#kind=<kind>'")
    kind = lines[0][len("#kind="):].strip()
    if kind not in KINDS:
        raise ValidationError(f"{path}: line 1: unknown kind {kind!r}")
    meta: dict = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, val = lines[i][1:].partition("=")
        meta[key.strip()] = val.strip()
        i += 1
    if i >= len(lines):
        raise ValidationError(f"{path}: missing header line")
    header = next(csv.reader([lines[i]]))
    if not header or header[0] != "model_id":
        raise ValidationError(f"{path}: line {i + 1}: header must start with 'model_id'")
    try:
        record_ids = [int(h) for h in header[1:]]
    except ValueError as exc:
        raise ValidationError(f"{path}: line {i + 1}: bad record id ({exc})") from None
    rows, line_numbers, model_ids = [], [], []
    for j in range(i + 1, len(lines)):
        cells = next(csv.reader([lines[j]]))
        if len(cells) != len(header):
            raise ValidationError(f"{path}: line {j + 1}: expected {len(header)} cells, got {len(cells)}")
        model_ids.append(cells[0])
        rows.append(cells[1:])
        line_numbers.append(j + 1)
    return kind, meta, record_ids, model_ids, rows, line_numbers


def read_matrix(path) -> tuple[SignalMatrix, str, dict]:
    """Parse and validate a signal matrix file; errors cite line numbers."""
    path = Path(path)
    kind, meta, record_ids, model_ids, rows, line_numbers = _parse(path)
    values = np.empty((len(rows), len(record_ids)))
    for r, (cells, ln) in enumerate(zip(rows, line_numbers)):
        for c, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise ValidationError(f"{path}: line {ln}: unparseable value {cell!r}") from None
            if not math.isfinite(v):
                raise ValidationError(f"{path}: line {ln}: non-finite value {cell!r}")
            if v < 0:
                raise ValidationError(f"{path}: line {ln}: negative loss {cell}")
            values[r, c] = v
    membership = None
    mpath = membership_path(path)
    if mpath.exists():
        mkind, _, mrec, mmod, mrows, mlines = _parse(mpath)
        if mrec != record_ids or mmod != model_ids:
            raise ValidationError(f"{mpath}: header or model ids differ from {path.name}")
        membership = np.zeros(values.shape, dtype=np.int8)
        for r, (cells, ln) in enumerate(zip(mrows, mlines)):
            for c, cell in enumerate(cells):
                if cell not in ("0", "1"):
                    raise ValidationError(f"{mpath}: line {ln}: membership cell must be 0 or 1")
                membership[r, c] = int(cell)
    m = SignalMatrix(model_ids, record_ids, values, membership)
    problem = validate_matrix(m)
    if problem is not None:
        raise ValidationError(f"{path}: {problem}")
    if "labels" in meta:
        labels = [int(x) for x in meta["labels"].split(",")] if meta["labels"] else []
        if len(labels) != len(record_ids):
            raise ValidationError(f"{path}: labels line has {len(labels)} entries for {len(record_ids)} columns")
        meta["labels"] = labels
    return m, kind, meta


def write_rows(path, header: list[str], rows, config_hash: str = "") -> Path:
    """Plain CSV with an optional ``#config=<hash>`` first line."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"#config={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln and not ln.startswith("#")]
    reader = list(csv.reader(lines))
    return reader[0], reader[1:]
