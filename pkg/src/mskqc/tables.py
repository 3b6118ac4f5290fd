"""CSV schemas and their readers/writers.

Floats are written with ``repr`` so they parse back to the same double;
undefined values are empty cells; list-valued cells are ``;``-joined.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .errors import FormatError
from .metrics import MetricRecord
from .pipeline import UnitResult

RESULT_COLUMNS = ("case_id", "structure", "side", "dc", "asd_mm", "ave_pct", "aie_hu", "uncertainty", "flags")
SUMMARY_COLUMNS = ("structure", "metric", "n", "mean", "median", "sd")
SCREEN_COLUMNS = ("case_id", "unit", "side", "uncertainty", "flag")
SCREEN_SUMMARY_COLUMNS = ("unit", "ok", "inaccurate", "failed", "unknown")
ROC_COLUMNS = ("threshold", "fpr", "tpr")
AUROC_COLUMNS = ("unit", "k", "dc_threshold", "n_pos", "n_neg", "auroc")
BIOMARKER_COLUMNS = (
    "case_id",
    "source",
    "structure",
    "side",
    "side_status",
    "volume_cc",
    "normalized_volume",
    "normalized",
    "mean_hu",
    "fat",
    "composite",
    "lean",
    "flags",
)
PAIRED_COLUMNS = ("structure", "side", "measure", "n", "mae", "ccc", "test", "route", "p_value", "stars")
HISTOGRAM_COLUMNS = ("bin_lo", "bin_hi", "count")
SCATTER_COLUMNS = ("case_id", "structure", "side", "dc", "uncertainty")
MANIFEST_COLUMNS = (
    "case_id",
    "intensity_path",
    "gt_labels_path",
    "pred_labels_path",
    "stack_dir",
    "uncertainty_path",
    "height_m",
    "side_status",
)
MANIFEST_REQUIRED = ("case_id", "intensity_path")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(str(x) for x in v)
    return str(v)


def parse_float(s: str) -> float:
    return float("nan") if s == "" else float(s)


def parse_list(s: str) -> list[str]:
    return [] if s == "" else s.split(";")


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    Path(path).write_text(to_csv(columns, rows), encoding="utf-8")


def read_csv(path, columns, required=None) -> list[dict[str, str]]:
    """Rows as dicts; the header must match ``columns`` exactly.

    With ``required`` set, the header may be any subset of ``columns`` that
    contains every required column (used for manifests).
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty file, expected header {','.join(columns)}", offset=0) from None
    if required is None:
        for i, col in enumerate(columns):
            if i >= len(header) or header[i] != col:
                raise FormatError(f"{path}: expected column {col!r} at position {i}", column=col)
        if len(header) > len(columns):
            extra = header[len(columns)]
            raise FormatError(f"{path}: unexpected column {extra!r}", column=extra)
    else:
        for col in header:
            if col not in columns:
                raise FormatError(f"{path}: unknown column {col!r}", column=col)
        for col in required:
            if col not in header:
                raise FormatError(f"{path}: missing column {col!r}", column=col)
        if len(set(header)) != len(header):
            dup = next(c for c in header if header.count(c) > 1)
            raise FormatError(f"{path}: duplicate column {dup!r}", column=dup)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise FormatError(f"{path}: line {lineno} has {len(rec)} cells, expected {len(header)}")
        rows.append(dict(zip(header, rec)))
    return rows


# -- results.csv -------------------------------------------------------------


def error_row(case_id: str, exc: BaseException) -> tuple:
    return (case_id, "", "", None, None, None, None, None, [f"error:{type(exc).__name__}"])


def result_row(r: UnitResult) -> tuple:
    m = r.metrics
    return (r.case_id, r.structure, r.side, m.dc, m.asd_mm, m.ave_pct, m.aie_hu, r.uncertainty, r.flags)


def read_results(path) -> tuple[list[UnitResult], list[dict[str, str]]]:
    """Evaluated rows and error rows of a results.csv."""
    units, errors = [], []
    for row in read_csv(path, RESULT_COLUMNS):
        flags = parse_list(row["flags"])
        if any(f.startswith("error:") for f in flags):
            errors.append(row)
            continue
        try:
            rec = MetricRecord(
                parse_float(row["dc"]),
                parse_float(row["asd_mm"]),
                parse_float(row["ave_pct"]),
                parse_float(row["aie_hu"]),
                -1,
                -1,
                flags,
            )
            u = parse_float(row["uncertainty"])
        except ValueError as exc:
            raise FormatError(f"{path}: case {row['case_id']}: {exc}") from None
        units.append(UnitResult(row["case_id"], row["structure"], row["side"], rec, u, flags))
    return units, errors


def results_rows_from_csv(path) -> list[tuple]:
    """Re-emittable tuples, preserving row order (used for round-trip checks)."""
    out = []
    for row in read_csv(path, RESULT_COLUMNS):
        out.append(
            (
                row["case_id"],
                row["structure"],
                row["side"],
                *(parse_float(row[c]) for c in ("dc", "asd_mm", "ave_pct", "aie_hu", "uncertainty")),
                parse_list(row["flags"]),
            )
        )
    return out
