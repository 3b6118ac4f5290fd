"""Accuracy thresholds, failure-detection ROC and uncertainty cutoffs for screening."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CalibrationError, DegenerateLabels, NoNegativeTrend, SingularFit
from .stats import pearson
from .uncertainty import case_uncertainty, is_undefined

MAD_SCALE = 1.4826
K_INACCURATE = -2.0
K_FAILED = -3.0

OK, INACCURATE, FAILED, UNKNOWN = "ok", "inaccurate", "failed", "unknown"
_SEVERITY = {OK: 0, INACCURATE: 1, FAILED: 2}

PER_STRUCTURE = "per_structure"
CASE_AVERAGE = "case_average"
CASE_UNIT = "case_average"


class NoNegativeTrendWarning(UserWarning):
    pass


def median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = v.size
    if n == 0:
        raise CalibrationError("median of an empty sequence")
    mid = n // 2
    if n % 2:
        return float(v[mid])
    return float((v[mid - 1] + v[mid]) / 2.0)


def mad(values) -> float:
    med = median(values)
    return median(np.abs(np.asarray(values, dtype=np.float64) - med))


def mad_threshold(dc_values, k: float) -> float:
    """median + 1.4826 * k * MAD."""
    vals = np.asarray(dc_values, dtype=np.float64)
    if vals.size == 0:
        raise CalibrationError("mad_threshold needs at least one value")
    return median(vals) + MAD_SCALE * k * mad(vals)


@dataclass(frozen=True)
class RocResult:
    points: list[tuple[float, float]]
    thresholds: list[float]
    auroc: float
    n_pos: int
    n_neg: int


def roc_auroc(scores, is_positive) -> RocResult:
    """ROC of ``scores`` (higher = more suspicious) against boolean labels.

    The curve steps through the distinct score values from high to low; tied
    scores move diagonally, which gives them half credit in the area.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(is_positive, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels(f"need both classes, got {n_pos} positive / {n_neg} negative")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    distinct = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[distinct]
    fp = np.cumsum(~y)[distinct]
    tp = np.r_[0, tp].astype(np.int64)
    fp = np.r_[0, fp].astype(np.int64)
    # twice the area in count units, exact in integers
    area2 = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auroc = area2 / (2.0 * n_pos * n_neg)
    points = [(f / n_neg, t / n_pos) for f, t in zip(fp.tolist(), tp.tolist())]
    thresholds = [math.inf] + [float(v) for v in s[distinct]]
    return RocResult(points, thresholds, auroc, n_pos, n_neg)


def trapezoid_area(points) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


@dataclass(frozen=True)
class RegressionLine:
    a: float
    b: float
    rho: float


def fit_dc_uncertainty_regression(dc, u) -> RegressionLine:
    """Ordinary least squares DC = a * U + b, with Pearson rho."""
    dc = np.asarray(dc, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if dc.shape != u.shape or dc.ndim != 1:
        raise ValueError("dc and u must be 1-D and equally long")
    if dc.size < 3:
        raise SingularFit("regression needs at least three pairs")
    if np.ptp(u) == 0:
        raise SingularFit("uncertainty is constant")
    du = u - u.mean()
    suu = float(du @ du)
    a = float(du @ (dc - dc.mean())) / suu
    b = float(dc.mean() - a * u.mean())
    try:
        rho = pearson(u, dc)
    except ValueError:
        rho = float("nan")
    return RegressionLine(a, b, rho)


def uncertainty_cutoff(line, dc_threshold: float) -> float:
    """Invert the regression line: the U at which predicted DC hits the threshold."""
    a, b = (line.a, line.b) if isinstance(line, RegressionLine) else line
    if not a < 0:
        raise NoNegativeTrend(f"slope {a} is not negative; cannot derive an uncertainty cutoff")
    return (dc_threshold - b) / a


def quantile_cutoff(u, dc, dc_threshold: float) -> float:
    """Alternative cutoff: the U quantile that flags as many cases as fall below the DC threshold."""
    u = np.asarray(u, dtype=np.float64)
    frac_bad = float(np.mean(np.asarray(dc, dtype=np.float64) < dc_threshold))
    return float(np.quantile(u, 1.0 - frac_bad))


@dataclass
class UnitCalibration:
    median_dc: float
    mad_dc: float
    dc_thr_inacc: float
    dc_thr_fail: float
    a: float | None
    b: float | None
    rho: float | None
    u_cut_inacc: float | None
    u_cut_fail: float | None
    n: int
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: Mapping) -> "UnitCalibration":
        return cls(
            float(d["median_dc"]),
            float(d["mad_dc"]),
            float(d["dc_thr_inacc"]),
            float(d["dc_thr_fail"]),
            _opt(d.get("a")),
            _opt(d.get("b")),
            _opt(d.get("rho")),
            _opt(d.get("u_cut_inacc")),
            _opt(d.get("u_cut_fail")),
            int(d["n"]),
            list(d.get("warnings", [])),
        )


def _opt(v):
    return None if v is None else float(v)


def calibrate_unit(dc, u, cutoff_method: str = "regression") -> UnitCalibration:
    dc = np.asarray(dc, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    med = median(dc)
    spread = mad(dc)
    thr_i = mad_threshold(dc, K_INACCURATE)
    thr_f = mad_threshold(dc, K_FAILED)
    notes = []
    a = b = rho = cut_i = cut_f = None
    try:
        line = fit_dc_uncertainty_regression(dc, u)
        a, b, rho = line.a, line.b, (None if math.isnan(line.rho) else line.rho)
    except SingularFit as exc:
        notes.append(f"SingularFit: {exc}")
        line = None
    if cutoff_method == "regression":
        if line is None:
            # constant uncertainty: no line to invert, use the quantile rule instead
            notes.append("cutoffs from quantile rule")
            cut_i = quantile_cutoff(u, dc, thr_i)
            cut_f = quantile_cutoff(u, dc, thr_f)
        else:
            try:
                cut_i = uncertainty_cutoff(line, thr_i)
                cut_f = uncertainty_cutoff(line, thr_f)
            except NoNegativeTrend as exc:
                notes.append(f"NoNegativeTrend: {exc}")
                warnings.warn(str(exc), NoNegativeTrendWarning, stacklevel=2)
    elif cutoff_method == "quantile":
        cut_i = quantile_cutoff(u, dc, thr_i)
        cut_f = quantile_cutoff(u, dc, thr_f)
    else:
        raise ValueError(f"unknown cutoff method {cutoff_method!r}")
    return UnitCalibration(med, spread, thr_i, thr_f, a, b, rho, cut_i, cut_f, int(dc.size), notes)


class QcCalibration(dict):
    """Mapping unit name (structure, or ``case_average``) -> UnitCalibration."""

    def to_json(self) -> dict:
        return {k: self[k].to_json() for k in sorted(self)}

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, d: Mapping) -> "QcCalibration":
        return cls({k: UnitCalibration.from_json(v) for k, v in d.items()})

    @classmethod
    def load(cls, path) -> "QcCalibration":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def flag_for(u, cal: UnitCalibration | None) -> str:
    if cal is None or is_undefined(u) or cal.u_cut_fail is None or cal.u_cut_inacc is None:
        return UNKNOWN
    if u > cal.u_cut_fail:
        return FAILED
    if u > cal.u_cut_inacc:
        return INACCURATE
    return OK


def screen_case(per_structure_u: Mapping[str, float], calib: Mapping[str, UnitCalibration], mode: str = PER_STRUCTURE):
    """Flag each structure (or the case average) against its calibrated cutoffs."""
    if mode == PER_STRUCTURE:
        return {unit: flag_for(u, calib.get(unit)) for unit, u in per_structure_u.items()}
    if mode == CASE_AVERAGE:
        try:
            u = case_uncertainty(per_structure_u)
        except ValueError:
            u = float("nan")
        return {CASE_UNIT: flag_for(u, calib.get(CASE_UNIT))}
    raise ValueError(f"unknown screening mode {mode!r}")


def severity(flag: str) -> int:
    return _SEVERITY.get(flag, -1)
