"""Per-case and per-cohort procedures shared by the CLI and library callers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .anatomy import split_left_right
from .biomarkers import BiomarkerRecord, measure
from .core import BinaryMask, IntensityVolume, LabelVolume, StructureRegistry, default_registry
from .metrics import MetricRecord, evaluate_masks
from .qc import CASE_UNIT, PER_STRUCTURE, QcCalibration, calibrate_unit, flag_for
from .uncertainty import SampleStack, UncertaintyMap, aggregate_mc_samples, is_undefined, mask_uncertainty

WHOLE = "whole"


@dataclass
class UnitResult:
    case_id: str
    structure: str
    side: str
    metrics: MetricRecord
    uncertainty: float
    flags: list[str] = field(default_factory=list)

    @property
    def key(self):
        return (self.case_id, self.structure, self.side)


@dataclass(frozen=True)
class UnitUncertainty:
    case_id: str
    structure: str
    side: str
    uncertainty: float


def structure_units(labels: LabelVolume, code: int, registry: StructureRegistry, connectivity: int = 26):
    """``{side: mask}`` for one structure plus any split flags; unsided structures give ``{"whole": mask}``."""
    info = registry.by_code(code)
    mask = BinaryMask(labels.geometry, labels.data == code)
    if not info.sided:
        return {WHOLE: mask}, []
    split = split_left_right(mask, connectivity=connectivity)
    return {"L": split.left, "R": split.right}, list(split.flags)


def present_codes(registry: StructureRegistry, *labels: LabelVolume) -> list[int]:
    seen = set()
    for lab in labels:
        seen.update(int(c) for c in np.unique(lab.data) if c != 0)
    return [c for c in registry.codes() if c in seen]


def evaluate_case(
    case_id: str,
    img: IntensityVolume,
    gt: LabelVolume,
    pred: LabelVolume,
    umap: UncertaintyMap | None,
    registry: StructureRegistry | None = None,
    connectivity: int = 26,
) -> list[UnitResult]:
    """Metrics and structure-wise uncertainty for every structure/side in GT or prediction."""
    registry = registry or default_registry()
    out = []
    for code in present_codes(registry, gt, pred):
        name = registry.by_code(code).name
        gt_units, gt_flags = structure_units(gt, code, registry, connectivity)
        pr_units, pr_flags = structure_units(pred, code, registry, connectivity)
        split_flags = {f"gt_{f}" for f in gt_flags} | {f"pred_{f}" for f in pr_flags}
        for side in gt_units:
            rec = evaluate_masks(gt_units[side], pr_units[side], img)
            u = mask_uncertainty(umap, pr_units[side]) if umap is not None else float("nan")
            out.append(UnitResult(case_id, name, side, rec, u, sorted(set(rec.flags) | split_flags)))
    return out


def evaluate_stack_case(case_id, img, gt, stack: SampleStack, registry=None, target="winning_class", connectivity=26):
    pred, umap = aggregate_mc_samples(stack, target)
    return evaluate_case(case_id, img, gt, pred, umap, registry, connectivity), pred, umap


def unit_uncertainties(
    case_id: str, pred: LabelVolume, umap: UncertaintyMap | None, registry=None, connectivity: int = 26
) -> list[UnitUncertainty]:
    """Structure/side uncertainties from a prediction alone (no ground truth needed).

    Without a map every unit is undefined (and later screens as unknown).
    """
    registry = registry or default_registry()
    out = []
    for code in present_codes(registry, pred):
        units, _ = structure_units(pred, code, registry, connectivity)
        name = registry.by_code(code).name
        for side, mask in units.items():
            u = mask_uncertainty(umap, mask) if umap is not None else float("nan")
            out.append(UnitUncertainty(case_id, name, side, u))
    return out


def mean_defined(values) -> float:
    vals = [v for v in values if not is_undefined(v)]
    if not vals:
        return float("nan")
    return math.fsum(vals) / len(vals)


def _by_case(rows):
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r.case_id, []).append(r)
    return dict(sorted(out.items()))


def case_averages(rows: Iterable[UnitResult]) -> dict[str, tuple[float, float]]:
    """``case_id -> (mean DC, mean uncertainty)`` over that case's structure/side units."""
    return {
        cid: (mean_defined(r.metrics.dc for r in rs), mean_defined(r.uncertainty for r in rs))
        for cid, rs in _by_case(rows).items()
    }


def calibration_pairs(rows: Iterable[UnitResult]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Unit name -> (DC, U) arrays; sides pool per structure, plus the case-average unit."""
    rows = list(rows)
    pairs: dict[str, list[tuple[float, float]]] = {}
    for r in sorted(rows, key=lambda r: r.key):
        if is_undefined(r.uncertainty) or is_undefined(r.metrics.dc):
            continue
        pairs.setdefault(r.structure, []).append((r.metrics.dc, r.uncertainty))
    for dc, u in case_averages(rows).values():
        if not (is_undefined(dc) or is_undefined(u)):
            pairs.setdefault(CASE_UNIT, []).append((dc, u))
    return {k: (np.array([p[0] for p in v]), np.array([p[1] for p in v])) for k, v in sorted(pairs.items())}


def calibrate(rows: Iterable[UnitResult], cutoff_method: str = "regression", min_cases: int = 3):
    """Returns ``(QcCalibration, skipped)``; units with fewer than ``min_cases`` pairs are skipped."""
    cal = QcCalibration()
    skipped = []
    for unit, (dc, u) in calibration_pairs(rows).items():
        if dc.size < min_cases:
            skipped.append(unit)
            continue
        cal[unit] = calibrate_unit(dc, u, cutoff_method)
    return cal, skipped


def screen_units(units: Iterable, calib: Mapping, mode: str = PER_STRUCTURE):
    """(case_id, unit, side, uncertainty, flag) tuples sorted by case then unit.

    ``units`` holds anything with ``case_id``, ``structure``, ``side`` and
    ``uncertainty`` (UnitUncertainty or UnitResult).
    """
    units = list(units)
    out = []
    if mode == PER_STRUCTURE:
        for r in sorted(units, key=lambda r: (r.case_id, r.structure, r.side)):
            out.append((r.case_id, r.structure, r.side, r.uncertainty, flag_for(r.uncertainty, calib.get(r.structure))))
    elif mode == "case_average":
        for cid, rs in _by_case(units).items():
            u = mean_defined(r.uncertainty for r in rs)
            out.append((cid, CASE_UNIT, WHOLE, u, flag_for(u, calib.get(CASE_UNIT))))
    else:
        raise ValueError(f"unknown screening mode {mode!r}")
    return out


def biomarker_units(
    labels: LabelVolume, img: IntensityVolume, registry=None, height_m=None, histogram_range=None, connectivity=26
):
    """``{(structure, side): (mask, BiomarkerRecord)}`` for every registered structure present in ``labels``."""
    registry = registry or default_registry()
    out: dict[tuple[str, str], tuple[BinaryMask, BiomarkerRecord]] = {}
    for code in present_codes(registry, labels):
        units, _ = structure_units(labels, code, registry, connectivity)
        name = registry.by_code(code).name
        for side, mask in units.items():
            out[(name, side)] = (mask, measure(mask, img, height_m, histogram_range))
    return out
