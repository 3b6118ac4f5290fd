"""Segmentation accuracy metrics between a ground-truth and a predicted mask."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import BinaryMask, IntensityVolume, VolumeGeometry, check_same_geometry, voxel_volume_cc
from .errors import EmptyMask

FACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)


@dataclass
class MetricRecord:
    dc: float
    asd_mm: float
    ave_pct: float
    aie_hu: float
    gt_voxels: int
    pred_voxels: int
    flags: list[str] = field(default_factory=list)


def dice(gt: BinaryMask, pred: BinaryMask) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks agree perfectly (1.0)."""
    check_same_geometry(gt.geometry, pred.geometry)
    a = gt.data
    b = pred.data
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def surface_voxels(mask: BinaryMask) -> np.ndarray:
    """Mask voxels with at least one face neighbour outside the mask or the grid."""
    m = mask.data
    interior = ndimage.binary_erosion(m, structure=FACE_STRUCTURE, border_value=0)
    return m & ~interior


def _distances_to(surface_from: np.ndarray, surface_to: np.ndarray, spacing) -> np.ndarray:
    edt = ndimage.distance_transform_edt(~surface_to, sampling=spacing)
    return edt[surface_from]


def _crop(*masks: np.ndarray):
    """Bounding box of the union; nearest-surface searches never leave it."""
    union = np.logical_or.reduce(masks)
    idx = np.argwhere(union)
    sl = tuple(slice(a, b + 1) for a, b in zip(idx.min(axis=0), idx.max(axis=0)))
    return [m[sl] for m in masks]


def asd(gt: BinaryMask, pred: BinaryMask) -> float:
    """Average symmetric surface distance in mm, pooled over both surfaces."""
    check_same_geometry(gt.geometry, pred.geometry)
    if gt.empty or pred.empty:
        raise EmptyMask("ASD needs two nonempty masks")
    sa, sb = _crop(surface_voxels(gt), surface_voxels(pred))
    spacing = gt.geometry.spacing_mm
    d_ab = _distances_to(sa, sb, spacing)
    d_ba = _distances_to(sb, sa, spacing)
    return float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))


def volume_error_pct(gt: BinaryMask, pred: BinaryMask, geom: VolumeGeometry | None = None) -> float:
    check_same_geometry(gt.geometry, pred.geometry)
    geom = geom or gt.geometry
    if gt.empty:
        raise EmptyMask("volume error needs a nonempty ground truth")
    vox = voxel_volume_cc(geom)
    v_gt = gt.count * vox
    v_pred = pred.count * vox
    return 100.0 * abs(v_pred - v_gt) / v_gt


def _mean_hu(mask: BinaryMask, img: IntensityVolume) -> float:
    return float(img.data[mask.data].astype(np.float64).mean())


def intensity_error_hu(gt: BinaryMask, pred: BinaryMask, img: IntensityVolume) -> float:
    check_same_geometry(gt.geometry, pred.geometry, img.geometry)
    if gt.empty or pred.empty:
        raise EmptyMask("intensity error needs two nonempty masks")
    return abs(_mean_hu(gt, img) - _mean_hu(pred, img))


def evaluate_masks(gt: BinaryMask, pred: BinaryMask, img: IntensityVolume) -> MetricRecord:
    """All four metrics; undefined values become NaN and are named in ``flags``."""
    nan = float("nan")
    flags = []
    dc = dice(gt, pred)
    if gt.empty and pred.empty:
        flags.append("both_empty")
    elif gt.empty:
        flags.append("empty_gt")
    elif pred.empty:
        flags.append("empty_pred")
    try:
        asd_mm = asd(gt, pred)
    except EmptyMask:
        asd_mm = nan
    try:
        ave = volume_error_pct(gt, pred)
    except EmptyMask:
        ave = nan
    try:
        aie = intensity_error_hu(gt, pred, img)
    except EmptyMask:
        aie = nan
    return MetricRecord(dc, asd_mm, ave, aie, gt.count, pred.count, flags)
