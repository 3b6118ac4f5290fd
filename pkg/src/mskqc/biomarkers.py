"""Per-structure volume, density and HU composition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BinaryMask, IntensityVolume, LabelVolume, VolumeGeometry, check_same_geometry, voxel_volume_cc
from .errors import EmptyStructure, ShapeError

FAT_MAX_HU = -30
LEAN_MIN_HU = 30

FAT, COMPOSITE, LEAN = 1, 2, 3
CLASS_NAMES = {FAT: "fat", COMPOSITE: "composite", LEAN: "lean"}


@dataclass(frozen=True)
class Composition:
    fat: float
    composite: float
    lean: float
    counts: tuple[int, int, int]


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    def rows(self):
        """(bin_lo, bin_hi, count) rows, sentinel bins first and last."""
        yield (-math.inf, float(self.edges[0]), self.underflow)
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            yield (float(lo), float(hi), int(c))
        yield (float(self.edges[-1]), math.inf, self.overflow)


@dataclass
class BiomarkerRecord:
    volume_cc: float
    normalized_volume: float
    mean_hu: float
    composition: Composition | None
    histogram: Histogram | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def unnormalized(self) -> bool:
        return "Unnormalized" in self.flags


def volume_cc(mask: BinaryMask, geom: VolumeGeometry | None = None) -> float:
    geom = geom or mask.geometry
    return mask.count * voxel_volume_cc(geom)


def normalized_volume(mask: BinaryMask, geom: VolumeGeometry | None = None, height_m=None):
    """Volume in cc divided by height squared (cc/m^2).

    Returns ``(value, normalized)``; without a height the raw cc volume comes
    back with ``normalized=False``.
    """
    cc = volume_cc(mask, geom)
    if height_m is None:
        return cc, False
    if not height_m > 0:
        raise ValueError(f"height_m must be positive, got {height_m}")
    return cc / (height_m * height_m), True


def _values(mask: BinaryMask, img: IntensityVolume) -> np.ndarray:
    check_same_geometry(mask.geometry, img.geometry)
    return img.data[mask.data]


def mean_hu(mask: BinaryMask, img: IntensityVolume) -> float:
    vals = _values(mask, img)
    if vals.size == 0:
        raise EmptyStructure("mean HU of an empty mask")
    return float(vals.astype(np.float64).mean())


def classification_volume(mask: BinaryMask, img: IntensityVolume) -> LabelVolume:
    """Codes 1 fat (< -30 HU), 2 composite ([-30, 30] HU), 3 lean (> 30 HU); 0 outside the mask."""
    check_same_geometry(mask.geometry, img.geometry)
    hu = img.data
    cls = np.full(hu.shape, COMPOSITE, dtype=np.uint16)
    cls[hu < FAT_MAX_HU] = FAT
    cls[hu > LEAN_MIN_HU] = LEAN
    cls[~mask.data] = 0
    return LabelVolume(img.geometry, cls)


def classify_composition(mask: BinaryMask, img: IntensityVolume):
    """Returns ``(Composition, classification LabelVolume)``."""
    cls = classification_volume(mask, img)
    n = mask.count
    if n == 0:
        raise EmptyStructure("composition of an empty mask")
    counts = np.bincount(cls.data[mask.data], minlength=4)
    fat, comp, lean = (int(c) for c in counts[1:4])
    return Composition(fat / n, comp / n, lean / n, (fat, comp, lean)), cls


def hu_histogram(mask: BinaryMask, img: IntensityVolume, lo=-200.0, hi=200.0, bin_width=10.0) -> Histogram:
    """Uniform bins over [lo, hi], last bin right-closed, plus under/overflow counts.

    A trailing partial bin is clipped at ``hi``.
    """
    if not lo < hi:
        raise ValueError("lo must be below hi")
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    n_bins = int(math.ceil((hi - lo) / bin_width - 1e-9))
    edges = lo + bin_width * np.arange(n_bins + 1, dtype=np.float64)
    edges[-1] = hi
    vals = _values(mask, img).astype(np.float64)
    counts, _ = np.histogram(vals, bins=edges)
    return Histogram(edges, counts.astype(np.int64), int(np.count_nonzero(vals < lo)), int(np.count_nonzero(vals > hi)))


def mae(seq_a, seq_b) -> float:
    a = np.asarray(seq_a, dtype=np.float64)
    b = np.asarray(seq_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"sequences differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("mae of empty sequences")
    return float(np.abs(a - b).mean())


def measure(mask: BinaryMask, img: IntensityVolume, height_m=None, histogram_range=None) -> BiomarkerRecord:
    flags = []
    vol = volume_cc(mask)
    norm, ok = normalized_volume(mask, height_m=height_m)
    if not ok:
        flags.append("Unnormalized")
    if mask.empty:
        flags.append("EmptyStructure")
        return BiomarkerRecord(vol, norm, float("nan"), None, None, flags)
    comp, _ = classify_composition(mask, img)
    hist = hu_histogram(mask, img, *histogram_range) if histogram_range else None
    return BiomarkerRecord(vol, norm, mean_hu(mask, img), comp, hist, flags)
