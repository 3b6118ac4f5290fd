"""Synthetic cases with analytic ground truth and simulated MC dropout stacks.

Randomness comes from numpy's counter-based Philox generator keyed by
``SeedSequence(seed, spawn_key=(stream,))``: stream 0 draws intensities,
stream 1 the per-voxel boundary susceptibility, stream ``2 + i`` the flips
of MC sample ``i``. Cohort case seeds are
``SeedSequence(seed, spawn_key=(index,)).generate_state(1, uint64)[0]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, special

from .core import IntensityVolume, LabelVolume, VolumeGeometry
from .errors import SpecError
from .uncertainty import DEFAULT_N_SAMPLES, SampleStack

SHAPES = ("sphere", "ellipsoid", "box")
_FACES = ndimage.generate_binary_structure(3, 1)
HU_RANGE = (-1024, 3071)
SUSCEPTIBILITY_MAX = 0.75


@dataclass(frozen=True)
class ShapeSpec:
    code: int
    shape: str
    center_mm: tuple[float, float, float]
    radii_mm: tuple[float, float, float]
    mean_hu: float
    hu_sd: float = 0.0
    sided: bool = False
    mirror: bool = False

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SpecError(f"unknown shape {self.shape!r}")
        radii = self.radii_mm
        if isinstance(radii, (int, float)):
            radii = (radii,) * 3
        radii = tuple(float(r) for r in radii)
        if len(radii) == 1:
            radii = radii * 3
        if len(radii) != 3 or min(radii) <= 0:
            raise SpecError(f"radii must be positive, got {self.radii_mm}")
        if self.shape == "sphere" and len(set(radii)) != 1:
            raise SpecError("a sphere takes a single radius")
        if not self.hu_sd >= 0:
            raise SpecError("hu_sd must be >= 0")
        if int(self.code) <= 0:
            raise SpecError("structure codes must be positive")
        object.__setattr__(self, "radii_mm", radii)
        object.__setattr__(self, "center_mm", tuple(float(c) for c in self.center_mm))

    @property
    def analytic_volume_mm3(self) -> float:
        a, b, c = self.radii_mm
        if self.shape == "box":
            return 8.0 * a * b * c
        return 4.0 / 3.0 * math.pi * a * b * c

    def mirrored(self, geom: VolumeGeometry) -> "ShapeSpec":
        ax = geom.lr_axis
        extent = geom.dims[ax] * geom.spacing_mm[ax]
        center = list(self.center_mm)
        center[ax] = extent - center[ax]
        return ShapeSpec(self.code, self.shape, tuple(center), self.radii_mm, self.mean_hu, self.hu_sd, self.sided, False)

    def to_json(self) -> dict:
        return {
            "code": self.code,
            "shape": self.shape,
            "center_mm": list(self.center_mm),
            "radii_mm": list(self.radii_mm),
            "mean_hu": self.mean_hu,
            "hu_sd": self.hu_sd,
            "sided": self.sided,
            "mirror": self.mirror,
        }


@dataclass(frozen=True)
class PhantomSpec:
    geometry: VolumeGeometry
    structures: tuple[ShapeSpec, ...]
    background_hu: float = -100.0
    degradation: float = 0.0
    n_mc_samples: int = DEFAULT_N_SAMPLES
    seed: int = 0
    height_m: float | None = 1.6

    def __post_init__(self):
        object.__setattr__(self, "structures", tuple(self.structures))
        if not 0.0 <= self.degradation <= 1.0:
            raise SpecError(f"degradation must lie in [0, 1], got {self.degradation}")
        if self.n_mc_samples < 1:
            raise SpecError("n_mc_samples must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise SpecError("seed must be an unsigned 64-bit integer")
        if not self.structures:
            raise SpecError("phantom needs at least one structure")
        for s in self.expanded_structures():
            _check_bounds(s, self.geometry)

    def expanded_structures(self) -> list[ShapeSpec]:
        out = []
        for s in self.structures:
            out.append(s)
            if s.mirror:
                out.append(s.mirrored(self.geometry))
        return out

    def with_case(self, degradation: float, seed: int) -> "PhantomSpec":
        return PhantomSpec(
            self.geometry, self.structures, self.background_hu, degradation, self.n_mc_samples, seed, self.height_m
        )

    def to_json(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "structures": [s.to_json() for s in self.structures],
            "background_hu": self.background_hu,
            "degradation": self.degradation,
            "n_mc_samples": self.n_mc_samples,
            "seed": int(self.seed),
            "height_m": self.height_m,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PhantomSpec":
        try:
            g = d["geometry"]
            geom = VolumeGeometry(
                tuple(g["dims"]),
                tuple(g.get("spacing_mm", (1.0, 1.0, 1.0))),
                int(g.get("lr_axis", 0)),
                bool(g.get("lr_positive_is_left", False)),
            )
            structures = [
                ShapeSpec(
                    int(s["code"]),
                    s["shape"],
                    tuple(s["center_mm"]),
                    s["radii_mm"],
                    float(s["mean_hu"]),
                    float(s.get("hu_sd", 0.0)),
                    bool(s.get("sided", False)),
                    bool(s.get("mirror", False)),
                )
                for s in d["structures"]
            ]
            return cls(
                geom,
                tuple(structures),
                float(d.get("background_hu", -100.0)),
                float(d.get("degradation", 0.0)),
                int(d.get("n_mc_samples", DEFAULT_N_SAMPLES)),
                int(d.get("seed", 0)),
                None if d.get("height_m") is None else float(d["height_m"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"invalid phantom spec: {exc}") from None


@dataclass
class StructureTruth:
    code: int
    analytic_volume_cc: float
    mean_hu: float
    hu_sd: float
    fractions: dict[str, float]


@dataclass
class PhantomTruth:
    structures: dict[int, StructureTruth] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            str(code): {
                "analytic_volume_cc": t.analytic_volume_cc,
                "mean_hu": t.mean_hu,
                "hu_sd": t.hu_sd,
                "fractions": t.fractions,
            }
            for code, t in sorted(self.structures.items())
        }


@dataclass
class PhantomCase:
    intensity: IntensityVolume
    gt: LabelVolume
    stack: SampleStack
    truth: PhantomTruth
    spec: PhantomSpec


def _check_bounds(s: ShapeSpec, geom: VolumeGeometry) -> None:
    for ax in range(3):
        extent = geom.dims[ax] * geom.spacing_mm[ax]
        c, r = s.center_mm[ax], s.radii_mm[ax]
        if c - r < 0 or c + r > extent:
            raise SpecError(
                f"structure {s.code} ({s.shape}) leaves the volume on axis {ax}: [{c - r}, {c + r}] vs [0, {extent}]"
            )


def voxel_centers_mm(geom: VolumeGeometry):
    return [(np.arange(n) + 0.5) * sp for n, sp in zip(geom.dims, geom.spacing_mm)]


def shape_mask(s: ShapeSpec, geom: VolumeGeometry) -> np.ndarray:
    """Voxels whose centre lies inside the shape (boxes are half-open on the upper faces)."""
    xs, ys, zs = voxel_centers_mm(geom)
    (cx, cy, cz), (rx, ry, rz) = s.center_mm, s.radii_mm
    if s.shape == "box":
        bx = (xs >= cx - rx) & (xs < cx + rx)
        by = (ys >= cy - ry) & (ys < cy + ry)
        bz = (zs >= cz - rz) & (zs < cz + rz)
        return bx[:, None, None] & by[None, :, None] & bz[None, None, :]
    dx = ((xs - cx) / rx) ** 2
    dy = ((ys - cy) / ry) ** 2
    dz = ((zs - cz) / rz) ** 2
    return dx[:, None, None] + dy[None, :, None] + dz[None, None, :] <= 1.0


def expected_fractions(mean: float, sd: float) -> dict[str, float]:
    """Composition of rounded N(mean, sd) draws under the fat/composite/lean bands."""
    if sd == 0:
        v = float(np.rint(mean))
        fat = 1.0 if v < -30 else 0.0
        lean = 1.0 if v > 30 else 0.0
        return {"fat": fat, "composite": 1.0 - fat - lean, "lean": lean}
    fat = float(special.ndtr((-30.5 - mean) / sd))
    lean = float(special.ndtr((mean - 30.5) / sd))
    return {"fat": fat, "composite": 1.0 - fat - lean, "lean": lean}


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(stream,))))


def case_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(index,)).generate_state(1, np.uint64)[0])


def boundary_bands(gt: np.ndarray):
    """Per code: (inner surface, outer shell) boolean grids.

    Inner = structure voxels with a face neighbour outside the structure or
    grid; outer = background voxels face-adjacent to the structure. An
    outer voxel adjacent to several structures belongs to the lowest code.
    """
    bands = []
    claimed = np.zeros(gt.shape, dtype=bool)
    for code in np.unique(gt):
        if code == 0:
            continue
        m = gt == code
        inner = m & ~ndimage.binary_erosion(m, structure=_FACES, border_value=0)
        outer = ndimage.binary_dilation(m, structure=_FACES) & (gt == 0) & ~claimed
        claimed |= outer
        bands.append((int(code), inner, outer))
    return bands


def corrupt_samples(
    gt: np.ndarray, degradation: float, n_samples: int, seed: int, s_max: float = SUSCEPTIBILITY_MAX
) -> np.ndarray:
    """MC label samples: boundary voxels flip with probability ``degradation * g``.

    ``g`` is a per-voxel susceptibility in [0, s_max] shared by every sample of
    the case, so some boundary stretches are consistently wrong (lowering the
    aggregated Dice) while the rest fluctuate between samples.
    """
    samples = np.repeat(gt[None], n_samples, axis=0)
    if degradation == 0:
        return samples
    bands = boundary_bands(gt)
    sus = _rng(seed, 1)
    band_p = []
    for code, inner, outer in bands:
        band = inner | outer
        g = s_max * sus.random(int(band.sum()))
        band_p.append((code, band, inner[band], degradation * g))
    for i in range(n_samples):
        rng = _rng(seed, 2 + i)
        s = samples[i]
        for code, band, is_inner, p in band_p:
            flip = rng.random(p.size) < p
            vals = s[band]
            vals[flip & is_inner] = 0
            vals[flip & ~is_inner] = code
            s[band] = vals
    return samples


def generate_case(spec: PhantomSpec) -> PhantomCase:
    geom = spec.geometry
    shapes = spec.expanded_structures()
    owner = np.full(geom.dims, -1, dtype=np.int32)
    for i, s in enumerate(shapes):
        owner[shape_mask(s, geom)] = i
    gt = np.zeros(geom.dims, dtype=np.uint16)
    for i, s in enumerate(shapes):
        gt[owner == i] = s.code

    rng = _rng(spec.seed, 0)
    hu = np.full(geom.dims, float(spec.background_hu))
    flat_owner = owner.ravel(order="F")
    flat_hu = hu.ravel(order="F")
    for i, s in enumerate(shapes):
        idx = np.flatnonzero(flat_owner == i)
        if s.hu_sd > 0:
            flat_hu[idx] = rng.normal(s.mean_hu, s.hu_sd, idx.size)
        else:
            flat_hu[idx] = s.mean_hu
    hu = np.clip(np.rint(flat_hu), *HU_RANGE).reshape(geom.dims, order="F")

    truth = PhantomTruth()
    for s in shapes:
        if s.code in truth.structures:
            truth.structures[s.code].analytic_volume_cc += s.analytic_volume_mm3 / 1000.0
        else:
            truth.structures[s.code] = StructureTruth(
                s.code, s.analytic_volume_mm3 / 1000.0, s.mean_hu, s.hu_sd, expected_fractions(s.mean_hu, s.hu_sd)
            )

    samples = corrupt_samples(gt, spec.degradation, spec.n_mc_samples, spec.seed)
    n_classes = max(2, int(gt.max()) + 1)
    stack = SampleStack(geom, "label", n_classes, samples)
    return PhantomCase(IntensityVolume(geom, hu.astype(np.int32)), LabelVolume(geom, gt), stack, truth, spec)


def generate_cohort(base: PhantomSpec, n_cases: int, degradation_schedule=None, seed: int | None = None):
    """One case per schedule entry, each with its own derived seed."""
    if n_cases < 1:
        raise SpecError("n_cases must be >= 1")
    if degradation_schedule is None:
        degradation_schedule = [base.degradation] * n_cases
    schedule = [float(d) for d in degradation_schedule]
    if len(schedule) != n_cases:
        raise SpecError(f"schedule has {len(schedule)} entries for {n_cases} cases")
    seed = base.seed if seed is None else seed
    return [generate_case(base.with_case(d, case_seed(seed, i))) for i, d in enumerate(schedule)]


def linear_schedule(n_cases: int, start: float = 0.0, stop: float = 0.9) -> list[float]:
    if n_cases == 1:
        return [start]
    return [float(v) for v in np.linspace(start, stop, n_cases)]


def default_spec(seed: int = 0) -> PhantomSpec:
    """Small hip-like layout: mirrored muscles and femora, a pubic-bridged pelvis, a midline sacrum."""
    geom = VolumeGeometry((96, 64, 40), (1.5, 1.5, 2.0), lr_axis=0, lr_positive_is_left=False)
    structures = (
        ShapeSpec(2, "ellipsoid", (38.0, 62.0, 50.0), (15.0, 13.0, 16.0), 42.0, 22.0, sided=True, mirror=True),
        ShapeSpec(13, "ellipsoid", (40.0, 28.0, 22.0), (11.0, 10.0, 14.0), 48.0, 20.0, sided=True, mirror=True),
        ShapeSpec(21, "sphere", (30.0, 46.0, 22.0), (9.0,), 420.0, 60.0, sided=True, mirror=True),
        ShapeSpec(20, "ellipsoid", (54.0, 30.0, 58.0), (12.0, 8.0, 9.0), 350.0, 60.0, sided=True, mirror=True),
        ShapeSpec(20, "box", (72.0, 30.0, 58.0), (12.0, 2.25, 3.0), 350.0, 60.0, sided=True),
        ShapeSpec(22, "box", (72.0, 72.0, 56.0), (9.0, 9.0, 12.0), 300.0, 50.0),
    )
    return PhantomSpec(geom, structures, background_hu=-120.0, seed=seed, height_m=1.6)


def load_spec(path) -> tuple[PhantomSpec, dict]:
    """Read a phantom JSON file; returns the base spec and the cohort section (may be empty)."""
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    cohort = d.pop("cohort", {})
    return PhantomSpec.from_json(d), cohort
