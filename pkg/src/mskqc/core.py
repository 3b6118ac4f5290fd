"""Volume, label and geometry types plus the structure registry.

All grids are numpy arrays of shape ``(nx, ny, nz)`` indexed ``[x, y, z]``.
Linear voxel indices follow the on-disk order, x fastest
(``np.ravel_multi_index(..., order="F")``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import GeometryError, UnknownStructure

GROUPS = ("hip_muscle", "thigh_muscle", "bone")


@dataclass(frozen=True)
class VolumeGeometry:
    dims: tuple[int, int, int]
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    lr_axis: int = 0
    lr_positive_is_left: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(dims) != 3 or min(dims) < 1:
            raise GeometryError(f"dims must be three integers >= 1, got {self.dims}")
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise GeometryError(f"spacing must be three positive reals, got {self.spacing_mm}")
        if self.lr_axis not in (0, 1, 2):
            raise GeometryError(f"lr_axis must be 0, 1 or 2, got {self.lr_axis}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing_mm", spacing)
        object.__setattr__(self, "lr_positive_is_left", bool(self.lr_positive_is_left))

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def same_grid(self, other: "VolumeGeometry") -> bool:
        return self.dims == other.dims and self.spacing_mm == other.spacing_mm

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing_mm": list(self.spacing_mm),
            "lr_axis": self.lr_axis,
            "lr_positive_is_left": self.lr_positive_is_left,
        }


def check_same_geometry(*geoms: VolumeGeometry) -> None:
    first = geoms[0]
    for g in geoms[1:]:
        if not first.same_grid(g):
            raise GeometryError(f"geometry mismatch: {first.dims}/{first.spacing_mm} vs {g.dims}/{g.spacing_mm}")


def _frozen(arr: np.ndarray, dtype, geometry: VolumeGeometry) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.shape != geometry.dims:
        if arr.size != geometry.n_voxels:
            raise GeometryError(f"data has {arr.size} elements, geometry needs {geometry.n_voxels}")
        arr = arr.reshape(geometry.dims, order="F")
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class _Volume:
    geometry: VolumeGeometry
    data: np.ndarray

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.geometry == other.geometry
            and np.array_equal(self.data, other.data)
        )

    def __hash__(self):
        return id(self)

    def flat(self) -> np.ndarray:
        """Data in on-disk order (x fastest)."""
        return self.data.ravel(order="F")


@dataclass(frozen=True, eq=False)
class IntensityVolume(_Volume):
    """HU grid, held as int32."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)):
                raise GeometryError("intensity values must be finite")
            raw = np.rint(raw)
        object.__setattr__(self, "data", _frozen(raw, np.int32, self.geometry))


@dataclass(frozen=True, eq=False)
class LabelVolume(_Volume):
    """Structure codes (uint16, 0 = background)."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.size and (raw.min() < 0 or raw.max() > np.iinfo(np.uint16).max):
            raise GeometryError("label codes must fit in uint16")
        object.__setattr__(self, "data", _frozen(raw, np.uint16, self.geometry))

    def codes(self) -> list[int]:
        return [int(c) for c in np.unique(self.data) if c != 0]


@dataclass(frozen=True, eq=False)
class FloatVolume(_Volume):
    """float32 scalar grid (probabilities, uncertainty maps)."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, np.float32, self.geometry))


@dataclass(frozen=True, eq=False)
class BinaryMask(_Volume):
    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, bool, self.geometry))

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    @property
    def empty(self) -> bool:
        return not self.data.any()


@dataclass(frozen=True)
class StructureInfo:
    code: int
    name: str
    group: str
    sided: bool


class StructureRegistry:
    def __init__(self, entries: Iterable[StructureInfo]):
        self.entries = tuple(entries)
        codes = [e.code for e in self.entries]
        names = [e.name for e in self.entries]
        if len(set(codes)) != len(codes) or any(c <= 0 for c in codes):
            raise ValueError("registry codes must be unique and nonzero")
        if len(set(names)) != len(names):
            raise ValueError("registry names must be unique")
        for e in self.entries:
            if e.group not in GROUPS:
                raise ValueError(f"unknown group {e.group!r} for {e.name}")
        self._by_code = {e.code: e for e in self.entries}
        self._by_name = {e.name: e for e in self.entries}

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, code) -> bool:
        return code in self._by_code

    def by_code(self, code: int) -> StructureInfo:
        try:
            return self._by_code[int(code)]
        except KeyError:
            raise UnknownStructure(f"structure code {code} is not registered") from None

    def by_name(self, name: str) -> StructureInfo:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownStructure(f"structure {name!r} is not registered") from None

    def codes(self) -> list[int]:
        return [e.code for e in self.entries]

    def to_json(self) -> list[dict]:
        return [{"code": e.code, "name": e.name, "group": e.group, "sided": e.sided} for e in self.entries]

    @classmethod
    def from_json(cls, items: list[Mapping]) -> "StructureRegistry":
        return cls(
            StructureInfo(int(it["code"]), str(it["name"]), str(it["group"]), bool(it["sided"])) for it in items
        )

    @classmethod
    def load(cls, path) -> "StructureRegistry":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


_HIP = ("Gmax", "Gmed", "Gmin", "Iliacus", "Obtext", "Obtint", "Pect", "Piri")
_THIGH = ("Pmajor", "Adds", "Biceps", "Gracil", "Recfem", "Sart", "Semim", "Semit", "Tenfas", "Vaslatint", "Vasmed")
_BONES = ("Pelvis", "Femur", "Sacrum")


def default_registry() -> StructureRegistry:
    entries = []
    code = 1
    for group, names in (("hip_muscle", _HIP), ("thigh_muscle", _THIGH), ("bone", _BONES)):
        for name in names:
            entries.append(StructureInfo(code, name, group, sided=(name != "Sacrum")))
            code += 1
    return StructureRegistry(entries)


@dataclass(frozen=True)
class CaseMeta:
    case_id: str
    height_m: float | None = None
    side_status: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.height_m is not None and not self.height_m > 0:
            raise ValueError(f"height_m must be positive, got {self.height_m}")
        for side, status in self.side_status.items():
            if status not in ("affected", "unaffected"):
                raise ValueError(f"side status for {side} must be affected/unaffected, got {status!r}")


def extract_mask(labels: LabelVolume, code: int, registry: StructureRegistry | None = None) -> BinaryMask:
    registry = registry or default_registry()
    registry.by_code(code)
    return BinaryMask(labels.geometry, labels.data == code)


def voxel_volume_cc(geom: VolumeGeometry) -> float:
    sx, sy, sz = geom.spacing_mm
    return sx * sy * sz / 1000.0


def linear_index(geom: VolumeGeometry, coords) -> np.ndarray:
    return np.ravel_multi_index(coords, geom.dims, order="F")
