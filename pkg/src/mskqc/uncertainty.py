"""Monte-Carlo dropout aggregation and structure-wise predictive uncertainty."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import FloatVolume, LabelVolume, VolumeGeometry, check_same_geometry
from .errors import CaseError, GeometryError, StackError
from .volio import read_volume, write_volume

DEFAULT_N_SAMPLES = 10
PROB_SUM_TOL = 1e-4
UNDEFINED = float("nan")


class VarianceTarget(str, enum.Enum):
    """Which variance becomes the voxel uncertainty."""

    WINNING_CLASS = "winning_class"
    MEAN_CLASS = "mean_class"


@dataclass(frozen=True, eq=False)
class SampleStack:
    """MC dropout outputs for one case.

    ``kind == "prob"``: ``samples`` has shape ``(N, C, nx, ny, nz)``.
    ``kind == "label"``: ``samples`` has shape ``(N, nx, ny, nz)`` holding class codes.
    """

    geometry: VolumeGeometry
    kind: str
    n_classes: int
    samples: np.ndarray

    def __post_init__(self):
        if self.kind not in ("prob", "label"):
            raise StackError(f"unknown stack kind {self.kind!r}")
        if self.n_classes < 2:
            raise StackError("n_classes must be >= 2")
        arr = np.asarray(self.samples)
        if arr.ndim == 0 or arr.shape[0] == 0:
            raise StackError("stack holds no samples")
        if self.kind == "prob":
            want = (arr.shape[0], self.n_classes) + self.geometry.dims
            if arr.shape != want:
                raise StackError(f"probability stack shape {arr.shape}, expected {want}")
            arr = np.array(arr, dtype=np.float64)
            if np.any(arr < 0) or np.any(arr > 1):
                raise StackError("probabilities must lie in [0, 1]")
            sums = arr.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
                raise StackError("class probabilities must sum to 1 per voxel")
        else:
            want = (arr.shape[0],) + self.geometry.dims
            if arr.shape != want:
                raise StackError(f"label stack shape {arr.shape}, expected {want}")
            if arr.size and arr.max() >= self.n_classes:
                raise StackError(f"label code {int(arr.max())} outside n_classes={self.n_classes}")
            arr = np.array(arr, dtype=np.uint16)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def from_labels(cls, volumes, n_classes=None) -> "SampleStack":
        volumes = list(volumes)
        if not volumes:
            raise StackError("n_samples must be >= 1")
        geom = volumes[0].geometry
        for v in volumes[1:]:
            if v.geometry != geom:
                raise StackError("samples do not share one geometry")
        data = np.stack([v.data for v in volumes])
        if n_classes is None:
            n_classes = max(2, int(data.max()) + 1)
        return cls(geom, "label", n_classes, data)

    @classmethod
    def from_probabilities(cls, samples) -> "SampleStack":
        """``samples``: one list of per-class FloatVolumes per MC sample."""
        samples = [list(s) for s in samples]
        if not samples:
            raise StackError("n_samples must be >= 1")
        geom = samples[0][0].geometry
        n_classes = len(samples[0])
        for s in samples:
            if len(s) != n_classes:
                raise StackError("samples disagree on the number of classes")
            for v in s:
                if v.geometry != geom:
                    raise StackError("samples do not share one geometry")
        data = np.stack([np.stack([v.data for v in s]) for s in samples])
        return cls(geom, "prob", n_classes, data)


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.shape != self.geometry.dims:
            raise StackError(f"uncertainty map shape {arr.shape} != {self.geometry.dims}")
        if arr.size and (arr.min() < 0 or arr.max() > 0.25 + 1e-6 or not np.all(np.isfinite(arr))):
            raise StackError("uncertainty values must lie in [0, 0.25]")
        arr = np.clip(arr, 0.0, 0.25)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def to_volume(self) -> FloatVolume:
        return FloatVolume(self.geometry, self.data)

    @classmethod
    def from_volume(cls, vol: FloatVolume) -> "UncertaintyMap":
        return cls(vol.geometry, vol.data)


def _sorted_mean(values: np.ndarray, axis=0) -> np.ndarray:
    # summing in sorted order makes the result independent of sample order
    return np.sort(values, axis=axis).sum(axis=axis) / values.shape[axis]


def _population_var(values: np.ndarray) -> np.ndarray:
    s = np.sort(values, axis=0)
    m = s.sum(axis=0) / s.shape[0]
    return ((s - m) ** 2).sum(axis=0) / s.shape[0]


def aggregate_mc_samples(stack: SampleStack, target: VarianceTarget = VarianceTarget.WINNING_CLASS):
    """Mean-over-samples label and voxel-wise variance map.

    Label = argmax of the mean class probability (ties go to the lowest class
    code). For label stacks the per-class sample frequency stands in for the
    probability, so the winning-class variance is ``f * (1 - f)``.
    """
    target = VarianceTarget(target)
    n = stack.n_samples
    geom = stack.geometry
    if stack.kind == "prob":
        p = stack.samples
        mean = _sorted_mean(p, axis=0)
        label = np.argmax(mean, axis=0)
        if target is VarianceTarget.WINNING_CLASS:
            win = np.take_along_axis(p, label[None, None], axis=1)[:, 0]
            var = _population_var(win)
        else:
            var = np.stack([_population_var(p[:, c]) for c in range(stack.n_classes)]).mean(axis=0)
    else:
        s = stack.samples
        best_count = np.zeros(geom.dims, dtype=np.int32)
        label = np.zeros(geom.dims, dtype=np.uint16)
        per_class_var = np.zeros(geom.dims, dtype=np.float64)
        for code in np.unique(s):
            count = np.count_nonzero(s == code, axis=0)
            better = count > best_count
            label[better] = code
            best_count[better] = count[better]
            if target is VarianceTarget.MEAN_CLASS:
                f = count / n
                per_class_var += f * (1.0 - f)
        if target is VarianceTarget.WINNING_CLASS:
            f = best_count / n
            var = f * (1.0 - f)
        else:
            var = per_class_var / stack.n_classes
    return LabelVolume(geom, label), UncertaintyMap(geom, var)


def structure_uncertainty(umap: UncertaintyMap, labels: LabelVolume, code: int) -> float:
    """Mean uncertainty over the voxels labelled ``code``; NaN when the structure is absent."""
    check_same_geometry(umap.geometry, labels.geometry)
    return mask_uncertainty(umap, labels.data == code)


def mask_uncertainty(umap: UncertaintyMap, mask) -> float:
    mask = np.asarray(getattr(mask, "data", mask), dtype=bool)
    if mask.shape != umap.geometry.dims:
        raise GeometryError("mask and uncertainty map differ in shape")
    if not mask.any():
        return UNDEFINED
    return float(umap.data[mask].mean())


def is_undefined(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


def case_uncertainty(per_structure: Mapping[object, float]) -> float:
    values = [v for v in per_structure.values() if not is_undefined(v)]
    if not values:
        raise CaseError("no structure has a defined uncertainty")
    return math.fsum(values) / len(values)


# -- on-disk stacks ----------------------------------------------------------

STACK_META = "stack.json"


def _sample_name(i: int, c: int | None = None) -> str:
    return f"sample_{i:03d}.mvol" if c is None else f"sample_{i:03d}_c{c:02d}.mvol"


def write_stack(stack: SampleStack, directory, compress: bool = False) -> None:
    """``stack.json`` plus one MVOL-1 file per sample (per sample and class for prob stacks)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"kind": stack.kind, "n_samples": stack.n_samples, "n_classes": stack.n_classes}
    (directory / STACK_META).write_text(json.dumps(meta) + "\n", encoding="utf-8")
    ext = ".gz" if compress else ""
    for i in range(stack.n_samples):
        if stack.kind == "label":
            write_volume(LabelVolume(stack.geometry, stack.samples[i]), directory / (_sample_name(i) + ext))
        else:
            for c in range(stack.n_classes):
                write_volume(FloatVolume(stack.geometry, stack.samples[i, c]), directory / (_sample_name(i, c) + ext))


def _read_sample(path: Path):
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            return read_volume(gz)
        raise StackError(f"missing stack sample {path}")
    return read_volume(path)


def read_stack(directory) -> SampleStack:
    directory = Path(directory)
    try:
        meta = json.loads((directory / STACK_META).read_text(encoding="utf-8"))
        kind, n, n_classes = meta["kind"], int(meta["n_samples"]), int(meta["n_classes"])
    except FileNotFoundError:
        raise StackError(f"{directory}: missing {STACK_META}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise StackError(f"{directory}/{STACK_META}: {exc}") from None
    if n < 1:
        raise StackError("n_samples must be >= 1")
    if kind == "label":
        vols = [_read_sample(directory / _sample_name(i)) for i in range(n)]
        if not all(isinstance(v, LabelVolume) for v in vols):
            raise StackError("label stack samples must be u16 volumes")
        return SampleStack.from_labels(vols, n_classes)
    if kind == "prob":
        samples = [[_read_sample(directory / _sample_name(i, c)) for c in range(n_classes)] for i in range(n)]
        return SampleStack.from_probabilities(samples)
    raise StackError(f"unknown stack kind {kind!r}")
