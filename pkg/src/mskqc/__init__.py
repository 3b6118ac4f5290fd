"""Evaluation, biomarker extraction and uncertainty-based quality control for musculoskeletal CT segmentations."""

from .core import (
    BinaryMask,
    CaseMeta,
    FloatVolume,
    IntensityVolume,
    LabelVolume,
    StructureInfo,
    StructureRegistry,
    VolumeGeometry,
    default_registry,
    extract_mask,
    voxel_volume_cc,
)
from .errors import MskqcError
from .volio import read_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "CaseMeta",
    "FloatVolume",
    "IntensityVolume",
    "LabelVolume",
    "MskqcError",
    "StructureInfo",
    "StructureRegistry",
    "VolumeGeometry",
    "default_registry",
    "extract_mask",
    "read_volume",
    "voxel_volume_cc",
    "write_volume",
]
