import json

import numpy as np
import pytest

from mskqc.core import (
    BinaryMask,
    CaseMeta,
    IntensityVolume,
    LabelVolume,
    StructureRegistry,
    VolumeGeometry,
    check_same_geometry,
    default_registry,
    extract_mask,
    linear_index,
    voxel_volume_cc,
)
from mskqc.errors import GeometryError, UnknownStructure


def test_geometry_validation():
    with pytest.raises(GeometryError):
        VolumeGeometry((0, 4, 4))
    with pytest.raises(GeometryError):
        VolumeGeometry((4, 4))
    with pytest.raises(GeometryError):
        VolumeGeometry((4, 4, 4), (1.0, 0.0, 1.0))
    with pytest.raises(GeometryError):
        VolumeGeometry((4, 4, 4), (1.0, float("nan"), 1.0))
    with pytest.raises(GeometryError):
        VolumeGeometry((4, 4, 4), lr_axis=3)


def test_check_same_geometry():
    a = VolumeGeometry((4, 4, 4))
    check_same_geometry(a, VolumeGeometry((4, 4, 4)))
    with pytest.raises(GeometryError):
        check_same_geometry(a, VolumeGeometry((4, 4, 5)))
    with pytest.raises(GeometryError):
        check_same_geometry(a, VolumeGeometry((4, 4, 4), (1, 1, 2)))


def test_voxel_volume_cc():
    assert voxel_volume_cc(VolumeGeometry((1, 1, 1))) == pytest.approx(0.001, abs=1e-15)
    assert voxel_volume_cc(VolumeGeometry((1, 1, 1), (0.742, 0.742, 1.0))) == pytest.approx(0.000550564, abs=1e-15)
    assert voxel_volume_cc(VolumeGeometry((1, 1, 1), (10, 10, 10))) == pytest.approx(1.0, abs=1e-12)


def test_extract_mask_examples(geom4):
    zeros = LabelVolume(geom4, np.zeros((4, 4, 4)))
    assert extract_mask(zeros, 5).count == 0
    full = LabelVolume(geom4, np.full((4, 4, 4), 5))
    assert extract_mask(full, 5).count == 64
    arr = np.zeros((4, 4, 4), dtype=np.uint16)
    arr[1, 2, 3] = 5
    m = extract_mask(LabelVolume(geom4, arr), 5)
    assert m.count == 1
    assert np.flatnonzero(m.flat()).tolist() == [int(linear_index(geom4, (1, 2, 3)))]


def test_extract_mask_unknown_code(geom4):
    with pytest.raises(UnknownStructure):
        extract_mask(LabelVolume(geom4, np.zeros((4, 4, 4))), 99)


def test_linear_index_is_x_fastest(geom4):
    assert linear_index(geom4, (1, 0, 0)) == 1
    assert linear_index(geom4, (0, 1, 0)) == 4
    assert linear_index(geom4, (0, 0, 1)) == 16


def test_volumes_are_read_only(geom4):
    v = LabelVolume(geom4, np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


def test_volume_shape_checks(geom4):
    with pytest.raises(GeometryError):
        BinaryMask(geom4, np.zeros(10, dtype=bool))
    with pytest.raises(GeometryError):
        LabelVolume(geom4, np.full((4, 4, 4), -1))
    with pytest.raises(GeometryError):
        IntensityVolume(geom4, np.full((4, 4, 4), np.nan))


def test_flat_payload_reshapes_in_x_fastest_order(geom4):
    flat = np.arange(64)
    v = IntensityVolume(geom4, flat)
    assert v.data[1, 0, 0] == 1
    assert v.data[0, 1, 0] == 4
    assert np.array_equal(v.flat(), flat)


def test_default_registry():
    reg = default_registry()
    assert len(reg) == 22
    assert reg.codes() == list(range(1, 23))
    assert reg.by_name("Gmed").group == "hip_muscle"
    assert reg.by_name("Sacrum").sided is False
    assert sum(1 for e in reg if e.group == "bone") == 3
    assert sum(1 for e in reg if e.group == "hip_muscle") == 8
    assert sum(1 for e in reg if e.group == "thigh_muscle") == 11
    with pytest.raises(UnknownStructure):
        reg.by_code(0)


def test_registry_json_round_trip(tmp_path):
    reg = default_registry()
    path = tmp_path / "reg.json"
    path.write_text(json.dumps(reg.to_json()))
    back = StructureRegistry.load(path)
    assert back.to_json() == reg.to_json()


def test_registry_rejects_duplicates():
    reg = default_registry().to_json()
    reg[1]["code"] = reg[0]["code"]
    with pytest.raises(ValueError):
        StructureRegistry.from_json(reg)


def test_case_meta_validation():
    assert CaseMeta("a", 1.7, {"L": "affected"}).height_m == 1.7
    with pytest.raises(ValueError):
        CaseMeta("a", 0.0)
    with pytest.raises(ValueError):
        CaseMeta("a", None, {"L": "sick"})
