import json
import math

import numpy as np
import pytest

from mskqc.core import VolumeGeometry
from mskqc.errors import SpecError
from mskqc.phantom import (
    PhantomSpec,
    ShapeSpec,
    boundary_bands,
    case_seed,
    default_spec,
    expected_fractions,
    generate_case,
    generate_cohort,
    linear_schedule,
    load_spec,
    shape_mask,
)
from mskqc.uncertainty import aggregate_mc_samples, structure_uncertainty


def small_spec(degradation=0.0, seed=0, n=10):
    geom = VolumeGeometry((24, 20, 20), (1.0, 1.0, 1.0))
    shapes = (
        ShapeSpec(21, "sphere", (8.0, 10.0, 10.0), 5.0, 400.0, 40.0, sided=True, mirror=True),
        ShapeSpec(22, "box", (12.0, 3.0, 10.0), (3.0, 2.0, 4.0), 300.0, 0.0),
    )
    return PhantomSpec(geom, shapes, -100.0, degradation, n, seed)


def sample_dice(gt, samples):
    fg = gt > 0
    vals = [2 * np.sum((gt == s) & fg) / (fg.sum() + np.sum(s > 0)) for s in samples]
    return float(np.mean(vals))


def test_degradation_zero_is_clean():
    case = generate_case(small_spec(0.0))
    assert all(np.array_equal(s, case.gt.data) for s in case.stack.samples)
    labels, umap = aggregate_mc_samples(case.stack)
    assert np.array_equal(labels.data, case.gt.data)
    assert np.all(umap.data == 0)


def test_sphere_voxelization_volume():
    geom = VolumeGeometry((30, 30, 30))
    s = ShapeSpec(1, "sphere", (15.0, 15.0, 15.0), 10.0, 0.0)
    assert s.analytic_volume_mm3 == pytest.approx(4188.790204786391)
    count = shape_mask(s, geom).sum()
    assert abs(count - 4188.79) / 4188.79 < 0.02


@pytest.mark.parametrize("shape,radii", [("sphere", (10.5,) * 3), ("ellipsoid", (10.5, 13.0, 16.0))])
def test_curved_shapes_volume_error(shape, radii):
    # every radius is at least 10 voxels on this anisotropic grid
    geom = VolumeGeometry((40, 44, 40), (1.0, 0.8, 1.2))
    s = ShapeSpec(1, shape, (20.3, 17.9, 24.1), radii, 0.0)
    got = shape_mask(s, geom).sum() * np.prod(geom.spacing_mm)
    assert abs(got - s.analytic_volume_mm3) / s.analytic_volume_mm3 < 0.02


def test_box_volume_exact_on_grid_aligned_edges():
    geom = VolumeGeometry((40, 44, 40), (1.0, 0.8, 1.2))
    s = ShapeSpec(1, "box", (20.0, 17.6, 24.0), (10.0, 12.0, 13.2), 0.0)
    got = shape_mask(s, geom).sum() * np.prod(geom.spacing_mm)
    assert got == pytest.approx(s.analytic_volume_mm3, rel=1e-12)


def test_box_off_grid_within_one_voxel_per_axis():
    geom = VolumeGeometry((40, 44, 40), (1.0, 0.8, 1.2))
    rng = np.random.default_rng(6)
    for _ in range(20):
        radii = rng.uniform(10, 14, 3) * np.array(geom.spacing_mm)
        center = rng.uniform(15, 17, 3) * np.array(geom.spacing_mm)
        m = shape_mask(ShapeSpec(1, "box", tuple(center), tuple(radii), 0.0), geom)
        idx = np.argwhere(m)
        extent = idx.max(axis=0) - idx.min(axis=0) + 1
        assert np.all(np.abs(extent - 2 * radii / np.array(geom.spacing_mm)) < 1)
        assert m.sum() == np.prod(extent)


def test_determinism():
    a = generate_case(small_spec(0.5, seed=123))
    b = generate_case(small_spec(0.5, seed=123))
    assert np.array_equal(a.intensity.data, b.intensity.data)
    assert np.array_equal(a.gt.data, b.gt.data)
    assert np.array_equal(a.stack.samples, b.stack.samples)
    c = generate_case(small_spec(0.5, seed=124))
    assert not np.array_equal(a.stack.samples, c.stack.samples)


def test_pinned_generator_stream():
    # intensities come from Philox keyed by SeedSequence(seed, spawn_key=(0,)), drawn in x-fastest order
    case = generate_case(
        PhantomSpec(VolumeGeometry((4, 4, 4)), (ShapeSpec(1, "box", (2.0, 2.0, 2.0), 1.0, 10.0, 5.0),), seed=7)
    )
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(7, spawn_key=(0,))))
    draws = np.rint(gen.normal(10.0, 5.0, 8))
    assert case.intensity.data[1:3, 1:3, 1:3].ravel(order="F").tolist() == draws.tolist()
    assert case_seed(0, 0) == case_seed(0, 0) != case_seed(0, 1)


def test_out_of_bounds_rejected():
    geom = VolumeGeometry((10, 10, 10))
    with pytest.raises(SpecError):
        PhantomSpec(geom, (ShapeSpec(1, "sphere", (2.0, 5.0, 5.0), 3.0, 0.0),))
    with pytest.raises(SpecError):
        PhantomSpec(geom, (ShapeSpec(1, "sphere", (5.0, 5.0, 5.0), 3.0, 0.0),), degradation=1.5)
    with pytest.raises(SpecError):
        ShapeSpec(1, "sphere", (5.0, 5.0, 5.0), 3.0, 0.0, hu_sd=-1.0)
    with pytest.raises(SpecError):
        ShapeSpec(1, "cone", (5.0, 5.0, 5.0), 3.0, 0.0)


def test_later_structures_overwrite():
    geom = VolumeGeometry((10, 10, 10))
    a = ShapeSpec(1, "box", (5.0, 5.0, 5.0), 4.0, 0.0)
    b = ShapeSpec(2, "box", (5.0, 5.0, 5.0), 2.0, 0.0)
    case = generate_case(PhantomSpec(geom, (a, b)))
    assert (case.gt.data == 2).sum() == 64 and (case.gt.data == 1).sum() == 512 - 64


def test_mirror_reflects_across_lr_extent():
    spec = small_spec()
    left, right = spec.expanded_structures()[:2]
    assert right.center_mm == (16.0, 10.0, 10.0)
    gt = generate_case(spec).gt.data
    assert np.array_equal(gt[::-1] == 21, gt == 21)


def test_boundary_bands_only_touch_surface():
    gt = generate_case(small_spec()).gt.data
    for code, inner, outer in boundary_bands(gt):
        assert np.all(gt[inner] == code) and np.all(gt[outer] == 0)
    case = generate_case(small_spec(0.9, seed=3))
    changed = np.any(case.stack.samples != case.gt.data, axis=0)
    bands = np.zeros(gt.shape, dtype=bool)
    for _, inner, outer in boundary_bands(gt):
        bands |= inner | outer
    assert changed.any() and not np.any(changed & ~bands)


def test_cohort_n1_equals_generate_case():
    base = small_spec(0.3, seed=9)
    (one,) = generate_cohort(base, 1, [0.3])
    direct = generate_case(base.with_case(0.3, case_seed(9, 0)))
    assert np.array_equal(one.stack.samples, direct.stack.samples)
    assert np.array_equal(one.intensity.data, direct.intensity.data)


def test_cohort_schedule_errors():
    with pytest.raises(SpecError):
        generate_cohort(small_spec(), 3, [0.1, 0.2])
    with pytest.raises(SpecError):
        generate_cohort(small_spec(), 0)


def test_all_zero_schedule_gives_perfect_dc():
    cases = generate_cohort(small_spec(), 4, [0.0] * 4)
    for c in cases:
        labels, _ = aggregate_mc_samples(c.stack)
        assert np.array_equal(labels.data, c.gt.data)
        assert sample_dice(c.gt.data, c.stack.samples) == 1.0


def test_monotone_schedule_dc_declines():
    cases = generate_cohort(default_spec(0), 60, linear_schedule(60))
    dc = np.array([sample_dice(c.gt.data, c.stack.samples) for c in cases])
    declines = np.mean(np.diff(dc) < 0)
    assert declines >= 0.9


def test_uncertainty_increases_with_degradation():
    levels = (0.15, 0.45, 0.8)
    means = []
    for d in levels:
        vals = []
        for seed in range(20):
            case = generate_case(small_spec(d, seed=seed, n=8))
            labels, umap = aggregate_mc_samples(case.stack)
            vals.append(structure_uncertainty(umap, labels, 21))
        means.append(np.mean(vals))
    assert means[0] < means[1] < means[2]


def test_truth_and_expected_fractions():
    case = generate_case(small_spec())
    t = case.truth.structures[21]
    assert t.analytic_volume_cc == pytest.approx(2 * 4 / 3 * math.pi * 125 / 1000)
    assert case.truth.structures[22].analytic_volume_cc == pytest.approx(6 * 4 * 8 / 1000)
    f = expected_fractions(0.0, 30.0)
    assert f["fat"] == pytest.approx(f["lean"]) and sum(f.values()) == pytest.approx(1.0)
    assert expected_fractions(-31.0, 0.0) == {"fat": 1.0, "composite": 0.0, "lean": 0.0}
    assert expected_fractions(30.0, 0.0)["composite"] == 1.0


def test_empirical_composition_matches_expected():
    geom = VolumeGeometry((40, 40, 40))
    s = ShapeSpec(5, "box", (20.0, 20.0, 20.0), 20.0, 10.0, 40.0)
    case = generate_case(PhantomSpec(geom, (s,), seed=4))
    hu = case.intensity.data
    f = expected_fractions(10.0, 40.0)
    n = hu.size
    assert np.mean(hu < -30) == pytest.approx(f["fat"], abs=4 * math.sqrt(0.25 / n))
    assert np.mean(hu > 30) == pytest.approx(f["lean"], abs=4 * math.sqrt(0.25 / n))


def test_spec_json_round_trip(tmp_path):
    spec = default_spec(5)
    again = PhantomSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert again == spec
    d = spec.to_json()
    d["cohort"] = {"n_cases": 3}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    loaded, cohort = load_spec(p)
    assert loaded == spec and cohort == {"n_cases": 3}
    with pytest.raises(SpecError):
        PhantomSpec.from_json({"structures": []})
