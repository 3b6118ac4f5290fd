"""Connected components and left/right separation of sided structures."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import BinaryMask, VolumeGeometry

CCA_ONLY = "cca_only"
WATERSHED = "watershed"

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    geometry: VolumeGeometry
    component_ids: np.ndarray
    sizes: tuple[int, ...]

    @property
    def n_components(self) -> int:
        return len(self.sizes)

    def mask(self, cid: int) -> BinaryMask:
        return BinaryMask(self.geometry, self.component_ids == cid)


@dataclass
class SideSplit:
    left: BinaryMask
    right: BinaryMask
    method: str
    flags: list[str] = field(default_factory=list)


def connected_components(mask: BinaryMask, connectivity: int = 26) -> ComponentLabeling:
    """Label components; ids run 1..K by decreasing size, ties by first voxel in x-fastest order."""
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    raw, k = ndimage.label(mask.data, structure=_STRUCTURES[connectivity])
    if k == 0:
        return ComponentLabeling(mask.geometry, np.zeros(mask.geometry.dims, dtype=np.int32), ())
    flat = raw.ravel(order="F")
    ids, first = np.unique(flat, return_index=True)
    sizes = np.bincount(flat, minlength=k + 1)
    # drop background id 0
    keep = ids != 0
    ids, first = ids[keep], first[keep]
    order = sorted(range(len(ids)), key=lambda i: (-int(sizes[ids[i]]), int(first[i])))
    remap = np.zeros(k + 1, dtype=np.int32)
    for new, i in enumerate(order, start=1):
        remap[ids[i]] = new
    out = remap[raw]
    out.setflags(write=False)
    return ComponentLabeling(mask.geometry, out, tuple(int(sizes[ids[i]]) for i in order))


def largest_component(mask: BinaryMask, connectivity: int = 26) -> BinaryMask:
    comps = connected_components(mask, connectivity)
    if comps.n_components == 0:
        return BinaryMask(mask.geometry, np.zeros(mask.geometry.dims, dtype=bool))
    return comps.mask(1)


def _flood_two_seeds(comp: np.ndarray, dist: np.ndarray, seeds) -> np.ndarray:
    """Marker watershed on ``-dist`` restricted to ``comp`` (26-neighbourhood).

    Voxels are flooded by descending distance; equal distances go in
    insertion order, then by linear index, which keeps plateaus splitting
    halfway between the seeds. Returns 1/2 per voxel of ``comp``.
    """
    # crop to the bounding box plus a one-voxel border of background
    idx = np.argwhere(comp)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0) + 1
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    sub = np.pad(comp[sl], 1)
    sub_dist = np.pad(dist[sl], 1)
    shape = sub.shape
    inside = sub.ravel(order="F").tolist()
    d = sub_dist.ravel(order="F").tolist()
    sx, sy = 1, shape[0]
    sz = shape[0] * shape[1]
    offsets = [
        dx * sx + dy * sy + dz * sz
        for dz in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dx in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ]
    label = [0] * len(inside)
    heap = []
    age = 0
    for lab, seed in enumerate(seeds, start=1):
        p = np.ravel_multi_index(tuple(np.asarray(seed) - lo + 1), shape, order="F")
        heap.append((-d[p], age, p, lab))
        age += 1
    heapq.heapify(heap)
    while heap:
        _, _, p, lab = heapq.heappop(heap)
        if label[p]:
            continue
        label[p] = lab
        for off in offsets:
            q = p + off
            if inside[q] and not label[q]:
                heapq.heappush(heap, (-d[q], age, q, lab))
                age += 1
    lab_arr = np.asarray(label, dtype=np.uint8).reshape(shape, order="F")[1:-1, 1:-1, 1:-1]
    out = np.zeros(comp.shape, dtype=np.uint8)
    out[sl] = lab_arr
    out[~comp] = 0
    return out


def _interior_distance(comp: np.ndarray, spacing) -> np.ndarray:
    """Distance to the nearest non-component voxel, treating outside the grid as background."""
    idx = np.argwhere(comp)
    sl = tuple(slice(a, b + 1) for a, b in zip(idx.min(axis=0), idx.max(axis=0)))
    out = np.zeros(comp.shape, dtype=np.float64)
    out[sl] = ndimage.distance_transform_edt(np.pad(comp[sl], 1), sampling=spacing)[1:-1, 1:-1, 1:-1]
    return out


def _pick_seed(region: np.ndarray, dist: np.ndarray, coord: np.ndarray, plane: float):
    """Distance maximum in ``region``; ties go to the voxel farthest from ``plane``, then lowest linear index."""
    pts = np.argwhere(region)
    dv = dist[region]
    best = pts[dv == dv.max()]
    far = np.abs(coord[tuple(best.T)] - plane)
    best = best[far == far.max()]
    lin = np.ravel_multi_index(tuple(best.T), region.shape, order="F")
    return tuple(best[int(np.argmin(lin))])


def split_left_right(mask: BinaryMask, geom: VolumeGeometry | None = None, connectivity: int = 26) -> SideSplit:
    """Separate a sided structure into left and right masks.

    Components are first assigned by centroid relative to the mask's
    centroid plane along ``lr_axis``. A component whose extent covers
    both side centroids (or straddles the plane when only one side is
    populated) is cut by a two-seed watershed on its interior distance
    transform.
    """
    geom = geom or mask.geometry
    m = mask.data
    empty = np.zeros(geom.dims, dtype=bool)
    ax = geom.lr_axis

    def result(neg, pos, method, flags):
        if geom.lr_positive_is_left:
            left, right = pos, neg
        else:
            left, right = neg, pos
        return SideSplit(BinaryMask(geom, left), BinaryMask(geom, right), method, flags)

    if not m.any():
        return result(empty, empty, CCA_ONLY, ["EmptySplit"])

    shape = [1, 1, 1]
    shape[ax] = geom.dims[ax]
    coord = np.broadcast_to(np.arange(geom.dims[ax], dtype=np.float64).reshape(shape), geom.dims)
    span = coord[m]
    mid = (geom.dims[ax] - 1) / 2.0
    if span.max() < mid:
        return result(m.copy(), empty, CCA_ONLY, ["OneSided"])
    if span.min() > mid:
        return result(empty, m.copy(), CCA_ONLY, ["OneSided"])

    plane = float(span.mean())
    comps = connected_components(mask, connectivity)
    ids = comps.component_ids
    cents = ndimage.mean(coord, ids, index=np.arange(1, comps.n_components + 1))
    mins = ndimage.minimum(coord, ids, index=np.arange(1, comps.n_components + 1))
    maxs = ndimage.maximum(coord, ids, index=np.arange(1, comps.n_components + 1))
    sides = np.sign(np.asarray(cents) - plane)

    neg_ids = [i + 1 for i, s in enumerate(sides) if s < 0]
    pos_ids = [i + 1 for i, s in enumerate(sides) if s > 0]
    if neg_ids and pos_ids:
        c_neg = float(coord[np.isin(ids, neg_ids)].mean())
        c_pos = float(coord[np.isin(ids, pos_ids)].mean())
        spanning = [i + 1 for i in range(comps.n_components) if mins[i] <= c_neg and maxs[i] >= c_pos]
    else:
        spanning = [i + 1 for i in range(comps.n_components) if mins[i] < plane < maxs[i] or sides[i] == 0]

    neg = np.isin(ids, [i for i in neg_ids if i not in spanning])
    pos = np.isin(ids, [i for i in pos_ids if i not in spanning])
    # zero-offset components that do not span are rare; they join the negative side
    stray = [i + 1 for i, s in enumerate(sides) if s == 0 and i + 1 not in spanning]
    neg |= np.isin(ids, stray)
    if not spanning:
        return result(neg, pos, CCA_ONLY, [])

    flags = []
    for cid in spanning:
        comp = ids == cid
        dist = _interior_distance(comp, geom.spacing_mm)
        lower = comp & (coord < plane)
        upper = comp & (coord > plane)
        if not lower.any() or not upper.any():
            if "PlaneFallback" not in flags:
                flags.append("PlaneFallback")
            neg |= comp & (coord <= plane)
            pos |= comp & (coord > plane)
            continue
        seeds = (_pick_seed(lower, dist, coord, plane), _pick_seed(upper, dist, coord, plane))
        basins = _flood_two_seeds(comp, dist, seeds)
        neg |= basins == 1
        pos |= basins == 2
    if not neg.any() or not pos.any():
        flags.append("OneSided")
    return result(neg, pos, WATERSHED, flags)
