"""Independent oracles used across the test suite.

Everything here deliberately avoids the package's incremental traversal:
voxel walks are reconstructed from globally enumerated grid-plane crossings
(interval midpoints), and gains/cluster structure are recomputed from first
principles so the production code is checked against a second route.
"""

import numpy as np

from canopynbv.geometry import RoiBounds
from canopynbv.semantic_octree import OccupancyState


def box_interval(origin, direction, bounds: RoiBounds):
    t_lo, t_hi = -np.inf, np.inf
    for a in range(3):
        if direction[a] != 0.0:
            t0 = (bounds.min_corner[a] - origin[a]) / direction[a]
            t1 = (bounds.max_corner[a] - origin[a]) / direction[a]
            t_lo = max(t_lo, min(t0, t1))
            t_hi = min(t_hi, max(t0, t1))
        elif not (bounds.min_corner[a] <= origin[a] <= bounds.max_corner[a]):
            return 1.0, -1.0
    return t_lo, t_hi


def crossing_voxels(origin, direction, t_end, bounds: RoiBounds):
    """Exact ordered voxel walk via plane-crossing interval midpoints."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    t0, t1 = box_interval(origin, direction, bounds)
    t_lo, t_hi = max(t0, 0.0), min(t1, t_end)
    if t_lo >= t_hi:
        return []
    ts = [t_lo, t_hi]
    dims = bounds.dims
    for a in range(3):
        if direction[a] == 0.0:
            continue
        planes = bounds.min_corner[a] + bounds.resolution * np.arange(dims[a] + 1)
        t = (planes - origin[a]) / direction[a]
        ts.extend(t[(t > t_lo) & (t < t_hi)])
    ts = sorted(ts)
    out, seen = [], set()
    for a, b in zip(ts, ts[1:]):
        if b - a <= 1e-13:
            continue
        mid = origin + 0.5 * (a + b) * direction
        key = bounds.key_for_point(mid)
        if bounds.contains_key(key) and key not in seen:
            seen.add(key)
            out.append(key)
    return out


def dense_sample_voxels(origin, direction, t_end, bounds: RoiBounds, step):
    """Voxel set from uniform stepping along the ray (the spec'd r/10 sweep)."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    ts = np.arange(0.0, t_end + step * 0.5, step)
    ts = ts[ts <= t_end]
    pts = origin + ts[:, None] * direction
    idx = np.floor((pts - bounds.min_corner) / bounds.resolution).astype(int)
    inside = np.all((idx >= 0) & (idx < np.array(bounds.dims)), axis=1)
    return set(map(tuple, idx[inside]))


def gain_walk(tree, origin, direction, max_range):
    """Reference per-ray gain contributions under the stopping rules:
    returns (unknown_count, semantic_uncertainty_sum)."""
    u, s = 0, 0.0
    for key in crossing_voxels(origin, direction, max_range, tree.bounds):
        state = tree.occupancy_state(key)
        if state == OccupancyState.UNKNOWN:
            u += 1
        elif state == OccupancyState.OCCUPIED:
            vox = tree.voxel(key)
            conf = vox.confidence if vox.has_semantics \
                else tree.fusion.background_confidence
            s += 1.0 - conf
            break
    return u, s


def flood_fill_clusters(keys, class_of):
    """Brute-force 26-connected components of same-class keys.

    keys: iterable of (ix, iy, iz); class_of: mapping key -> class id.
    Returns a list of frozensets.
    """
    remaining = set(keys)
    comps = []
    while remaining:
        seed = min(remaining)
        cls = class_of[seed]
        comp = {seed}
        frontier = [seed]
        remaining.discard(seed)
        while frontier:
            cur = frontier.pop()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        nb = (cur[0] + dx, cur[1] + dy, cur[2] + dz)
                        if nb in remaining and class_of[nb] == cls:
                            remaining.discard(nb)
                            comp.add(nb)
                            frontier.append(nb)
        comps.append(frozenset(comp))
    return comps


def occupy_voxel(tree, key):
    """Mark one voxel occupied through the public interface: a zero-length
    ray whose origin and endpoint are the voxel center."""
    from canopynbv.semantic_octree import SemanticPoint, BACKGROUND_CLASS
    center = tree.bounds.center_of_key(key)
    tree.insert_point_cloud(center, [SemanticPoint(center, BACKGROUND_CLASS, 0.3)])
