"""Compiled ray-marching kernels shared by map insertion, the simulated
sensor, and information-gain evaluation.

Every kernel steps the identical exact grid walk as
``geometry.traverse_voxels`` (one grid plane per step, ties broken x, y, z);
the unit tests cross-check the two implementations voxel for voxel.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_EPS = 1e-9  # meters along the ray; matches geometry._TRAVERSAL_EPS


@njit(cache=True, inline="always")
def _axis_setup(o, d, c, bmin, res):
    """Per-axis DDA increments: (step, t_next, t_delta)."""
    if d > 0.0:
        return 1, ((c + 1) * res + bmin - o) / d, res / d
    elif d < 0.0:
        return -1, (c * res + bmin - o) / d, res / -d
    return 0, np.inf, np.inf


@njit(cache=True, inline="always")
def _clip_to_box(ox, oy, oz, dx, dy, dz, t_end,
                 bx, by, bz, ex, ey, ez):
    """Slab-clip the segment [0, t_end] to the box; returns (ok, t_lo, t_hi)."""
    t_lo = 0.0
    t_hi = t_end
    for a in range(3):
        if a == 0:
            o, d, lo, hi = ox, dx, bx, ex
        elif a == 1:
            o, d, lo, hi = oy, dy, by, ey
        else:
            o, d, lo, hi = oz, dz, bz, ez
        if d != 0.0:
            t0 = (lo - o) / d
            t1 = (hi - o) / d
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > t_lo:
                t_lo = t0
            if t1 < t_hi:
                t_hi = t1
        elif o < lo or o > hi:
            return False, 0.0, -1.0
    return t_lo <= t_hi, t_lo, t_hi


@njit(cache=True)
def segment_visits(origin, ends, t_ends, bmin, res, dims, out_cells, out_rays):
    """Collect every voxel crossed by each segment origin -> ends[i].

    Appends flat cell indices and ray ids into the preallocated output
    buffers; returns the number of visits written. Rays with t_ends[i] <= 0
    contribute nothing.
    """
    nx, ny, nz = dims[0], dims[1], dims[2]
    n_write = 0
    for i in range(ends.shape[0]):
        t_end = t_ends[i]
        if t_end <= 0.0:
            continue
        dx = (ends[i, 0] - origin[0]) / t_end
        dy = (ends[i, 1] - origin[1]) / t_end
        dz = (ends[i, 2] - origin[2]) / t_end
        ok, t_lo, t_hi = _clip_to_box(origin[0], origin[1], origin[2], dx, dy, dz,
                                      t_end, bmin[0], bmin[1], bmin[2],
                                      bmin[0] + nx * res, bmin[1] + ny * res,
                                      bmin[2] + nz * res)
        if not ok:
            continue
        px = origin[0] + (t_lo + _EPS) * dx
        py = origin[1] + (t_lo + _EPS) * dy
        pz = origin[2] + (t_lo + _EPS) * dz
        cx = min(max(int(np.floor((px - bmin[0]) / res)), 0), nx - 1)
        cy = min(max(int(np.floor((py - bmin[1]) / res)), 0), ny - 1)
        cz = min(max(int(np.floor((pz - bmin[2]) / res)), 0), nz - 1)
        sx, tnx, tdx = _axis_setup(origin[0], dx, cx, bmin[0], res)
        sy, tny, tdy = _axis_setup(origin[1], dy, cy, bmin[1], res)
        sz, tnz, tdz = _axis_setup(origin[2], dz, cz, bmin[2], res)
        while True:
            out_cells[n_write] = (cx * ny + cy) * nz + cz
            out_rays[n_write] = i
            n_write += 1
            if tnx <= tny and tnx <= tnz:
                if tnx >= t_hi:
                    break
                cx += sx
                if cx < 0 or cx >= nx:
                    break
                tnx += tdx
            elif tny <= tnz:
                if tny >= t_hi:
                    break
                cy += sy
                if cy < 0 or cy >= ny:
                    break
                tny += tdy
            else:
                if tnz >= t_hi:
                    break
                cz += sz
                if cz < 0 or cz >= nz:
                    break
                tnz += tdz
    return n_write


@njit(cache=True)
def first_hit(origin, dirs, max_range, occ, bmin, res):
    """First occupied voxel along each unit-direction ray from a shared origin.

    Returns (t_hit, hit_cells): entry distance to the hit voxel (inf when the
    ray leaves the box or reaches max_range first) and the flat hit cell
    index (-1 when there is no hit).
    """
    nx, ny, nz = occ.shape
    n = dirs.shape[0]
    t_hit = np.full(n, np.inf)
    hit_cells = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        ok, t_lo, t_hi = _clip_to_box(origin[0], origin[1], origin[2], dx, dy, dz,
                                      max_range, bmin[0], bmin[1], bmin[2],
                                      bmin[0] + nx * res, bmin[1] + ny * res,
                                      bmin[2] + nz * res)
        if not ok:
            continue
        px = origin[0] + (t_lo + _EPS) * dx
        py = origin[1] + (t_lo + _EPS) * dy
        pz = origin[2] + (t_lo + _EPS) * dz
        cx = min(max(int(np.floor((px - bmin[0]) / res)), 0), nx - 1)
        cy = min(max(int(np.floor((py - bmin[1]) / res)), 0), ny - 1)
        cz = min(max(int(np.floor((pz - bmin[2]) / res)), 0), nz - 1)
        sx, tnx, tdx = _axis_setup(origin[0], dx, cx, bmin[0], res)
        sy, tny, tdy = _axis_setup(origin[1], dy, cy, bmin[1], res)
        sz, tnz, tdz = _axis_setup(origin[2], dz, cz, bmin[2], res)
        t_entry = t_lo
        while True:
            if occ[cx, cy, cz]:
                t_hit[i] = t_entry
                hit_cells[i] = (cx * ny + cy) * nz + cz
                break
            if tnx <= tny and tnx <= tnz:
                if tnx >= t_hi:
                    break
                t_entry = tnx
                cx += sx
                if cx < 0 or cx >= nx:
                    break
                tnx += tdx
            elif tny <= tnz:
                if tny >= t_hi:
                    break
                t_entry = tny
                cy += sy
                if cy < 0 or cy >= ny:
                    break
                tny += tdy
            else:
                if tnz >= t_hi:
                    break
                t_entry = tnz
                cz += sz
                if cz < 0 or cz >= nz:
                    break
                tnz += tdz
    return t_hit, hit_cells


@njit(cache=True)
def gain_march(origins, dirs, max_range, state, conf_term, bmin, res):
    """Per-ray unknown-voxel count and semantic-uncertainty sum.

    state codes: 0 free, 1 occupied, 2 unknown. A ray stops on the first
    occupied voxel (which still contributes its conf_term), at max_range,
    or when it exits the box. conf_term holds 1 - confidence for occupied
    voxels and is ignored elsewhere.
    """
    nx, ny, nz = state.shape
    n = dirs.shape[0]
    u_counts = np.zeros(n, dtype=np.int64)
    s_sums = np.zeros(n, dtype=np.float64)
    for i in range(n):
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        ok, t_lo, t_hi = _clip_to_box(origins[i, 0], origins[i, 1], origins[i, 2],
                                      dx, dy, dz, max_range,
                                      bmin[0], bmin[1], bmin[2],
                                      bmin[0] + nx * res, bmin[1] + ny * res,
                                      bmin[2] + nz * res)
        if not ok:
            continue
        px = origins[i, 0] + (t_lo + _EPS) * dx
        py = origins[i, 1] + (t_lo + _EPS) * dy
        pz = origins[i, 2] + (t_lo + _EPS) * dz
        cx = min(max(int(np.floor((px - bmin[0]) / res)), 0), nx - 1)
        cy = min(max(int(np.floor((py - bmin[1]) / res)), 0), ny - 1)
        cz = min(max(int(np.floor((pz - bmin[2]) / res)), 0), nz - 1)
        sx, tnx, tdx = _axis_setup(origins[i, 0], dx, cx, bmin[0], res)
        sy, tny, tdy = _axis_setup(origins[i, 1], dy, cy, bmin[1], res)
        sz, tnz, tdz = _axis_setup(origins[i, 2], dz, cz, bmin[2], res)
        while True:
            s = state[cx, cy, cz]
            if s == 2:
                u_counts[i] += 1
            elif s == 1:
                s_sums[i] += conf_term[cx, cy, cz]
                break
            if tnx <= tny and tnx <= tnz:
                if tnx >= t_hi:
                    break
                cx += sx
                if cx < 0 or cx >= nx:
                    break
                tnx += tdx
            elif tny <= tnz:
                if tny >= t_hi:
                    break
                cy += sy
                if cy < 0 or cy >= ny:
                    break
                tny += tdy
            else:
                if tnz >= t_hi:
                    break
                cz += sz
                if cz < 0 or cz >= nz:
                    break
                tnz += tdz
    return u_counts, s_sums


@njit(cache=True)
def kmeans_step(pts, centers, assign, sums, counts):
    """One Lloyd iteration: assign points to nearest center, accumulate
    per-center sums/counts. Returns the number of changed assignments."""
    n, k = pts.shape[0], centers.shape[0]
    changed = 0
    sums[:] = 0.0
    counts[:] = 0
    for i in range(n):
        best = 0
        best_d = np.inf
        for j in range(k):
            dx = pts[i, 0] - centers[j, 0]
            dy = pts[i, 1] - centers[j, 1]
            dz = pts[i, 2] - centers[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best_d:
                best_d = d
                best = j
        if assign[i] != best:
            changed += 1
            assign[i] = best
        sums[best, 0] += pts[i, 0]
        sums[best, 1] += pts[i, 1]
        sums[best, 2] += pts[i, 2]
        counts[best] += 1
    return changed


@njit(cache=True)
def fuse_batch(ep_cells, classes, confs, occupied_mask, vox_class, vox_conf,
               boost, penalty, no_class):
    """Apply the semantic fusion rule sequentially over endpoint observations.

    Operates in point order on the map's flat class/confidence arrays so
    repeated observations of one voxel within a cloud fuse deterministically.
    Returns the number of fusion updates applied.
    """
    applied = 0
    for k in range(ep_cells.shape[0]):
        v = ep_cells[k]
        if v < 0 or not occupied_mask[v]:
            continue
        c_in = classes[k]
        s_in = confs[k]
        c_old = vox_class[v]
        if c_old == no_class:
            vox_class[v] = c_in
            vox_conf[v] = s_in
        elif c_in == c_old:
            s = (vox_conf[v] + s_in) / 2.0 + boost
            vox_conf[v] = min(max(s, 0.0), 1.0)
        else:
            if s_in > vox_conf[v]:
                vox_class[v] = c_in
                vox_conf[v] = s_in
            s = vox_conf[v] * (1.0 - penalty)
            vox_conf[v] = min(max(s, 0.0), 1.0)
        applied += 1
    return applied
