"""Shared 3D geometry: bounded voxel grids, camera frames, and exact ray traversal.

The voxel grid convention used everywhere in this package: a point p maps to
integer key (ix, iy, iz) = floor((p - min_corner) / resolution), and the key
is inside the region of interest iff 0 <= ix < nx (and likewise for y, z).
Voxel centers sit at min_corner + (key + 0.5) * resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

VoxelKey = tuple[int, int, int]

WORLD_UP = np.array([0.0, 0.0, 1.0])

# Nudge (meters along the ray) applied when seeding the traversal inside the
# first voxel, so that starting exactly on a grid plane is unambiguous.
_TRAVERSAL_EPS = 1e-9


@dataclass(frozen=True)
class RoiBounds:
    """Axis-aligned bounding box plus voxel resolution for the mapped region."""

    min_corner: np.ndarray
    max_corner: np.ndarray
    resolution: float

    def __post_init__(self):
        object.__setattr__(self, "min_corner", np.asarray(self.min_corner, dtype=np.float64))
        object.__setattr__(self, "max_corner", np.asarray(self.max_corner, dtype=np.float64))
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if not np.all(self.max_corner > self.min_corner):
            raise ValueError("max_corner must exceed min_corner on every axis")

    @property
    def dims(self) -> tuple[int, int, int]:
        n = np.ceil((self.max_corner - self.min_corner) / self.resolution - 1e-12).astype(int)
        return (max(int(n[0]), 1), max(int(n[1]), 1), max(int(n[2]), 1))

    @property
    def n_total(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def key_for_point(self, point) -> VoxelKey:
        idx = np.floor((np.asarray(point, dtype=np.float64) - self.min_corner) / self.resolution)
        return (int(idx[0]), int(idx[1]), int(idx[2]))

    def contains_key(self, key) -> bool:
        nx, ny, nz = self.dims
        return 0 <= key[0] < nx and 0 <= key[1] < ny and 0 <= key[2] < nz

    def contains_point(self, point) -> bool:
        return self.contains_key(self.key_for_point(point))

    def center_of_key(self, key) -> np.ndarray:
        return self.min_corner + (np.asarray(key, dtype=np.float64) + 0.5) * self.resolution

    def centers_of_keys(self, keys: np.ndarray) -> np.ndarray:
        """Vectorized voxel-center lookup for an (N, 3) integer key array."""
        return self.min_corner + (np.asarray(keys, dtype=np.float64) + 0.5) * self.resolution

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero-length vector")
    return v / n


@dataclass(frozen=True)
class CameraPose:
    """Camera position plus an orthonormal look-at frame (forward/right/up)."""

    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray = field(default=None)
    right: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        fwd = normalize(self.forward)
        up_hint = WORLD_UP if self.up is None else np.asarray(self.up, dtype=np.float64)
        right = np.cross(fwd, up_hint)
        if np.linalg.norm(right) < 1e-9:
            # forward is (anti)parallel to the up hint; fall back to world x
            right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        right = normalize(right)
        up = np.cross(right, fwd)
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "up", up)
        object.__setattr__(self, "right", right)

    @staticmethod
    def look_at(position, target) -> "CameraPose":
        return CameraPose(np.asarray(position, dtype=np.float64),
                          np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64))

    @classmethod
    def _from_frame(cls, position, forward, up, right) -> "CameraPose":
        """Trusted constructor for batch pose creation: the caller guarantees
        an orthonormal frame; validation is skipped."""
        pose = object.__new__(cls)
        object.__setattr__(pose, "position", position)
        object.__setattr__(pose, "forward", forward)
        object.__setattr__(pose, "up", up)
        object.__setattr__(pose, "right", right)
        return pose


def look_at_frames(positions: np.ndarray, targets: np.ndarray) -> list[CameraPose]:
    """Vectorized look-at pose construction (world-up hint, x fallback)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    fwd = targets - positions
    fwd = fwd / np.linalg.norm(fwd, axis=1, keepdims=True)
    right = np.cross(fwd, WORLD_UP)
    bad = np.linalg.norm(right, axis=1) < 1e-9
    if np.any(bad):
        right[bad] = np.cross(fwd[bad], np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right, axis=1, keepdims=True)
    up = np.cross(right, fwd)
    return [CameraPose._from_frame(positions[i], fwd[i], up[i], right[i])
            for i in range(positions.shape[0])]


def ray_box_interval(origin, direction, bounds: RoiBounds):
    """Intersect a ray p(t) = origin + t * direction with the ROI box.

    Returns (t_enter, t_exit); the ray misses the box when t_enter > t_exit.
    Both values may be negative (box behind the origin).
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    t_lo, t_hi = -math.inf, math.inf
    for a in range(3):
        if direction[a] != 0.0:
            t0 = (bounds.min_corner[a] - origin[a]) / direction[a]
            t1 = (bounds.max_corner[a] - origin[a]) / direction[a]
            if t0 > t1:
                t0, t1 = t1, t0
            t_lo = max(t_lo, t0)
            t_hi = min(t_hi, t1)
        elif not (bounds.min_corner[a] <= origin[a] <= bounds.max_corner[a]):
            return 1.0, -1.0
    return t_lo, t_hi


def traverse_voxels(origin, direction, t_end: float, bounds: RoiBounds):
    """Exact voxel walk of the segment t in [0, t_end] clipped to the ROI.

    Steps one grid plane at a time so every voxel whose interior the segment
    crosses is visited exactly once, in order.

    Returns (keys, t_entries, exited) where keys is an (N, 3) int array in
    visit order, t_entries[i] is the ray parameter at which voxel i was
    entered, and exited is True when the walk left the box before t_end.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if t_end < 0:
        raise ValueError("t_end must be non-negative")

    empty = (np.empty((0, 3), dtype=np.int64), np.empty(0, dtype=np.float64))
    t0, t1 = ray_box_interval(origin, direction, bounds)
    t_lo = max(t0, 0.0)
    t_hi = min(t1, t_end)
    if t_lo > t_hi:
        return empty[0], empty[1], True
    exited_box = t1 < t_end

    res = bounds.resolution
    nx, ny, nz = bounds.dims
    p0 = origin + (t_lo + _TRAVERSAL_EPS) * direction
    cell = np.floor((p0 - bounds.min_corner) / res).astype(np.int64)
    cell = np.clip(cell, 0, np.array([nx - 1, ny - 1, nz - 1]))

    step = np.sign(direction).astype(np.int64)
    t_next = np.full(3, math.inf)
    t_delta = np.full(3, math.inf)
    for a in range(3):
        if direction[a] > 0:
            t_next[a] = ((cell[a] + 1) * res + bounds.min_corner[a] - origin[a]) / direction[a]
            t_delta[a] = res / direction[a]
        elif direction[a] < 0:
            t_next[a] = (cell[a] * res + bounds.min_corner[a] - origin[a]) / direction[a]
            t_delta[a] = res / -direction[a]

    keys = []
    entries = []
    t_entry = t_lo
    limits = (nx, ny, nz)
    while True:
        keys.append((int(cell[0]), int(cell[1]), int(cell[2])))
        entries.append(t_entry)
        axis = int(np.argmin(t_next))
        t_cross = t_next[axis]
        if t_cross >= t_hi:
            # segment ends inside the current voxel
            break
        cell[axis] += step[axis]
        if cell[axis] < 0 or cell[axis] >= limits[axis]:
            exited_box = True
            break
        t_entry = t_cross
        t_next[axis] += t_delta[axis]

    return np.array(keys, dtype=np.int64), np.array(entries, dtype=np.float64), exited_box


def image_plane_grid(fov_h: float, fov_v: float, rows: int, cols: int) -> np.ndarray:
    """Camera-local (tan_u, tan_v, 1) ray coordinates, shape (rows*cols, 3).

    Uniform on the image plane, matching the planar footprint
    w = 2 d tan(fov/2) of the camera at stand-off d. Row-major.
    """
    su = np.linspace(-math.tan(fov_h / 2), math.tan(fov_h / 2), cols)
    sv = np.linspace(-math.tan(fov_v / 2), math.tan(fov_v / 2), rows)
    uu, vv = np.meshgrid(su, sv)
    return np.column_stack([uu.ravel(), vv.ravel(), np.ones(rows * cols)])


def pinhole_ray_directions(pose: CameraPose, fov_h: float, fov_v: float,
                           rows: int, cols: int) -> np.ndarray:
    """World-frame unit directions for a rows x cols pinhole ray grid."""
    local = image_plane_grid(fov_h, fov_v, rows, cols)
    frame = np.stack([pose.right, pose.up, pose.forward])
    dirs = local @ frame
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


@dataclass(frozen=True)
class MidplaneGrid:
    """Boustrophedon tiling of the ROI midplane by camera footprints."""

    centers: np.ndarray        # (N, 3) footprint centers on the midplane, in visit order
    positions: np.ndarray      # (N, 3) camera positions, stand_off back from the plane
    view_direction: np.ndarray
    footprint: tuple[float, float]   # (w, h)
    spacing: tuple[float, float]     # (du, dv)
    shape: tuple[int, int]           # (n_rows, n_cols)
    u_axis: np.ndarray = None
    v_axis: np.ndarray = None


def footprint_and_spacing(stand_off: float, fov_h: float, fov_v: float,
                          overlap_ratio: float) -> tuple[float, float, float, float]:
    """Planar coverage footprint (w, h) at the stand-off distance and the
    grid spacing (du, dv) that keeps the requested overlap between views."""
    if not 0.0 <= overlap_ratio < 1.0:
        raise ValueError(f"overlap_ratio must be in [0, 1), got {overlap_ratio}")
    if stand_off <= 0:
        raise ValueError("stand_off must be positive")
    w = 2.0 * stand_off * math.tan(fov_h / 2.0)
    h = 2.0 * stand_off * math.tan(fov_v / 2.0)
    return w, h, w * (1.0 - overlap_ratio), h * (1.0 - overlap_ratio)


def midplane_grid(bounds: RoiBounds, view_direction, stand_off: float,
                  fov_h: float, fov_v: float, overlap_ratio: float) -> MidplaneGrid:
    """Tile the ROI midplane with footprints and order them boustrophedon.

    The midplane passes through the ROI center orthogonal to view_direction.
    Tiling is centered so the union of footprints covers the full projected
    extent of the ROI; rows (vertical axis) run bottom to top with the
    horizontal sweep direction alternating per row.
    """
    view = normalize(view_direction)
    w, h, du, dv = footprint_and_spacing(stand_off, fov_h, fov_v, overlap_ratio)

    u_axis = np.cross(view, WORLD_UP)
    if np.linalg.norm(u_axis) < 1e-9:
        u_axis = np.cross(view, np.array([1.0, 0.0, 0.0]))
    u_axis = normalize(u_axis)
    v_axis = normalize(np.cross(u_axis, view))

    center = bounds.center
    corners = np.array([[x, y, z]
                        for x in (bounds.min_corner[0], bounds.max_corner[0])
                        for y in (bounds.min_corner[1], bounds.max_corner[1])
                        for z in (bounds.min_corner[2], bounds.max_corner[2])])
    rel = corners - center
    u_extent = float(np.ptp(rel @ u_axis))
    v_extent = float(np.ptp(rel @ v_axis))

    n_u = max(1, math.ceil(u_extent / du - 1e-12))
    n_v = max(1, math.ceil(v_extent / dv - 1e-12))
    # center the tiling: split the overhang evenly on both edges
    u0 = -((n_u - 1) * du) / 2.0
    v0 = -((n_v - 1) * dv) / 2.0

    centers = []
    for iv in range(n_v):
        cols = range(n_u) if iv % 2 == 0 else range(n_u - 1, -1, -1)
        for iu in cols:
            centers.append(center + (u0 + iu * du) * u_axis + (v0 + iv * dv) * v_axis)
    centers = np.array(centers)
    positions = centers - stand_off * view
    return MidplaneGrid(centers=centers, positions=positions, view_direction=view,
                        footprint=(w, h), spacing=(du, dv), shape=(n_v, n_u),
                        u_axis=u_axis, v_axis=v_axis)
