"""Confidence-aware semantic occupancy map over a bounded voxel grid.

Each voxel carries occupancy evidence in log-odds form plus an optional
semantic payload (class id, confidence in [0, 1]). Point clouds are
integrated by exact ray traversal: voxels crossed by a ray are pushed toward
free space, ray endpoints toward occupied, and semantic observations fuse
into occupied endpoint voxels under a consistency-encouraging update rule
(same-label averaging with a small boost; cross-label winner-take-higher
with a mismatch penalty).

The map domain is a fixed bounded box ("octree" survives only as the concept
name: at desk scale a flat dense grid preserves the same observable behavior
while keeping traversal trivial).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractViolation, OutOfRoiError
from .geometry import RoiBounds, VoxelKey, normalize, traverse_voxels

# class-id conventions: 0 is the reserved background class; symptom classes
# are positive; NO_CLASS marks a voxel without any semantic payload.
BACKGROUND_CLASS = 0
NO_CLASS = -1

_SNAPSHOT_MAGIC = b"CNBVMAP1"
_SNAPSHOT_HEADER = struct.Struct("<13dQ")
_RECORD_DTYPE = np.dtype([("ix", "<i4"), ("iy", "<i4"), ("iz", "<i4"),
                          ("log_odds", "<f8"), ("class_id", "<i4"),
                          ("confidence", "<f8")])


class OccupancyState(enum.Enum):
    FREE = "free"
    OCCUPIED = "occupied"
    UNKNOWN = "unknown"


class RayTerminal(enum.Enum):
    HIT = "hit"              # stopped on an occupied voxel
    MAX_RANGE = "max_range"  # reached the range limit inside the box
    EXIT = "exit"            # left the region of interest (or never entered)


@dataclass(frozen=True)
class FusionParams:
    """Semantic fusion and occupancy update constants.

    confidence_boost is added after same-label confidence averaging;
    mismatch_penalty scales confidence down by (1 - penalty) whenever an
    incoming label disagrees with the stored one.
    """

    confidence_boost: float = 0.05
    mismatch_penalty: float = 0.1
    background_confidence: float = 0.3
    hit_log_odds: float = 0.85
    miss_log_odds: float = -0.4

    def __post_init__(self):
        if self.confidence_boost < 0:
            raise ContractViolation("confidence_boost must be >= 0")
        if not 0.0 <= self.mismatch_penalty <= 1.0:
            raise ContractViolation("mismatch_penalty must be in [0, 1]")
        if not 0.0 <= self.background_confidence <= 1.0:
            raise ContractViolation("background_confidence must be in [0, 1]")
        if not (self.hit_log_odds > 0.0 > self.miss_log_odds):
            raise ContractViolation("need hit_log_odds > 0 > miss_log_odds")


@dataclass(frozen=True)
class SemanticVoxel:
    """Snapshot of one voxel's occupancy evidence and semantic payload."""

    log_odds: float = 0.0
    class_id: int | None = None
    confidence: float = 0.0

    @property
    def has_semantics(self) -> bool:
        return self.class_id is not None


@dataclass(frozen=True)
class SemanticPoint:
    """A 3D measurement carrying a class label and confidence."""

    position: np.ndarray
    class_id: int
    confidence: float
    is_max_range: bool = False

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        if not 0.0 <= self.confidence <= 1.0:
            raise ContractViolation(f"confidence must be in [0, 1], got {self.confidence}")
        if self.is_max_range and self.class_id != BACKGROUND_CLASS:
            raise ContractViolation("max-range points must carry the background class")


@dataclass
class SemanticPointCloud:
    """Columnar batch of semantic points (one row per measurement)."""

    positions: np.ndarray            # (N, 3) float64
    class_ids: np.ndarray            # (N,) int32
    confidences: np.ndarray          # (N,) float64
    max_range_flags: np.ndarray      # (N,) bool

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> SemanticPoint:
        return SemanticPoint(self.positions[i].copy(), int(self.class_ids[i]),
                             float(self.confidences[i]), bool(self.max_range_flags[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @staticmethod
    def from_points(points) -> "SemanticPointCloud":
        pts = list(points)
        if not pts:
            return SemanticPointCloud(np.empty((0, 3)), np.empty(0, dtype=np.int32),
                                      np.empty(0), np.empty(0, dtype=bool))
        return SemanticPointCloud(
            positions=np.array([p.position for p in pts], dtype=np.float64),
            class_ids=np.array([p.class_id for p in pts], dtype=np.int32),
            confidences=np.array([p.confidence for p in pts], dtype=np.float64),
            max_range_flags=np.array([p.is_max_range for p in pts], dtype=bool),
        )


@dataclass
class InsertStats:
    free_updates: int = 0
    occupied_updates: int = 0
    semantic_updates: int = 0
    rejected_points: int = 0


@dataclass(frozen=True)
class RayResult:
    terminal: RayTerminal
    hit_key: VoxelKey | None
    keys: np.ndarray      # (N, 3) voxels traversed, in order (includes the hit voxel)
    t_hit: float | None


def fuse_semantic(voxel: SemanticVoxel, incoming_class: int, incoming_conf: float,
                  params: FusionParams = FusionParams()) -> SemanticVoxel:
    """Fuse one semantic observation into an occupied voxel's payload.

    First observation adopts the incoming label outright. A matching label
    averages confidences and adds the boost. A conflicting label keeps
    whichever label has the higher confidence, then applies the mismatch
    penalty to the surviving confidence.
    """
    if not 0.0 <= incoming_conf <= 1.0:
        raise ContractViolation(f"incoming confidence must be in [0, 1], got {incoming_conf}")
    if not voxel.has_semantics:
        return SemanticVoxel(voxel.log_odds, incoming_class, incoming_conf)
    if incoming_class == voxel.class_id:
        conf = float(np.clip((voxel.confidence + incoming_conf) / 2.0 + params.confidence_boost,
                             0.0, 1.0))
        return SemanticVoxel(voxel.log_odds, voxel.class_id, conf)
    if incoming_conf > voxel.confidence:
        cls, conf = incoming_class, incoming_conf
    else:
        cls, conf = voxel.class_id, voxel.confidence
    conf = float(np.clip(conf * (1.0 - params.mismatch_penalty), 0.0, 1.0))
    return SemanticVoxel(voxel.log_odds, cls, conf)


class SemanticOctree:
    """Bounded-domain occupancy map with per-voxel semantic labels.

    Single writer: insertion mutates state and must be externally
    serialized. Reads (state queries, frontier scans, ray casts, coverage)
    are safe to run concurrently when no writer is active.
    """

    def __init__(self, bounds: RoiBounds, fusion: FusionParams = FusionParams(),
                 occupancy_threshold: float = 0.0,
                 log_odds_bounds: tuple[float, float] = (-2.0, 3.5)):
        self.bounds = bounds
        self.fusion = fusion
        self.occupancy_threshold = float(occupancy_threshold)
        self.log_odds_min, self.log_odds_max = map(float, log_odds_bounds)
        if self.log_odds_min >= self.log_odds_max:
            raise ContractViolation("log_odds_bounds must be (min, max) with min < max")
        nx, ny, nz = bounds.dims
        self._log_odds = np.zeros((nx, ny, nz), dtype=np.float64)
        self._updated = np.zeros((nx, ny, nz), dtype=bool)
        self._class = np.full((nx, ny, nz), NO_CLASS, dtype=np.int32)
        self._conf = np.zeros((nx, ny, nz), dtype=np.float64)

    # -- write path ----------------------------------------------------------

    def insert_point_cloud(self, origin, points) -> InsertStats:
        """Integrate a semantic point cloud captured from `origin`.

        Voxels strictly between origin and a point's endpoint receive one
        miss update; the endpoint voxel (inside the ROI, not max-range)
        receives one hit update, hits winning over misses within the batch.
        Max-range points clear traversed free space only. Semantic fusion is
        applied per point, in order, to endpoint voxels that are occupied
        after the batch occupancy update.
        """
        origin = np.asarray(origin, dtype=np.float64)
        if not np.all(np.isfinite(origin)):
            raise ContractViolation("sensor origin must be finite")
        cloud = points if isinstance(points, SemanticPointCloud) \
            else SemanticPointCloud.from_points(points)
        stats = InsertStats()
        if len(cloud) == 0:
            return stats
        if np.any((cloud.confidences < 0) | (cloud.confidences > 1)):
            raise ContractViolation("point confidences must be in [0, 1]")

        finite = np.all(np.isfinite(cloud.positions), axis=1)
        stats.rejected_points = int(np.count_nonzero(~finite))
        ends = cloud.positions[finite]
        if ends.shape[0] == 0:
            return stats
        class_ids = cloud.class_ids[finite]
        confs = cloud.confidences[finite]
        max_range = cloud.max_range_flags[finite]

        nx, ny, nz = self.bounds.dims
        res = self.bounds.resolution
        bmin = self.bounds.min_corner
        t_ends = np.linalg.norm(ends - origin, axis=1)

        # traversal visit buffers, sized from per-ray plane-crossing bounds
        span = np.abs(ends - origin).sum(axis=1) / res
        cap = int(span.sum()) + 4 * ends.shape[0] + 16
        out_cells = np.empty(cap, dtype=np.int64)
        out_rays = np.empty(cap, dtype=np.int32)
        n_vis = _kernels.segment_visits(origin, ends, t_ends, bmin, res,
                                        np.array([nx, ny, nz], dtype=np.int64),
                                        out_cells, out_rays)
        vis_cells = out_cells[:n_vis]
        vis_rays = out_rays[:n_vis]

        # endpoint voxels: a hit when inside the ROI and not a max-range point
        idx = np.floor((ends - bmin) / res).astype(np.int64)
        in_roi = np.all((idx >= 0) & (idx < np.array([nx, ny, nz])), axis=1)
        is_hit = in_roi & ~max_range
        ep_flat = np.where(is_hit, (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2], -1)

        # per-batch dedup: strip endpoint cells from the miss stream, then
        # let hits win over crossing misses from other rays
        is_endpoint_visit = ep_flat[vis_rays] == vis_cells
        miss_cells = np.unique(vis_cells[~is_endpoint_visit])
        hit_cells = np.unique(ep_flat[is_hit])
        miss_cells = np.setdiff1d(miss_cells, hit_cells, assume_unique=True)

        lo = self._log_odds.reshape(-1)
        upd = self._updated.reshape(-1)
        cls = self._class.reshape(-1)
        cnf = self._conf.reshape(-1)

        if miss_cells.size:
            lo[miss_cells] = np.clip(lo[miss_cells] + self.fusion.miss_log_odds,
                                     self.log_odds_min, self.log_odds_max)
            upd[miss_cells] = True
            # occupancy dropping below threshold invalidates the payload:
            # only occupied voxels may carry semantics
            gone = miss_cells[lo[miss_cells] < self.occupancy_threshold]
            cls[gone] = NO_CLASS
            cnf[gone] = 0.0
        if hit_cells.size:
            lo[hit_cells] = np.clip(lo[hit_cells] + self.fusion.hit_log_odds,
                                    self.log_odds_min, self.log_odds_max)
            upd[hit_cells] = True

        occupied_flat = upd & (lo >= self.occupancy_threshold)
        stats.semantic_updates = int(_kernels.fuse_batch(
            ep_flat, class_ids.astype(np.int32), confs, occupied_flat, cls, cnf,
            self.fusion.confidence_boost, self.fusion.mismatch_penalty, NO_CLASS))
        stats.free_updates = int(miss_cells.size)
        stats.occupied_updates = int(hit_cells.size)
        return stats

    # -- read path -----------------------------------------------------------

    def _check_key(self, key):
        if not self.bounds.contains_key(key):
            raise OutOfRoiError(f"voxel key {tuple(key)} is outside the ROI grid")

    def occupancy_state(self, key) -> OccupancyState:
        self._check_key(key)
        k = (int(key[0]), int(key[1]), int(key[2]))
        if not self._updated[k]:
            return OccupancyState.UNKNOWN
        if self._log_odds[k] >= self.occupancy_threshold:
            return OccupancyState.OCCUPIED
        return OccupancyState.FREE

    def voxel(self, key) -> SemanticVoxel:
        self._check_key(key)
        k = (int(key[0]), int(key[1]), int(key[2]))
        cid = int(self._class[k])
        return SemanticVoxel(log_odds=float(self._log_odds[k]),
                             class_id=None if cid == NO_CLASS else cid,
                             confidence=float(self._conf[k]))

    def state_grid(self) -> np.ndarray:
        """Dense uint8 state grid: 0 free, 1 occupied, 2 unknown."""
        state = np.full(self.bounds.dims, 2, dtype=np.uint8)
        occ = self._updated & (self._log_odds >= self.occupancy_threshold)
        state[self._updated & ~occ] = 0
        state[occ] = 1
        return state

    def semantic_grids(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (class, confidence) grids; class is NO_CLASS where a voxel
        holds no payload. Copies, safe to mutate."""
        return self._class.copy(), self._conf.copy()

    def semantic_uncertainty_grid(self) -> np.ndarray:
        """Per-voxel 1 - confidence for occupied voxels (0 elsewhere).

        Occupied voxels without a semantic payload fall back to the
        background confidence.
        """
        occ = self._updated & (self._log_odds >= self.occupancy_threshold)
        conf = np.where(self._class != NO_CLASS, self._conf,
                        self.fusion.background_confidence)
        out = np.zeros(self.bounds.dims, dtype=np.float64)
        out[occ] = 1.0 - conf[occ]
        return out

    def frontier_voxels(self) -> np.ndarray:
        """Known (free or occupied) voxels with a six-connected unknown
        neighbor inside the ROI, sorted lexicographically. Shape (N, 3)."""
        known = self._updated
        unknown = ~self._updated
        frontier = np.zeros_like(known)
        for axis in range(3):
            for sign in (1, -1):
                shifted = np.roll(unknown, sign, axis=axis)
                # roll wraps around: voxels on the face have no neighbor there
                edge = [slice(None)] * 3
                edge[axis] = 0 if sign == 1 else -1
                shifted[tuple(edge)] = False
                frontier |= known & shifted
        return np.argwhere(frontier)

    def low_confidence_voxels(self, threshold: float) -> np.ndarray:
        """Occupied voxels holding a non-background label with confidence
        below the threshold, sorted lexicographically. Shape (N, 3)."""
        if not 0.0 <= threshold <= 1.0:
            raise ContractViolation("threshold must be in [0, 1]")
        occ = self._updated & (self._log_odds >= self.occupancy_threshold)
        mask = occ & (self._class > BACKGROUND_CLASS) & (self._conf < threshold)
        return np.argwhere(mask)

    def coverage(self) -> float:
        """Fraction of ROI voxels whose occupancy state is known."""
        return float(np.count_nonzero(self._updated)) / self.bounds.n_total

    def counts(self) -> dict:
        occ = int(np.count_nonzero(self._updated & (self._log_odds >= self.occupancy_threshold)))
        known = int(np.count_nonzero(self._updated))
        return {"unknown": self.bounds.n_total - known, "free": known - occ, "occupied": occ}

    def cast_ray(self, origin, direction, max_range: float) -> RayResult:
        """Walk the exact voxel sequence from origin along direction.

        Stops at the first occupied voxel (terminal HIT, the voxel included
        in `keys`), at max_range (MAX_RANGE), or when leaving the ROI (EXIT).
        """
        if max_range <= 0:
            raise ContractViolation("max_range must be positive")
        direction = normalize(direction)  # raises on zero-length input
        keys, entries, exited = traverse_voxels(origin, direction, max_range, self.bounds)
        occ = self._updated & (self._log_odds >= self.occupancy_threshold)
        for i in range(keys.shape[0]):
            k = (keys[i, 0], keys[i, 1], keys[i, 2])
            if occ[k]:
                return RayResult(RayTerminal.HIT, (int(k[0]), int(k[1]), int(k[2])),
                                 keys[: i + 1], float(entries[i]))
        if exited:
            return RayResult(RayTerminal.EXIT, None, keys, None)
        return RayResult(RayTerminal.MAX_RANGE, None, keys, None)

    # -- snapshot io ----------------------------------------------------------

    def save(self, path) -> None:
        """Write a versioned binary snapshot (bit-exact round trip)."""
        upd_keys = np.argwhere(self._updated)
        records = np.empty(upd_keys.shape[0], dtype=_RECORD_DTYPE)
        records["ix"], records["iy"], records["iz"] = upd_keys[:, 0], upd_keys[:, 1], upd_keys[:, 2]
        sel = tuple(upd_keys.T)
        records["log_odds"] = self._log_odds[sel]
        records["class_id"] = self._class[sel]
        records["confidence"] = self._conf[sel]
        header = _SNAPSHOT_HEADER.pack(
            self.bounds.resolution, *self.bounds.min_corner, *self.bounds.max_corner,
            self.fusion.hit_log_odds, self.fusion.miss_log_odds,
            self.fusion.confidence_boost, self.fusion.mismatch_penalty,
            self.fusion.background_confidence, self.occupancy_threshold,
            len(records))
        with open(path, "wb") as fh:
            fh.write(_SNAPSHOT_MAGIC)
            fh.write(header)
            fh.write(struct.pack("<2d", self.log_odds_min, self.log_odds_max))
            fh.write(records.tobytes())

    @classmethod
    def load(cls, path) -> "SemanticOctree":
        with open(path, "rb") as fh:
            magic = fh.read(len(_SNAPSHOT_MAGIC))
            if magic != _SNAPSHOT_MAGIC:
                raise ValueError(f"not a map snapshot (bad magic {magic!r})")
            vals = _SNAPSHOT_HEADER.unpack(fh.read(_SNAPSHOT_HEADER.size))
            lo_min, lo_max = struct.unpack("<2d", fh.read(16))
            res = vals[0]
            bounds = RoiBounds(np.array(vals[1:4]), np.array(vals[4:7]), res)
            fusion = FusionParams(hit_log_odds=vals[7], miss_log_odds=vals[8],
                                  confidence_boost=vals[9], mismatch_penalty=vals[10],
                                  background_confidence=vals[11])
            tree = cls(bounds, fusion, occupancy_threshold=vals[12],
                       log_odds_bounds=(lo_min, lo_max))
            n = vals[13]
            records = np.frombuffer(fh.read(n * _RECORD_DTYPE.itemsize), dtype=_RECORD_DTYPE)
        sel = (records["ix"].astype(np.intp), records["iy"].astype(np.intp),
               records["iz"].astype(np.intp))
        tree._updated[sel] = True
        tree._log_odds[sel] = records["log_odds"]
        tree._class[sel] = records["class_id"]
        tree._conf[sel] = records["confidence"]
        return tree
