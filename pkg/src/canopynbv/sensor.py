"""Simulated noisy semantic depth camera.

Casts a pinhole ray grid against ground-truth scene geometry and emits one
semantic point per ray: surface hits labeled through a parametric detection
model, misses retained as background points pinned to the maximum range so
the map can clear the free space they crossed.

The detection model stands in for a real instance-segmentation pipeline:
each visible symptom instance is detected per view with probability
p_detect, detected instances get a sampled confidence and occasionally a
swapped class, overlaps resolve toward the higher confidence, and a spurious
patch of false-positive labels appears with probability p_false_positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractViolation
from .geometry import CameraPose, pinhole_ray_directions
from .scene import SceneModel, CLASS_CROOK, CLASS_CANKER
from .semantic_octree import BACKGROUND_CLASS, SemanticPointCloud


@dataclass(frozen=True)
class CameraModel:
    """Angular field of view plus the sensing ray grid density."""

    fov_h: float = math.radians(60.0)
    fov_v: float = math.radians(60.0)
    max_range: float = 0.9
    ray_rows: int = 72
    ray_cols: int = 96

    def __post_init__(self):
        if not (0.0 < self.fov_h < math.pi and 0.0 < self.fov_v < math.pi):
            raise ContractViolation("fields of view must lie in (0, pi)")
        if self.max_range <= 0:
            raise ContractViolation("max_range must be positive")
        if self.ray_rows < 2 or self.ray_cols < 2:
            raise ContractViolation("ray grid must be at least 2x2")


@dataclass(frozen=True)
class DetectorModel:
    """Parametric per-view symptom detection noise.

    Detection is range-dependent: within range_falloff_start the detector
    operates at full quality; beyond it both the detection probability and
    the emitted confidence scale down linearly to range_falloff_floor at the
    camera's maximum range (small apparent size, fewer pixels on target).
    Distant sightings therefore tend to produce weak sub-threshold labels
    that only deliberate close-up views can confirm or retract.
    """

    p_detect: float = 0.7
    conf_mean: float = 0.55
    conf_spread: float = 0.2
    p_misclass: float = 0.2
    p_false_positive: float = 0.25
    background_confidence: float = 0.3
    range_falloff_start: float = 0.5
    range_falloff_floor: float = 0.3
    noise_seed: int = 0

    def __post_init__(self):
        for name in ("p_detect", "p_misclass", "p_false_positive",
                     "background_confidence", "range_falloff_floor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractViolation(f"{name} must be in [0, 1], got {v}")
        if self.range_falloff_start <= 0:
            raise ContractViolation("range_falloff_start must be positive")

    def range_quality(self, distance: float, max_range: float) -> float:
        """Detection quality factor in [floor, 1] for a target distance."""
        if distance <= self.range_falloff_start or max_range <= self.range_falloff_start:
            return 1.0
        frac = (distance - self.range_falloff_start) \
            / (max_range - self.range_falloff_start)
        return float(max(self.range_falloff_floor,
                         1.0 - (1.0 - self.range_falloff_floor) * frac))

    def sample_confidence(self, rng) -> float:
        return float(np.clip(rng.uniform(self.conf_mean - self.conf_spread,
                                         self.conf_mean + self.conf_spread), 0.0, 1.0))


def render_view(scene: SceneModel, pose: CameraPose, camera: CameraModel,
                detector: DetectorModel, rng: np.random.Generator) -> SemanticPointCloud:
    """One simulated capture: rows*cols semantic points, row-major.

    Hit points sit just inside the first geometry voxel along their ray;
    rays without a hit return a background point exactly at max_range
    (is_max_range set). Bit-identical output for a fixed (scene, pose, rng
    state).
    """
    dirs = pinhole_ray_directions(pose, camera.fov_h, camera.fov_v,
                                  camera.ray_rows, camera.ray_cols)
    occ = scene.occupancy_grid()
    res = scene.bounds.resolution
    t_hit, hit_cells = _kernels.first_hit(pose.position, dirs, camera.max_range,
                                          occ, scene.bounds.min_corner, res)
    hit = np.isfinite(t_hit)

    positions = pose.position + camera.max_range * dirs
    # nudge inside the hit voxel so the endpoint maps back to the same cell
    positions[hit] = pose.position + (t_hit[hit, None] + 0.001 * res) * dirs[hit]
    class_ids = np.full(len(dirs), BACKGROUND_CLASS, dtype=np.int32)
    # background (non-detection) evidence weakens with range like detections:
    # a distant look that saw nothing is a weak reason to overwrite a label
    confidences = np.full(len(dirs), detector.background_confidence, dtype=np.float64)
    if hit.any():
        q_hit = np.array([detector.range_quality(t, camera.max_range)
                          for t in t_hit[hit]])
        confidences[hit] = detector.background_confidence * q_hit

    inst_flat = scene.instance_grid().reshape(-1)
    inst_of_ray = np.full(len(dirs), -1, dtype=np.int32)
    inst_of_ray[hit] = inst_flat[hit_cells[hit]]

    # per-instance detection draws, in ascending instance order so the
    # noise stream is reproducible; quality follows the closest sighting
    visible = np.unique(inst_of_ray[inst_of_ray >= 0])
    detections = {}
    for iid in visible:
        dist = float(t_hit[inst_of_ray == iid].min())
        quality = detector.range_quality(dist, camera.max_range)
        if rng.uniform() < detector.p_detect * quality:
            conf = detector.sample_confidence(rng) * quality
            cls = scene.symptoms[int(iid)].class_id
            if rng.uniform() < detector.p_misclass:
                cls = CLASS_CANKER if cls == CLASS_CROOK else CLASS_CROOK
            detections[int(iid)] = (cls, conf)

    # higher-confidence detections overwrite lower ones on shared rays
    for iid, (cls, conf) in sorted(detections.items(), key=lambda kv: (kv[1][1], kv[0])):
        sel = inst_of_ray == iid
        class_ids[sel] = cls
        confidences[sel] = conf

    # occasional spurious patch on plain-wood hits
    if rng.uniform() < detector.p_false_positive:
        bg_hits = np.flatnonzero(hit & (inst_of_ray < 0))
        if bg_hits.size:
            anchor = bg_hits[int(rng.integers(bg_hits.size))]
            cls = int(rng.integers(CLASS_CROOK, CLASS_CANKER + 1))
            conf = detector.sample_confidence(rng) \
                * detector.range_quality(float(t_hit[anchor]), camera.max_range)
            _, ny, nz = scene.bounds.dims
            cell = hit_cells[anchor]
            ax, rem = divmod(int(cell), ny * nz)
            ay, az = divmod(rem, nz)
            cells = hit_cells[bg_hits]
            cx, cr = np.divmod(cells, ny * nz)
            cy, cz = np.divmod(cr, nz)
            patch = bg_hits[(np.abs(cx - ax) <= 1) & (np.abs(cy - ay) <= 1)
                            & (np.abs(cz - az) <= 1)]
            class_ids[patch] = cls
            confidences[patch] = conf

    return SemanticPointCloud(positions=positions, class_ids=class_ids,
                              confidences=confidences, max_range_flags=~hit)
