"""Viewpoint planning: baseline coverage grid, volumetric NBV, semantic NBV.

All three planners share one perception-action loop. The baseline walks a
precomputed boustrophedon grid over the ROI midplane. The NBV planners score
candidate poses (perturbed grid poses plus hemisphere samples around voxel
clusters) with an information gain, subtract a motion cost, and greedily
take the best feasible candidate:

    utility = gain - cost_weight * ||current - candidate||

Volumetric mode clusters frontier voxels and counts unknown voxels per ray;
semantic mode clusters low-confidence labeled voxels and blends unknown
counting with per-occupied-voxel semantic uncertainty (1 - confidence).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import _kernels
from .errors import ConfigError, ContractViolation
from .evaluation import TrialRecord, extract_clusters, score
from .geometry import (CameraPose, RoiBounds, image_plane_grid, look_at_frames,
                       midplane_grid, normalize)
from .reachability import ReachabilityGrid, filter_feasible
from .scene import SceneModel
from .semantic_octree import FusionParams, SemanticOctree
from .sensor import CameraModel, DetectorModel, render_view

# simulated episode clock: Euclidean travel at arm speed plus a fixed
# capture/processing cost per view (keeps episode outputs byte-reproducible)
ARM_SPEED = 0.1          # m/s
VIEW_PROCESS_TIME = 2.0  # s

DEFAULT_VIEW_DIRECTION = np.array([0.0, 1.0, 0.0])


class PlannerMode(str, enum.Enum):
    BASELINE = "baseline"
    VOLUMETRIC = "volumetric"
    SEMANTIC = "semantic"


class ViewpointSource(str, enum.Enum):
    GRID = "grid"
    GRID_PERTURBED = "grid_perturbed"
    FRONTIER_CLUSTER = "frontier_cluster"
    SEMANTIC_CLUSTER = "semantic_cluster"


@dataclass
class Viewpoint:
    pose: CameraPose
    source: ViewpointSource
    gain: float = 0.0
    cost: float = 0.0
    utility: float = 0.0


@dataclass(frozen=True)
class VoxelCluster:
    member_keys: np.ndarray   # (M, 3) int
    centroid: np.ndarray


@dataclass(frozen=True)
class PlannerConfig:
    """All planner, camera, and fusion parameters in one place.

    Angles are stored in degrees (the config-file unit); converted where
    used. radial_range of None resolves to (0.7, 1.2) x stand_off.
    """

    resolution: float = 0.04
    utility_cost_weight: float = 0.1          # gain units per meter of travel
    semantic_weight: float = 0.7              # blend toward semantic uncertainty
    # voxels below this confidence are refinement targets; kept under the
    # detector's confidence mean so the target set drains as labels settle
    # and the semantic planner falls back to exploring between bursts
    low_confidence_threshold: float = 0.45
    overlap_ratio: float = 0.2
    stand_off: float = 0.6                    # nominal camera-to-midplane distance, m
    cluster_cap: int = 100                    # max voxels per k-means cluster
    hemisphere_samples: int = 8
    radial_range: tuple[float, float] | None = None
    ig_ray_rows: int = 18
    ig_ray_cols: int = 24
    grid_perturbations: int = 3
    perturbation_half_angle_deg: float = 15.0
    camera_fov_h_deg: float = 60.0
    camera_fov_v_deg: float = 60.0
    camera_max_range: float = 0.9
    sensor_ray_rows: int = 72
    sensor_ray_cols: int = 96
    background_confidence: float = 0.3
    detection_confidence_threshold: float = 0.3
    confidence_boost: float = 0.05
    mismatch_penalty: float = 0.1
    matching_radius: float = 0.10
    min_cluster_size: int = 1

    def __post_init__(self):
        if not 0.0 <= self.overlap_ratio < 1.0:
            raise ConfigError("overlap_ratio must be in [0, 1)")
        if not 0.0 <= self.semantic_weight <= 1.0:
            raise ConfigError("semantic_weight must be in [0, 1]")
        if not 0.0 <= self.low_confidence_threshold <= 1.0:
            raise ConfigError("low_confidence_threshold must be in [0, 1]")
        if self.cluster_cap < 1:
            raise ConfigError("cluster_cap must be >= 1")
        if self.stand_off <= 0:
            raise ConfigError("stand_off must be positive")
        rr = self.effective_radial_range()
        if not 0.0 < rr[0] <= rr[1]:
            raise ConfigError("radial_range must satisfy 0 < min <= max")
        if not rr[0] <= self.stand_off <= rr[1]:
            raise ConfigError("radial_range must bracket stand_off")

    def effective_radial_range(self) -> tuple[float, float]:
        if self.radial_range is not None:
            return self.radial_range
        return (0.7 * self.stand_off, 1.2 * self.stand_off)

    def camera_model(self) -> CameraModel:
        return CameraModel(fov_h=math.radians(self.camera_fov_h_deg),
                           fov_v=math.radians(self.camera_fov_v_deg),
                           max_range=self.camera_max_range,
                           ray_rows=self.sensor_ray_rows,
                           ray_cols=self.sensor_ray_cols)

    def fusion_params(self) -> FusionParams:
        return FusionParams(confidence_boost=self.confidence_boost,
                            mismatch_penalty=self.mismatch_penalty,
                            background_confidence=self.background_confidence)

    def as_dict(self) -> dict:
        d = asdict(self)
        if d["radial_range"] is not None:
            d["radial_range"] = list(d["radial_range"])
        return d

    @staticmethod
    def from_dict(d: dict) -> "PlannerConfig":
        known = set(PlannerConfig.__dataclass_fields__)
        for k in d:
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
        kwargs = dict(d)
        if kwargs.get("radial_range") is not None:
            kwargs["radial_range"] = tuple(kwargs["radial_range"])
        return PlannerConfig(**kwargs)

    @staticmethod
    def from_file(path) -> "PlannerConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        return PlannerConfig.from_dict(doc)

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- candidate generation --------------------------------------------------


def baseline_grid(bounds: RoiBounds, camera: CameraModel, stand_off: float,
                  overlap_ratio: float,
                  view_direction=DEFAULT_VIEW_DIRECTION) -> list[Viewpoint]:
    """Boustrophedon-ordered midplane grid viewpoints at the stand-off
    distance, all oriented along the viewing direction."""
    grid = midplane_grid(bounds, view_direction, stand_off,
                         camera.fov_h, camera.fov_v, overlap_ratio)
    return [Viewpoint(CameraPose(pos, grid.view_direction), ViewpointSource.GRID)
            for pos in grid.positions]


def perturbed_grid(base: list[Viewpoint], cone_half_angle: float, per_view: int,
                   rng: np.random.Generator) -> list[Viewpoint]:
    """Each grid pose plus per_view copies with the forward axis redrawn
    uniformly from the spherical cap of the given half-angle."""
    if not 0.0 < cone_half_angle < math.pi / 2:
        raise ContractViolation("cone_half_angle must be in (0, pi/2)")
    out = []
    cos_cap = math.cos(cone_half_angle)
    for vp in base:
        out.append(vp)
        f, r, u = vp.pose.forward, vp.pose.right, vp.pose.up
        for _ in range(per_view):
            cos_t = 1.0 - rng.uniform() * (1.0 - cos_cap)
            sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
            phi = rng.uniform(0.0, 2.0 * math.pi)
            d = cos_t * f + sin_t * (math.cos(phi) * r + math.sin(phi) * u)
            out.append(Viewpoint(CameraPose(vp.pose.position, d),
                                 ViewpointSource.GRID_PERTURBED))
    return out


def cluster_voxels(keys: np.ndarray, cap: int, rng: np.random.Generator,
                   bounds: RoiBounds) -> list[VoxelCluster]:
    """Lloyd's k-means over voxel centers with k = ceil(n / cap).

    Seeding is k-means++ style from the provided generator; iteration stops
    when assignments stabilize (cap 50). Empty clusters are dropped; output
    is sorted by centroid.
    """
    if cap < 1:
        raise ContractViolation("cluster cap must be >= 1")
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    n = keys.shape[0]
    if n == 0:
        return []
    k = math.ceil(n / cap)
    pts = bounds.centers_of_keys(keys)
    if k == 1:
        return [VoxelCluster(member_keys=keys, centroid=pts.mean(axis=0))]

    centers = np.empty((k, 3))
    centers[0] = pts[rng.integers(n)]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = pts[rng.integers(n)]
        else:
            centers[j] = pts[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((pts - centers[j]) ** 2, axis=1))

    assign = np.full(n, -1, dtype=np.int64)
    sums = np.zeros((k, 3))
    counts = np.zeros(k, dtype=np.int64)
    for _ in range(50):
        changed = _kernels.kmeans_step(pts, centers, assign, sums, counts)
        occupied = counts > 0
        centers[occupied] = sums[occupied] / counts[occupied, None]
        if changed == 0:
            break

    clusters = []
    for j in range(k):
        sel = assign == j
        if not np.any(sel):
            continue
        member = keys[sel]
        clusters.append(VoxelCluster(member_keys=member,
                                     centroid=bounds.centers_of_keys(member).mean(axis=0)))
    clusters.sort(key=lambda c: tuple(c.centroid))
    return clusters


def hemisphere_sample(centroid, facing, radial_range: tuple[float, float], n: int,
                      rng: np.random.Generator,
                      source: ViewpointSource = ViewpointSource.FRONTIER_CLUSTER
                      ) -> list[Viewpoint]:
    """n look-at poses uniform over the hemisphere shell around the centroid.

    Positions satisfy r_min <= |p - centroid| <= r_max and lie in the
    half-space on the facing side; every pose looks at the centroid.
    """
    if not (0.0 < radial_range[0] <= radial_range[1]):
        raise ContractViolation("radial_range must satisfy 0 < min <= max")
    if n < 1:
        raise ContractViolation("n must be >= 1")
    centroid = np.asarray(centroid, dtype=np.float64)
    facing = normalize(facing)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    flip = dirs @ facing < 0.0
    dirs[flip] = -dirs[flip]
    u = rng.uniform(size=n)
    r3 = u * (radial_range[1] ** 3 - radial_range[0] ** 3) + radial_range[0] ** 3
    positions = centroid + dirs * np.cbrt(r3)[:, None]
    poses = look_at_frames(positions, np.broadcast_to(centroid, positions.shape))
    return [Viewpoint(pose, source) for pose in poses]


# -- information gain --------------------------------------------------------


def evaluate_gains(poses: list[CameraPose], tree: SemanticOctree, camera: CameraModel,
                   ray_rows: int, ray_cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean per-ray unknown count and semantic-uncertainty sum per pose.

    Rays march the exact voxel walk from each pose through its frustum grid,
    stopping at the first occupied voxel (which contributes its uncertainty),
    at max range, or on leaving the ROI.
    """
    if not poses:
        return np.empty(0), np.empty(0)
    state = tree.state_grid()
    conf_term = tree.semantic_uncertainty_grid()
    n_rays = ray_rows * ray_cols
    local = image_plane_grid(camera.fov_h, camera.fov_v, ray_rows, ray_cols)
    frames = np.stack([np.stack([p.right, p.up, p.forward]) for p in poses])
    dirs = np.einsum("rk,ckj->crj", local, frames).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.repeat(np.array([p.position for p in poses]), n_rays, axis=0)
    u, s = _kernels.gain_march(origins, dirs, camera.max_range, state, conf_term,
                               tree.bounds.min_corner, tree.bounds.resolution)
    u = u.reshape(len(poses), n_rays)
    s = s.reshape(len(poses), n_rays)
    return u.mean(axis=1), s.mean(axis=1)


def volumetric_gain(pose: CameraPose, tree: SemanticOctree, camera: CameraModel,
                    ray_rows: int = 18, ray_cols: int = 24) -> float:
    """Mean unknown-voxel count per frustum ray."""
    u, _ = evaluate_gains([pose], tree, camera, ray_rows, ray_cols)
    return float(u[0])


def semantic_gain(pose: CameraPose, tree: SemanticOctree, camera: CameraModel,
                  beta: float, ray_rows: int = 18, ray_cols: int = 24) -> float:
    """Blend of unknown counting and semantic uncertainty, weight beta."""
    if not 0.0 <= beta <= 1.0:
        raise ContractViolation("beta must be in [0, 1]")
    u, s = evaluate_gains([pose], tree, camera, ray_rows, ray_cols)
    return float((1.0 - beta) * u[0] + beta * s[0])


def rank_candidates(gains: np.ndarray, costs: np.ndarray, cost_weight: float,
                    positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Utility-descending order with deterministic tie-breaking.

    Ties resolve toward the smaller cost, then lexicographic position.
    Returns (utilities, order).
    """
    utilities = gains - cost_weight * costs
    order = np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0],
                        costs, -utilities))
    return utilities, order


def select_next_view(tree: SemanticOctree, current_pose: CameraPose,
                     config: PlannerConfig, mode: PlannerMode, camera: CameraModel,
                     base_grid: list[Viewpoint], reachability: ReachabilityGrid | None,
                     rng: np.random.Generator, motion_checker=None,
                     view_direction=DEFAULT_VIEW_DIRECTION) -> Viewpoint | None:
    """One greedy NBV step.

    Candidates are the perturbed midplane grid plus hemisphere samples
    around voxel clusters (frontier voxels in volumetric mode, low-confidence
    voxels in semantic mode, which falls back to frontiers when none exist).
    After reachability filtering, candidates are scored and tried in utility
    order until the motion checker accepts one. Returns None when no
    feasible candidate remains.
    """
    if mode == PlannerMode.BASELINE:
        raise ContractViolation("baseline mode walks its grid; NBV selection does not apply")
    candidates = perturbed_grid(base_grid, math.radians(config.perturbation_half_angle_deg),
                                config.grid_perturbations, rng)
    if mode == PlannerMode.VOLUMETRIC:
        keys = tree.frontier_voxels()
        source = ViewpointSource.FRONTIER_CLUSTER
    else:
        keys = tree.low_confidence_voxels(config.low_confidence_threshold)
        source = ViewpointSource.SEMANTIC_CLUSTER
        if keys.shape[0] == 0:
            keys = tree.frontier_voxels()
            source = ViewpointSource.FRONTIER_CLUSTER
    facing = -normalize(view_direction)
    for cluster in cluster_voxels(keys, config.cluster_cap, rng, tree.bounds):
        candidates.extend(hemisphere_sample(cluster.centroid, facing,
                                            config.effective_radial_range(),
                                            config.hemisphere_samples, rng, source))
    candidates = filter_feasible(candidates, reachability)
    if not candidates:
        return None

    poses = [vp.pose for vp in candidates]
    mean_u, mean_s = evaluate_gains(poses, tree, camera,
                                    config.ig_ray_rows, config.ig_ray_cols)
    if mode == PlannerMode.VOLUMETRIC:
        gains = mean_u
    else:
        beta = config.semantic_weight
        gains = (1.0 - beta) * mean_u + beta * mean_s
    positions = np.array([p.position for p in poses])
    costs = np.linalg.norm(positions - current_pose.position, axis=1)
    utilities, order = rank_candidates(gains, costs, config.utility_cost_weight, positions)
    for vp, g, c, u in zip(candidates, gains, costs, utilities):
        vp.gain, vp.cost, vp.utility = float(g), float(c), float(u)
    for i in order:
        if motion_checker is None or motion_checker(candidates[i]):
            return candidates[i]
    return None


# -- episode loop --------------------------------------------------------------


def run_episode(scene: SceneModel, tree: SemanticOctree, planner_mode,
                n_views: int, config: PlannerConfig, detector: DetectorModel,
                rng: np.random.Generator, reachability: ReachabilityGrid | None = None,
                motion_checker=None,
                view_direction=DEFAULT_VIEW_DIRECTION) -> list[TrialRecord]:
    """Closed perception-action loop: render, integrate, evaluate, move.

    Returns one TrialRecord per executed viewpoint. Episodes stop early when
    the baseline grid is exhausted or NBV selection finds no feasible
    candidate. Deterministic for a fixed rng state.
    """
    if n_views < 1:
        raise ContractViolation("n_views must be >= 1")
    mode = PlannerMode(planner_mode)
    camera = config.camera_model()
    rng_detect, rng_plan = rng.spawn(2)

    base = baseline_grid(scene.bounds, camera, config.stand_off,
                         config.overlap_ratio, view_direction)
    base = filter_feasible(base, reachability)
    if not base:
        raise RuntimeError("no feasible viewpoint on the midplane grid; "
                           "check the reachability model")

    records: list[TrialRecord] = []
    pose = base[0].pose
    prev_position = None
    clock = 0.0
    for i in range(1, n_views + 1):
        if prev_position is not None:
            clock += float(np.linalg.norm(pose.position - prev_position)) / ARM_SPEED
        cloud = render_view(scene, pose, camera, detector, rng_detect)
        tree.insert_point_cloud(pose.position, cloud)
        clock += VIEW_PROCESS_TIME
        clusters = extract_clusters(tree, config.min_cluster_size,
                                    config.detection_confidence_threshold)
        m = score(clusters, scene.symptoms, config.matching_radius)
        records.append(TrialRecord(viewpoint_index=i, precision=m.precision,
                                   recall=m.recall, f1=m.f1, coverage=tree.coverage(),
                                   elapsed=clock, planner_mode=mode.value))
        if i == n_views:
            break
        prev_position = pose.position
        if mode == PlannerMode.BASELINE:
            if i >= len(base):
                break  # grid exhausted
            pose = base[i].pose
        else:
            nxt = select_next_view(tree, pose, config, mode, camera, base,
                                   reachability, rng_plan, motion_checker,
                                   view_direction)
            if nxt is None:
                break
            pose = nxt.pose
    return records
