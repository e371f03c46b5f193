"""Procedural symptomatic-tree scenes on a voxel grid.

A scene is a ground-truth voxel tree (trunk, branches, shoots) plus a set of
placed symptom instances: class 1 marks curled necrotic shoot tips
("shepherd's crooks"), class 2 marks bark lesions ("cankers"). Generation is
fully deterministic per seed, and the default preset guarantees at least one
symptom that no camera on the frontal midplane grid can see directly, so
planners that never leave the grid plane cannot reach full recall.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import SceneGenerationError
from .geometry import RoiBounds, midplane_grid, traverse_voxels

CLASS_CROOK = 1
CLASS_CANKER = 2

_SCENE_FORMAT = "canopynbv-scene/1"


def default_bounds() -> RoiBounds:
    # wider than deep: a trellis-style canopy the camera side can mostly reach
    return RoiBounds(np.zeros(3), np.array([1.6, 1.2, 1.8]), 0.04)


@dataclass(frozen=True)
class TreeParams:
    """Shape and symptom-placement knobs for procedural generation.

    Pairs are inclusive (low, high) ranges sampled per scene.
    """

    trunk_height_frac: tuple[float, float] = (0.7, 0.85)
    trunk_radius: tuple[float, float] = (0.06, 0.09)
    branch_levels: tuple[int, int] = (3, 4)
    branches: tuple[int, int] = (5, 7)
    branch_length: tuple[float, float] = (0.4, 0.65)
    branch_pitch_deg: tuple[float, float] = (10.0, 50.0)
    depth_scale: float = 0.55    # canopy compression along the viewing axis
    children_per_branch: tuple[int, int] = (2, 3)
    child_length_scale: tuple[float, float] = (0.45, 0.65)
    symptoms_per_class: tuple[int, int] = (5, 8)
    symptom_counts: dict | None = None       # explicit {class_id: count} overrides the range
    symptom_size: tuple[int, int] = (1, 4)
    # spacing that keeps centroid matching unambiguous at the evaluation
    # radius: full separation within a class, lighter across classes
    min_symptom_separation: float = 0.20
    min_cross_class_separation: float = 0.10
    require_occluded_symptom: bool = True
    planar: bool = False                     # flatten the canopy along the viewing axis
    # frontal camera grid the occlusion guarantee is verified against
    occlusion_stand_off: float = 0.6
    occlusion_fov_deg: float = 60.0
    occlusion_overlap: float = 0.2
    # non-occluded symptoms sit where some frontal camera has a clear,
    # close-enough line of sight (outbreaks favor the row-facing surfaces)
    placement_max_camera_distance: float = 0.65

    def as_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TreeParams":
        kwargs = {}
        fields = {f: t for f, t in TreeParams.__dataclass_fields__.items()}
        for k, v in d.items():
            if k not in fields:
                raise ValueError(f"unknown tree parameter {k!r}")
            kwargs[k] = tuple(v) if isinstance(v, list) else v
        return TreeParams(**kwargs)


PRESETS = {
    "sim": TreeParams(),
    # sparse planar analog of the fabricated indoor tree: shallow canopy,
    # six crook instances, no cankers, no occlusion requirement
    "lab": TreeParams(branch_levels=(2, 3), branches=(4, 6),
                      branch_length=(0.45, 0.7),
                      symptom_counts={CLASS_CROOK: 6, CLASS_CANKER: 0},
                      require_occluded_symptom=False, planar=True),
}


@dataclass(frozen=True)
class SymptomInstance:
    class_id: int
    centroid: np.ndarray
    voxels: np.ndarray     # (M, 3) int, sorted lexicographically

    def __post_init__(self):
        object.__setattr__(self, "centroid", np.asarray(self.centroid, dtype=np.float64))
        object.__setattr__(self, "voxels", np.asarray(self.voxels, dtype=np.int64))


@dataclass
class SceneModel:
    """Immutable-after-generation ground truth: geometry voxels + symptoms."""

    bounds: RoiBounds
    seed: int
    preset: str
    params: TreeParams
    geometry: np.ndarray   # (N, 3) int, sorted lexicographically
    symptoms: list[SymptomInstance]
    _occ_grid: np.ndarray = field(default=None, repr=False)
    _instance_grid: np.ndarray = field(default=None, repr=False)

    def occupancy_grid(self) -> np.ndarray:
        if self._occ_grid is None:
            g = np.zeros(self.bounds.dims, dtype=np.uint8)
            g[tuple(self.geometry.T)] = 1
            self._occ_grid = g
        return self._occ_grid

    def instance_grid(self) -> np.ndarray:
        """Dense int32 grid mapping each voxel to its symptom index (-1: none)."""
        if self._instance_grid is None:
            g = np.full(self.bounds.dims, -1, dtype=np.int32)
            for i, s in enumerate(self.symptoms):
                g[tuple(s.voxels.T)] = i
            self._instance_grid = g
        return self._instance_grid

    def symptom_count(self, class_id: int) -> int:
        return sum(1 for s in self.symptoms if s.class_id == class_id)

    # -- file io -------------------------------------------------------------

    def save(self, path) -> None:
        doc = {
            "format": _SCENE_FORMAT,
            "seed": self.seed,
            "preset": self.preset,
            "params": self.params.as_dict(),
            "bounds": {"min": list(self.bounds.min_corner),
                       "max": list(self.bounds.max_corner),
                       "resolution": self.bounds.resolution},
            "geometry": self.geometry.tolist(),
            "symptoms": [{"class_id": s.class_id,
                          "centroid": list(s.centroid),
                          "voxels": s.voxels.tolist()} for s in self.symptoms],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=None, separators=(",", ":"))
            fh.write("\n")

    @staticmethod
    def load(path) -> "SceneModel":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != _SCENE_FORMAT:
            raise ValueError(f"unsupported scene format {doc.get('format')!r}")
        b = doc["bounds"]
        bounds = RoiBounds(np.array(b["min"]), np.array(b["max"]), b["resolution"])
        symptoms = [SymptomInstance(s["class_id"], np.array(s["centroid"]),
                                    np.array(s["voxels"], dtype=np.int64))
                    for s in doc["symptoms"]]
        return SceneModel(bounds=bounds, seed=doc["seed"], preset=doc["preset"],
                          params=TreeParams.from_dict(doc["params"]),
                          geometry=np.array(doc["geometry"], dtype=np.int64),
                          symptoms=symptoms)

    def export_truth(self, path, matching_radius: float) -> None:
        """Ground-truth symptom list in the evaluation input shape."""
        doc = {"matching_radius": matching_radius,
               "symptoms": [{"class_id": s.class_id, "centroid": list(s.centroid)}
                            for s in self.symptoms]}
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")


def _uniform(rng, lohi):
    return float(rng.uniform(lohi[0], lohi[1]))


def _voxelize_segment(p0, p1, bounds: RoiBounds, cells: set, radius: float = 0.0):
    """Stamp the segment (optionally thickened in x-y) onto the cell set."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    length = float(np.linalg.norm(p1 - p0))
    n = max(2, int(length / (bounds.resolution / 3.0)) + 1)
    dims = np.array(bounds.dims)
    for t in np.linspace(0.0, 1.0, n):
        p = p0 + t * (p1 - p0)
        if radius > 0.0:
            r_cells = int(math.ceil(radius / bounds.resolution))
            for dx in range(-r_cells, r_cells + 1):
                for dy in range(-r_cells, r_cells + 1):
                    if (dx * bounds.resolution) ** 2 + (dy * bounds.resolution) ** 2 > radius ** 2:
                        continue
                    q = p + np.array([dx * bounds.resolution, dy * bounds.resolution, 0.0])
                    key = bounds.key_for_point(q)
                    if bounds.contains_key(key):
                        cells.add(key)
        else:
            key = bounds.key_for_point(p)
            if bounds.contains_key(key):
                cells.add(key)


def first_geometry_hit(camera_pos, target_center, geometry_grid: np.ndarray,
                       bounds: RoiBounds):
    """Key of the first ground-truth voxel crossed on the way to the target
    (None when the segment reaches the target cell unobstructed)."""
    delta = np.asarray(target_center) - np.asarray(camera_pos)
    t_end = float(np.linalg.norm(delta))
    keys, _, _ = traverse_voxels(camera_pos, delta / t_end, t_end, bounds)
    for i in range(keys.shape[0]):
        k = (int(keys[i, 0]), int(keys[i, 1]), int(keys[i, 2]))
        if geometry_grid[k]:
            return k
    return None


def _grid_camera_positions(bounds: RoiBounds, params: TreeParams) -> np.ndarray:
    grid = midplane_grid(bounds, np.array([0.0, 1.0, 0.0]), params.occlusion_stand_off,
                         math.radians(params.occlusion_fov_deg),
                         math.radians(params.occlusion_fov_deg),
                         params.occlusion_overlap)
    return grid.positions


def is_instance_visible_from(scene: SceneModel, instance: SymptomInstance,
                             camera_pos) -> bool:
    """True when some voxel of the instance is the first geometry voxel hit
    along the straight line from the camera."""
    occ = scene.occupancy_grid()
    instance_keys = set(map(tuple, instance.voxels))
    for v in instance.voxels:
        hit = first_geometry_hit(camera_pos, scene.bounds.center_of_key(v), occ, scene.bounds)
        if hit is not None and hit in instance_keys:
            return True
    return False


def generate_scene(seed: int, params: TreeParams | None = None,
                   bounds: RoiBounds | None = None, preset: str = "sim") -> SceneModel:
    """Build a deterministic symptomatic tree for the given seed.

    Raises SceneGenerationError when the requested symptom layout cannot be
    placed (too many instances for the branch structure, or no voxel
    satisfying the occlusion requirement).
    """
    if params is None:
        params = PRESETS[preset]
    bounds = bounds or default_bounds()
    rng = np.random.default_rng(seed)
    res = bounds.resolution
    center = bounds.center
    z0, z1 = bounds.min_corner[2], bounds.max_corner[2]

    trunk_cells: set = set()
    branch_cells: set = set()

    # trunk: tapered vertical column with a slight random lean
    trunk_h = _uniform(rng, params.trunk_height_frac) * (z1 - z0)
    r_base = _uniform(rng, params.trunk_radius)
    lean = rng.uniform(-0.05, 0.05, size=2)
    base = np.array([center[0], center[1], z0 + res])
    top = base + np.array([lean[0], lean[1], trunk_h])
    n_seg = 8
    for i in range(n_seg):
        a = base + (top - base) * (i / n_seg)
        b = base + (top - base) * ((i + 1) / n_seg)
        radius = r_base * (1.0 - 0.6 * (i / n_seg))
        _voxelize_segment(a, b, bounds, trunk_cells, radius=radius)

    # recursive branching
    levels = int(rng.integers(params.branch_levels[0], params.branch_levels[1] + 1))
    n_branches = int(rng.integers(params.branches[0], params.branches[1] + 1))
    stack = []
    for _ in range(n_branches):
        h = rng.uniform(0.35, 0.95)
        origin = base + (top - base) * h
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        if params.planar:
            azimuth = (0.0 if rng.uniform() < 0.5 else math.pi) + rng.uniform(-0.3, 0.3)
        pitch = math.radians(_uniform(rng, params.branch_pitch_deg))
        length = _uniform(rng, params.branch_length)
        stack.append((origin, azimuth, pitch, length, 1))

    while stack:
        origin, azimuth, pitch, length, level = stack.pop(0)
        d = np.array([math.cos(azimuth) * math.cos(pitch),
                      math.sin(azimuth) * math.cos(pitch),
                      math.sin(pitch)])
        d[1] *= 0.15 if params.planar else params.depth_scale
        d /= np.linalg.norm(d)
        end = origin + d * length
        _voxelize_segment(origin, end, bounds, branch_cells)
        if level < levels:
            n_child = int(rng.integers(params.children_per_branch[0],
                                       params.children_per_branch[1] + 1))
            for _ in range(n_child):
                t = rng.uniform(0.5, 1.0)
                child_origin = origin + d * length * t
                child_az = azimuth + rng.uniform(-1.2, 1.2)
                child_pitch = pitch + rng.uniform(-0.4, 0.6)
                child_len = length * _uniform(rng, params.child_length_scale)
                stack.append((child_origin, child_az, child_pitch, child_len, level + 1))

    branch_cells -= trunk_cells
    geometry = trunk_cells | branch_cells
    if not branch_cells:
        raise SceneGenerationError("tree has no branch voxels; widen the shape parameters")

    # symptom budget
    if params.symptom_counts is not None:
        counts = dict(params.symptom_counts)
    else:
        counts = {CLASS_CROOK: int(rng.integers(params.symptoms_per_class[0],
                                                params.symptoms_per_class[1] + 1)),
                  CLASS_CANKER: int(rng.integers(params.symptoms_per_class[0],
                                                 params.symptoms_per_class[1] + 1))}
    labels = [CLASS_CROOK] * counts.get(CLASS_CROOK, 0) + \
             [CLASS_CANKER] * counts.get(CLASS_CANKER, 0)
    labels = [int(x) for x in np.array(labels)[rng.permutation(len(labels))]]

    instances: list[tuple[int, list]] = []   # (class_id, [keys])
    used: set = set()

    def centroid_of(keys):
        return bounds.centers_of_keys(np.array(keys)).mean(axis=0)

    def far_enough(keys, class_id):
        c = centroid_of(keys)
        for other_class, placed in instances:
            gap = params.min_symptom_separation if other_class == class_id \
                else params.min_cross_class_separation
            if np.linalg.norm(centroid_of(placed) - c) < gap:
                return False
        return True

    # occluded instance first: a one-voxel shoot stub tucked behind the trunk,
    # verified invisible from every frontal grid camera
    if params.require_occluded_symptom:
        cam_positions = _grid_camera_positions(bounds, params)
        occ_grid = np.zeros(bounds.dims, dtype=np.uint8)
        for k in geometry:
            occ_grid[k] = 1
        trunk_sorted = sorted(trunk_cells)
        zs = sorted({k[2] for k in trunk_sorted})
        lo_z = zs[int(len(zs) * 0.3)]
        hi_z = zs[int(len(zs) * 0.7)]
        stubs = []
        for z in range(lo_z, hi_z + 1):
            layer = [k for k in trunk_sorted if k[2] == z]
            if not layer:
                continue
            max_iy = max(k[1] for k in layer)
            for k in layer:
                if k[1] == max_iy:
                    stub = (k[0], k[1] + 1, z)
                    if bounds.contains_key(stub) and stub not in geometry:
                        stubs.append(stub)
        stubs = [stubs[i] for i in rng.permutation(len(stubs))]
        chosen = None
        for stub in stubs:
            occ_grid[stub] = 1
            target = bounds.center_of_key(stub)
            visible = any(first_geometry_hit(c, target, occ_grid, bounds) == stub
                          for c in cam_positions)
            if not visible:
                chosen = stub
                break
            occ_grid[stub] = 0
        if chosen is None:
            raise SceneGenerationError(
                f"seed {seed}: no trunk-shadowed voxel is hidden from the full camera grid")
        geometry.add(chosen)
        branch_cells.add(chosen)
        instances.append((labels.pop(0), [chosen]))
        used.add(chosen)

    # remaining instances on branch/shoot voxels, spaced apart and grown to
    # small contiguous patches; placement favors voxels visible from the
    # frontal camera grid (outbreaks sit on reachable canopy surfaces, the
    # stub above being the deliberate exception)
    candidates = sorted(branch_cells - used)
    if params.require_occluded_symptom:
        cam_positions = _grid_camera_positions(bounds, params)
        occ_grid = np.zeros(bounds.dims, dtype=np.uint8)
        for k in geometry:
            occ_grid[k] = 1
        max_d = params.placement_max_camera_distance
        preferred = [k for k in candidates
                     if any(np.linalg.norm(bounds.center_of_key(k) - c) <= max_d
                            and first_geometry_hit(c, bounds.center_of_key(k),
                                                   occ_grid, bounds) == k
                            for c in cam_positions)]
    else:
        preferred = list(candidates)
    neighbors = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                 for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)]
    preferred_set = set(preferred)
    # preferred (close-visible) seeds first, remaining voxels as overflow
    shuffled = [preferred[i] for i in rng.permutation(len(preferred))]
    overflow = [k for k in candidates if k not in preferred_set]
    shuffled += [overflow[i] for i in rng.permutation(len(overflow))]
    wanted = len(labels) + len(instances)
    for label in labels:
        placed = False
        for seed_cell in shuffled:
            if seed_cell in used or not far_enough([seed_cell], label):
                continue
            size = int(rng.integers(params.symptom_size[0], params.symptom_size[1] + 1))
            cells = [seed_cell]
            grown = {seed_cell}
            while len(cells) < size:
                frontier = sorted({(c[0] + d[0], c[1] + d[1], c[2] + d[2])
                                   for c in cells for d in neighbors}
                                  & (branch_cells - used - grown))
                if not frontier:
                    break
                pick = frontier[int(rng.integers(len(frontier)))]
                cells.append(pick)
                grown.add(pick)
            instances.append((label, cells))
            used.update(cells)
            placed = True
            break
        if not placed:
            raise SceneGenerationError(
                f"seed {seed}: ran out of branch voxels while placing symptoms "
                f"(placed {len(instances)} of {wanted})")

    geometry_arr = np.array(sorted(geometry), dtype=np.int64)
    symptoms = []
    for class_id, cells in instances:
        keys = np.array(sorted(cells), dtype=np.int64)
        symptoms.append(SymptomInstance(class_id=class_id,
                                        centroid=bounds.centers_of_keys(keys).mean(axis=0),
                                        voxels=keys))
    return SceneModel(bounds=bounds, seed=int(seed), preset=preset, params=params,
                      geometry=geometry_arr, symptoms=symptoms)
