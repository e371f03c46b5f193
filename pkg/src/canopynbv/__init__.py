"""Confidence-aware semantic occupancy mapping and viewpoint planning for
simulated tree inspection."""

__version__ = "0.1.0"

from .geometry import CameraPose, RoiBounds
from .semantic_octree import (BACKGROUND_CLASS, FusionParams, InsertStats,
                              OccupancyState, RayResult, RayTerminal,
                              SemanticOctree, SemanticPoint, SemanticPointCloud,
                              SemanticVoxel, fuse_semantic)
from .scene import (CLASS_CANKER, CLASS_CROOK, PRESETS, SceneModel,
                    SymptomInstance, TreeParams, generate_scene)
from .sensor import CameraModel, DetectorModel, render_view
from .reachability import (ReachabilityGrid, SphericalShellSampler,
                           build_reachability, filter_feasible)
from .planning import (PlannerConfig, PlannerMode, Viewpoint, ViewpointSource,
                       VoxelCluster, baseline_grid, cluster_voxels,
                       hemisphere_sample, perturbed_grid, run_episode,
                       select_next_view, semantic_gain, volumetric_gain)
from .evaluation import (AggregatedCurves, MatchResult, PredictedCluster,
                         TrialRecord, aggregate, aggregate_by_scene,
                         extract_clusters, score)
from .experiment import (CompareResult, ExperimentSpec, derive_run_seed,
                         run_compare)
