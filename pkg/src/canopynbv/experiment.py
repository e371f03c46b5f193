"""Seeded planner-comparison experiments with reproducible CSV outputs.

A compare run executes every (scene, planner, repetition) combination with
an independent per-run seed derived by stable hashing, writes one episode
CSV per run, per-planner aggregated curve CSVs (runs averaged within each
scene, then across scenes), and a final summary table of F1 and coverage at
the last viewpoint. Everything except the `created` metadata timestamp is a
pure function of the experiment spec.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigError
from .evaluation import (AggregatedCurves, TrialRecord, aggregate_by_scene,
                         write_curve_csv, write_trial_csv)
from .planning import DEFAULT_VIEW_DIRECTION, PlannerConfig, PlannerMode, run_episode
from .reachability import ReachabilityGrid, SphericalShellSampler, build_reachability
from .scene import SceneModel, generate_scene
from .semantic_octree import SemanticOctree
from .sensor import DetectorModel

# synthetic arm mount: one meter back from the ROI center along the viewing
# direction, shoulder at mid canopy height
ROBOT_BASE_DISTANCE = 1.0
ARM_REACH_INNER = 0.1
ARM_REACH_OUTER = 1.2
REACHABILITY_RESOLUTION = 0.05
REACHABILITY_SAMPLES = 1_000_000
REACHABILITY_SEED = 1234


@dataclass
class ExperimentSpec:
    scene_seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    runs_per_scene: int = 10
    n_views: int = 30
    planner_modes: list[str] = field(default_factory=lambda: ["baseline", "volumetric", "semantic"])
    config: PlannerConfig = field(default_factory=PlannerConfig)
    detector: DetectorModel = field(default_factory=DetectorModel)
    output_dir: str = "compare_out"
    scene_preset: str = "sim"

    def __post_init__(self):
        if self.runs_per_scene < 1:
            raise ConfigError("runs_per_scene must be >= 1")
        if self.n_views < 1:
            raise ConfigError("n_views must be >= 1")
        if not self.planner_modes:
            raise ConfigError("planner_modes must be non-empty")
        for m in self.planner_modes:
            PlannerMode(m)

    @staticmethod
    def from_file(path) -> "ExperimentSpec":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"spec file {path} is not valid JSON: {e}") from e
        known = {"scene_seeds", "runs_per_scene", "n_views", "planner_modes",
                 "config", "detector", "output_dir", "scene_preset"}
        for k in doc:
            if k not in known:
                raise ConfigError(f"unknown spec key {k!r}")
        kwargs = dict(doc)
        if "config" in kwargs:
            kwargs["config"] = PlannerConfig.from_dict(kwargs["config"])
        if "detector" in kwargs:
            det = kwargs["detector"]
            unknown = set(det) - set(DetectorModel.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown detector key {sorted(unknown)[0]!r}")
            kwargs["detector"] = DetectorModel(**det)
        return ExperimentSpec(**kwargs)


def derive_run_seed(scene_seed: int, planner: str, run_id: int) -> int:
    """Stable per-run seed: first 8 bytes of sha256('scene:planner:run')."""
    digest = hashlib.sha256(f"{scene_seed}:{planner}:{run_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def config_hash(config: PlannerConfig, detector: DetectorModel) -> str:
    blob = json.dumps({"config": config.as_dict(),
                       "detector": {k: getattr(detector, k)
                                    for k in DetectorModel.__dataclass_fields__}},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def default_reachability(bounds, view_direction=DEFAULT_VIEW_DIRECTION) -> ReachabilityGrid:
    """Workspace model used by the stock experiments: a spherical reach shell
    around a base point one meter behind the ROI center."""
    view = np.asarray(view_direction, dtype=np.float64)
    base = bounds.center - ROBOT_BASE_DISTANCE * view
    base[2] = bounds.center[2]
    sampler = SphericalShellSampler(base, ARM_REACH_INNER, ARM_REACH_OUTER)
    return build_reachability(REACHABILITY_SAMPLES, sampler, REACHABILITY_RESOLUTION,
                              rng=np.random.default_rng(REACHABILITY_SEED))


def atomic_write(path, write_fn) -> None:
    """Write via temp file + rename so a crash never leaves partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def run_single(scene: SceneModel, planner: str, run_id: int, spec: ExperimentSpec,
               reachability: ReachabilityGrid) -> list[TrialRecord]:
    seed = derive_run_seed(scene.seed, planner, run_id)
    rng = np.random.default_rng(seed)
    tree = SemanticOctree(scene.bounds, spec.config.fusion_params())
    detector = DetectorModel(**{**{k: getattr(spec.detector, k)
                                   for k in DetectorModel.__dataclass_fields__},
                                "noise_seed": seed})
    return run_episode(scene, tree, planner, spec.n_views, spec.config, detector,
                       rng, reachability=reachability)


@dataclass
class CompareResult:
    summary: list[dict]
    curves: dict[str, AggregatedCurves]
    episode_files: list[str]
    curve_files: list[str]
    summary_file: str
    failures: list[tuple[int, str, int, str]]   # (scene_seed, planner, run_id, error)
    runs: dict[str, dict[int, list[list[TrialRecord]]]] = field(default_factory=dict)


def run_compare(spec: ExperimentSpec, progress=None) -> CompareResult:
    """Execute the full comparison grid and write all outputs.

    A failing episode is recorded and skipped; aggregation proceeds over
    the completed runs of each planner.
    """
    os.makedirs(spec.output_dir, exist_ok=True)
    episodes_dir = os.path.join(spec.output_dir, "episodes")
    os.makedirs(episodes_dir, exist_ok=True)

    scenes = {s: generate_scene(s, preset=spec.scene_preset) for s in spec.scene_seeds}
    first = scenes[spec.scene_seeds[0]]
    reach = default_reachability(first.bounds)
    chash = config_hash(spec.config, spec.detector)

    episode_files: list[str] = []
    failures: list[tuple[int, str, int, str]] = []
    runs: dict[str, dict[int, list[list[TrialRecord]]]] = \
        {p: {s: [] for s in spec.scene_seeds} for p in spec.planner_modes}

    for planner in spec.planner_modes:
        for scene_seed in spec.scene_seeds:
            for run_id in range(spec.runs_per_scene):
                if progress:
                    progress(planner, scene_seed, run_id)
                try:
                    records = run_single(scenes[scene_seed], planner, run_id, spec, reach)
                except Exception as e:  # noqa: BLE001 - crash isolation per episode
                    failures.append((scene_seed, planner, run_id, repr(e)))
                    continue
                runs[planner][scene_seed].append(records)
                path = os.path.join(episodes_dir,
                                    f"{planner}_scene{scene_seed}_run{run_id}.csv")
                meta = {"artifact_version": __version__,
                        "config_hash": chash,
                        "scene_seed": scene_seed,
                        "planner": planner,
                        "run_id": run_id,
                        "run_seed": derive_run_seed(scene_seed, planner, run_id),
                        "seed_derivation": "sha256('{scene}:{planner}:{run}')[:8] little-endian",
                        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
                atomic_write(path, lambda tmp, r=records, p=planner, s=scene_seed,
                             k=run_id, m=meta: write_trial_csv(tmp, r, p, s, k, m))
                episode_files.append(path)

    curves: dict[str, AggregatedCurves] = {}
    curve_files: list[str] = []
    summary: list[dict] = []
    for planner in spec.planner_modes:
        by_scene = {s: r for s, r in runs[planner].items() if r}
        if not by_scene:
            continue
        agg = aggregate_by_scene(by_scene)
        curves[planner] = agg
        path = os.path.join(spec.output_dir, f"curves_{planner}.csv")
        meta = {"artifact_version": __version__, "config_hash": chash,
                "planner": planner,
                "scene_seeds": list(by_scene),
                "n_runs": sum(len(r) for r in by_scene.values()),
                "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
        atomic_write(path, lambda tmp, a=agg, m=meta: write_curve_csv(tmp, a, m))
        curve_files.append(path)
        summary.append({"planner": planner,
                        "f1": float(agg.f1_mean[-1]),
                        "f1_std": float(agg.f1_std[-1]),
                        "coverage": float(agg.coverage_mean[-1]),
                        "coverage_std": float(agg.coverage_std[-1]),
                        "n_runs": agg.n_runs})

    summary_file = os.path.join(spec.output_dir, "summary.csv")

    def _write_summary(tmp):
        with open(tmp, "w") as fh:
            fh.write(f"# artifact_version: {__version__}\n")
            fh.write(f"# config_hash: {chash}\n")
            fh.write(f"# n_views: {spec.n_views}\n")
            fh.write(f"# failed_runs: {len(failures)}\n")
            fh.write(f"# created: {time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n")
            fh.write("planner,f1_mean,f1_std,coverage_mean,coverage_std,n_runs\n")
            for row in summary:
                fh.write(f"{row['planner']},{row['f1']!r},{row['f1_std']!r},"
                         f"{row['coverage']!r},{row['coverage_std']!r},{row['n_runs']}\n")

    atomic_write(summary_file, _write_summary)
    return CompareResult(summary=summary, curves=curves, episode_files=episode_files,
                         curve_files=curve_files, summary_file=summary_file,
                         failures=failures, runs=runs)


def format_summary_table(summary: list[dict], n_views: int) -> str:
    lines = [f"Planner performance at {n_views} viewpoints",
             f"{'Planner':<12} {'F1':>8} {'±':>7}   {'Coverage %':>10} {'±':>7}   {'runs':>4}"]
    for row in summary:
        lines.append(f"{row['planner']:<12} {row['f1']:8.4f} {row['f1_std']:7.4f}   "
                     f"{row['coverage'] * 100:10.2f} {row['coverage_std'] * 100:7.2f}   "
                     f"{row['n_runs']:4d}")
    return "\n".join(lines)
