"""Cluster-based detection scoring and per-episode metric bookkeeping.

Predicted symptom instances are connected components (26-connectivity) of
same-class occupied voxels whose confidence clears the detection threshold.
Matching against ground truth is many-to-many by centroid distance: several
clusters may legitimately match one truth point, so precision counts matched
clusters while recall counts matched truth points.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractViolation
from .scene import SymptomInstance
from .semantic_octree import BACKGROUND_CLASS, SemanticOctree

_CONNECTIVITY_26 = np.ones((3, 3, 3), dtype=int)

TRIAL_CSV_COLUMNS = ["planner", "scene_seed", "run_id", "viewpoint_index",
                     "precision", "recall", "f1", "coverage", "elapsed_s"]


@dataclass(frozen=True)
class PredictedCluster:
    class_id: int
    member_keys: np.ndarray    # (M, 3) int, sorted lexicographically
    centroid: np.ndarray
    mean_confidence: float


@dataclass(frozen=True)
class MatchResult:
    tp_p: int
    fp: int
    tp_c: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class TrialRecord:
    """Metric snapshot taken after executing one viewpoint."""

    viewpoint_index: int
    precision: float
    recall: float
    f1: float
    coverage: float
    elapsed: float      # simulated episode clock, seconds
    planner_mode: str


def extract_clusters(tree: SemanticOctree, min_cluster_size: int = 1,
                     confidence_threshold: float = 0.3) -> list[PredictedCluster]:
    """Connected same-class components of confident occupied voxels.

    Background-labeled voxels never form clusters; components below
    min_cluster_size are dropped. Output is ordered by centroid
    (lexicographic), then class id.
    """
    if min_cluster_size < 1:
        raise ContractViolation("min_cluster_size must be >= 1")
    occ = tree.state_grid() == 1
    class_grid, conf_grid = tree.semantic_grids()
    qualifying = occ & (class_grid > BACKGROUND_CLASS) & (conf_grid >= confidence_threshold)
    clusters: list[PredictedCluster] = []
    for class_id in np.unique(class_grid[qualifying]):
        mask = qualifying & (class_grid == class_id)
        labeled, n = ndimage.label(mask, structure=_CONNECTIVITY_26)
        for comp in range(1, n + 1):
            keys = np.argwhere(labeled == comp)
            if keys.shape[0] < min_cluster_size:
                continue
            centers = tree.bounds.centers_of_keys(keys)
            conf = conf_grid[tuple(keys.T)]
            clusters.append(PredictedCluster(class_id=int(class_id),
                                             member_keys=keys,
                                             centroid=centers.mean(axis=0),
                                             mean_confidence=float(conf.mean())))
    clusters.sort(key=lambda c: (tuple(c.centroid), c.class_id))
    return clusters


def score(clusters: list[PredictedCluster], truth: list[SymptomInstance],
          radius: float) -> MatchResult:
    """Many-to-many centroid matching within the given radius.

    A cluster is a true positive when at least one same-class truth point
    lies within the radius; a truth point is covered when at least one
    same-class cluster does. Zero denominators yield 0 by convention.
    """
    if radius <= 0:
        raise ContractViolation("matching radius must be positive")
    matched_c = np.zeros(len(clusters), dtype=bool)
    matched_t = np.zeros(len(truth), dtype=bool)
    for i, c in enumerate(clusters):
        for j, t in enumerate(truth):
            if c.class_id == t.class_id and \
                    np.linalg.norm(c.centroid - t.centroid) <= radius:
                matched_c[i] = True
                matched_t[j] = True
    tp_p = int(matched_c.sum())
    fp = len(clusters) - tp_p
    tp_c = int(matched_t.sum())
    fn = len(truth) - tp_c
    precision = tp_p / (tp_p + fp) if tp_p + fp > 0 else 0.0
    recall = tp_c / (tp_c + fn) if tp_c + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MatchResult(tp_p, fp, tp_c, fn, precision, recall, f1)


def match_details(clusters: list[PredictedCluster], truth: list[SymptomInstance],
                  radius: float) -> list[tuple[int, list[int]]]:
    """Per-cluster list of matched truth indices (debug export shape)."""
    out = []
    for i, c in enumerate(clusters):
        matches = [j for j, t in enumerate(truth)
                   if c.class_id == t.class_id
                   and np.linalg.norm(c.centroid - t.centroid) <= radius]
        out.append((i, matches))
    return out


def write_match_details(path, clusters, truth, radius: float) -> None:
    with open(path, "w") as fh:
        fh.write(f"# matching_radius: {radius!r}\n")
        for i, matches in match_details(clusters, truth, radius):
            c = clusters[i]
            fh.write(f"cluster {i} class={c.class_id} centroid="
                     f"({c.centroid[0]:.4f},{c.centroid[1]:.4f},{c.centroid[2]:.4f})"
                     f" -> truths {matches}\n")


# -- aggregation ---------------------------------------------------------------


@dataclass
class AggregatedCurves:
    """Per-viewpoint mean and population standard deviation across runs."""

    indices: np.ndarray
    precision_mean: np.ndarray
    precision_std: np.ndarray
    recall_mean: np.ndarray
    recall_std: np.ndarray
    f1_mean: np.ndarray
    f1_std: np.ndarray
    coverage_mean: np.ndarray
    coverage_std: np.ndarray
    n_runs: int = 0


def _metric_matrix(runs: list[list[TrialRecord]]):
    """Stack runs into (n_runs, L) metric arrays, carrying the final record
    forward for episodes that terminated early."""
    length = max(len(r) for r in runs)
    cols = {"precision": [], "recall": [], "f1": [], "coverage": []}
    for run in runs:
        padded = list(run) + [run[-1]] * (length - len(run))
        for name in cols:
            cols[name].append([getattr(rec, name) for rec in padded])
    return length, {k: np.array(v) for k, v in cols.items()}


def aggregate(runs: list[list[TrialRecord]]) -> AggregatedCurves:
    """Flat mean/std curves over a set of runs of one planner."""
    if not runs or any(len(r) == 0 for r in runs):
        raise ValueError("aggregate needs at least one non-empty run")
    length, m = _metric_matrix(runs)
    return AggregatedCurves(
        indices=np.arange(1, length + 1),
        precision_mean=m["precision"].mean(axis=0), precision_std=m["precision"].std(axis=0),
        recall_mean=m["recall"].mean(axis=0), recall_std=m["recall"].std(axis=0),
        f1_mean=m["f1"].mean(axis=0), f1_std=m["f1"].std(axis=0),
        coverage_mean=m["coverage"].mean(axis=0), coverage_std=m["coverage"].std(axis=0),
        n_runs=len(runs))


def aggregate_by_scene(runs_by_scene: dict) -> AggregatedCurves:
    """Two-level roll-up: average runs within each scene first, then average
    the per-scene mean curves (std taken across scenes)."""
    if not runs_by_scene:
        raise ValueError("aggregate_by_scene needs at least one scene")
    per_scene = [aggregate(runs) for _, runs in sorted(runs_by_scene.items())]
    length = max(a.indices.shape[0] for a in per_scene)

    def stack(attr):
        rows = []
        for a in per_scene:
            v = getattr(a, attr)
            rows.append(np.concatenate([v, np.full(length - v.shape[0], v[-1])]))
        return np.array(rows)

    p, r = stack("precision_mean"), stack("recall_mean")
    f, c = stack("f1_mean"), stack("coverage_mean")
    return AggregatedCurves(
        indices=np.arange(1, length + 1),
        precision_mean=p.mean(axis=0), precision_std=p.std(axis=0),
        recall_mean=r.mean(axis=0), recall_std=r.std(axis=0),
        f1_mean=f.mean(axis=0), f1_std=f.std(axis=0),
        coverage_mean=c.mean(axis=0), coverage_std=c.std(axis=0),
        n_runs=sum(len(runs) for _, runs in runs_by_scene.items()))


# -- csv io --------------------------------------------------------------------


def write_trial_csv(path, records: list[TrialRecord], planner: str, scene_seed: int,
                    run_id: int, metadata: dict | None = None) -> None:
    """Episode CSV: '#'-prefixed metadata header block, then one row per
    viewpoint. Floats use repr so offline re-aggregation is exact."""
    with open(path, "w", newline="") as fh:
        for k, v in (metadata or {}).items():
            fh.write(f"# {k}: {v}\n")
        writer = _csv.writer(fh)
        writer.writerow(TRIAL_CSV_COLUMNS)
        for rec in records:
            writer.writerow([planner, scene_seed, run_id, rec.viewpoint_index,
                             repr(rec.precision), repr(rec.recall), repr(rec.f1),
                             repr(rec.coverage), repr(rec.elapsed)])


def read_trial_csv(path) -> tuple[list[TrialRecord], dict]:
    metadata = {}
    records = []
    with open(path, newline="") as fh:
        rows = []
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].partition(": ")
                metadata[k.strip()] = v.strip()
            else:
                rows.append(line)
        for row in _csv.reader(rows):
            if not row or row[0] == "planner":
                continue
            records.append(TrialRecord(viewpoint_index=int(row[3]),
                                       precision=float(row[4]), recall=float(row[5]),
                                       f1=float(row[6]), coverage=float(row[7]),
                                       elapsed=float(row[8]), planner_mode=row[0]))
    return records, metadata


def write_curve_csv(path, curves: AggregatedCurves, metadata: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (metadata or {}).items():
            fh.write(f"# {k}: {v}\n")
        writer = _csv.writer(fh)
        writer.writerow(["viewpoint_index", "precision_mean", "precision_std",
                         "recall_mean", "recall_std", "f1_mean", "f1_std",
                         "coverage_mean", "coverage_std"])
        for i in range(curves.indices.shape[0]):
            writer.writerow([int(curves.indices[i]),
                             repr(float(curves.precision_mean[i])), repr(float(curves.precision_std[i])),
                             repr(float(curves.recall_mean[i])), repr(float(curves.recall_std[i])),
                             repr(float(curves.f1_mean[i])), repr(float(curves.f1_std[i])),
                             repr(float(curves.coverage_mean[i])), repr(float(curves.coverage_std[i]))])
