"""Precomputed workspace reachability for viewpoint feasibility filtering.

The true manipulator workspace is approximated offline by sampling many
end-effector positions from a configurable synthetic pose source and
discretizing them into a boolean voxel grid; candidate viewpoints whose
position falls in an unmarked (or out-of-grid) cell are rejected before any
motion feasibility check runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class SphericalShellSampler:
    """Stand-in for arm kinematics: positions uniform in a spherical shell."""

    center: np.ndarray
    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if not 0.0 <= self.inner_radius < self.outer_radius:
            raise ContractViolation("need 0 <= inner_radius < outer_radius")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        u = rng.uniform(size=n)
        r3 = u * (self.outer_radius ** 3 - self.inner_radius ** 3) + self.inner_radius ** 3
        return self.center + dirs * np.cbrt(r3)[:, None]

    def contains(self, point) -> bool:
        d = float(np.linalg.norm(np.asarray(point, dtype=np.float64) - self.center))
        return self.inner_radius <= d <= self.outer_radius


@dataclass
class ReachabilityGrid:
    """Boolean voxelization of reachable end-effector positions."""

    min_corner: np.ndarray
    resolution: float
    cells: np.ndarray     # bool (nx, ny, nz)

    def is_reachable(self, point) -> bool:
        idx = np.floor((np.asarray(point, dtype=np.float64) - self.min_corner)
                       / self.resolution).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.cells.shape)):
            return False
        return bool(self.cells[idx[0], idx[1], idx[2]])

    @property
    def reachable_count(self) -> int:
        return int(np.count_nonzero(self.cells))

    @staticmethod
    def all_reachable(min_corner, max_corner, resolution: float) -> "ReachabilityGrid":
        min_corner = np.asarray(min_corner, dtype=np.float64)
        dims = np.maximum(np.ceil((np.asarray(max_corner) - min_corner) / resolution), 1)
        return ReachabilityGrid(min_corner, resolution,
                                np.ones(dims.astype(int), dtype=bool))


def build_reachability(sample_count: int, kinematic_sampler, resolution: float,
                       rng: np.random.Generator | None = None) -> ReachabilityGrid:
    """Mark every grid cell containing at least one sampled position.

    The grid extent is fitted to the drawn samples (half-cell padded), so a
    single sample yields exactly one reachable cell.
    """
    if sample_count < 1:
        raise ContractViolation("sample_count must be >= 1")
    if resolution <= 0:
        raise ContractViolation("resolution must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    samples = np.asarray(kinematic_sampler.sample(sample_count, rng), dtype=np.float64)
    lo = samples.min(axis=0) - resolution / 2
    hi = samples.max(axis=0) + resolution / 2
    dims = np.maximum(np.ceil((hi - lo) / resolution).astype(int), 1)
    cells = np.zeros(dims, dtype=bool)
    idx = np.floor((samples - lo) / resolution).astype(int)
    idx = np.minimum(idx, dims - 1)
    cells[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return ReachabilityGrid(min_corner=lo, resolution=resolution, cells=cells)


def filter_feasible(candidates: list, grid: ReachabilityGrid | None) -> list:
    """Keep candidates whose position cell is reachable; order preserved."""
    if grid is None:
        return list(candidates)
    return [vp for vp in candidates if grid.is_reachable(vp.pose.position)]
