"""Command-line entry points: generate scenes, run single episodes, compare
planners, and inspect map snapshots."""

from __future__ import annotations

import json
import os
import sys
import time

import click
import numpy as np

from . import __version__
from .errors import ConfigError, SceneGenerationError
from .evaluation import write_trial_csv
from .experiment import (ExperimentSpec, config_hash, default_reachability,
                         format_summary_table, run_compare)
from .planning import PlannerConfig, PlannerMode, run_episode
from .scene import CLASS_CANKER, CLASS_CROOK, PRESETS, SceneModel, generate_scene
from .semantic_octree import NO_CLASS, SemanticOctree
from .sensor import DetectorModel


@click.group()
@click.version_option(version=__version__)
def main():
    """Semantic occupancy mapping and viewpoint-planning experiments on
    procedurally generated symptomatic trees."""


@main.command()
@click.option("--seed", type=int, required=True, help="Scene generation seed.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default="sim",
              show_default=True, help="Tree shape preset.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="scene.json",
              show_default=True, help="Scene file to write.")
@click.option("--truth-out", type=click.Path(dir_okay=False), default=None,
              help="Also export the ground-truth symptom list for evaluation.")
@click.option("--matching-radius", type=float, default=0.10, show_default=True)
def generate(seed, preset, out_path, truth_out, matching_radius):
    """Generate a reproducible symptomatic-tree scene file."""
    try:
        scene = generate_scene(seed, preset=preset)
    except SceneGenerationError as e:
        raise click.ClickException(str(e))
    scene.save(out_path)
    if truth_out:
        scene.export_truth(truth_out, matching_radius)
    click.echo(f"scene seed={seed} preset={preset}: "
               f"{scene.symptom_count(CLASS_CROOK)} shepherd's crooks, "
               f"{scene.symptom_count(CLASS_CANKER)} cankers, "
               f"{scene.geometry.shape[0]} geometry voxels -> {out_path}")


@main.command()
@click.option("--scene", "scene_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Scene file from `generate`.")
@click.option("--planner", type=click.Choice([m.value for m in PlannerMode]),
              required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Planner config JSON (defaults used when omitted).")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Episode seed (detector noise + planner sampling).")
@click.option("--views", type=int, default=30, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default="run_out",
              show_default=True)
def run(scene_path, planner, config_path, seed, views, out_dir):
    """Run one inspection episode; writes a per-viewpoint CSV and the final
    map snapshot. Exits nonzero when NBV selection exhausts early."""
    try:
        config = PlannerConfig.from_file(config_path) if config_path else PlannerConfig()
    except ConfigError as e:
        raise click.ClickException(str(e))
    scene = SceneModel.load(scene_path)
    os.makedirs(out_dir, exist_ok=True)
    tree = SemanticOctree(scene.bounds, config.fusion_params())
    detector = DetectorModel(noise_seed=seed)
    reach = default_reachability(scene.bounds)
    records = run_episode(scene, tree, planner, views, config, detector,
                          np.random.default_rng(seed), reachability=reach)
    csv_path = os.path.join(out_dir, f"{planner}_seed{seed}.csv")
    write_trial_csv(csv_path, records, planner, scene.seed, 0,
                    {"artifact_version": __version__,
                     "config_hash": config_hash(config, detector),
                     "scene_seed": scene.seed, "planner": planner, "run_id": 0,
                     "episode_seed": seed,
                     "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")})
    map_path = os.path.join(out_dir, f"{planner}_seed{seed}_map.bin")
    tree.save(map_path)
    last = records[-1]
    click.echo(f"{len(records)} viewpoints: f1={last.f1:.4f} "
               f"coverage={last.coverage:.4f} -> {csv_path}")
    if len(records) < views:
        if planner == PlannerMode.BASELINE.value:
            click.echo(f"note: baseline grid exhausted after {len(records)} viewpoints")
        else:
            click.echo(f"error: viewpoint selection exhausted after {len(records)} "
                       f"of {views} viewpoints", err=True)
            sys.exit(3)


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Experiment spec JSON.")
@click.option("--quiet", is_flag=True, default=False)
def compare(spec_path, quiet):
    """Run the full planner-comparison grid defined by a spec file."""
    try:
        spec = ExperimentSpec.from_file(spec_path)
    except ConfigError as e:
        raise click.ClickException(str(e))

    def progress(planner, scene_seed, run_id):
        if not quiet:
            click.echo(f"\r{planner} scene={scene_seed} run={run_id} ", nl=False)

    t0 = time.time()
    result = run_compare(spec, progress=progress)
    if not quiet:
        click.echo("")
    for scene_seed, planner, run_id, err in result.failures:
        click.echo(f"warning: {planner} scene={scene_seed} run={run_id} failed: {err}",
                   err=True)
    click.echo(format_summary_table(result.summary, spec.n_views))
    click.echo(f"outputs in {spec.output_dir} ({len(result.episode_files)} episodes, "
               f"{time.time() - t0:.0f}s)")


@main.command("inspect-map")
@click.option("--map", "map_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Map snapshot from `run`.")
def inspect_map(map_path):
    """Print snapshot statistics: bounds, state counts, semantics."""
    tree = SemanticOctree.load(map_path)
    b = tree.bounds
    counts = tree.counts()
    click.echo(f"bounds: min={[float(v) for v in b.min_corner]} "
               f"max={[float(v) for v in b.max_corner]} resolution={b.resolution}")
    click.echo(f"grid: {b.dims} = {b.n_total} voxels")
    click.echo(f"states: occupied={counts['occupied']} free={counts['free']} "
               f"unknown={counts['unknown']}")
    click.echo(f"coverage: {tree.coverage():.4f}")
    class_grid, conf_grid = tree.semantic_grids()
    sem = class_grid[class_grid != NO_CLASS]
    if sem.size:
        for cls in np.unique(sem):
            sel = class_grid == cls
            click.echo(f"class {int(cls)}: {int(sel.sum())} voxels, "
                       f"mean confidence {float(conf_grid[sel].mean()):.3f}")
    else:
        click.echo("no semantic payload stored")
    click.echo(json.dumps({"fusion": {
        "confidence_boost": tree.fusion.confidence_boost,
        "mismatch_penalty": tree.fusion.mismatch_penalty,
        "background_confidence": tree.fusion.background_confidence,
        "hit_log_odds": tree.fusion.hit_log_odds,
        "miss_log_odds": tree.fusion.miss_log_odds}}))


if __name__ == "__main__":
    main()
