"""Capacity-tier benchmark: pose-conditioned vs image-conditioned policies.

For one task this trains and evaluates four policies on the same
demonstration corpus:

    gt_pose      small tier, config width
    est_pose     small tier, emulated tracker estimates
    grid_image   small tier, hidden width solved so the parameter count
                 matches the pose policy
    grid_image   large tier, roughly 8x the small-tier parameter count

and emits benchmark report files plus a results.json for re-reporting.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import DemoDataset, generate_demonstrations, load_dataset, save_dataset
from .denoiser import parameter_count, solve_width_for_params
from .harness import Checkpoint, ExperimentConfig, evaluate_detailed, mean_epoch_seconds, save_checkpoint, train
from .report import BenchmarkRow, save_rows, write_report

LARGE_TIER_FACTOR = 8


def tier_configs(config: ExperimentConfig) -> list[ExperimentConfig]:
    """The four benchmark configurations derived from a base config."""
    pose_count = parameter_count(replace(config, mode="gt_pose").denoiser_config())
    grid_template = replace(config, mode="grid_image").denoiser_config()
    width_small = solve_width_for_params(grid_template, pose_count)
    width_large = solve_width_for_params(grid_template, LARGE_TIER_FACTOR * pose_count)
    return [
        replace(config, mode="gt_pose"),
        replace(config, mode="est_pose"),
        replace(config, mode="grid_image", hidden_width=width_small),
        replace(config, mode="grid_image", hidden_width=width_large),
    ]


def ensure_dataset(config: ExperimentConfig, out_dir: Path, dataset_path=None,
                   verbose: bool = True) -> tuple[DemoDataset, Path]:
    if dataset_path is not None:
        return load_dataset(dataset_path), Path(dataset_path)
    cached = out_dir / f"{config.task_id}_demos.bin"
    if cached.exists():
        dataset = load_dataset(cached)
        if dataset.task_id == config.task_id and len(dataset.episodes) >= config.n_demos:
            return dataset, cached
    if verbose:
        print(f"generating {config.n_demos} demonstrations for {config.task_id} ...", flush=True)
    dataset = generate_demonstrations(config.task_spec(), config.n_demos, config.tracker,
                                      seed=config.seed, resolution=config.resolution)
    save_dataset(dataset, cached)
    return dataset, cached


def run_tier(config: ExperimentConfig, dataset: DemoDataset, out_dir: Path, tag: str,
             verbose: bool = True) -> tuple[BenchmarkRow, Checkpoint]:
    if verbose:
        count = parameter_count(config.denoiser_config())
        print(f"[{tag}] training {config.mode} ({count} params, {config.epochs} epochs) ...", flush=True)
    checkpoint = train(config, dataset)
    save_checkpoint(checkpoint, out_dir / f"{tag}.ckpt")
    sr, reports = evaluate_detailed(checkpoint, n=config.n_eval_rollouts, seed=config.eval_seed)
    pos = [e for r in reports for e in r.position_errors]
    ori = [e for r in reports for e in r.orientation_errors]
    row = BenchmarkRow(
        task=config.task_id,
        mode=config.mode,
        params=parameter_count(config.denoiser_config()),
        sr=sr,
        te_seconds=mean_epoch_seconds(checkpoint),
        position_error=float(np.mean(pos)) if pos else None,
        orientation_error=float(np.mean(ori)) if ori else None,
    )
    if verbose:
        print(f"[{tag}] SR={sr:.3f}  TE={row.te_seconds:.3f}s", flush=True)
    return row, checkpoint


def run_benchmark(config: ExperimentConfig, out_dir, dataset_path=None,
                  verbose: bool = True) -> list[BenchmarkRow]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, used_path = ensure_dataset(config, out_dir, dataset_path, verbose)
    rows = []
    for i, tier in enumerate(tier_configs(config)):
        tag = f"{tier.task_id}_{tier.mode}_w{tier.hidden_width}"
        row, _ = run_tier(tier, dataset, out_dir, tag, verbose)
        rows.append(row)
    save_rows(rows, out_dir / "results.json")
    csv_path, txt_path = write_report(rows, out_dir)
    meta = {"dataset": str(used_path), "csv": str(csv_path), "txt": str(txt_path)}
    (out_dir / "bench_meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    if verbose:
        print(f"report written to {csv_path} and {txt_path}", flush=True)
    return rows
