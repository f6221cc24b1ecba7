"""Command-line workbench: gen-data, train, eval, bench, report.

All experiment inputs come from one flat config file (see `configio`);
`--seed` and `--out` override the config's seed and the output location.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from .bench import run_benchmark
from .data import generate_demonstrations, load_dataset, save_dataset
from .harness import ExperimentConfig, evaluate_detailed, load_checkpoint, save_checkpoint, train
from .report import load_rows, write_report


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = str(args.seed)
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_mapping(overrides)


def _cmd_gen_data(args) -> int:
    config = _load_config(args)
    out = Path(args.out or f"{config.task_id}_demos.bin")
    dataset = generate_demonstrations(config.task_spec(), config.n_demos, config.tracker,
                                      seed=config.seed, resolution=config.resolution)
    save_dataset(dataset, out)
    print(f"wrote {len(dataset.episodes)} episodes ({dataset.n_frames} frames) to {out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    dataset = load_dataset(args.data)
    checkpoint = train(config, dataset)
    out = Path(args.out or f"{config.task_id}_{config.mode}.ckpt")
    save_checkpoint(checkpoint, out)
    losses = checkpoint.metrics["epoch_loss"]
    print(f"trained {config.epochs} epochs; loss {losses[0]:.4f} -> {losses[-1]:.4f}; "
          f"checkpoint at {out}")
    return 0


def _cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    n = args.n or checkpoint.config.n_eval_rollouts
    seed = args.seed if args.seed is not None else checkpoint.config.eval_seed
    sr, reports = evaluate_detailed(checkpoint, n=n, seed=seed)
    mean_steps = sum(r.steps for r in reports) / len(reports)
    print(f"success rate {sr:.3f} over {n} rollouts (seeds {seed}..{seed + n - 1}); "
          f"mean steps {mean_steps:.1f}")
    return 0


def _cmd_bench(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out or "bench_out")
    run_benchmark(config, out_dir, dataset_path=args.data)
    return 0


def _cmd_report(args) -> int:
    rows = load_rows(args.results)
    out_dir = Path(args.out or Path(args.results).parent)
    csv_path, txt_path = write_report(rows, out_dir)
    print(f"report written to {csv_path} and {txt_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posedp",
        description="Pose-conditioned diffusion policy workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="record expert demonstrations to a dataset file")
    p.add_argument("--config", help="experiment config file (defaults apply if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="dataset output path")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a policy on a dataset")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--data", required=True, help="dataset file from gen-data")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="checkpoint output path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="success rate of a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file from train")
    p.add_argument("--n", type=int, help="number of evaluation rollouts")
    p.add_argument("--seed", type=int, help="first evaluation seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="run the capacity-tier comparison end to end")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--data", help="reuse an existing dataset file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (default bench_out)")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("report", help="regenerate report files from results.json")
    p.add_argument("--results", required=True, help="results.json from bench")
    p.add_argument("--out", help="output directory (defaults next to results)")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
