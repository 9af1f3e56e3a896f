"""
Command-Line Interface Module

Subcommands:
- train      one training run (metrics.csv, checkpoints/, manifest.json)
- ablate     plain-PPO sweep over rollout lengths and seeds (ablation.csv/.json)
- compare    named presets over seeds (compare.csv/.json)
- heatmap    tracking-error grid for a checkpoint (heatmap.csv)
- calibrate  reference run and reward threshold (calibration.json)

Common options: --config FILE, repeated --set key=value, --out DIR.
Without --config, heatmap uses the manifest.json of the run that wrote the
checkpoint when one exists.

Exit codes: 0 success, 1 other failure, 2 configuration error,
3 numerical abort.

Typical usage:
    python run_dyna.py train --config configs/base.cfg --set scheduler.y=2 --out runs/ours2
    python run_dyna.py ablate --lengths 16,20,24,28,32 --seeds 0,1,2 --calibration runs/cal/calibration.json
    python run_dyna.py heatmap --checkpoint runs/ours2/checkpoints/final --out runs/ours2
"""

import argparse
import logging
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence

import config
from .background_processor import RunProcessor
from .checkpoint import load_checkpoint
from .database import RunDatabase
from .errors import ConfigError, DynaError, NumericalError
from .experiment import (
    PRESETS,
    HeatmapSpec,
    TrainConfig,
    ablate_rollout_lengths,
    calibrate_threshold,
    compare_configurations,
    eval_tracking_heatmap,
    summarize_run,
    train_run,
)
from .run_config import (
    MANIFEST_FILE,
    RunManifest,
    apply_overrides,
    load_config,
    read_calibration,
    read_manifest,
    validate_config,
    write_calibration,
    write_manifest,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _name_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_dyna",
        description="Dyna-style model-based PPO on a quadruped command-tracking surrogate",
    )
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="Logging level (default from DYNA_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", default=None, help="Experiment config file (key=value)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="Override a config key, e.g. scheduler.y=2 (repeatable)")
        p.add_argument("--out", default=None, help="Output directory")

    p = sub.add_parser("train", help="Run one training run")
    common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None, help="Named training configuration")
    p.add_argument("--calibration", default=None, help="calibration.json providing the reward threshold")

    p = sub.add_parser("ablate", help="Sweep rollout lengths with plain PPO")
    common(p)
    p.add_argument("--lengths", type=_int_list, default=list(config.ABLATION_LENGTHS))
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--workers", type=int, default=config.ABLATION_WORKERS,
                   help="Worker threads; 1 runs sequentially in-process")
    p.add_argument("--calibration", default=None)

    p = sub.add_parser("compare", help="Compare named presets over seeds")
    common(p)
    p.add_argument("--presets", type=_name_list, default=list(PRESETS))
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--workers", type=int, default=config.ABLATION_WORKERS)
    p.add_argument("--calibration", default=None)

    p = sub.add_parser("heatmap", help="Tracking-error heatmap of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="Checkpoint directory")
    p.add_argument("--grid", type=int, default=config.HEATMAP_GRID_SIZE, help="Cells per axis")
    p.add_argument("--trials", type=int, default=config.HEATMAP_TRIALS)
    p.add_argument("--warmup", type=int, default=config.HEATMAP_WARMUP_STEPS)
    p.add_argument("--measure", type=int, default=config.HEATMAP_MEASURE_STEPS)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("calibrate", help="Reference run and reward threshold")
    common(p)
    p.add_argument("--fraction", type=float, default=config.CALIBRATION_FRACTION)
    return parser


def _output_dir(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else Path(config.OUTPUT_DIR) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, preset: Optional[str] = None) -> TrainConfig:
    train_config = load_config(args.config, args.overrides, preset)
    calibration = getattr(args, "calibration", None)
    if calibration:
        train_config = replace(train_config, threshold=read_calibration(calibration))
    return train_config


def _write_table(frame, out: Path, stem: str):
    frame.to_csv(out / f"{stem}.csv", index=False)
    (out / f"{stem}.json").write_text(frame.to_json(orient="records", indent=2))
    logger.info(f"Wrote {out / stem}.csv and .json")


def _processor(workers: int, out: Path) -> Optional[RunProcessor]:
    if workers <= 1:
        return None
    return RunProcessor(workers, RunDatabase(str(out / config.RUNS_DB)))


def cmd_train(args) -> int:
    train_config = _load(args, args.preset)
    out = _output_dir(args, f"train_seed{train_config.seed}")
    train_config = replace(train_config, output_dir=str(out))
    manifest = RunManifest.for_config(train_config)
    write_manifest(out, manifest)

    try:
        result = train_run(train_config)
        manifest.status = "completed"
    except NumericalError:
        manifest.status = "failed"
        raise
    finally:
        manifest.finished_at = datetime.now().isoformat(timespec="seconds")
        write_manifest(out, manifest)

    summary = summarize_run(result.metrics, train_config.threshold)
    print(f"Finished {summary['iterations']} iterations "
          f"({summary['sim_steps']} simulated, {summary['syn_steps']} synthetic steps); "
          f"max mean return {summary['max_return']:.3f}")
    if train_config.threshold is not None:
        print(f"Simulated steps to threshold {train_config.threshold:.3f}: {summary['steps_to_threshold']}")
    print(f"Outputs in {out}")
    return EXIT_OK


def _run_table(args, stem: str, build) -> int:
    base = _load(args)
    out = _output_dir(args, stem)
    base = replace(base, output_dir=str(out / "runs"))
    processor = _processor(args.workers, out)
    try:
        frame = build(base, processor)
    finally:
        if processor is not None:
            processor.stop()
    _write_table(frame, out, stem)
    print(frame.to_string(index=False))
    return EXIT_OK


def cmd_ablate(args) -> int:
    return _run_table(args, "ablation", lambda base, processor: ablate_rollout_lengths(
        base, args.lengths, args.seeds, processor=processor))


def cmd_compare(args) -> int:
    unknown = [p for p in args.presets if p not in PRESETS]
    if unknown:
        raise ConfigError(f"unknown presets {unknown}, expected from {sorted(PRESETS)}")
    return _run_table(args, "compare", lambda base, processor: compare_configurations(
        base, args.presets, args.seeds, processor=processor))


def _heatmap_config(args) -> TrainConfig:
    """Config of the run that wrote the checkpoint, unless --config is given."""
    run_dir = Path(args.checkpoint).resolve().parent.parent
    if args.config is None and (run_dir / MANIFEST_FILE).is_file():
        logger.info(f"Using the training config recorded in {run_dir / MANIFEST_FILE}")
        return validate_config(apply_overrides(read_manifest(run_dir).train_config(), args.overrides))
    return _load(args)


def cmd_heatmap(args) -> int:
    train_config = _heatmap_config(args)
    checkpoint = load_checkpoint(args.checkpoint)
    spec = HeatmapSpec.uniform(train_config.env, args.grid, trials=args.trials,
                               warmup_steps=args.warmup, measure_steps=args.measure)
    frame = eval_tracking_heatmap(checkpoint.actor, spec, train_config.env, seed=args.seed)
    out = _output_dir(args, "heatmap")
    frame.to_csv(out / "heatmap.csv", index=False)
    print(f"Mean tracking error: vx {frame['mae_vx'].mean():.4f}, wz {frame['mae_wz'].mean():.4f}; "
          f"falls {int(frame['falls'].sum())}")
    print(f"Wrote {out / 'heatmap.csv'}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    train_config = _load(args)
    out = _output_dir(args, f"calibrate_seed{train_config.seed}")
    train_config = replace(train_config, output_dir=str(out))
    write_manifest(out, RunManifest.for_config(train_config))
    result = train_run(train_config)
    try:
        threshold = calibrate_threshold(result.metrics, args.fraction, config.CALIBRATION_TAIL_FRACTION)
    except ValueError as e:
        raise DynaError(f"calibration failed: {e}")
    path = write_calibration(out / config.CALIBRATION_FILE, threshold,
                             fraction=args.fraction, seed=train_config.seed,
                             iterations=len(result.metrics))
    print(f"Threshold {threshold:.6f} written to {path}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "ablate": cmd_ablate,
    "compare": cmd_compare,
    "heatmap": cmd_heatmap,
    "calibrate": cmd_calibrate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run a subcommand and map errors to exit codes.

    Returns:
        int: 0 on success, 2 on configuration errors, 3 on numerical aborts,
        1 on any other failure
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s", force=True)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical abort: {e}")
        print(f"❌ Numerical abort: {e}")
        return EXIT_NUMERICAL
    except (DynaError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"❌ {args.command} failed: {e}")
        return EXIT_FAILURE
