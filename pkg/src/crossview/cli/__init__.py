"""Command-line surface: generate, train, eval, plot and sweep."""
from __future__ import annotations

import asyncio
import logging
import os
import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from ..config import ConfigError, build_config, parse_overrides, read_config_file, split_config
from ..const import IOU_THRESHOLDS, OUTPUT_ROOT_ENV, REPORT_JSON_FILE, REPORT_TABLE_FILE, Split
from ..core import Domain
from ..interaction import ModelConfig
from ..synthdata import DatasetIOError, SynthConfig, build_dataset, load_manifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_handler: Optional[logging.Handler] = None


def configure_logging(verbose: bool = False) -> None:
    global _handler
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger()
    root.setLevel(level)
    if _handler is not None:
        root.removeHandler(_handler)
    _handler = logging.StreamHandler(sys.stdout)
    _handler.setLevel(level)
    _handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
    root.addHandler(_handler)


def output_dir(path: str) -> Path:
    """Relative output directories are placed under $CROSSVIEW_OUTPUT_ROOT when it is set."""
    out = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        return Path(root) / out
    return out


def _add_config_options(parser: ArgumentParser) -> None:
    parser.add_argument("-c", "--config", help="flat key=value config file", type=Path, default=None)
    parser.add_argument(
        "-s",
        "--set",
        dest="overrides",
        help="override one config key (repeatable)",
        metavar="KEY=VALUE",
        action="append",
        default=[],
    )


def initialize_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="crossview", description="Cross-view monocular 3D detection experiments")
    parser.add_argument("-v", "--verbose", help="debug logging", action="store_true")

    subparsers = parser.add_subparsers(dest="action", description="supported actions", required=True)

    generate_sp = subparsers.add_parser("generate", help="render a paired synthetic dataset")
    _add_config_options(generate_sp)
    generate_sp.add_argument("-o", "--out", help="dataset directory", type=str, required=True)
    generate_sp.add_argument("--n-roadside", dest="n_roadside", help="roadside train samples", type=int)
    generate_sp.add_argument("--n-vehicle", dest="n_vehicle", help="vehicle-side train samples", type=int)
    generate_sp.add_argument("--workers", help="render processes", type=int)

    train_sp = subparsers.add_parser("train", help="train a detector")
    _add_config_options(train_sp)
    train_sp.add_argument("-d", "--data", help="dataset directory", type=Path, required=True)
    train_sp.add_argument("-o", "--out", help="run directory", type=str, required=True)
    train_sp.add_argument(
        "-m", "--mode", help="training mode", choices=["only_road", "only_veh", "addon", "paired", "iroam"]
    )
    train_sp.add_argument("--no-cl", dest="no_cl", help="disable the contrastive term", action="store_true")
    train_sp.add_argument(
        "--no-decouple", dest="no_decouple", help="contrast full query channels", action="store_true"
    )
    train_sp.add_argument("--workers", help="data loader workers", type=int)

    eval_sp = subparsers.add_parser("eval", help="score a checkpoint")
    eval_sp.add_argument("-k", "--checkpoint", help="checkpoint file", type=Path, required=True)
    eval_sp.add_argument("-d", "--data", help="dataset directory", type=Path, required=True)
    eval_sp.add_argument("--domain", help="domain to score", choices=[d.value for d in Domain])
    eval_sp.add_argument("--split", help="dataset split", choices=[Split.TRAIN, Split.VAL], default=Split.VAL)
    eval_sp.add_argument("--iou", help="IoU threshold (repeatable)", type=float, action="append")
    eval_sp.add_argument("-o", "--out", help="directory for report files", type=str)

    plot_sp = subparsers.add_parser("plot", help="bird's-eye-view plots of predictions")
    plot_sp.add_argument("-k", "--checkpoint", help="checkpoint file", type=Path, required=True)
    plot_sp.add_argument("-d", "--data", help="dataset directory", type=Path, required=True)
    plot_sp.add_argument("-o", "--out", help="image directory", type=str, required=True)
    plot_sp.add_argument("--domain", help="domain to plot", choices=[d.value for d in Domain])
    plot_sp.add_argument("--frames", help="number of frames", type=int, default=1)

    sweep_sp = subparsers.add_parser("sweep", help="imbalance-ratio grid of training runs")
    _add_config_options(sweep_sp)
    sweep_sp.add_argument("-d", "--data", help="dataset directory", type=Path, required=True)
    sweep_sp.add_argument("-o", "--out", help="sweep directory", type=str, required=True)
    sweep_sp.add_argument(
        "--fractions", help="roadside fractions, comma separated", type=str, default="1.0,0.67,0.5,0.25"
    )
    sweep_sp.add_argument("--modes", help="training modes, comma separated", type=str, default="only_road,addon,paired")
    sweep_sp.add_argument("--seeds", help="seeds, comma separated", type=str, default="0")
    sweep_sp.add_argument("--workers", help="parallel child runs", type=int, default=1)

    return parser


def _config_values(args: Namespace) -> Dict[str, str]:
    values = read_config_file(args.config) if args.config else {}
    values.update(parse_overrides(args.overrides))
    return values


def train_configs(args: Namespace) -> List[Any]:
    """ModelConfig and TrainConfig from --config, then --set, then explicit flags."""
    from ..trainer import TrainConfig

    values = _config_values(args)
    if args.mode:
        values["mode"] = args.mode
    if args.no_cl:
        values["use_cl"] = "false"
    if args.no_decouple:
        values["decouple"] = "false"
    if args.workers is not None:
        values["num_workers"] = str(args.workers)
    model_values, train_values = split_config(values, ModelConfig, TrainConfig)
    return [build_config(ModelConfig, model_values), build_config(TrainConfig, train_values)]


def cmd_generate(args: Namespace) -> int:
    values = _config_values(args)
    for key in ("n_roadside", "n_vehicle", "workers"):
        if getattr(args, key) is not None:
            values[key] = str(getattr(args, key))
    config = build_config(SynthConfig, values)
    manifest = build_dataset(config, output_dir(args.out))
    for domain, splits in sorted(manifest.counts.items()):
        print(f"{domain}: " + ", ".join(f"{split}={count}" for split, count in sorted(splits.items())))
    print(f"manifest: {manifest.root}")
    return EXIT_OK


def cmd_train(args: Namespace) -> int:
    from ..trainer import train

    model_config, train_config = train_configs(args)
    manifest = load_manifest(args.data)
    result = train(train_config, model_config, manifest, output_dir(args.out))
    print(f"checkpoint: {result.checkpoint}")
    print("branch calls: " + ", ".join(f"{k}={v}" for k, v in sorted(result.branch_calls.items())))
    if result.report is not None:
        print(result.report.to_table(), end="")
    return EXIT_OK


def cmd_eval(args: Namespace) -> int:
    from ..evaluator import evaluate

    manifest = load_manifest(args.data)
    domain = Domain(args.domain) if args.domain else None
    report = evaluate(args.checkpoint, manifest, args.split, domain, tuple(args.iou or IOU_THRESHOLDS))
    print(report.to_table(), end="")
    if args.out:
        out = output_dir(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / REPORT_JSON_FILE).write_text(report.to_json())
            (out / REPORT_TABLE_FILE).write_text(report.to_table())
        except OSError as err:
            raise DatasetIOError(f"cannot write report to {out}: {err}") from err
    return EXIT_OK


def cmd_plot(args: Namespace) -> int:
    from ..evaluator import bev_plot, predict_frames
    from ..trainer import load_detectors

    loaded = load_detectors(args.checkpoint)
    manifest = load_manifest(args.data)
    domain = Domain(args.domain) if args.domain else loaded.train_config.eval_domain
    frames = predict_frames(
        loaded.detector(domain.value),
        manifest,
        domain,
        Split.VAL,
        loaded.train_config.score_threshold,
        limit=max(args.frames, 0),
    )
    out = output_dir(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DatasetIOError(f"cannot create {out}: {err}") from err
    for sample_id in sorted(frames.labels):
        path = bev_plot(
            frames.detections[sample_id],
            frames.labels[sample_id],
            frames.cameras[sample_id],
            out / f"{sample_id.replace('/', '_')}.png",
            title=sample_id,
        )
        print(path)
    return EXIT_OK


def cmd_sweep(args: Namespace) -> int:
    from .sweep import SweepPlan, run_sweep

    plan = SweepPlan.from_args(args, output_dir(args.out))
    return asyncio.run(run_sweep(plan))


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    from ..trainer import CheckpointError, EmptyDomainError, NonFiniteLossError

    args = initialize_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.action](args)
    except (ConfigError, EmptyDomainError) as err:
        logger.error("%s", err)
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as err:
        logger.error("%s", err)
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetIOError, CheckpointError, OSError) as err:
        logger.error("%s", err)
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO
