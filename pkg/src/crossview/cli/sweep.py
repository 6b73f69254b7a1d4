"""Imbalance-ratio sweep: child `train` runs over roadside fractions, modes and seeds."""
from __future__ import annotations

import asyncio
import csv
import json
import sys
from argparse import Namespace
from dataclasses import dataclass, field
from itertools import product
from logging import getLogger
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ..config import ConfigError, parse_overrides, read_config_file
from ..const import METRICS_FILE, SWEEP_CSV_FILE, MetricsAttribute
from ..synthdata import DatasetIOError, DatasetManifest, load_manifest
from ..trainer import Pairing, Planner, TrainConfig, TrainMode

logger = getLogger(__name__)

CSV_COLUMNS = [
    "mode",
    "roadside_fraction",
    "n_roadside",
    "n_vehicle",
    "ratio",
    "images_per_epoch",
    "seed",
    "ap3d_mod_07",
    "ap3d_mod_05",
]


def _split_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


@dataclass(frozen=True)
class SweepRun:
    mode: TrainMode
    roadside_fraction: float
    seed: int

    @property
    def name(self) -> str:
        return f"{self.mode.value}_f{self.roadside_fraction:g}_s{self.seed}"


@dataclass
class SweepPlan:
    data: Path
    out_dir: Path
    runs: List[SweepRun]
    config: Optional[Path] = None
    overrides: List[str] = field(default_factory=list)
    workers: int = 1

    @classmethod
    def from_args(cls, args: Namespace, out_dir: Path) -> "SweepPlan":
        try:
            fractions = [float(v) for v in _split_list(args.fractions)]
            seeds = [int(v) for v in _split_list(args.seeds)]
            modes = [TrainMode(v) for v in _split_list(args.modes)]
        except ValueError as err:
            raise ConfigError(f"invalid sweep grid: {err}") from err
        if not (fractions and seeds and modes):
            raise ConfigError("sweep needs at least one fraction, mode and seed")
        if any(not 0.0 < f <= 1.0 for f in fractions):
            raise ConfigError("roadside fractions must be in (0, 1]")
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
        if args.config:
            read_config_file(args.config)
        parse_overrides(args.overrides)
        runs = [SweepRun(mode, fraction, seed) for fraction, mode, seed in product(fractions, modes, seeds)]
        return cls(args.data, out_dir, runs, args.config, list(args.overrides), args.workers)

    def command(self, run: SweepRun) -> List[str]:
        cmd = [sys.executable, "-m", "crossview.cli", "train", "--data", str(Path(self.data).resolve())]
        # absolute: the child must not prefix the output root again
        cmd += ["--out", str((self.out_dir / run.name).resolve()), "--mode", run.mode.value]
        if self.config:
            cmd += ["--config", str(self.config)]
        for pair in self.overrides:
            cmd += ["--set", pair]
        cmd += ["--set", f"roadside_fraction={run.roadside_fraction!r}", "--set", f"seed={run.seed}"]
        return cmd

    def pairing(self) -> Pairing:
        values = read_config_file(self.config) if self.config else {}
        values.update(parse_overrides(self.overrides))
        try:
            return Pairing(values.get("pairing", TrainConfig.pairing.value))
        except ValueError as err:
            raise ConfigError(f"invalid pairing: {err}") from err


async def _launch(plan: SweepPlan, run: SweepRun, semaphore: asyncio.Semaphore) -> int:
    async with semaphore:
        logger.info("Starting sweep run %s", run.name)
        process = await asyncio.create_subprocess_exec(
            *plan.command(run), stdout=asyncio.subprocess.DEVNULL, stderr=asyncio.subprocess.PIPE
        )
        _, stderr = await process.communicate()
        code = process.returncode or 0
        if code:
            logger.error("Sweep run %s exited with %d: %s", run.name, code, stderr.decode(errors="replace").strip())
        else:
            logger.info("Finished sweep run %s", run.name)
        return code


def last_metrics(run_dir: Path) -> Optional[Dict]:
    try:
        lines = (run_dir / METRICS_FILE).read_text().splitlines()
    except OSError:
        return None
    lines = [line for line in lines if line.strip()]
    return json.loads(lines[-1]) if lines else None


def sweep_row(plan: SweepPlan, run: SweepRun, pairing: Pairing, manifest: DatasetManifest) -> Dict[str, object]:
    planner = Planner(manifest, run.mode, pairing, run.seed, run.roadside_fraction)
    row: Dict[str, object] = {
        "mode": run.mode.value,
        "roadside_fraction": run.roadside_fraction,
        "n_roadside": planner.n_roadside,
        "n_vehicle": planner.n_vehicle,
        "ratio": round(planner.ratio, 4),
        "images_per_epoch": planner.plan(0).images,
        "seed": run.seed,
        "ap3d_mod_07": "",
        "ap3d_mod_05": "",
    }
    metrics = last_metrics(plan.out_dir / run.name)
    if metrics is not None:
        row["images_per_epoch"] = metrics.get(MetricsAttribute.IMAGES, row["images_per_epoch"])
        for key, value in (metrics.get(MetricsAttribute.VAL_AP) or {}).items():
            if key in row and value is not None:
                row[key] = value
    return row


def write_sweep_csv(path: Path, rows: Sequence[Dict[str, object]]) -> None:
    try:
        with open(path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as err:
        raise DatasetIOError(f"cannot write {path}: {err}") from err


async def run_sweep(plan: SweepPlan) -> int:
    """Runs every child with at most `plan.workers` in flight; returns the first failing exit code."""
    try:
        plan.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DatasetIOError(f"cannot create {plan.out_dir}: {err}") from err
    pairing = plan.pairing()
    semaphore = asyncio.Semaphore(plan.workers)
    codes = await asyncio.gather(*(_launch(plan, run, semaphore) for run in plan.runs))
    results: List[Tuple[SweepRun, int]] = list(zip(plan.runs, codes))
    manifest = load_manifest(plan.data)
    rows = [sweep_row(plan, run, pairing, manifest) for run, _ in results]
    write_sweep_csv(plan.out_dir / SWEEP_CSV_FILE, rows)
    logger.info("Wrote %s (%d runs)", plan.out_dir / SWEEP_CSV_FILE, len(rows))
    return next((code for code in codes if code), 0)
