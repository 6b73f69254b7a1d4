from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

from ..const import IOU_THRESHOLDS, Split
from ..core import Domain
from ..synthdata import DatasetManifest

__all__ = ["metric", "report", "plot", "inference"]

from .metric import Metric, ap_at_40, evaluate_detections, interpolated_ap, match_frame
from .report import EvalReport
from .plot import BevSegments, bev_plot, bev_segments
from .inference import FramePredictions, evaluate_model, filter_predictions, predict_frames, report_for


def evaluate(
    checkpoint: Path,
    manifest: DatasetManifest,
    split: str = Split.VAL,
    domain: Optional[Domain] = None,
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> EvalReport:
    """Scores a saved checkpoint on one split; the domain defaults to the one it was validated on."""
    from ..trainer.checkpoint import load_detectors

    loaded = load_detectors(checkpoint)
    domain = domain or loaded.train_config.eval_domain
    config = {"checkpoint": str(checkpoint), "domain": domain.value, "split": split, "epoch": str(loaded.epoch)}
    return evaluate_model(
        loaded.detector(domain.value),
        manifest,
        domain,
        split,
        loaded.train_config.score_threshold,
        iou_thresholds,
        config,
    )
