from __future__ import annotations

from dataclasses import dataclass, field
from logging import getLogger
from typing import Dict, List, Optional, Sequence

import torch

from ..const import IOU_THRESHOLDS, SCORE_THRESHOLD, Split
from ..core import Box3D, CameraModel, Detection, Domain
from ..interaction import Detector, HeadOutputs, decode_predictions, image_tensor
from ..synthdata import DatasetManifest, load_sample
from .metric import evaluate_detections
from .report import EvalReport

logger = getLogger(__name__)


@dataclass
class FramePredictions:
    detections: Dict[str, List[Detection]] = field(default_factory=dict)
    labels: Dict[str, List[Box3D]] = field(default_factory=dict)
    cameras: Dict[str, CameraModel] = field(default_factory=dict)

    @property
    def num_dets(self) -> int:
        return sum(len(v) for v in self.detections.values())

    @property
    def num_gt(self) -> int:
        return sum(len(v) for v in self.labels.values())


def filter_predictions(
    raw: HeadOutputs, cam: CameraModel, score_threshold: float = SCORE_THRESHOLD
) -> List[Detection]:
    """Keeps queries whose foreground probability reaches the threshold; no NMS."""
    if raw.num_queries == 0:
        return []
    return decode_predictions(raw, cam, score_threshold)


@torch.no_grad()
def predict_frames(
    detector: Detector,
    manifest: DatasetManifest,
    domain: Domain,
    split: str = Split.VAL,
    score_threshold: float = SCORE_THRESHOLD,
    batch_size: int = 8,
    limit: Optional[int] = None,
) -> FramePredictions:
    entries = manifest.select(domain, split)
    if limit is not None:
        entries = entries[:limit]
    was_training = detector.training
    detector.eval()
    device = next(detector.parameters()).device
    dtype = next(detector.parameters()).dtype
    frames = FramePredictions()
    for start in range(0, len(entries), batch_size):
        samples = [load_sample(manifest, entry) for entry in entries[start : start + batch_size]]
        images = torch.stack([image_tensor(s.image, dtype) for s in samples]).to(device)
        heads = detector(images).heads
        for b, sample in enumerate(samples):
            frames.detections[sample.sample_id] = filter_predictions(heads.frame(b), sample.cam, score_threshold)
            frames.labels[sample.sample_id] = [label.box3d for label in sample.labels]
            frames.cameras[sample.sample_id] = sample.cam
    detector.train(was_training)
    return frames


def report_for(
    frames: FramePredictions, iou_thresholds: Sequence[float] = IOU_THRESHOLDS, config: Optional[Dict[str, str]] = None
) -> EvalReport:
    return EvalReport(
        ap=evaluate_detections(frames.detections, frames.labels, iou_thresholds),
        num_frames=len(frames.labels),
        num_gt=frames.num_gt,
        num_dets=frames.num_dets,
        config=dict(config or {}),
    )


def evaluate_model(
    detector: Detector,
    manifest: DatasetManifest,
    domain: Domain,
    split: str = Split.VAL,
    score_threshold: float = SCORE_THRESHOLD,
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
    config: Optional[Dict[str, str]] = None,
) -> EvalReport:
    frames = predict_frames(detector, manifest, domain, split, score_threshold)
    logger.debug("%s/%s: %d detections on %d frames", domain.value, split, frames.num_dets, len(frames.labels))
    return report_for(frames, iou_thresholds, config)
