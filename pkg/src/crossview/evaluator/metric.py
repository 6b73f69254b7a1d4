"""Average precision at 40 recall positions over 3D and bird's-eye-view IoU."""
from __future__ import annotations

from enum import unique
from logging import getLogger
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from ..const import IOU_THRESHOLDS, RECALL_POSITIONS
from ..core import Box3D, Detection, Difficulty, DisplayEnum, iou_3d, iou_bev

logger = getLogger(__name__)

IouFn = Callable[[Box3D, Box3D], float]

TP, FP, IGNORED = 1, 0, -1


@unique
class Metric(DisplayEnum):
    AP3D = "ap3d", "AP3D"
    APBEV = "apbev", "APBEV"

    @property
    def iou_fn(self) -> IouFn:
        return iou_3d if self is Metric.AP3D else iou_bev


@njit(cache=False)
def match_frame(overlaps: np.ndarray, det_order: np.ndarray, gt_ignored: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy matching of one frame in score order.

    Each detection takes the unmatched cared-for object of highest IoU at or
    above `threshold`, else an unmatched ignored object (the detection is then
    ignored), else it is a false positive.
    """
    n_det, n_gt = overlaps.shape
    taken = np.zeros(n_gt, dtype=np.bool_)
    status = np.zeros(n_det, dtype=np.int8)
    for k in range(n_det):
        d = det_order[k]
        for sweep in range(2):
            want_ignored = sweep == 1
            best = -1
            best_iou = -1.0
            for g in range(n_gt):
                if taken[g] or gt_ignored[g] != want_ignored:
                    continue
                iou = overlaps[d, g]
                if iou >= threshold and iou > best_iou:
                    best = g
                    best_iou = iou
            if best >= 0:
                taken[best] = True
                status[d] = IGNORED if want_ignored else TP
                break
    return status


def interpolated_ap(scores: np.ndarray, is_tp: np.ndarray, num_gt: int, positions: int = RECALL_POSITIONS) -> Optional[float]:
    """Mean interpolated precision at recalls k/positions, k = 1..positions, times 100."""
    if num_gt == 0:
        return None
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = np.asarray(is_tp, dtype=np.float64)[order]
    cum_tp = np.cumsum(hits)
    cum_fp = np.cumsum(1.0 - hits)
    precision = cum_tp / (cum_tp + cum_fp)
    recall = cum_tp / num_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for k in range(1, positions + 1):
        idx = int(np.searchsorted(recall, k / positions, side="left"))
        if idx < len(recall):
            total += float(envelope[idx])
    return 100.0 * total / positions


def overlap_matrix(dets: Sequence[Detection], gts: Sequence[Box3D], iou_fn: IouFn) -> np.ndarray:
    overlaps = np.zeros((len(dets), len(gts)), dtype=np.float64)
    for i, det in enumerate(dets):
        for j, gt in enumerate(gts):
            overlaps[i, j] = iou_fn(det.box3d, gt)
    return overlaps


def _frame_scores(
    dets: Sequence[Detection],
    gts: Sequence[Box3D],
    overlaps: np.ndarray,
    threshold: float,
    difficulty: Difficulty,
) -> Tuple[np.ndarray, np.ndarray, int]:
    ignored = np.array([gt.difficulty.rank > difficulty.rank for gt in gts], dtype=np.bool_)
    scores = np.array([det.score for det in dets], dtype=np.float64)
    order = np.argsort(-scores, kind="stable").astype(np.int64)
    if len(dets) and len(gts):
        status = match_frame(overlaps, order, ignored, float(threshold))
    else:
        status = np.zeros(len(dets), dtype=np.int8)
    keep = status != IGNORED
    return scores[keep], status[keep] == TP, int((~ignored).sum())


def ap_from_overlaps(
    dets_by_frame: Sequence[Sequence[Detection]],
    gts_by_frame: Sequence[Sequence[Box3D]],
    overlaps_by_frame: Sequence[np.ndarray],
    threshold: float,
    difficulty: Difficulty,
) -> Optional[float]:
    scores, hits, num_gt = [], [], 0
    for dets, gts, overlaps in zip(dets_by_frame, gts_by_frame, overlaps_by_frame):
        frame_scores, frame_hits, frame_gt = _frame_scores(dets, gts, overlaps, threshold, difficulty)
        scores.append(frame_scores)
        hits.append(frame_hits)
        num_gt += frame_gt
    if not scores:
        return None
    return interpolated_ap(np.concatenate(scores), np.concatenate(hits), num_gt)


def ap_at_40(
    dets_by_frame: Sequence[Sequence[Detection]],
    gts_by_frame: Sequence[Sequence[Box3D]],
    iou_fn: IouFn,
    threshold: float,
    difficulty: Difficulty,
) -> Optional[float]:
    """AP over frames given in a consistent order; None when no object is cared for."""
    if len(dets_by_frame) != len(gts_by_frame):
        raise ValueError(f"{len(dets_by_frame)} detection frames vs {len(gts_by_frame)} label frames")
    overlaps = [overlap_matrix(d, g, iou_fn) for d, g in zip(dets_by_frame, gts_by_frame)]
    return ap_from_overlaps(dets_by_frame, gts_by_frame, overlaps, threshold, difficulty)


def evaluate_detections(
    dets_by_frame: Mapping[str, Sequence[Detection]],
    gts_by_frame: Mapping[str, Sequence[Box3D]],
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
    metrics: Sequence[Metric] = tuple(Metric),
    difficulties: Sequence[Difficulty] = tuple(Difficulty),
) -> Dict[Tuple[Metric, float, Difficulty], Optional[float]]:
    """Full AP grid; frames are scored in identifier order."""
    frame_ids = sorted(set(dets_by_frame) | set(gts_by_frame))
    dets = [list(dets_by_frame.get(f, ())) for f in frame_ids]
    gts = [list(gts_by_frame.get(f, ())) for f in frame_ids]
    grid: Dict[Tuple[Metric, float, Difficulty], Optional[float]] = {}
    for metric in metrics:
        overlaps = [overlap_matrix(d, g, metric.iou_fn) for d, g in zip(dets, gts)]
        for threshold in iou_thresholds:
            for difficulty in difficulties:
                grid[(metric, float(threshold), difficulty)] = ap_from_overlaps(
                    dets, gts, overlaps, threshold, difficulty
                )
    logger.debug("evaluated %d frames", len(frame_ids))
    return grid
