from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from ..const import DEPTH_MAX
from ..core import Box3D, CameraModel, Detection, box_corners
from ..synthdata import DatasetIOError

PREDICTION_COLOR = "red"
LABEL_COLOR = "green"


@dataclass
class BevSegments:
    """Top-down polylines in level-frame (x, z) meters; the camera sits at the origin."""

    predictions: List[np.ndarray]
    labels: List[np.ndarray]
    frustum: np.ndarray
    camera: np.ndarray


def _footprint(box: Box3D) -> np.ndarray:
    corners = box_corners(box)[:4][:, [0, 2]]
    return np.vstack([corners, corners[:1]])


def bev_segments(
    dets: Sequence[Detection], gts: Sequence[Box3D], cam: CameraModel, max_range: float = DEPTH_MAX
) -> BevSegments:
    half = math.tan(cam.horizontal_fov / 2) * max_range
    return BevSegments(
        predictions=[_footprint(det.box3d) for det in dets],
        labels=[_footprint(box) for box in gts],
        frustum=np.array([[-half, max_range], [0.0, 0.0], [half, max_range]]),
        camera=np.zeros(2),
    )


def bev_plot(
    dets: Sequence[Detection],
    gts: Sequence[Box3D],
    cam: CameraModel,
    out_path: Path,
    max_range: float = DEPTH_MAX,
    title: str = "",
) -> Path:
    """Writes a bird's-eye-view PNG: predictions red, labels green, camera frustum grey."""
    segments = bev_segments(dets, gts, cam, max_range)
    figure = Figure(figsize=(4.0, 6.0), dpi=100)
    FigureCanvasAgg(figure)
    ax = figure.add_subplot(1, 1, 1)
    ax.plot(segments.frustum[:, 0], segments.frustum[:, 1], color="0.6", linewidth=0.8)
    ax.plot([0.0], [0.0], marker="^", color="black", markersize=6)
    for line in segments.labels:
        ax.plot(line[:, 0], line[:, 1], color=LABEL_COLOR, linewidth=1.2)
    for line in segments.predictions:
        ax.plot(line[:, 0], line[:, 1], color=PREDICTION_COLOR, linewidth=1.0)
    half = segments.frustum[2, 0]
    ax.set_xlim(-half - 2.0, half + 2.0)
    ax.set_ylim(-2.0, max_range + 2.0)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    if title:
        ax.set_title(title, fontsize=8)
    out_path = Path(out_path)
    try:
        figure.savefig(out_path, format="png", metadata={"Software": None})
    except OSError as err:
        raise DatasetIOError(f"cannot write plot {out_path}: {err}") from err
    return out_path
