from __future__ import annotations

import math
from dataclasses import dataclass, replace
from logging import getLogger
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from ..const import BACKGROUND_DEPTH, DEPTH_MAX, DEPTH_MIN
from ..core import (
    Box2D,
    Box3D,
    CameraModel,
    CrossViewError,
    Difficulty,
    Domain,
    Label,
    box_corners,
    project_center,
    project_points,
)
from .scene import Scene

logger = getLogger(__name__)

STRIDE = 16
NEAR_PLANE = 0.1

# corner index lists, see box_corners
FACES = (
    ((0, 1, 2, 3), 1.00),  # top
    ((4, 5, 6, 7), 0.45),  # bottom
    ((0, 1, 5, 4), 0.80),
    ((1, 2, 6, 5), 0.65),
    ((2, 3, 7, 6), 0.80),
    ((3, 0, 4, 7), 0.65),
)


class EmptyViewError(CrossViewError):
    pass


@dataclass(frozen=True)
class DomainSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    labels: Tuple[Label, ...]
    depth_gt: np.ndarray  # (H/16, W/16) float32 meters, BACKGROUND_DEPTH elsewhere
    domain: Domain
    cam: CameraModel
    sample_id: str = ""


def difficulty_for_depth(depth: float, bands: Tuple[float, float]) -> Difficulty:
    if depth <= bands[0]:
        return Difficulty.Easy
    if depth <= bands[1]:
        return Difficulty.Mod
    return Difficulty.Hard


def _background(cam: CameraModel) -> np.ndarray:
    """Sky over a ground gradient, split at the horizon row of the level plane."""
    width, height = cam.image_size
    horizon = cam.cy + cam.fy * math.tan(cam.pitch)
    rows = np.arange(height, dtype=np.float64)[:, None]
    below = np.clip((rows - horizon) / max(height - horizon, 1.0), 0.0, 1.0)
    above = np.clip((horizon - rows) / max(horizon, 1.0), 0.0, 1.0)
    ground = np.array([0.33, 0.32, 0.30]) + below[..., None] * np.array([0.22, 0.22, 0.20])
    sky = np.array([0.70, 0.78, 0.88]) + above[..., None] * np.array([0.10, 0.08, 0.05])
    canvas = np.where((rows >= horizon)[..., None], ground, sky)
    return np.repeat(canvas, width, axis=1)


def _to_uint8(color: np.ndarray) -> Tuple[int, int, int]:
    rgb = np.clip(np.round(color * 255.0), 0, 255).astype(int)
    return (int(rgb[0]), int(rgb[1]), int(rgb[2]))


def _clipped_rect(uv: np.ndarray, cam: CameraModel) -> Optional[Tuple[float, float, float, float]]:
    x0 = float(np.clip(uv[:, 0].min(), 0, cam.width))
    x1 = float(np.clip(uv[:, 0].max(), 0, cam.width))
    y0 = float(np.clip(uv[:, 1].min(), 0, cam.height))
    y1 = float(np.clip(uv[:, 1].max(), 0, cam.height))
    if x1 - x0 < 1e-6 or y1 - y0 < 1e-6:
        return None
    return x0, y0, x1, y1


def label_for_box(
    box: Box3D, cam: CameraModel, object_id: int, albedo: Tuple[float, float, float]
) -> Optional[Label]:
    """Label of a level-frame box if its center is in the image and its depth is supervised."""
    uv, z = project_points(box_corners(box), cam)
    if (z <= NEAR_PLANE).any():
        return None
    if not DEPTH_MIN <= box.depth <= DEPTH_MAX:
        return None
    u, v = project_center(box, cam)
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        return None
    rect = _clipped_rect(uv, cam)
    if rect is None:
        return None
    x0, y0, x1, y1 = rect
    box2d = Box2D(
        cx=(x0 + x1) / 2 / cam.width,
        cy=(y0 + y1) / 2 / cam.height,
        w=(x1 - x0) / cam.width,
        h=(y1 - y0) / cam.height,
    )
    return Label(box3d=box, box2d=box2d, object_id=object_id, albedo=albedo)


def rasterize_depth(labels: Tuple[Label, ...], cam: CameraModel) -> np.ndarray:
    """Per-cell nearest depth of the labeled objects whose 2D box covers the cell center."""
    rows, cols = cam.height // STRIDE, cam.width // STRIDE
    depth = np.full((rows, cols), BACKGROUND_DEPTH, dtype=np.float32)
    centers_x = (np.arange(cols) + 0.5) / cols
    centers_y = (np.arange(rows) + 0.5) / rows
    for label in sorted(labels, key=lambda item: -item.box3d.depth):
        x0, y0, x1, y1 = label.box2d.to_xyxy()
        cover = ((centers_y >= y0) & (centers_y <= y1))[:, None] & ((centers_x >= x0) & (centers_x <= x1))[None, :]
        depth[cover] = label.box3d.depth
    return depth


def render_view(
    scene: Scene,
    cam: CameraModel,
    domain: Domain,
    depth_bands: Tuple[float, float] = (20.0, 40.0),
    sample_id: str = "",
) -> DomainSample:
    """Flat shaded cuboids over a ground gradient, painted far to near."""
    canvas = Image.fromarray(np.round(_background(cam) * 255).astype(np.uint8))
    draw = ImageDraw.Draw(canvas)

    level_boxes = [
        replace(obj, center=tuple(cam.world_to_level(np.asarray(obj.center))))  # type: ignore[arg-type]
        for obj in scene.objects
    ]
    drawable = []
    for object_id, box in enumerate(level_boxes):
        uv, z = project_points(box_corners(box), cam)
        if (z <= NEAR_PLANE).any():
            continue
        drawable.append((float(z.mean()), object_id, uv, z))

    for _, object_id, uv, z in sorted(drawable, key=lambda item: -item[0]):
        albedo = np.asarray(scene.albedos[object_id])
        for corners, shade in sorted(FACES, key=lambda face: -float(z[list(face[0])].mean())):
            polygon = [(float(uv[i, 0]), float(uv[i, 1])) for i in corners]
            draw.polygon(polygon, fill=_to_uint8(albedo * shade))

    labels: List[Label] = []
    for object_id, box in enumerate(level_boxes):
        label = label_for_box(box, cam, object_id, scene.albedos[object_id])
        if label is None:
            continue
        difficulty = difficulty_for_depth(box.depth, depth_bands)
        labels.append(replace(label, box3d=replace(label.box3d, difficulty=difficulty)))

    if not labels:
        raise EmptyViewError(f"no object visible from the {domain.display} camera (scene seed={scene.seed})")

    image = np.asarray(canvas, dtype=np.float32) / 255.0
    return DomainSample(
        image=image,
        labels=tuple(labels),
        depth_gt=rasterize_depth(tuple(labels), cam),
        domain=domain,
        cam=cam,
        sample_id=sample_id,
    )


def random_crop(
    sample: DomainSample, rng: np.random.Generator, crop_prob: float = 0.5, min_scale: float = 0.8
) -> DomainSample:
    """Crop-and-resize augmentation; labels are re-derived through the adjusted camera."""
    if min_scale >= 1.0 or rng.random() >= crop_prob:
        return sample
    cam = sample.cam
    scale = float(rng.uniform(min_scale, 1.0))
    crop_w, crop_h = cam.width * scale, cam.height * scale
    x0 = float(rng.uniform(0.0, cam.width - crop_w))
    y0 = float(rng.uniform(0.0, cam.height - crop_h))
    new_cam = cam.cropped(x0, y0, 1.0 / scale)

    labels = []
    for label in sample.labels:
        cropped = label_for_box(label.box3d, new_cam, label.object_id, label.albedo)
        if cropped is not None:
            labels.append(cropped)
    if not labels:
        return sample

    pixels = Image.fromarray(np.round(sample.image * 255).astype(np.uint8))
    pixels = pixels.resize(cam.image_size, Image.Resampling.BILINEAR, box=(x0, y0, x0 + crop_w, y0 + crop_h))
    image = np.asarray(pixels, dtype=np.float32) / 255.0

    rows, cols = sample.depth_gt.shape
    src_x = np.clip(((x0 + (np.arange(cols) + 0.5) * STRIDE * scale) // STRIDE).astype(int), 0, cols - 1)
    src_y = np.clip(((y0 + (np.arange(rows) + 0.5) * STRIDE * scale) // STRIDE).astype(int), 0, rows - 1)
    depth_gt = sample.depth_gt[src_y][:, src_x]
    return replace(sample, image=image, labels=tuple(labels), depth_gt=depth_gt, cam=new_cam)
