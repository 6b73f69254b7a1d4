from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, unique
from typing import Any, Tuple

import numpy as np
from shapely.geometry import Polygon

__all__ = [
    "Box2D",
    "Box3D",
    "CameraModel",
    "Category",
    "CrossViewError",
    "Detection",
    "DisplayEnum",
    "Difficulty",
    "Domain",
    "Label",
    "NonPositiveDepthError",
    "OddChannelError",
    "bev_polygon",
    "box_corners",
    "iou_2d",
    "iou_3d",
    "iou_bev",
    "project_center",
    "project_points",
    "unproject_center",
    "wrap_angle",
]

Vec2 = Tuple[float, float]
Vec3 = Tuple[float, float, float]


class CrossViewError(Exception):
    pass


class NonPositiveDepthError(CrossViewError):
    pass


class OddChannelError(CrossViewError):
    pass


class DisplayEnum(Enum):
    def __new__(cls, *args: Any, **kwds: Any):  # type: ignore
        obj = object.__new__(cls)
        obj._value_ = args[0]
        return obj

    # ignore the first param since it's already set by __new__
    def __init__(self, _: str, display: str = "") -> None:
        self._display = display

    def __str__(self) -> str:
        return self.display

    # this makes sure that the description is read-only
    @property
    def display(self) -> str:
        return self._display


@unique
class Domain(DisplayEnum):
    """Enum class representing the camera viewpoint a sample was taken from."""

    Vehicle = "vehicle", "Vehicle-side"
    Roadside = "roadside", "Roadside"


@unique
class Difficulty(DisplayEnum):
    Easy = "easy", "Easy"
    Mod = "mod", "Mod"
    Hard = "hard", "Hard"

    @property
    def rank(self) -> int:
        return list(Difficulty).index(self)


@unique
class Category(DisplayEnum):
    Car = "Car", "Car"


def wrap_angle(angle: float) -> float:
    """Wraps an angle in radians to [-pi, pi)."""
    if -math.pi <= angle < math.pi:
        return angle
    wrapped = (angle + math.pi) % (2.0 * math.pi) - math.pi
    # float modulo can land exactly on pi for inputs just below -pi
    return -math.pi if wrapped >= math.pi else wrapped


@dataclass(frozen=True)
class Box3D:
    """Oriented cuboid in the level camera frame (x right, y down, z forward).

    `yaw` rotates the box about the vertical axis; yaw 0 points the length
    along +x.
    """

    center: Vec3
    dims: Vec3  # (h, w, l)
    yaw: float
    category: Category = Category.Car
    difficulty: Difficulty = Difficulty.Easy

    def __post_init__(self) -> None:
        if len(self.center) != 3 or len(self.dims) != 3:
            raise ValueError("center and dims must be 3-vectors")
        if not all(math.isfinite(v) for v in self.center):
            raise ValueError(f"center must be finite, got {self.center}")
        if not all(d > 0 for d in self.dims):
            raise ValueError(f"dims must be strictly positive, got {self.dims}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def depth(self) -> float:
        return self.center[2]

    @property
    def volume(self) -> float:
        h, w, l = self.dims
        return h * w * l


@dataclass(frozen=True)
class Box2D:
    """Axis aligned image box in normalized (cx, cy, w, h)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center outside the image: ({self.cx}, {self.cy})")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box size must be positive: ({self.w}, {self.h})")

    def to_xyxy(self) -> Tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    height_above_ground: float = 0.0
    pitch: float = 0.0
    image_size: Tuple[int, int] = (256, 160)  # (W, H)
    # ground footprint (x, z) of the camera in the scene's world frame
    position: Vec2 = field(default=(0.0, 0.0))

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ValueError(f"invalid image size {self.image_size}")
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    @property
    def horizontal_fov(self) -> float:
        return 2.0 * math.atan(self.width / (2.0 * self.fx))

    def rotation(self) -> np.ndarray:
        """Level frame to camera frame rotation; negative pitch looks down."""
        c, s = math.cos(self.pitch), math.sin(self.pitch)
        return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])

    def world_to_level(self, points: np.ndarray) -> np.ndarray:
        """Moves world-frame points (..., 3) into this camera's level frame."""
        offset = np.array([self.position[0], -self.height_above_ground, self.position[1]])
        return np.asarray(points, dtype=np.float64) - offset

    def level_to_world(self, points: np.ndarray) -> np.ndarray:
        offset = np.array([self.position[0], -self.height_above_ground, self.position[1]])
        return np.asarray(points, dtype=np.float64) + offset

    def cropped(self, x0: float, y0: float, scale: float) -> "CameraModel":
        """Camera seeing the crop starting at pixel (x0, y0) resized by `scale`."""
        return CameraModel(
            fx=self.fx * scale,
            fy=self.fy * scale,
            cx=(self.cx - x0) * scale,
            cy=(self.cy - y0) * scale,
            height_above_ground=self.height_above_ground,
            pitch=self.pitch,
            image_size=self.image_size,
            position=self.position,
        )


@dataclass(frozen=True)
class Label:
    box3d: Box3D
    box2d: Box2D
    object_id: int
    albedo: Vec3

    @property
    def difficulty(self) -> Difficulty:
        return self.box3d.difficulty


@dataclass(frozen=True)
class Detection:
    box3d: Box3D
    box2d: Box2D
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be a probability, got {self.score}")


def project_points(points: np.ndarray, cam: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    """Projects level-frame points (n, 3) to pixels; returns (uv pixels, camera z)."""
    pts = np.asarray(points, dtype=np.float64) @ cam.rotation().T
    z = pts[:, 2]
    safe = np.where(np.abs(z) < 1e-9, 1e-9, z)
    u = cam.fx * pts[:, 0] / safe + cam.cx
    v = cam.fy * pts[:, 1] / safe + cam.cy
    return np.stack([u, v], axis=1), z


def project_center(box: Box3D, cam: CameraModel) -> Tuple[float, float]:
    uv, z = project_points(np.asarray([box.center]), cam)
    if z[0] <= 0:
        raise NonPositiveDepthError(f"center {box.center} is behind the camera (z={z[0]:.3f})")
    return (float(uv[0, 0] / cam.width), float(uv[0, 1] / cam.height))


def unproject_center(uv: Vec2, depth: float, cam: CameraModel) -> Vec3:
    """Inverse of project_center for a known level-frame depth."""
    ray = np.array(
        [
            (uv[0] * cam.width - cam.cx) / cam.fx,
            (uv[1] * cam.height - cam.cy) / cam.fy,
            1.0,
        ]
    )
    level_ray = cam.rotation().T @ ray
    if level_ray[2] <= 0:
        raise NonPositiveDepthError(f"pixel ray {uv} does not point forward")
    point = level_ray * (depth / level_ray[2])
    return (float(point[0]), float(point[1]), float(point[2]))


def box_corners(box: Box3D) -> np.ndarray:
    """Returns the 8 corners (8, 3); first four are the top face (smaller y)."""
    h, w, l = box.dims
    xs = np.array([1, 1, -1, -1, 1, 1, -1, -1]) * (l / 2)
    ys = np.array([-1, -1, -1, -1, 1, 1, 1, 1]) * (h / 2)
    zs = np.array([1, -1, -1, 1, 1, -1, -1, 1]) * (w / 2)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return (rot @ np.stack([xs, ys, zs])).T + np.asarray(box.center)


def bev_polygon(box: Box3D) -> Polygon:
    footprint = box_corners(box)[:4][:, [0, 2]]
    return Polygon([(float(x), float(z)) for x, z in footprint])


def iou_2d(a: Box2D, b: Box2D) -> float:
    ax0, ay0, ax1, ay1 = a.to_xyxy()
    bx0, by0, bx1, by1 = b.to_xyxy()
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return float(min(1.0, max(0.0, inter / union)))


def _bev_overlap(a: Box3D, b: Box3D) -> float:
    if a.center[0] == b.center[0] and a.center[2] == b.center[2] and a.yaw == b.yaw and a.dims[1:] == b.dims[1:]:
        return a.dims[1] * a.dims[2]
    return float(bev_polygon(a).intersection(bev_polygon(b)).area)


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = _bev_overlap(a, b)
    union = a.dims[1] * a.dims[2] + b.dims[1] * b.dims[2] - inter
    return float(min(1.0, max(0.0, inter / union)))


def iou_3d(a: Box3D, b: Box3D) -> float:
    top = max(a.center[1] - a.dims[0] / 2, b.center[1] - b.dims[0] / 2)
    bottom = min(a.center[1] + a.dims[0] / 2, b.center[1] + b.dims[0] / 2)
    overlap_h = max(0.0, bottom - top)
    if overlap_h == 0.0:
        return 0.0
    inter = _bev_overlap(a, b) * overlap_h
    union = a.volume + b.volume - inter
    return float(min(1.0, max(0.0, inter / union)))
