from __future__ import annotations

import math
from dataclasses import dataclass
from logging import getLogger
from typing import Optional, Tuple

import numpy as np

from ..core import Box3D, CameraModel, CrossViewError, bev_polygon

logger = getLogger(__name__)

Vec3 = Tuple[float, float, float]


class PlacementError(CrossViewError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    image_width: int = 256
    image_height: int = 160
    focal: float = 200.0
    # lane centers (world x, meters); negative lanes carry oncoming traffic
    lanes: Tuple[float, ...] = (-5.25, -1.75, 1.75, 5.25)
    road_start: float = 4.0
    road_extent: float = 90.0
    # traffic clusters around the intersection the roadside pole watches
    traffic_center: float = 40.0
    traffic_spread: float = 14.0
    min_objects: int = 1
    max_objects: int = 6
    placement_attempts: int = 200
    min_gap: float = 0.5
    vehicle_height: float = 1.5
    vehicle_pitch_deg: float = 0.0
    roadside_height: Tuple[float, float] = (5.0, 7.0)
    roadside_pitch_deg: Tuple[float, float] = (-20.0, -10.0)
    roadside_offset_x: Tuple[float, float] = (6.5, 8.5)
    roadside_offset_z: Tuple[float, float] = (20.0, 30.0)
    # provisional difficulty depth bands, replaced by per-domain terciles on build
    depth_bands: Tuple[float, float] = (20.0, 40.0)
    n_roadside: int = 40
    n_vehicle: int = 160
    n_roadside_val: int = 20
    n_vehicle_val: int = 20
    seed: int = 0
    resample_attempts: int = 20
    workers: int = 1
    crop_prob: float = 0.5
    crop_min_scale: float = 0.8

    def __post_init__(self) -> None:
        if self.image_width % 32 or self.image_height % 32:
            raise ValueError("image size must be divisible by 32")
        if self.max_objects < 1 or self.min_objects < 1 or self.min_objects > self.max_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")
        if not self.lanes:
            raise ValueError("at least one lane is required")
        if self.road_extent <= self.road_start:
            raise ValueError("road_extent must exceed road_start")
        if min(self.roadside_height) <= self.vehicle_height:
            raise ValueError("roadside cameras must be mounted above the vehicle camera")
        if min(self.n_roadside, self.n_vehicle, self.n_roadside_val, self.n_vehicle_val) < 0:
            raise ValueError("sample counts must be non-negative")
        if not 0.0 < self.crop_min_scale <= 1.0:
            raise ValueError("crop_min_scale must be in (0, 1]")


@dataclass(frozen=True)
class Scene:
    """Objects in the world frame: origin on the ground, x right, y down, z forward."""

    objects: Tuple[Box3D, ...]
    albedos: Tuple[Vec3, ...]
    road_extent: float
    seed: int


def _sample_dims(rng: np.random.Generator) -> Vec3:
    return (
        float(rng.uniform(1.40, 1.70)),
        float(rng.uniform(1.70, 2.00)),
        float(rng.uniform(3.80, 4.80)),
    )


def generate_scene(config: SynthConfig, seed: int) -> Scene:
    """Places cars in lanes by rejection sampling; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    target = int(rng.integers(config.min_objects, config.max_objects + 1))
    objects: list[Box3D] = []
    albedos: list[Vec3] = []
    footprints = []
    attempts = 0
    while len(objects) < target:
        attempts += 1
        if attempts > config.placement_attempts:
            raise PlacementError(
                f"placed {len(objects)}/{target} objects after {config.placement_attempts} attempts (seed={seed})"
            )
        lane = float(config.lanes[int(rng.integers(len(config.lanes)))])
        z = float(
            np.clip(
                rng.normal(config.traffic_center, config.traffic_spread),
                config.road_start,
                config.road_extent,
            )
        )
        dims = _sample_dims(rng)
        heading = math.pi / 2 if lane < 0 else -math.pi / 2
        candidate = Box3D(
            center=(lane + float(rng.normal(0.0, 0.2)), -dims[0] / 2, z),
            dims=dims,
            yaw=heading + float(rng.normal(0.0, 0.05)),
        )
        polygon = bev_polygon(candidate)
        if any(polygon.buffer(config.min_gap).intersects(other) for other in footprints):
            continue
        objects.append(candidate)
        footprints.append(polygon)
        albedos.append(tuple(float(v) for v in rng.uniform(0.15, 0.95, size=3)))  # type: ignore[misc]

    logger.debug("scene %s: %d objects after %d attempts", seed, len(objects), attempts)
    return Scene(objects=tuple(objects), albedos=tuple(albedos), road_extent=config.road_extent, seed=seed)


def vehicle_camera(config: SynthConfig) -> CameraModel:
    return CameraModel(
        fx=config.focal,
        fy=config.focal,
        cx=config.image_width / 2,
        cy=config.image_height / 2,
        height_above_ground=config.vehicle_height,
        pitch=math.radians(config.vehicle_pitch_deg),
        image_size=(config.image_width, config.image_height),
    )


def roadside_camera(config: SynthConfig, rng: Optional[np.random.Generator] = None) -> CameraModel:
    """Pole-mounted camera beside the road; pose randomized per scene."""
    if rng is None:
        height = sum(config.roadside_height) / 2
        pitch = sum(config.roadside_pitch_deg) / 2
        position = (sum(config.roadside_offset_x) / 2, sum(config.roadside_offset_z) / 2)
    else:
        height = float(rng.uniform(*config.roadside_height))
        pitch = float(rng.uniform(*config.roadside_pitch_deg))
        position = (float(rng.uniform(*config.roadside_offset_x)), float(rng.uniform(*config.roadside_offset_z)))
    return CameraModel(
        fx=config.focal,
        fy=config.focal,
        cx=config.image_width / 2,
        cy=config.image_height / 2,
        height_above_ground=height,
        pitch=math.radians(pitch),
        image_size=(config.image_width, config.image_height),
        position=position,
    )
