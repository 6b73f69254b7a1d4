from __future__ import annotations

__all__ = ["scene", "render", "dataset"]

from .scene import PlacementError, Scene, SynthConfig, generate_scene, roadside_camera, vehicle_camera
from .render import DomainSample, EmptyViewError, random_crop, render_view
from .dataset import (
    DatasetIOError,
    DatasetManifest,
    ManifestEntry,
    build_dataset,
    depth_gap_statistic,
    load_manifest,
    load_sample,
    read_depth_map,
    write_depth_map,
)
