from __future__ import annotations

import itertools
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from crossview.const import BACKGROUND_DEPTH, DEPTH_MAX, DEPTH_MIN, MANIFEST_FILE, Split
from crossview.core import Box3D, CameraModel, Difficulty, Domain, iou_bev, project_center, unproject_center
from crossview.synthdata import (
    DatasetIOError,
    DatasetManifest,
    EmptyViewError,
    Scene,
    SynthConfig,
    build_dataset,
    depth_gap_statistic,
    generate_scene,
    load_manifest,
    load_sample,
    random_crop,
    read_depth_map,
    render_view,
    vehicle_camera,
    write_depth_map,
)
from crossview.synthdata.dataset import render_sample
from crossview.synthdata.render import label_for_box, rasterize_depth


def _scene(*centers, dims=(1.5, 1.8, 4.0)) -> Scene:
    objects = tuple(Box3D(center=(x, -dims[0] / 2, z), dims=dims, yaw=0.0) for x, z in centers)
    albedos = tuple((0.2 + 0.1 * i, 0.5, 0.7) for i in range(len(objects)))
    return Scene(objects=objects, albedos=albedos, road_extent=90.0, seed=0)


def test_generate_scene_is_deterministic() -> None:
    config = SynthConfig()
    assert generate_scene(config, 0) == generate_scene(config, 0)


def test_generate_scene_single_object() -> None:
    assert len(generate_scene(SynthConfig(max_objects=1), 3).objects) == 1


def test_generated_objects_never_overlap() -> None:
    config = SynthConfig()
    for seed in range(200):
        objects = generate_scene(config, seed).objects
        for a, b in itertools.combinations(objects, 2):
            assert iou_bev(a, b) == 0.0


def test_render_object_on_principal_axis(small_synth: SynthConfig) -> None:
    sample = render_view(_scene((0.0, 10.0)), vehicle_camera(small_synth), Domain.Vehicle)
    assert len(sample.labels) == 1
    assert sample.labels[0].box2d.cx == pytest.approx(0.5)
    assert sample.image.shape == (small_synth.image_height, small_synth.image_width, 3)
    assert sample.image.dtype == np.float32
    assert sample.depth_gt.shape == (small_synth.image_height // 16, small_synth.image_width // 16)


def test_both_views_label_the_same_objects(small_synth: SynthConfig) -> None:
    scene = _scene((0.0, 25.0))
    roadside = CameraModel(
        fx=100.0,
        fy=100.0,
        cx=64.0,
        cy=48.0,
        height_above_ground=6.0,
        pitch=math.radians(-15.0),
        image_size=(128, 96),
    )
    vehicle = render_view(scene, vehicle_camera(small_synth), Domain.Vehicle)
    road = render_view(scene, roadside, Domain.Roadside)
    assert len(vehicle.labels) == len(road.labels) == 1
    assert vehicle.labels[0].albedo == road.labels[0].albedo
    assert road.labels[0].box3d.depth == pytest.approx(25.0)


def test_far_objects_are_not_labeled(small_synth: SynthConfig) -> None:
    sample = render_view(_scene((0.0, 20.0), (3.5, 70.0)), vehicle_camera(small_synth), Domain.Vehicle)
    assert [round(label.box3d.depth) for label in sample.labels] == [20]


def test_empty_view_raises(small_synth: SynthConfig) -> None:
    with pytest.raises(EmptyViewError):
        render_view(_scene((0.0, 80.0)), vehicle_camera(small_synth), Domain.Vehicle)


def test_manifest_counts(dataset: DatasetManifest, small_synth: SynthConfig) -> None:
    assert dataset.n_roadside == small_synth.n_roadside
    assert dataset.n_vehicle == small_synth.n_vehicle
    assert len(dataset.select(Domain.Roadside, Split.VAL)) == small_synth.n_roadside_val
    assert len(dataset.select(Domain.Vehicle, Split.VAL)) == small_synth.n_vehicle_val
    assert (dataset.root / MANIFEST_FILE).is_file()


def test_loaded_samples_respect_depth_filter(dataset: DatasetManifest) -> None:
    loaded = load_manifest(dataset.root)
    assert [e.sample_id for e in loaded.entries] == [e.sample_id for e in dataset.entries]
    for entry in loaded.entries:
        sample = load_sample(loaded, entry)
        assert sample.domain is entry.domain
        assert sample.labels
        assert 0.0 <= float(sample.image.min()) and float(sample.image.max()) <= 1.0
        for label in sample.labels:
            assert DEPTH_MIN <= label.box3d.depth <= DEPTH_MAX
        foreground = sample.depth_gt[sample.depth_gt != BACKGROUND_DEPTH]
        assert ((foreground >= DEPTH_MIN) & (foreground <= DEPTH_MAX)).all()


def test_rebuild_is_bitwise_identical(tmp_path: Path) -> None:
    config = SynthConfig(image_width=128, image_height=96, focal=100.0, n_roadside=2, n_vehicle=2,
                         n_roadside_val=0, n_vehicle_val=0, seed=11)
    first = build_dataset(config, tmp_path / "a")
    second = build_dataset(config, tmp_path / "b")
    assert [e.checksums for e in first.entries] == [e.checksums for e in second.entries]


def test_missing_file_is_reported(tmp_path: Path) -> None:
    config = SynthConfig(image_width=128, image_height=96, focal=100.0, n_roadside=1, n_vehicle=1,
                         n_roadside_val=0, n_vehicle_val=0)
    manifest = build_dataset(config, tmp_path)
    (tmp_path / manifest.entries[0].depth).unlink()
    with pytest.raises(DatasetIOError):
        load_manifest(tmp_path)


def test_depth_map_format(tmp_path: Path) -> None:
    depth = np.full((3, 4), BACKGROUND_DEPTH, dtype=np.float32)
    depth[1, 2] = 12.5
    write_depth_map(tmp_path / "d.bin", depth)
    assert (tmp_path / "d.bin").stat().st_size == 8 + 4 * 12
    np.testing.assert_array_equal(read_depth_map(tmp_path / "d.bin"), depth)
    (tmp_path / "short.bin").write_bytes(b"\x03\x00")
    with pytest.raises(DatasetIOError):
        read_depth_map(tmp_path / "short.bin")


def test_domain_gap_statistic(dataset: DatasetManifest) -> None:
    gap = depth_gap_statistic(dataset)
    assert gap is not None
    assert 0.0 <= gap <= 1.0


@pytest.mark.slow
def test_domain_gap_is_large(tmp_path: Path) -> None:
    config = SynthConfig(n_roadside=250, n_vehicle=250, n_roadside_val=0, n_vehicle_val=0, workers=4)
    gap = depth_gap_statistic(build_dataset(config, tmp_path))
    assert gap is not None
    assert gap > 0.2


def test_written_samples_load_back_unchanged(tmp_path: Path) -> None:
    config = SynthConfig(image_width=128, image_height=96, focal=100.0, n_roadside=2, n_vehicle=2,
                         n_roadside_val=1, n_vehicle_val=1, seed=5)
    manifest = build_dataset(config, tmp_path)

    def without_difficulty(labels):
        return tuple(replace(l, box3d=replace(l.box3d, difficulty=Difficulty.Easy)) for l in labels)

    for entry in manifest.entries:
        rendered = render_sample(config, entry.domain, entry.split, entry.index)
        loaded = load_sample(manifest, entry)
        expected_image = np.round(rendered.image * 255).astype(np.uint8).astype(np.float32) / 255.0
        np.testing.assert_array_equal(loaded.image, expected_image)
        assert loaded.depth_gt.dtype == np.float32
        np.testing.assert_array_equal(loaded.depth_gt, rendered.depth_gt)
        assert loaded.cam == rendered.cam
        assert loaded.domain is rendered.domain
        assert loaded.sample_id == rendered.sample_id == entry.sample_id
        assert without_difficulty(loaded.labels) == without_difficulty(rendered.labels)


def test_depth_cell_at_projected_center_back_projects(camera: CameraModel) -> None:
    box = Box3D(center=(1.0, 0.5, 12.0), dims=(1.5, 1.8, 4.0), yaw=0.0)
    label = label_for_box(box, camera, 0, (0.5, 0.5, 0.5))
    assert label is not None
    depth = rasterize_depth((label,), camera)
    u, v = project_center(box, camera)
    cell = depth[int(v * depth.shape[0]), int(u * depth.shape[1])]
    assert cell == 12.0
    assert unproject_center((u, v), float(cell), camera) == pytest.approx(box.center, abs=1e-9)


def test_loaded_depth_maps_back_project_to_their_labels(dataset: DatasetManifest) -> None:
    checked = 0
    for entry in dataset.entries:
        sample = load_sample(dataset, entry)
        rows, cols = sample.depth_gt.shape
        for label in sample.labels:
            u, v = project_center(label.box3d, sample.cam)
            r, c = min(int(v * rows), rows - 1), min(int(u * cols), cols - 1)
            y, x = (r + 0.5) / rows, (c + 0.5) / cols

            def covers(other) -> bool:
                x0, y0, x1, y1 = other.box2d.to_xyxy()
                return x0 <= x <= x1 and y0 <= y <= y1

            covering = [other for other in sample.labels if covers(other)]
            if label not in covering or min(o.box3d.depth for o in covering) != label.box3d.depth:
                continue
            cell = float(sample.depth_gt[r, c])
            assert cell == pytest.approx(label.box3d.depth, rel=1e-6)
            point = unproject_center((u, v), cell, sample.cam)
            assert point == pytest.approx(label.box3d.center, abs=1e-3)
            checked += 1
    assert checked > 0


def test_random_crop(dataset: DatasetManifest) -> None:
    sample = load_sample(dataset, dataset.select(Domain.Vehicle, Split.TRAIN)[0])
    assert random_crop(sample, np.random.default_rng(0), crop_prob=0.0) is sample

    cropped = random_crop(sample, np.random.default_rng(0), crop_prob=1.0, min_scale=0.8)
    assert cropped.image.shape == sample.image.shape
    assert cropped.depth_gt.shape == sample.depth_gt.shape
    assert cropped.cam.fx >= sample.cam.fx
    for label in cropped.labels:
        assert 0.0 <= label.box2d.cx <= 1.0 and 0.0 <= label.box2d.cy <= 1.0


def test_random_crop_is_seeded(dataset: DatasetManifest) -> None:
    sample = load_sample(dataset, dataset.select(Domain.Roadside, Split.TRAIN)[0])
    a = random_crop(sample, np.random.default_rng(5), crop_prob=1.0)
    b = random_crop(sample, np.random.default_rng(5), crop_prob=1.0)
    assert a.cam == b.cam
    np.testing.assert_array_equal(a.image, b.image)


def test_synth_config_validation() -> None:
    with pytest.raises(ValueError):
        SynthConfig(image_width=100)
    with pytest.raises(ValueError):
        replace(SynthConfig(), min_objects=4, max_objects=2)
