from __future__ import annotations

import math

import numpy as np
import pytest

from crossview.core import (
    Box2D,
    Box3D,
    CameraModel,
    Detection,
    Difficulty,
    Domain,
    NonPositiveDepthError,
    box_corners,
    iou_2d,
    iou_3d,
    iou_bev,
    project_center,
    unproject_center,
    wrap_angle,
)


def _car(x: float = 0.0, y: float = 0.0, z: float = 20.0, yaw: float = 0.0, dims=(1.5, 2.0, 4.0)) -> Box3D:
    return Box3D(center=(x, y, z), dims=dims, yaw=yaw)


def test_project_center_principal_axis(camera: CameraModel) -> None:
    assert project_center(_car(0.0, 0.0, 10.0), camera) == pytest.approx((0.5, 0.5))


def test_project_center_pinhole(camera: CameraModel) -> None:
    assert project_center(_car(1.0, 0.0, 10.0), camera) == pytest.approx((0.578125, 0.5))


def test_project_center_behind_camera(camera: CameraModel) -> None:
    with pytest.raises(NonPositiveDepthError):
        project_center(_car(0.0, 0.0, -1.0), camera)


def test_unproject_inverts_project_with_pitch() -> None:
    cam = CameraModel(fx=200.0, fy=200.0, cx=128.0, cy=80.0, height_above_ground=6.0, pitch=-0.25)
    box = _car(1.3, 4.0, 25.0)
    uv = project_center(box, cam)
    assert unproject_center(uv, box.depth, cam) == pytest.approx(box.center, abs=1e-9)


def test_wrap_angle_range_and_idempotence() -> None:
    assert wrap_angle(math.pi) == pytest.approx(-math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    for angle in np.linspace(-20.0, 20.0, 101):
        wrapped = wrap_angle(float(angle))
        assert -math.pi <= wrapped < math.pi
        assert wrap_angle(wrapped) == wrapped


def test_box_validation() -> None:
    with pytest.raises(ValueError):
        _car(dims=(1.5, 0.0, 4.0))
    with pytest.raises(ValueError):
        Box3D(center=(0.0, math.inf, 1.0), dims=(1.0, 1.0, 1.0), yaw=0.0)
    with pytest.raises(ValueError):
        Box2D(cx=1.2, cy=0.5, w=0.1, h=0.1)
    with pytest.raises(ValueError):
        Box2D(cx=0.5, cy=0.5, w=0.0, h=0.1)
    with pytest.raises(ValueError):
        Detection(box3d=_car(), box2d=Box2D(0.5, 0.5, 0.1, 0.1), score=1.5)


def test_box3d_yaw_is_wrapped() -> None:
    assert _car(yaw=3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)


def test_box_corners_top_face_first() -> None:
    corners = box_corners(_car(y=0.0))
    assert corners.shape == (8, 3)
    assert (corners[:4, 1] < corners[4:, 1]).all()


def test_iou_2d_examples() -> None:
    a = Box2D(0.25, 0.25, 0.5, 0.5)
    assert iou_2d(a, a) == pytest.approx(1.0)
    assert iou_2d(Box2D(0.1, 0.1, 0.1, 0.1), Box2D(0.9, 0.9, 0.1, 0.1)) == 0.0
    assert iou_2d(a, Box2D(0.5, 0.5, 0.5, 0.5)) == pytest.approx(0.0625 / (0.5 - 0.0625))


def test_iou_bev_identity_and_square_symmetry() -> None:
    box = _car()
    assert iou_bev(box, box) == pytest.approx(1.0)
    square = _car(dims=(1.5, 3.0, 3.0))
    assert iou_bev(square, _car(dims=(1.5, 3.0, 3.0), yaw=math.pi / 2)) == pytest.approx(1.0)


def _monte_carlo_bev(a: Box3D, b: Box3D, samples: int = 4_000_000, extent: float = 4.0) -> float:
    rng = np.random.default_rng(0)
    pts = rng.uniform(-extent, extent, size=(samples, 2)) + np.array([a.center[0], a.center[2]])

    def inside(box: Box3D) -> np.ndarray:
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        dx, dz = pts[:, 0] - box.center[0], pts[:, 1] - box.center[2]
        along = c * dx - s * dz
        across = s * dx + c * dz
        return (np.abs(along) <= box.dims[2] / 2) & (np.abs(across) <= box.dims[1] / 2)

    in_a, in_b = inside(a), inside(b)
    return float((in_a & in_b).sum() / (in_a | in_b).sum())


def test_iou_bev_offset_matches_monte_carlo() -> None:
    a, b = _car(), _car(x=1.0)
    assert iou_bev(a, b) == pytest.approx(0.6)
    assert iou_bev(a, b) == pytest.approx(_monte_carlo_bev(a, b), abs=0.003)


def test_iou_bev_rotated_matches_monte_carlo() -> None:
    a, b = _car(), _car(x=0.5, z=20.7, yaw=0.6)
    assert iou_bev(a, b) == pytest.approx(_monte_carlo_bev(a, b), abs=0.003)


def test_iou_bev_random_pairs_match_monte_carlo() -> None:
    rng = np.random.default_rng(42)
    for _ in range(100):
        dims_a = (1.5, rng.uniform(1.6, 2.0), rng.uniform(3.5, 4.8))
        dims_b = (1.5, rng.uniform(1.6, 2.0), rng.uniform(3.5, 4.8))
        a = _car(yaw=rng.uniform(-math.pi, math.pi), dims=dims_a)
        b = _car(
            x=rng.uniform(-1.5, 1.5),
            z=20.0 + rng.uniform(-1.5, 1.5),
            yaw=rng.uniform(-math.pi, math.pi),
            dims=dims_b,
        )
        expected = _monte_carlo_bev(a, b, samples=2_000_000, extent=5.0)
        assert iou_bev(a, b) == pytest.approx(expected, abs=0.005)


def test_iou_3d_vertical_overlap() -> None:
    box = _car(y=0.0)
    assert iou_3d(box, box) == pytest.approx(1.0)
    assert iou_3d(box, _car(y=1.5)) == 0.0
    assert iou_3d(box, _car(y=0.75)) == pytest.approx(1.0 / 3.0)


def test_iou_is_symmetric() -> None:
    a, b = _car(), _car(x=0.7, z=21.0, yaw=0.3)
    assert iou_3d(a, b) == pytest.approx(iou_3d(b, a))
    assert iou_bev(a, b) == pytest.approx(iou_bev(b, a))


def test_display_enums() -> None:
    assert Domain("roadside") is Domain.Roadside
    assert str(Domain.Vehicle) == "Vehicle-side"
    assert [d.rank for d in Difficulty] == [0, 1, 2]
