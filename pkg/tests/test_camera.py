import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from portrait_forge.camera import (DEFAULT_RADIUS, RADIUS_RANGE, Camera, FacePose, canonical_camera,
                                   generate_rays, project_points, transform_points)
from portrait_forge.errors import DataError

seeds = st.integers(0, 2 ** 31 - 1)


def random_pose(rng):
    return FacePose.from_rotvec(rng.normal(size=3), rng.normal(size=3))


def test_identity_pose():
    pts = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(transform_points(FacePose.identity(), pts), pts)


def test_pure_translation():
    np.testing.assert_array_equal(transform_points(FacePose(translation=(1, 0, 0)), [[0, 0, 0]]), [[1, 0, 0]])


@given(seeds)
def test_transform_matches_homogeneous(seed):
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    pts = rng.normal(size=(10, 3))
    m = np.eye(4)
    m[:3, :3] = pose.rotation
    m[:3, 3] = pose.t
    homo = np.hstack([pts, np.ones((10, 1))]) @ m.T
    np.testing.assert_allclose(transform_points(pose, pts), homo[:, :3], atol=1e-12)


@given(seeds)
def test_isometry(seed):
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    pts = rng.normal(size=(8, 3))
    q = transform_points(pose, pts)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(q[:, None] - q[None], axis=-1)
    np.testing.assert_allclose(d1, d0, rtol=1e-9, atol=1e-12)


@given(seeds)
def test_rotation_is_orthonormal(seed):
    r = random_pose(np.random.default_rng(seed)).rotation
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(r) - 1) < 1e-12


def test_pose_rejects_non_rotation():
    with pytest.raises(DataError):
        FacePose.from_matrix(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(DataError):
        FacePose.from_matrix(np.eye(3) * 1.01)
    with pytest.raises(DataError):
        FacePose((0, 0, 0, 0))


@given(seeds)
def test_compose_inverse_perturb(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pose(rng), random_pose(rng)
    pts = rng.normal(size=(4, 3))
    np.testing.assert_allclose(transform_points(a.compose(b), pts),
                               transform_points(a, transform_points(b, pts)), atol=1e-10)
    np.testing.assert_allclose(transform_points(a.inverse(), transform_points(a, pts)), pts, atol=1e-10)
    w, dt = rng.normal(size=3) * 0.1, rng.normal(size=3)
    p = a.perturbed(w, dt)
    np.testing.assert_allclose(p.rotation, Rotation.from_rotvec(w).as_matrix() @ a.rotation, atol=1e-12)
    np.testing.assert_allclose(p.t, a.t + dt, atol=1e-12)


def simple_camera(w=64, h=48, f=50.0):
    return Camera(focal=f, principal_point=(w / 2, h / 2), image_size=(w, h), near=0.1, far=10)


def test_projection_examples():
    cam = simple_camera()
    uv, z, valid = project_points(cam, [[0, 0, 1], [1, 0, 1]])
    np.testing.assert_array_equal(uv, [[32, 24], [82, 24]])
    np.testing.assert_array_equal(z, [1, 1])
    assert valid.all()


def test_behind_camera_flagged():
    uv, z, valid = project_points(simple_camera(), [[0, 0, -1], [0, 0, 0], [0, 0, 2]])
    assert list(valid) == [False, False, True]
    assert np.isnan(uv[:2]).all() and np.isfinite(uv[2]).all()


@given(seeds)
def test_projection_matches_matrix(seed):
    rng = np.random.default_rng(seed)
    cam = Camera.orbit(64, radius=rng.uniform(*RADIUS_RANGE), yaw=rng.uniform(-1, 1), pitch=rng.uniform(-0.5, 0.5))
    pts = rng.uniform(-0.5, 0.5, (20, 3))
    ext = np.hstack([cam.pose.rotation, cam.pose.t[:, None]])
    p = cam.intrinsic_matrix() @ ext @ np.hstack([pts, np.ones((20, 1))]).T
    uv, _, _ = project_points(cam, pts)
    np.testing.assert_allclose(uv, (p[:2] / p[2]).T, rtol=1e-10, atol=1e-9)


def test_camera_validation():
    with pytest.raises(DataError, match="radius"):
        Camera.orbit(64, radius=2.3)
    with pytest.raises(DataError, match="radius"):
        Camera.orbit(64, radius=5.01)
    for r in (RADIUS_RANGE[0], 3.5, RADIUS_RANGE[1]):
        assert Camera.orbit(64, radius=r).radius == r
    with pytest.raises(DataError):
        Camera(focal=-1.0, image_size=(4, 4))
    with pytest.raises(DataError):
        Camera(focal=1.0, image_size=(4, 4), near=2.0, far=1.0)


def test_orbit_camera_geometry():
    cam = Camera.orbit(128, radius=3.0, yaw=0.4)
    assert np.isclose(np.linalg.norm(cam.center), 3.0)
    uv, z, _ = project_points(cam, [[0, 0, 0]])
    np.testing.assert_allclose(uv[0], [64, 64], atol=1e-9)
    assert np.isclose(z[0], 3.0)
    # world up maps to image up (smaller row index)
    uv_up, _, _ = project_points(cam, [[0, 0.1, 0]])
    assert uv_up[0, 1] < 64


def test_canonical_camera():
    cam = canonical_camera(256)
    np.testing.assert_allclose(cam.center, [0, 0, DEFAULT_RADIUS], atol=1e-12)
    assert cam.principal_point == (128.0, 128.0)


def test_center_ray_on_axis():
    cam = simple_camera(5, 5)
    rays = generate_rays(cam)
    np.testing.assert_allclose(rays.directions[12], [0, 0, 1], atol=1e-15)


def test_two_by_two_symmetry():
    rays = generate_rays(simple_camera(2, 2))
    assert len(rays) == 4
    d = rays.directions
    np.testing.assert_allclose(d[0] * [-1, -1, 1], d[3], atol=1e-15)
    np.testing.assert_allclose(d[1] * [-1, -1, 1], d[2], atol=1e-15)
    np.testing.assert_allclose(d[0] * [-1, 1, 1], d[1], atol=1e-15)


@given(seeds, st.floats(0.5, 5.0))
def test_ray_round_trip(seed, depth):
    rng = np.random.default_rng(seed)
    cam = Camera.orbit((24, 16), radius=rng.uniform(*RADIUS_RANGE), yaw=rng.uniform(-1, 1),
                       pitch=rng.uniform(-0.5, 0.5))
    rays = generate_rays(cam)
    np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0, atol=1e-9)
    pts = rays.origins + depth * rays.directions
    uv, _, _ = project_points(cam, pts)
    cols, rows = np.meshgrid(np.arange(24) + 0.5, np.arange(16) + 0.5)
    centres = np.stack([cols.ravel(), rows.ravel()], 1)
    assert np.abs(uv - centres).max() < 0.5
    assert np.abs(uv - centres).max() < 1e-8


def test_rays_at_other_resolution():
    cam = Camera.orbit(128)
    r = generate_rays(cam, 32)
    assert (r.width, r.height) == (32, 32)
    assert r.t_near == cam.near and r.t_far == cam.far
    small = cam.resized(32, 32)
    assert small.focal == cam.focal / 4 and small.principal_point == (16.0, 16.0)
    np.testing.assert_array_equal(r.directions, generate_rays(small).directions)
