"""Synthetic fixtures and brute-force oracles.

Everything here is a pure function of its seed. The ``brute_force_*``
functions are deliberately naive reference implementations used to check the
fast paths in :mod:`rasterizer`, :mod:`inpaint` and :mod:`triplane`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import DEFAULT_FOCAL_NORMALIZED, FLIP_YZ, Camera, FacePose, project_points, transform_points
from .fitting import LandmarkTrack
from .morphable import MorphableModel, compute_ncc, reconstruct_vertices, select_keypoints
from .triplane import TriPlane
from .volume import MLP_HIDDEN, AnalyticDecoder, MlpDecoder


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    rows: int = 30                 # latitude samples of the face patch
    cols: int = 40                 # longitude samples
    d_id: int = 80
    d_exp: int = 64
    radii: tuple = (0.26, 0.32, 0.24)
    id_amplitude: float = 0.01     # max vertex displacement of one identity component
    exp_amplitude: float = 0.01
    bumps_per_component: int = 3
    bump_width: float = 0.08

    @property
    def vertex_count(self) -> int:
        return self.rows * self.cols

    @property
    def triangle_count(self) -> int:
        return 2 * (self.rows - 1) * (self.cols - 1)


def _f32(a):
    """Round to float32-representable values so saved models reload exactly."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _farthest_point_subset(points, count, start):
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen)


def _smooth_basis(rng, verts, n_comp, amplitude, n_bumps, width):
    n = verts.shape[0]
    basis = np.zeros((n, 3, n_comp))
    for k in range(n_comp):
        field = np.zeros((n, 3))
        for _ in range(n_bumps):
            c = verts[rng.integers(n)]
            direction = rng.normal(size=3)
            weight = np.exp(-np.sum((verts - c) ** 2, axis=1) / (2 * width ** 2))
            field += weight[:, None] * direction
        field *= amplitude / np.abs(field).max()
        basis[:, :, k] = field
    return basis.reshape(3 * n, n_comp)


def make_model(spec: SyntheticSpec = SyntheticSpec()) -> MorphableModel:
    """Open ellipsoidal face patch facing +z with smooth random bases."""
    rng = np.random.default_rng(spec.seed)
    lat = np.linspace(-np.radians(55), np.radians(55), spec.rows)
    lon = np.linspace(-np.radians(70), np.radians(70), spec.cols)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    a, b, c = spec.radii
    mean = np.stack([a * np.cos(la) * np.sin(lo), b * np.sin(la), c * np.cos(la) * np.cos(lo)], -1)
    mean = mean.reshape(-1, 3)
    # small nose so the profile is not a pure ellipsoid
    mean[:, 2] += 0.04 * np.exp(-(mean[:, 0] ** 2 + (mean[:, 1] + 0.02) ** 2) / (2 * 0.04 ** 2))
    mean = _f32(mean)

    tris = []
    for r in range(spec.rows - 1):
        for q in range(spec.cols - 1):
            v00 = r * spec.cols + q
            v01, v10, v11 = v00 + 1, v00 + spec.cols, v00 + spec.cols + 1
            tris.append((v00, v01, v11))
            tris.append((v00, v11, v10))
    tris = np.array(tris, dtype=np.int64)

    id_basis = _f32(_smooth_basis(rng, mean, spec.d_id, spec.id_amplitude,
                                  spec.bumps_per_component, spec.bump_width * 2))
    exp_basis = _f32(_smooth_basis(rng, mean, spec.d_exp, spec.exp_amplitude,
                                   spec.bumps_per_component, spec.bump_width))

    # keypoints: well spread over the central face region
    front = np.flatnonzero(np.abs(lo.ravel()) <= np.radians(55))
    centre = int(np.argmin(np.linalg.norm(mean[front, :2], axis=1)))
    kp68 = front[_farthest_point_subset(mean[front], 68, centre)]
    kp468 = front[_farthest_point_subset(mean[front], 468, centre)]
    return MorphableModel(mean, id_basis, exp_basis, tris, _f32(compute_ncc(mean)),
                          {"kp68": kp68, "kp468": kp468})


def displacement_bound(spec: SyntheticSpec, codes_norm: float = 1.0, which: str = "expression") -> float:
    """Upper bound on any vertex displacement for a code of the given 2-norm.

    Each basis column moves a vertex coordinate by at most ``amplitude``, so a
    vertex moves by at most ``sqrt(3 D) * amplitude * |code|``.
    """
    d, amp = (spec.d_exp, spec.exp_amplitude) if which == "expression" else (spec.d_id, spec.id_amplitude)
    return float(np.sqrt(3 * d) * amp * codes_norm)


def make_identity(spec: SyntheticSpec, scale: float = 0.5) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 1])
    return rng.normal(0.0, scale, spec.d_id)


def make_trajectory(spec: SyntheticSpec, frames: int = 20, yaw_deg: float = 15.0,
                    expression_scale: float = 1.0, distance: float = 2.7):
    """Smooth sinusoidal expressions and a +-yaw sweep.

    Returns ``(expressions (T, D_exp), poses)``; poses map model space into a
    camera frame looking down +z (the face is ``distance`` away).
    """
    rng = np.random.default_rng([spec.seed, 2])
    t = np.linspace(0.0, 1.0, frames)
    freq = rng.uniform(0.3, 1.2, spec.d_exp)
    phase = rng.uniform(0, 2 * np.pi, spec.d_exp)
    amp = expression_scale * rng.uniform(0.3, 1.0, spec.d_exp)
    expressions = amp * np.sin(2 * np.pi * freq * t[:, None] + phase)
    yaw = np.radians(yaw_deg) * np.sin(np.pi * (t - 0.5))          # -yaw .. +yaw
    pitch = np.radians(4.0) * np.sin(2 * np.pi * t)
    roll = np.radians(2.0) * np.cos(2 * np.pi * t)
    poses = []
    for k in range(frames):
        head = Rotation.from_euler("yxz", [yaw[k], pitch[k], roll[k]]).as_matrix()
        trans = np.array([0.02 * np.sin(2 * np.pi * t[k]), 0.01 * np.cos(2 * np.pi * t[k]), distance])
        poses.append(FacePose.from_matrix(FLIP_YZ @ head, trans))
    return expressions, poses


def fitting_camera(size: int = 512) -> Camera:
    """Intrinsics-only camera (identity pose) used for landmark fitting."""
    return Camera(focal=DEFAULT_FOCAL_NORMALIZED * size, principal_point=(size / 2, size / 2),
                  image_size=(size, size), near=0.1, far=100.0)


def synthesize_landmarks(model: MorphableModel, identity, trajectory, camera: Camera,
                         set_name: str = "kp68", noise_px: float = 0.0, seed: int = 0) -> LandmarkTrack:
    """Project the model along a trajectory to produce a ground-truth landmark track.

    Landmarks behind the camera or outside the image are flagged invisible.
    """
    expressions, poses = trajectory
    rng = np.random.default_rng(seed)
    w, h = camera.image_size
    frames, visible = [], []
    for e, pose in zip(expressions, poses):
        kp = select_keypoints(reconstruct_vertices(model, identity, e), set_name, model)
        uv, _, valid = project_points(camera, transform_points(pose, kp))
        if noise_px:
            uv = uv + rng.normal(0, noise_px, uv.shape)
        with np.errstate(invalid="ignore"):
            inside = valid & (uv[:, 0] >= 0) & (uv[:, 0] <= w) & (uv[:, 1] >= 0) & (uv[:, 1] <= h)
        frames.append(np.where(inside[:, None], uv, 0.0))
        visible.append(inside)
    return LandmarkTrack(np.array(frames), np.array(visible), set_name=set_name, image_size=camera.image_size)


# -- volume-rendering scenes ---------------------------------------------------

def make_analytic_scene(name: str, **params):
    """(zero tri-plane, analytic decoder) pair for closed-form rendering checks."""
    return TriPlane.zeros(resolution=2, channels=1), AnalyticDecoder(name, **params)


def make_head_scene(resolution: int = 256, channels: int = 32, seed: int = 0, extent: float = 1.0):
    """A tri-plane + MLP decoder pair that renders an ellipsoidal 'head'.

    Channel 0 of the three planes sums to ``2 - |p / radii|^2 * 2``, which the
    decoder maps to high density inside the ellipsoid and near-vacuum outside.
    Channels 1-3 carry smooth colour patterns; the rest is low-amplitude noise.
    """
    rng = np.random.default_rng(seed)
    g = np.linspace(-extent, extent, resolution)
    radii = np.array([0.3, 0.38, 0.3])
    planes = np.zeros((3, resolution, resolution, channels), dtype=np.float64)
    axes = ((0, 1), (0, 2), (1, 2))
    quad = [(0,), (2,), (1,)]           # which axis each plane contributes to the radial term
    for k, (a, b) in enumerate(axes):
        gb, ga = np.meshgrid(g, g, indexing="ij")    # rows follow axis b, columns axis a
        coords = {a: ga, b: gb}
        ax = quad[k][0]
        planes[k, :, :, 0] = 2.0 / 3.0 - 2.0 * (coords[ax] / radii[ax]) ** 2
        for ch in range(1, min(4, channels)):
            fa, fb = rng.uniform(1, 4, 2)
            planes[k, :, :, ch] = 0.5 * np.sin(fa * ga + fb * gb + rng.uniform(0, 2 * np.pi))
        if channels > 4:
            planes[k, :, :, 4:] = 0.05 * rng.normal(size=(resolution, resolution, channels - 4))
    w0 = np.zeros((channels, MLP_HIDDEN))
    b0 = np.zeros(MLP_HIDDEN)
    w1 = np.zeros((MLP_HIDDEN, 4))
    b1 = np.zeros(4)
    w0[0, 0] = 8.0                       # hidden 0 ~ softplus(8 * radial)
    w1[0, 0] = 1.0
    b1[0] = -9.0                         # exp(-9) fog outside, strong density inside
    for ch in range(1, min(4, channels)):
        w0[ch, ch] = 2.0
        w0[ch, 8 + ch] = -2.0
        w1[ch, ch] = 1.5
        w1[8 + ch, ch] = -1.5
    if channels > 4:
        w0[4:, 16:] = rng.normal(0, 0.1, (channels - 4, MLP_HIDDEN - 16))
        w1[16:, 1:] = rng.normal(0, 0.1, (MLP_HIDDEN - 16, 3))
    return TriPlane(planes.astype(np.float32), extent), MlpDecoder(w0, b0, w1, b1)


def make_diffplane_sequence(cano: TriPlane, frames: int, seed: int = 0, amplitude: float = 0.3):
    """Smooth, temporally sinusoidal diff-planes that bulge the lower face."""
    rng = np.random.default_rng([seed, 3])
    res, ch = cano.resolution, cano.channels
    g = np.linspace(-cano.extent, cano.extent, res)
    gb, ga = np.meshgrid(g, g, indexing="ij")
    base = np.zeros((3, res, res, ch), dtype=np.float32)
    # xy plane: jaw region around y = -0.2
    base[0, :, :, 0] = np.exp(-((ga / 0.15) ** 2 + ((gb + 0.2) / 0.1) ** 2))
    base[0, :, :, 1:4] = rng.normal(0, 0.2, 3) * base[0, :, :, :1]
    phase = np.linspace(0, 2 * np.pi, frames, endpoint=False)
    return [TriPlane(base * np.float32(amplitude * np.sin(p)), cano.extent) for p in phase]


# -- brute-force oracles -----------------------------------------------------

def brute_force_rasterize(vertices, triangles, vertex_colors, camera: Camera):
    """Exhaustive pixels x triangles coverage test followed by a depth sort.

    Returns ``(triangle_ids, pixels, depth)`` with -1 / 0 / +inf where uncovered.
    Floating-point expressions mirror the rasterizer term by term so the two
    agree bit for bit.
    """
    w, h = camera.image_size
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    cols = np.asarray(vertex_colors, dtype=np.float64).reshape(-1, 3)
    ids = np.full((h, w), -1, dtype=np.int64)
    pixels = np.zeros((h, w, 3))
    depth = np.full((h, w), np.inf)
    if tris.shape[0] == 0:
        return ids, pixels, depth
    uv, z_v, _ = project_points(camera, verts)

    cand = []
    for k, (i0, i1, i2) in enumerate(tris):
        zs = [z_v[i0], z_v[i1], z_v[i2]]
        if min(zs) < camera.near:
            continue
        p = [(uv[i, 0], uv[i, 1], z_v[i], cols[i]) for i in (i0, i1, i2)]
        area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0])
        if area < 0:
            p = [p[0], p[2], p[1]]
            area = -area
        if area == 0:
            continue
        cand.append((k, p, area))
    if not cand:
        return ids, pixels, depth

    px = (np.arange(w) + 0.5)[None, :, None]
    py = (np.arange(h) + 0.5)[:, None, None]
    tx = np.array([[q[0] for q in p] for _, p, _ in cand])   # (T, 3)
    ty = np.array([[q[1] for q in p] for _, p, _ in cand])
    tz = np.array([[q[2] for q in p] for _, p, _ in cand])
    tc = np.array([[q[3] for q in p] for _, p, _ in cand])   # (T, 3, 3)
    area = np.array([a for _, _, a in cand])

    def edge(a, b):
        xa, ya, xb, yb = tx[:, a], ty[:, a], tx[:, b], ty[:, b]
        e = (xb - xa) * (py - ya) - (yb - ya) * (px - xa)
        top_left = ((yb - ya == 0) & (xb > xa)) | (yb - ya < 0)
        return e, (e > 0) | ((e == 0) & top_left)

    e12, in12 = edge(1, 2)
    e20, in20 = edge(2, 0)
    e01, in01 = edge(0, 1)
    covered = in12 & in20 & in01                       # (H, W, T)
    w0 = e12 / area / tz[:, 0]
    w1 = e20 / area / tz[:, 1]
    w2 = e01 / area / tz[:, 2]
    with np.errstate(divide="ignore"):
        z = 1.0 / (w0 + w1 + w2)
    z_masked = np.where(covered, z, np.inf)
    best = np.argmin(z_masked, axis=2)                 # first minimum = lowest index
    any_cov = covered.any(axis=2)
    rr, cc = np.nonzero(any_cov)
    k = best[rr, cc]
    zz = z[rr, cc, k]
    b0, b1, b2 = w0[rr, cc, k] * zz, w1[rr, cc, k] * zz, w2[rr, cc, k] * zz
    c = tc[k]
    pixels[rr, cc] = b0[:, None] * c[:, 0, :] + b1[:, None] * c[:, 1, :] + b2[:, None] * c[:, 2, :]
    depth[rr, cc] = zz
    ids[rr, cc] = np.array([cand[j][0] for j in k], dtype=np.int64)
    return ids, pixels, depth


def brute_force_knn(image, foreground, k: int = 1):
    """O(F * B) nearest-background search; ties go to the lower row-major index."""
    img = np.asarray(image)
    fg = np.asarray(foreground, bool)
    out = img.copy()
    bg_r, bg_c = np.nonzero(~fg)
    bg_colors = img[bg_r, bg_c]
    bg_index = bg_r * fg.shape[1] + bg_c
    for r, c in zip(*np.nonzero(fg)):
        d2 = (bg_r - r) ** 2 + (bg_c - c) ** 2
        order = np.lexsort((bg_index, d2))[:k]
        out[r, c] = bg_colors[order].mean(axis=0) if k > 1 else bg_colors[order[0]]
    return out


def brute_force_sample(triplane: TriPlane, point, aggregation: str = "sum"):
    """Scalar gather-and-lerp tri-plane lookup for a single point."""
    res, ch, ext = triplane.resolution, triplane.channels, triplane.extent
    total = [0.0] * ch
    for k, (a, b) in enumerate(((0, 1), (0, 2), (1, 2))):
        coords = []
        for axis in (a, b):
            s = (float(point[axis]) / ext + 1.0) * 0.5 * (res - 1)
            s = min(max(s, 0.0), res - 1.0)
            i0 = min(int(np.floor(s)), res - 2)
            coords.append((i0, s - i0))
        (ca, fa), (cb, fb) = coords
        for c in range(ch):
            v00 = float(triplane.planes[k, cb, ca, c])
            v01 = float(triplane.planes[k, cb, ca + 1, c])
            v10 = float(triplane.planes[k, cb + 1, ca, c])
            v11 = float(triplane.planes[k, cb + 1, ca + 1, c])
            total[c] += (1 - fb) * ((1 - fa) * v00 + fa * v01) + fb * ((1 - fa) * v10 + fa * v11)
    out = np.array(total)
    return out / 3 if aggregation == "mean" else out


def random_raster_scene(seed: int, max_size: int = 64, max_triangles: int = 50):
    """Random triangles in front of a random camera, with deliberate edge cases.

    Some vertices are snapped so that edges pass exactly through pixel centres,
    some triangles share edges, and some overlap at identical depth.
    """
    rng = np.random.default_rng(seed)
    w = int(rng.integers(4, max_size + 1))
    h = int(rng.integers(4, max_size + 1))
    n_tri = int(rng.integers(0, max_triangles + 1))
    cam = Camera(focal=float(w), principal_point=(w / 2, h / 2), image_size=(w, h), near=0.5, far=10.0)
    verts, tris, colors = [], [], []

    def unproject(u, v, z):
        return [(u - w / 2) * z / cam.focal, (v - h / 2) * z / cam.focal, z]

    while len(tris) < n_tri:
        kind = rng.integers(4)
        z = rng.uniform(1.0, 4.0, 3) if kind != 3 else np.full(3, rng.choice([1.5, 2.0]))
        uv = rng.uniform(-0.2, 1.2, (3, 2)) * (w, h)
        if kind == 1:
            uv = np.floor(uv) + 0.5                      # vertices on pixel centres
        base = len(verts)
        for (u, v), zz in zip(uv, z):
            verts.append(unproject(u, v, zz))
            colors.append(rng.uniform(0, 1, 3))
        tris.append((base, base + 1, base + 2))
        if kind == 1 and len(tris) < n_tri:
            # neighbour sharing edge (1, 2)
            u4 = np.floor(rng.uniform(0, 1, 2) * (w, h)) + 0.5
            verts.append(unproject(u4[0], u4[1], rng.uniform(1.0, 4.0)))
            colors.append(rng.uniform(0, 1, 3))
            tris.append((base + 1, len(verts) - 1, base + 2))
    verts = np.array(verts, dtype=np.float64).reshape(-1, 3)
    colors = np.array(colors).reshape(-1, 3)
    tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return verts, tris, colors, cam


def random_inpaint_instance(seed: int, min_size: int = 32, max_size: int = 64):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(min_size, max_size + 1, 2)
    image = rng.uniform(0, 1, (h, w, 3)).astype(np.float32)
    kind = seed % 3
    if kind == 0:
        fg = rng.uniform(size=(h, w)) < rng.uniform(0.1, 0.9)
    else:
        rr, cc = np.mgrid[:h, :w]
        fg = np.zeros((h, w), bool)
        for _ in range(int(rng.integers(1, 4))):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            rad = rng.uniform(3, min(h, w) / 2)
            fg |= (rr - cy) ** 2 + (cc - cx) ** 2 < rad ** 2
    if fg.all():
        fg[0, 0] = False
    return image, fg
