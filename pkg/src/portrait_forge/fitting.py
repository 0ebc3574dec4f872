"""Landmark-based morphable-model fitting.

Minimises over a shared identity code, per-frame expression codes and
per-frame poses::

    sum_t |r_t|^2 + l_id |i|^2 + l_exp sum_t |e_t|^2
        + l_lap sum_{interior t} |e_t - (e_{t-1} + e_{t+1}) / 2|^2

where ``r_t`` are pixel reprojection residuals of the selected keypoints.

Two Levenberg-Marquardt schedules are available. ``joint`` (default) solves
for all codes and poses in one damped normal-equation system per iteration.
``alternating`` takes a per-frame pose step followed by a codes-only step; it
is cheaper per iteration but converges slowly when pose and code directions
are coupled. Either way a step is only accepted if the objective decreases.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .camera import Camera, FacePose
from .errors import DataError, DimensionError, NumericalError
from .morphable import MorphableModel, keypoint_indices, reconstruct_vertices

log = logging.getLogger(__name__)

STRATEGIES = ("alternating", "joint")


@dataclass(frozen=True, eq=False)
class LandmarkTrack:
    frames: np.ndarray                       # (T, K, 2) pixels
    visibility: Optional[np.ndarray] = None  # (T, K) bool
    set_name: str = "kp68"
    image_size: Optional[tuple] = None       # (width, height)

    def __post_init__(self):
        try:
            frames = np.asarray(self.frames, dtype=np.float64)
        except ValueError:
            raise DataError("landmark frames must all have the same landmark count") from None
        if frames.ndim != 3 or frames.shape[2] != 2 or frames.shape[0] < 1:
            raise DataError(f"landmark frames must be (T, K, 2) with T >= 1, got {frames.shape}")
        vis = np.ones(frames.shape[:2], bool) if self.visibility is None else np.asarray(self.visibility, bool)
        if vis.shape != frames.shape[:2]:
            raise DataError(f"visibility shape {vis.shape} does not match landmarks {frames.shape[:2]}")
        if np.any(~np.isfinite(frames) & vis[..., None]):
            raise DataError("visible landmarks must be finite")
        if self.image_size is not None:
            w, h = self.image_size
            outside = (frames[..., 0] < 0) | (frames[..., 0] > w) | (frames[..., 1] < 0) | (frames[..., 1] > h)
            if np.any(outside & vis):
                t, k = np.argwhere(outside & vis)[0]
                raise DataError(f"landmark {k} of frame {t} lies outside the image and is not flagged invisible")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "visibility", vis)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class FitConfig:
    lambda_identity: float = 1e-3
    lambda_expression: float = 1e-3
    lambda_laplacian: float = 1e-2
    max_iterations: int = 200
    convergence_tol: float = 1e-10
    damping_init: float = 1e-3
    strategy: str = "joint"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DataError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        for name in ("lambda_identity", "lambda_expression", "lambda_laplacian"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise DataError(f"{name} must be finite and >= 0, got {v}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise DataError("max_iterations must be a positive integer")
        if not self.convergence_tol > 0 or not self.damping_init > 0:
            raise DataError("convergence_tol and damping_init must be positive")


@dataclass(eq=False)
class FitResult:
    identity: np.ndarray
    expressions: np.ndarray          # (T, D_exp)
    poses: list
    final_rmse_px: float
    per_frame_rmse_px: list
    iterations_used: int
    objective: float = float("nan")
    initial_objective: float = float("nan")
    set_name: str = "kp68"
    history: list = field(default_factory=list)


# -- residuals and Jacobians ------------------------------------------------

def _skew(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


class _KeypointModel:
    """Keypoint rows of the model bases, reshaped to (K, 3, D)."""

    def __init__(self, model: MorphableModel, set_name: str):
        idx = keypoint_indices(model, set_name)
        rows = (3 * idx[:, None] + np.arange(3)).ravel()
        self.mean = model.mean_vertices[idx]
        self.b_id = model.identity_basis[rows].reshape(len(idx), 3, -1)
        self.b_exp = model.expression_basis[rows].reshape(len(idx), 3, -1)
        self.n = len(idx)

    def vertices(self, identity, expression):
        return self.mean + self.b_id @ identity + self.b_exp @ expression


def _frame_terms(kpm: _KeypointModel, camera: Camera, identity, expression, pose: FacePose,
                 observed, weights, want_jac: bool):
    verts = kpm.vertices(identity, expression)
    r_face = pose.rotation
    r_cam = camera.pose.rotation
    rv = verts @ r_face.T
    xc = (rv + pose.t) @ r_cam.T + camera.pose.t
    z = xc[:, 2]
    front = z > 0
    w = weights * front
    cx, cy = camera.principal_point
    f = camera.focal
    zs = np.where(front, z, 1.0)
    uv = np.stack([f * xc[:, 0] / zs + cx, f * xc[:, 1] / zs + cy], axis=1)
    resid = (w[:, None] * (uv - np.where(np.isfinite(observed), observed, 0.0))).ravel()
    if not want_jac:
        return resid, None
    dproj = np.zeros((kpm.n, 2, 3))
    dproj[:, 0, 0] = f / zs
    dproj[:, 1, 1] = f / zs
    dproj[:, 0, 2] = -f * xc[:, 0] / zs ** 2
    dproj[:, 1, 2] = -f * xc[:, 1] / zs ** 2
    dproj *= w[:, None, None]
    rc_rf = r_cam @ r_face
    j_id = np.einsum("kij,jl,kld->kid", dproj, rc_rf, kpm.b_id).reshape(2 * kpm.n, -1)
    j_exp = np.einsum("kij,jl,kld->kid", dproj, rc_rf, kpm.b_exp).reshape(2 * kpm.n, -1)
    j_rot = -np.einsum("kij,jl,klm->kim", dproj, r_cam, _skew(rv)).reshape(2 * kpm.n, 3)
    j_t = np.einsum("kij,jl->kil", dproj, r_cam).reshape(2 * kpm.n, 3)
    return resid, (j_id, j_exp, np.hstack([j_rot, j_t]))


def reprojection_residuals(model: MorphableModel, camera: Camera, identity, expression, pose: FacePose,
                           landmarks, set_name: str = "kp68", visibility=None) -> np.ndarray:
    """Flattened ``projected - observed`` pixel residuals, (u0, v0, u1, v1, ...).

    Invisible landmarks and points behind the camera contribute zero.
    """
    kpm = _KeypointModel(model, set_name)
    obs = np.asarray(landmarks, dtype=np.float64)
    if obs.shape != (kpm.n, 2):
        raise DimensionError(f"got {obs.shape[0] if obs.ndim else 0} landmarks for keypoint set "
                             f"{set_name!r} of size {kpm.n}")
    vis = np.ones(kpm.n) if visibility is None else np.asarray(visibility, dtype=np.float64)
    i = np.asarray(identity, dtype=np.float64)
    e = np.asarray(expression, dtype=np.float64)
    if i.shape != (model.d_id,) or e.shape != (model.d_exp,):
        raise DimensionError(f"code lengths {i.shape}, {e.shape} do not match model ({model.d_id}, {model.d_exp})")
    return _frame_terms(kpm, camera, i, e, pose, obs, vis, False)[0]


def residual_jacobian(model: MorphableModel, camera: Camera, identity, expression, pose: FacePose,
                      landmarks, set_name: str = "kp68", visibility=None):
    """Residuals and analytic Jacobians ``(r, J_identity, J_expression, J_pose)``.

    Pose columns are ``(rx, ry, rz, tx, ty, tz)`` for the update
    ``pose.perturbed(rot, trans)``.
    """
    kpm = _KeypointModel(model, set_name)
    obs = np.asarray(landmarks, dtype=np.float64)
    if obs.shape != (kpm.n, 2):
        raise DimensionError(f"landmark array {obs.shape} does not match keypoint set size {kpm.n}")
    vis = np.ones(kpm.n) if visibility is None else np.asarray(visibility, dtype=np.float64)
    r, (j_id, j_exp, j_pose) = _frame_terms(kpm, camera, np.asarray(identity, float),
                                            np.asarray(expression, float), pose, obs, vis, True)
    return r, j_id, j_exp, j_pose


# -- metrics ------------------------------------------------------------------

def expression_laplacian(expressions) -> float:
    """Mean over interior frames of ``|e_t - (e_{t-1} + e_{t+1}) / 2|^2``."""
    e = np.asarray(expressions, dtype=np.float64)
    if e.ndim == 1:
        e = e[:, None]
    if e.shape[0] < 3:
        raise DataError(f"expression Laplacian needs at least 3 frames, got {e.shape[0]}")
    lap = e[1:-1] - 0.5 * (e[:-2] + e[2:])
    return float(np.mean(np.sum(lap * lap, axis=1)))


def landmark_recon_error(model: MorphableModel, identity, expressions_a, expressions_b,
                         set_name: str = "kp468") -> float:
    """Mean squared 3D keypoint distance between two expression sequences."""
    a = np.atleast_2d(np.asarray(expressions_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(expressions_b, dtype=np.float64))
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"sequence lengths differ: {a.shape[0]} vs {b.shape[0]}")
    idx = keypoint_indices(model, set_name)
    total = 0.0
    for ea, eb in zip(a, b):
        d = reconstruct_vertices(model, identity, ea)[idx] - reconstruct_vertices(model, identity, eb)[idx]
        total += np.mean(np.sum(d * d, axis=1))
    return float(total / a.shape[0])


# -- optimiser ----------------------------------------------------------------

def initial_pose(kp_mean, observed, visible, camera: Camera) -> FacePose:
    """Scaled-orthographic (affine) pose estimate refined later by LM."""
    x = kp_mean[visible]
    q = observed[visible] - np.asarray(camera.principal_point)
    if x.shape[0] < 4:
        raise DataError("need at least 4 visible landmarks to initialise the pose")
    centroid = x.mean(axis=0)
    a, *_ = np.linalg.lstsq(np.hstack([x - centroid, np.ones((len(x), 1))]), q, rcond=None)
    m = a[:3].T
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    rows = u @ vh
    rot = np.vstack([rows, np.cross(rows[0], rows[1])])
    scale = s.mean()
    if not scale > 0:
        raise NumericalError("degenerate landmark configuration, cannot initialise pose")
    depth = camera.focal / scale
    t_cam = np.array([a[3, 0] * depth / camera.focal, a[3, 1] * depth / camera.focal, depth]) - rot @ centroid
    cam_pose = FacePose.from_matrix(rot, t_cam, tol=1e-5)
    return camera.pose.inverse().compose(cam_pose)


class _Problem:
    def __init__(self, model, camera, track: LandmarkTrack, config: FitConfig):
        self.kpm = _KeypointModel(model, track.set_name)
        if track.n_landmarks != self.kpm.n:
            raise DimensionError(f"track has {track.n_landmarks} landmarks, keypoint set "
                                 f"{track.set_name!r} has {self.kpm.n}")
        self.camera = camera
        self.config = config
        self.obs = track.frames
        self.vis = track.visibility.astype(np.float64)
        for t in range(track.n_frames):
            if not track.visibility[t].any():
                raise DataError(f"frame {t} has no visible landmarks")
        self.d_id = model.d_id
        self.d_exp = model.d_exp
        self.n_frames = track.n_frames
        n = self.n_frames
        lap = np.zeros((max(n - 2, 0), n))
        for r in range(n - 2):
            lap[r, r:r + 3] = (-0.5, 1.0, -0.5)
        self.lap_gram = lap.T @ lap

    def frame(self, t, identity, expression, pose, want_jac=False):
        return _frame_terms(self.kpm, self.camera, identity, expression, pose,
                            self.obs[t], self.vis[t], want_jac)

    def frame_cost(self, t, identity, expression, pose):
        r = self.frame(t, identity, expression, pose)[0]
        return float(r @ r)

    def regularizer(self, identity, expressions):
        c = self.config
        lap = expressions[1:-1] - 0.5 * (expressions[:-2] + expressions[2:])
        return (c.lambda_identity * float(identity @ identity)
                + c.lambda_expression * float(np.sum(expressions * expressions))
                + c.lambda_laplacian * float(np.sum(lap * lap)))

    def objective(self, identity, expressions, poses):
        data = sum(self.frame_cost(t, identity, expressions[t], poses[t]) for t in range(self.n_frames))
        return data + self.regularizer(identity, expressions)

    def rmse(self, identity, expressions, poses):
        per_frame = []
        sq_total, count = 0.0, 0.0
        for t in range(self.n_frames):
            r = self.frame(t, identity, expressions[t], poses[t])[0]
            n_vis = self.vis[t].sum()
            sq = float(r @ r)
            per_frame.append(float(np.sqrt(sq / n_vis)))
            sq_total += sq
            count += n_vis
        return float(np.sqrt(sq_total / count)), per_frame


def _damped_solve(h, g, mu):
    a = h + mu * np.diag(np.maximum(np.diag(h), 1e-12))
    try:
        return -scipy.linalg.solve(a, g, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return -np.linalg.lstsq(a, g, rcond=None)[0]


def _pose_step(prob: _Problem, identity, expressions, poses, mu_pose):
    """One damped Gauss-Newton step per frame on the pose alone."""
    poses = list(poses)
    mu_pose = mu_pose.copy()
    for t in range(prob.n_frames):
        r, (_, _, j_pose) = prob.frame(t, identity, expressions[t], poses[t], want_jac=True)
        cost = float(r @ r)
        h = j_pose.T @ j_pose
        g = j_pose.T @ r
        for _ in range(10):
            step = _damped_solve(h, g, mu_pose[t])
            trial = poses[t].perturbed(step[:3], step[3:])
            new_cost = prob.frame_cost(t, identity, expressions[t], trial)
            if np.isfinite(new_cost) and new_cost < cost:
                poses[t] = trial
                mu_pose[t] = max(mu_pose[t] / 3, 1e-12)
                break
            mu_pose[t] *= 4
    return poses, mu_pose


def _code_step(prob: _Problem, identity, expressions, poses, obj, mu, with_pose: bool):
    """One damped Gauss-Newton step on all codes (and optionally all poses).

    Unknown layout: identity, then per frame the expression code followed by
    the 6 pose parameters when ``with_pose`` is set.
    """
    c = prob.config
    d_id, d_exp, n_frames = prob.d_id, prob.d_exp, prob.n_frames
    blk = d_exp + (6 if with_pose else 0)
    n = d_id + n_frames * blk
    h = np.zeros((n, n))
    g = np.zeros(n)
    for t in range(n_frames):
        r, (j_id, j_exp, j_pose) = prob.frame(t, identity, expressions[t], poses[t], want_jac=True)
        j_frame = np.hstack([j_exp, j_pose]) if with_pose else j_exp
        sl = slice(d_id + t * blk, d_id + (t + 1) * blk)
        h[:d_id, :d_id] += j_id.T @ j_id
        cross = j_id.T @ j_frame
        h[:d_id, sl] += cross
        h[sl, :d_id] += cross.T
        h[sl, sl] += j_frame.T @ j_frame
        g[:d_id] += j_id.T @ r
        g[sl] += j_frame.T @ r
    exp_idx = (d_id + np.arange(n_frames)[:, None] * blk + np.arange(d_exp)).ravel()
    h[np.arange(d_id), np.arange(d_id)] += c.lambda_identity
    g[:d_id] += c.lambda_identity * identity
    h[exp_idx, exp_idx] += c.lambda_expression
    g[exp_idx] += c.lambda_expression * expressions.ravel()
    if n_frames >= 3 and c.lambda_laplacian > 0:
        h[np.ix_(exp_idx, exp_idx)] += c.lambda_laplacian * np.kron(prob.lap_gram, np.eye(d_exp))
        g[exp_idx] += c.lambda_laplacian * (prob.lap_gram @ expressions).ravel()
    for _ in range(10):
        step = _damped_solve(h, g, mu)
        trial_id = identity + step[:d_id]
        trial_exp = expressions + step[exp_idx].reshape(n_frames, d_exp)
        trial_poses = poses
        if with_pose:
            trial_poses = []
            for t in range(n_frames):
                p0 = d_id + t * blk + d_exp
                trial_poses.append(poses[t].perturbed(step[p0:p0 + 3], step[p0 + 3:p0 + 6]))
        trial_obj = prob.objective(trial_id, trial_exp, trial_poses)
        if np.isfinite(trial_obj) and trial_obj < obj:
            return trial_id, trial_exp, trial_poses, trial_obj, max(mu / 3, 1e-12)
        mu *= 4
    return identity, expressions, poses, obj, mu


def fit_sequence(model: MorphableModel, camera: Camera, track: LandmarkTrack,
                 config: FitConfig = FitConfig(), init: Optional[FitResult] = None) -> FitResult:
    """Fit one identity plus per-frame expressions and poses to a landmark track."""
    prob = _Problem(model, camera, track, config)
    n_frames = prob.n_frames
    if init is not None:
        identity = np.array(init.identity, dtype=np.float64)
        expressions = np.array(init.expressions, dtype=np.float64).reshape(n_frames, model.d_exp)
        poses = list(init.poses)
        if len(poses) != n_frames:
            raise DimensionError(f"initial poses: {len(poses)} for {n_frames} frames")
    else:
        identity = np.zeros(model.d_id)
        expressions = np.zeros((n_frames, model.d_exp))
        poses = [initial_pose(prob.kpm.mean, track.frames[t], track.visibility[t], camera)
                 for t in range(n_frames)]

    obj = prob.objective(identity, expressions, poses)
    if not np.isfinite(obj):
        raise NumericalError("initial objective is not finite")
    initial_obj = obj
    history = [obj]
    mu_pose = np.full(n_frames, config.damping_init)
    mu = config.damping_init
    iterations = 0

    for it in range(config.max_iterations):
        if obj <= 1e-24:
            break
        iterations = it + 1
        start_obj = obj
        if config.strategy == "alternating":
            poses, mu_pose = _pose_step(prob, identity, expressions, poses, mu_pose)
            obj = prob.objective(identity, expressions, poses)
        identity, expressions, poses, obj, mu = _code_step(
            prob, identity, expressions, poses, obj, mu, with_pose=config.strategy == "joint")
        if not np.isfinite(obj):
            raise NumericalError(f"objective became non-finite at iteration {iterations}")
        history.append(obj)
        log.debug("iteration %d objective %.6g", iterations, obj)
        if (start_obj - obj) <= config.convergence_tol * max(start_obj, 1e-300):
            break

    rmse, per_frame = prob.rmse(identity, expressions, poses)
    return FitResult(identity=identity, expressions=expressions, poses=poses, final_rmse_px=rmse,
                     per_frame_rmse_px=per_frame, iterations_used=iterations, objective=obj,
                     initial_objective=initial_obj, set_name=track.set_name, history=history)


def trajectory_cosine(a, b) -> float:
    """Cosine similarity of two flattened code trajectories."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    denom = np.linalg.norm(x) * np.linalg.norm(y)
    if denom == 0:
        return 1.0 if np.array_equal(x, y) else 0.0
    return float(x @ y / denom)
