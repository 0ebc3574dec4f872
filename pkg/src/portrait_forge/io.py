"""File formats.

Tensor file (``.pft``)::

    bytes 0-3   magic b"PFT1"
    bytes 4-7   header length N, uint32 little-endian
    next N      UTF-8 JSON header {"dtype": "f32le", "shape": [...],
                "axis_labels": [...], "metadata": {...}}
    rest        row-major little-endian float32 payload, 4 * prod(shape) bytes

Models and decoders are directories holding a JSON manifest plus tensor
files. Small records (poses, cameras, codes, fit results, landmark tracks)
are JSON. Loaders validate everything and never transpose, truncate or
convert silently. See FORMATS.md for the full layout.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera, FacePose
from .errors import BadMagic, ConfigError, DataError, SchemaError, ShapeMismatch, TruncatedPayload
from .fitting import FitResult, LandmarkTrack
from .morphable import MorphableModel
from .triplane import PLANE_ORDER, TriPlane
from .volume import MLP_HIDDEN, MLP_LAYERS, MlpDecoder

MAGIC = b"PFT1"
TRIPLANE_LABELS = ["plane", "channel", "row", "col"]
MODEL_FORMAT = "portrait-forge-model"
DECODER_FORMAT = "portrait-forge-decoder"


# -- tensors --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Tensor:
    data: np.ndarray
    axis_labels: list
    metadata: dict = field(default_factory=dict)


def write_tensor(path, shape, labels, data, metadata=None) -> None:
    shape = [int(s) for s in shape]
    labels = [str(x) for x in labels]
    if any(s <= 0 for s in shape):
        raise ShapeMismatch(f"tensor dimensions must be positive, got {shape}")
    if len(labels) != len(shape):
        raise ShapeMismatch(f"{len(labels)} axis labels for rank-{len(shape)} tensor")
    arr = np.asarray(data)
    if arr.size != int(np.prod(shape, dtype=np.int64)):
        raise ShapeMismatch(f"data has {arr.size} values, shape {shape} needs {int(np.prod(shape))}")
    payload = np.ascontiguousarray(arr.reshape(shape), dtype="<f4").tobytes()
    header = json.dumps({"dtype": "f32le", "shape": shape, "axis_labels": labels,
                         "metadata": metadata or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_tensor(path, expected_labels=None) -> Tensor:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"tensor file not found: {path}") from None
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise TruncatedPayload(f"{path}: file ends inside the header length")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise TruncatedPayload(f"{path}: file ends inside the header")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(str(path), [f"header is not valid JSON ({exc})"]) from None
    problems = []
    if header.get("dtype") != "f32le":
        problems.append(f"dtype must be 'f32le', got {header.get('dtype')!r}")
    shape = header.get("shape")
    labels = header.get("axis_labels")
    if not isinstance(shape, list) or not all(isinstance(s, int) and s > 0 for s in shape):
        problems.append(f"shape must be a list of positive integers, got {shape!r}")
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        problems.append(f"axis_labels must be a list of strings, got {labels!r}")
    elif isinstance(shape, list) and len(labels) != len(shape):
        problems.append(f"{len(labels)} axis labels for rank-{len(shape)} tensor")
    if problems:
        raise SchemaError(str(path), problems)
    if expected_labels is not None and list(labels) != list(expected_labels):
        raise SchemaError(str(path), [f"axis_labels {labels} do not match expected {list(expected_labels)}"])
    payload = raw[8 + hlen:]
    need = 4 * int(np.prod(shape, dtype=np.int64))
    if len(payload) < need:
        raise TruncatedPayload(f"{path}: payload has {len(payload)} bytes, shape {shape} needs {need}")
    if len(payload) > need:
        raise ShapeMismatch(f"{path}: payload has {len(payload)} bytes, shape {shape} needs only {need}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return Tensor(data, labels, header.get("metadata") or {})


# -- tri-planes -----------------------------------------------------------------

def save_triplane(path, plane: TriPlane) -> None:
    data = np.transpose(plane.planes, (0, 3, 1, 2))       # channel-major per plane
    write_tensor(path, data.shape, TRIPLANE_LABELS, data,
                 {"plane_order": list(PLANE_ORDER), "extent": plane.extent,
                  "resolution": plane.resolution, "channels": plane.channels})


def load_triplane(path) -> TriPlane:
    t = read_tensor(path, TRIPLANE_LABELS)
    meta = t.metadata
    problems = []
    if meta.get("plane_order") != list(PLANE_ORDER):
        problems.append(f"plane_order must be {list(PLANE_ORDER)}, got {meta.get('plane_order')!r}")
    if t.data.shape[0] != 3:
        problems.append(f"expected 3 planes, got {t.data.shape[0]}")
    if t.data.shape[2] != t.data.shape[3]:
        problems.append(f"planes must be square, got {t.data.shape[2:]}")
    extent = meta.get("extent", 1.0)
    if not isinstance(extent, (int, float)) or extent <= 0:
        problems.append(f"extent must be positive, got {extent!r}")
    if meta.get("resolution", t.data.shape[2]) != t.data.shape[2]:
        problems.append("metadata resolution disagrees with the tensor shape")
    if meta.get("channels", t.data.shape[1]) != t.data.shape[1]:
        problems.append("metadata channels disagrees with the tensor shape")
    if problems:
        raise SchemaError(str(path), problems)
    return TriPlane(np.transpose(t.data, (0, 2, 3, 1)), float(extent))


# -- morphable model --------------------------------------------------------------

def save_model(directory, model: MorphableModel) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n = model.n_vertices
    write_tensor(d / "mean.pft", (n, 3), ["vertex", "xyz"], model.mean_vertices)
    write_tensor(d / "identity_basis.pft", (n, 3, model.d_id), ["vertex", "xyz", "component"],
                 model.identity_basis)
    write_tensor(d / "expression_basis.pft", (n, 3, model.d_exp), ["vertex", "xyz", "component"],
                 model.expression_basis)
    write_tensor(d / "ncc.pft", (n, 3), ["vertex", "rgb"], model.ncc_colors)
    (d / "triangles.json").write_text(json.dumps(model.triangles.tolist()))
    manifest = {
        "format": MODEL_FORMAT, "version": 1, "n_vertices": n, "n_triangles": int(model.triangles.shape[0]),
        "d_id": model.d_id, "d_exp": model.d_exp, "triangles": "triangles.json",
        "keypoint_sets": {k: v.tolist() for k, v in model.keypoint_sets.items()},
        "tensors": {"mean": "mean.pft", "identity_basis": "identity_basis.pft",
                    "expression_basis": "expression_basis.pft", "ncc": "ncc.pft"},
    }
    (d / "model.json").write_text(json.dumps(manifest, indent=1))


def _read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), [f"invalid JSON ({exc})"]) from None


def load_model(directory) -> MorphableModel:
    d = Path(directory)
    if d.is_file():
        d = d.parent
    m = _read_json(d / "model.json")
    problems = []
    if m.get("format") != MODEL_FORMAT:
        problems.append(f"format must be {MODEL_FORMAT!r}, got {m.get('format')!r}")
    for key in ("n_vertices", "n_triangles", "d_id", "d_exp"):
        if not isinstance(m.get(key), int) or m[key] < 0:
            problems.append(f"{key} must be a non-negative integer")
    if problems:
        raise SchemaError(str(d / "model.json"), problems)
    n, d_id, d_exp = m["n_vertices"], m["d_id"], m["d_exp"]
    names = m.get("tensors", {})
    expected = {"mean": ((n, 3), ["vertex", "xyz"]),
                "identity_basis": ((n, 3, d_id), ["vertex", "xyz", "component"]),
                "expression_basis": ((n, 3, d_exp), ["vertex", "xyz", "component"]),
                "ncc": ((n, 3), ["vertex", "rgb"])}
    arrays = {}
    for key, (shape, labels) in expected.items():
        if key not in names:
            problems.append(f"tensors.{key} missing")
            continue
        t = read_tensor(d / names[key], labels)
        if tuple(t.data.shape) != shape:
            problems.append(f"tensors.{key} has shape {t.data.shape}, manifest implies {shape}")
        arrays[key] = t.data.astype(np.float64)
    tris = np.asarray(_read_json(d / m.get("triangles", "triangles.json")), dtype=np.int64).reshape(-1, 3)
    if tris.shape[0] != m["n_triangles"]:
        problems.append(f"triangles: {tris.shape[0]} entries, manifest says {m['n_triangles']}")
    kps = m.get("keypoint_sets", {})
    if not isinstance(kps, dict):
        problems.append("keypoint_sets must be a mapping")
        kps = {}
    if problems:
        raise SchemaError(str(d / "model.json"), problems)
    id_b = arrays["identity_basis"].reshape(3 * n, d_id)
    exp_b = arrays["expression_basis"].reshape(3 * n, d_exp)
    try:
        model = MorphableModel(arrays["mean"], id_b, exp_b, tris, arrays["ncc"], kps)
    except DataError as exc:
        raise SchemaError(str(d / "model.json"), [str(exc)]) from None
    return model


# -- decoder ----------------------------------------------------------------------

_DECODER_TENSORS = {"fc0.weight": ("w0", ["in", "out"]), "fc0.bias": ("b0", ["out"]),
                    "fc1.weight": ("w1", ["in", "out"]), "fc1.bias": ("b1", ["out"])}


def save_decoder(directory, decoder: MlpDecoder) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, (attr, labels) in _DECODER_TENSORS.items():
        arr = getattr(decoder, attr)
        fname = name.replace(".", "_") + ".pft"
        write_tensor(d / fname, arr.shape, labels, arr)
        files[name] = fname
    manifest = {"format": DECODER_FORMAT, "type": "mlp", "layers": MLP_LAYERS, "hidden": MLP_HIDDEN,
                "in_features": decoder.in_features, "activation": "softplus",
                "density": "exp", "color": "sigmoid", "tensors": files}
    (d / "decoder.json").write_text(json.dumps(manifest, indent=1))


def load_decoder(directory) -> MlpDecoder:
    d = Path(directory)
    if d.is_file():
        d = d.parent
    if not d.exists():
        raise ConfigError(f"decoder directory not found: {d}")
    m = _read_json(d / "decoder.json")
    problems = []
    checks = {"format": DECODER_FORMAT, "type": "mlp", "layers": MLP_LAYERS, "hidden": MLP_HIDDEN,
              "activation": "softplus", "density": "exp", "color": "sigmoid"}
    for key, want in checks.items():
        if m.get(key) != want:
            problems.append(f"{key} must be {want!r}, got {m.get(key)!r}")
    files = m.get("tensors", {})
    arrays = {}
    for name, (attr, labels) in _DECODER_TENSORS.items():
        if name not in files:
            problems.append(f"tensors.{name} missing")
            continue
        arrays[attr] = read_tensor(d / files[name], labels).data
    if problems:
        raise SchemaError(str(d / "decoder.json"), problems)
    dec = MlpDecoder(**arrays)
    if m.get("in_features") != dec.in_features:
        raise SchemaError(str(d / "decoder.json"),
                          [f"in_features {m.get('in_features')} disagrees with fc0.weight ({dec.in_features})"])
    return dec


# -- JSON records ---------------------------------------------------------------------

def pose_to_json(pose: FacePose) -> dict:
    return {"quaternion": list(pose.quaternion), "translation": list(pose.translation)}


def pose_from_json(d) -> FacePose:
    try:
        return FacePose(tuple(d["quaternion"]), tuple(d["translation"]))
    except (KeyError, TypeError) as exc:
        raise SchemaError("pose", [f"missing or malformed field {exc}"]) from None


def camera_to_json(cam: Camera) -> dict:
    return {"pose": pose_to_json(cam.pose), "focal": cam.focal, "principal_point": list(cam.principal_point),
            "image_size": list(cam.image_size), "near": cam.near, "far": cam.far, "radius": cam.radius}


def camera_from_json(d) -> Camera:
    problems = [f"{k} missing" for k in ("pose", "focal", "principal_point", "image_size", "near", "far")
                if k not in d]
    if problems:
        raise SchemaError("camera", problems)
    try:
        return Camera(pose=pose_from_json(d["pose"]), focal=d["focal"],
                      principal_point=tuple(d["principal_point"]), image_size=tuple(d["image_size"]),
                      near=d["near"], far=d["far"], radius=d.get("radius"))
    except DataError as exc:
        raise SchemaError("camera", [str(exc)]) from None


def save_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1))


def save_camera(path, cam: Camera) -> None:
    save_json(path, camera_to_json(cam))


def load_camera(path) -> Camera:
    return camera_from_json(_read_json(path))


def save_cameras(path, cams) -> None:
    save_json(path, {"cameras": [camera_to_json(c) for c in cams]})


def load_cameras(path) -> list:
    d = _read_json(path)
    if isinstance(d, dict) and "cameras" in d:
        return [camera_from_json(c) for c in d["cameras"]]
    if isinstance(d, dict) and "pose" in d:
        return [camera_from_json(d)]
    raise SchemaError(str(path), ["expected a camera record or {'cameras': [...]}"])


def save_codes(path, identity, expressions) -> None:
    save_json(path, {"identity": np.asarray(identity, float).tolist(),
                     "expressions": np.asarray(expressions, float).tolist()})


def load_codes(path):
    """Identity and expression codes from a codes file or a fit result."""
    d = _read_json(path)
    problems = [f"{k} missing" for k in ("identity", "expressions") if k not in d]
    if problems:
        raise SchemaError(str(path), problems)
    return np.asarray(d["identity"], float), np.atleast_2d(np.asarray(d["expressions"], float))


def fit_result_to_json(r: FitResult) -> dict:
    return {"identity": np.asarray(r.identity, float).tolist(),
            "expressions": np.asarray(r.expressions, float).tolist(),
            "poses": [pose_to_json(p) for p in r.poses],
            "final_rmse_px": r.final_rmse_px, "per_frame_rmse_px": list(r.per_frame_rmse_px),
            "iterations_used": r.iterations_used, "objective": r.objective,
            "initial_objective": r.initial_objective, "set_name": r.set_name,
            "history": list(r.history)}


def save_fit_result(path, r: FitResult) -> None:
    save_json(path, fit_result_to_json(r))


def load_fit_result(path) -> FitResult:
    d = _read_json(path)
    required = ("identity", "expressions", "poses", "final_rmse_px", "per_frame_rmse_px", "iterations_used")
    problems = [f"{k} missing" for k in required if k not in d]
    if not problems and len(d["poses"]) != len(d["expressions"]):
        problems.append(f"{len(d['poses'])} poses for {len(d['expressions'])} expression frames")
    if problems:
        raise SchemaError(str(path), problems)
    return FitResult(identity=np.asarray(d["identity"], float),
                     expressions=np.atleast_2d(np.asarray(d["expressions"], float)),
                     poses=[pose_from_json(p) for p in d["poses"]],
                     final_rmse_px=d["final_rmse_px"], per_frame_rmse_px=list(d["per_frame_rmse_px"]),
                     iterations_used=d["iterations_used"], objective=d.get("objective", float("nan")),
                     initial_objective=d.get("initial_objective", float("nan")),
                     set_name=d.get("set_name", "kp68"), history=list(d.get("history", [])))


def save_landmarks(path, track: LandmarkTrack) -> None:
    frames = [[[float(u), float(v)] if np.isfinite(u) and np.isfinite(v) else None for u, v in f]
              for f in track.frames]
    save_json(path, {"set_name": track.set_name,
                     "image_size": list(track.image_size) if track.image_size else None,
                     "frames": frames, "visibility": track.visibility.tolist()})


def load_landmarks(path) -> LandmarkTrack:
    """Landmark track; ``null`` entries mark invisible landmarks."""
    d = _read_json(path)
    if "frames" not in d:
        raise SchemaError(str(path), ["frames missing"])
    counts = {len(f) for f in d["frames"]}
    if len(counts) > 1:
        raise SchemaError(str(path), [f"frames have differing landmark counts {sorted(counts)}"])
    frames = np.array([[p if p is not None else [np.nan, np.nan] for p in f] for f in d["frames"]], float)
    vis = np.array([[p is not None for p in f] for f in d["frames"]], bool).reshape(frames.shape[:2])
    if "visibility" in d:
        given = np.asarray(d["visibility"], bool)
        if given.shape != vis.shape:
            raise SchemaError(str(path), [f"visibility shape {given.shape} does not match frames {vis.shape}"])
        vis &= given
    size = d.get("image_size")
    try:
        return LandmarkTrack(frames, vis, d.get("set_name", "kp68"), tuple(size) if size else None)
    except DataError as exc:
        raise SchemaError(str(path), [str(exc)]) from None


def save_trajectory(path, expressions, poses) -> None:
    save_json(path, {"expressions": np.asarray(expressions, float).tolist(),
                     "poses": [pose_to_json(p) for p in poses]})


def load_trajectory(path):
    d = _read_json(path)
    problems = [f"{k} missing" for k in ("expressions", "poses") if k not in d]
    if problems:
        raise SchemaError(str(path), problems)
    return np.atleast_2d(np.asarray(d["expressions"], float)), [pose_from_json(p) for p in d["poses"]]


# -- images -----------------------------------------------------------------------

def to_uint8(image) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image) -> None:
    """Write a float image in [0, 1] (H, W) or (H, W, 3) as 8-bit PNG."""
    arr = to_uint8(image)
    Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB").save(path, format="PNG", optimize=False)


def load_png(path, channels: int = 3) -> np.ndarray:
    """Read a PNG as float64 in [0, 1]; ``channels`` is 3 (RGB) or 1 (grayscale, returns (H, W))."""
    try:
        img = Image.open(path)
    except FileNotFoundError:
        raise ConfigError(f"image not found: {path}") from None
    img = img.convert("RGB" if channels == 3 else "L")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_image_tensor(path, image, labels=None) -> None:
    arr = np.asarray(image)
    if labels is None:
        labels = ["row", "col", "channel"][: arr.ndim]
    write_tensor(path, arr.shape, labels, arr)
