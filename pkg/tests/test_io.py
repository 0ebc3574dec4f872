import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from portrait_forge import io
from portrait_forge.camera import Camera, FacePose
from portrait_forge.errors import BadMagic, ConfigError, SchemaError, ShapeMismatch, TruncatedPayload
from portrait_forge.fitting import FitResult, LandmarkTrack
from portrait_forge.triplane import TriPlane
from portrait_forge.volume import MlpDecoder

seeds = st.integers(0, 2 ** 31 - 1)


def test_tensor_round_trip_is_bit_identical(tmp_path):
    data = np.random.default_rng(0).normal(size=(256, 256, 32)).astype(np.float32)
    p = tmp_path / "plane.pft"
    io.write_tensor(p, data.shape, ["row", "col", "channel"], data, {"note": "x"})
    t = io.read_tensor(p)
    assert t.data.tobytes() == data.tobytes()
    assert t.axis_labels == ["row", "col", "channel"] and t.metadata == {"note": "x"}
    io.write_tensor(tmp_path / "again.pft", t.data.shape, t.axis_labels, t.data, t.metadata)
    assert (tmp_path / "again.pft").read_bytes() == p.read_bytes()


@given(seeds)
def test_small_tensor_round_trips(seed):
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in rng.integers(1, 5, rng.integers(1, 4)))
    data = rng.normal(size=shape).astype(np.float32)
    data.ravel()[0] = np.float32(-0.0)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "t.pft"
        io.write_tensor(p, shape, [f"a{k}" for k in range(len(shape))], data)
        assert io.read_tensor(p).data.tobytes() == data.tobytes()


def test_byte_layout(tmp_path):
    p = tmp_path / "s.pft"
    io.write_tensor(p, [], [], np.float32(1.5))
    raw = p.read_bytes()
    assert raw[:4] == b"PFT1"
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n])
    assert header == {"axis_labels": [], "dtype": "f32le", "metadata": {}, "shape": []}
    payload = raw[8 + n:]
    assert len(payload) == 4 and struct.unpack("<f", payload)[0] == 1.5
    assert io.read_tensor(p).data.shape == ()


def _write(tmp_path, shape=(2, 3)):
    p = tmp_path / "t.pft"
    io.write_tensor(p, shape, ["a", "b"][: len(shape)], np.arange(np.prod(shape), dtype=np.float32))
    return p


def test_corruptions_have_distinct_kinds(tmp_path):
    p = _write(tmp_path)
    raw = p.read_bytes()
    p.write_bytes(b"XFT1" + raw[4:])
    with pytest.raises(BadMagic):
        io.read_tensor(p)
    p.write_bytes(raw[:-1])
    with pytest.raises(TruncatedPayload):
        io.read_tensor(p)
    p.write_bytes(raw[:10])
    with pytest.raises(TruncatedPayload):
        io.read_tensor(p)
    p.write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(ShapeMismatch):
        io.read_tensor(p)
    with pytest.raises(ConfigError):
        io.read_tensor(tmp_path / "missing.pft")


def test_header_problems_listed_together(tmp_path):
    header = json.dumps({"dtype": "f64", "shape": [2, -1], "axis_labels": [1]}).encode()
    p = tmp_path / "bad.pft"
    p.write_bytes(b"PFT1" + struct.pack("<I", len(header)) + header)
    with pytest.raises(SchemaError) as info:
        io.read_tensor(p)
    assert len(info.value.problems) == 3
    assert "dtype" in str(info.value) and "shape" in str(info.value) and "axis_labels" in str(info.value)


def test_write_rejects_inconsistent_data(tmp_path):
    with pytest.raises(ShapeMismatch):
        io.write_tensor(tmp_path / "x.pft", (2, 2), ["a", "b"], np.zeros(3))
    with pytest.raises(ShapeMismatch):
        io.write_tensor(tmp_path / "x.pft", (2, 2), ["a"], np.zeros(4))


def test_triplane_round_trip_and_labels(tmp_path):
    rng = np.random.default_rng(1)
    plane = TriPlane(rng.normal(size=(3, 8, 8, 5)).astype(np.float32), extent=1.5)
    p = tmp_path / "p.pft"
    io.save_triplane(p, plane)
    back = io.load_triplane(p)
    assert back.planes.tobytes() == plane.planes.tobytes() and back.extent == 1.5
    # a file written with permuted axes is rejected, not transposed
    t = io.read_tensor(p)
    io.write_tensor(p, (3, 8, 8, 5), ["plane", "row", "col", "channel"], np.transpose(t.data, (0, 2, 3, 1)),
                    t.metadata)
    with pytest.raises(SchemaError, match=r"\['plane', 'channel', 'row', 'col'\]"):
        io.load_triplane(p)


def test_triplane_metadata_checked(tmp_path):
    p = tmp_path / "p.pft"
    io.write_tensor(p, (3, 2, 4, 4), io.TRIPLANE_LABELS, np.zeros((3, 2, 4, 4)),
                    {"plane_order": ["xz", "xy", "yz"], "extent": -1, "channels": 7})
    with pytest.raises(SchemaError) as info:
        io.load_triplane(p)
    assert len(info.value.problems) == 3


def test_model_round_trip(tmp_path, small_model):
    io.save_model(tmp_path / "m", small_model)
    m = io.load_model(tmp_path / "m")
    for attr in ("mean_vertices", "identity_basis", "expression_basis", "ncc_colors", "triangles"):
        assert np.array_equal(getattr(m, attr), getattr(small_model, attr))
    assert m.keypoint_sets.keys() == small_model.keypoint_sets.keys()
    for k in m.keypoint_sets:
        assert np.array_equal(m.keypoint_sets[k], small_model.keypoint_sets[k])


def test_model_schema_errors_list_every_field(tmp_path, small_model):
    d = tmp_path / "m"
    io.save_model(d, small_model)
    manifest = json.loads((d / "model.json").read_text())
    manifest.update(format="other", d_id=-1, n_vertices="many")
    (d / "model.json").write_text(json.dumps(manifest))
    with pytest.raises(SchemaError) as info:
        io.load_model(d)
    text = str(info.value)
    assert "format" in text and "d_id" in text and "n_vertices" in text


def test_model_dimension_disagreement(tmp_path, small_model):
    d = tmp_path / "m"
    io.save_model(d, small_model)
    manifest = json.loads((d / "model.json").read_text())
    manifest["d_exp"] += 1
    manifest["n_triangles"] += 1
    (d / "model.json").write_text(json.dumps(manifest))
    with pytest.raises(SchemaError) as info:
        io.load_model(d)
    assert len(info.value.problems) == 2


def test_decoder_round_trip_and_enforced_size(tmp_path):
    dec = MlpDecoder.random(32, seed=2)
    io.save_decoder(tmp_path / "d", dec)
    back = io.load_decoder(tmp_path / "d")
    for a in ("w0", "b0", "w1", "b1"):
        assert getattr(back, a).tobytes() == getattr(dec, a).tobytes()
    manifest = json.loads((tmp_path / "d" / "decoder.json").read_text())
    manifest.update(layers=3, hidden=128)
    (tmp_path / "d" / "decoder.json").write_text(json.dumps(manifest))
    with pytest.raises(SchemaError) as info:
        io.load_decoder(tmp_path / "d")
    assert len(info.value.problems) == 2
    with pytest.raises(ConfigError, match="nowhere"):
        io.load_decoder(tmp_path / "nowhere")


def test_pose_and_camera_round_trip(tmp_path):
    pose = FacePose.from_rotvec([0.1, -0.2, 0.3], [0.5, 0.25, 3.0])
    assert io.pose_from_json(json.loads(json.dumps(io.pose_to_json(pose)))).quaternion == pose.quaternion
    cams = [Camera.orbit(64, radius=r, yaw=y) for r, y in ((2.7, 0.1), (4.0, -0.3))]
    io.save_cameras(tmp_path / "c.json", cams)
    back = io.load_cameras(tmp_path / "c.json")
    for a, b in zip(cams, back):
        assert a.pose.quaternion == b.pose.quaternion and a.pose.translation == b.pose.translation
        assert (a.focal, a.principal_point, a.image_size, a.near, a.far, a.radius) == \
               (b.focal, b.principal_point, b.image_size, b.near, b.far, b.radius)
    bad = io.camera_to_json(cams[0])
    bad["radius"] = 9.0
    with pytest.raises(SchemaError, match="radius"):
        io.camera_from_json(bad)
    with pytest.raises(SchemaError) as info:
        io.camera_from_json({"pose": bad["pose"]})
    assert len(info.value.problems) == 5


def test_fit_result_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    r = FitResult(identity=rng.normal(size=6), expressions=rng.normal(size=(4, 5)),
                  poses=[FacePose.from_rotvec(rng.normal(size=3) * 0.1, rng.normal(size=3)) for _ in range(4)],
                  final_rmse_px=0.1 + 1e-17, per_frame_rmse_px=list(rng.uniform(size=4)), iterations_used=7,
                  objective=1 / 3, initial_objective=2.0, set_name="kp68", history=[2.0, 1.0, 1 / 3])
    io.save_fit_result(tmp_path / "f.json", r)
    b = io.load_fit_result(tmp_path / "f.json")
    assert np.array_equal(b.identity, r.identity) and np.array_equal(b.expressions, r.expressions)
    assert [p.quaternion for p in b.poses] == [p.quaternion for p in r.poses]
    assert [p.translation for p in b.poses] == [p.translation for p in r.poses]
    assert (b.final_rmse_px, b.per_frame_rmse_px, b.iterations_used, b.objective, b.history) == \
           (r.final_rmse_px, r.per_frame_rmse_px, r.iterations_used, r.objective, r.history)
    ident, exps = io.load_codes(tmp_path / "f.json")
    assert np.array_equal(exps, r.expressions)


def test_fit_result_missing_fields(tmp_path):
    (tmp_path / "f.json").write_text(json.dumps({"identity": [0.0]}))
    with pytest.raises(SchemaError) as info:
        io.load_fit_result(tmp_path / "f.json")
    assert len(info.value.problems) == 5


def test_landmark_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    frames = rng.uniform(0, 100, (3, 5, 2))
    vis = np.ones((3, 5), bool)
    vis[1, 2] = False
    frames[1, 2] = np.nan
    track = LandmarkTrack(frames, vis, "kp68", (100, 100))
    io.save_landmarks(tmp_path / "l.json", track)
    back = io.load_landmarks(tmp_path / "l.json")
    assert np.array_equal(back.visibility, vis)
    assert np.array_equal(back.frames[vis], frames[vis]) and np.isnan(back.frames[1, 2]).all()
    assert back.image_size == (100, 100) and back.set_name == "kp68"


def test_codes_and_trajectory_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    i, e = rng.normal(size=4), rng.normal(size=(3, 2))
    io.save_codes(tmp_path / "c.json", i, e)
    a, b = io.load_codes(tmp_path / "c.json")
    assert np.array_equal(a, i) and np.array_equal(b, e)
    poses = [FacePose.from_rotvec(rng.normal(size=3), rng.normal(size=3)) for _ in range(3)]
    io.save_trajectory(tmp_path / "t.json", e, poses)
    e2, p2 = io.load_trajectory(tmp_path / "t.json")
    assert np.array_equal(e2, e) and [p.quaternion for p in p2] == [p.quaternion for p in poses]


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(6).integers(0, 256, (5, 7, 3)) / 255.0
    io.save_png(tmp_path / "a.png", img)
    assert np.array_equal(io.load_png(tmp_path / "a.png"), img)
    io.save_png(tmp_path / "m.png", img[..., 0])
    assert np.array_equal(io.load_png(tmp_path / "m.png", channels=1), img[..., 0])
    with pytest.raises(ConfigError):
        io.load_png(tmp_path / "none.png")
