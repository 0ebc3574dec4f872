import json
import os

import numpy as np
import pytest

from portrait_forge import cli
from portrait_forge import io as pio
from portrait_forge.cli import main


@pytest.fixture(scope="module")
def small_fixtures(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    assert main(["gen-fixtures", "--out", str(d), "--frames", "4", "--plane-resolution", "16",
                 "--channels", "8", "--resolution", "24", "--size", "48"]) == 0
    return d


def frames_bytes(d):
    return [p.read_bytes() for p in sorted(d.glob("frame_*.png"))]


def test_gen_fixtures_is_complete(small_fixtures):
    d = small_fixtures
    for name in ("model/model.json", "decoder/decoder.json", "triplane.pft", "cameras.json", "landmarks.json",
                 "codes.json", "trajectory.json", "background.png", "background_mask.png", "pipeline.json",
                 "diffplanes/diff_0003.pft", "torso/frame_0003.png", "torso/mask_0003.png"):
        assert (d / name).exists(), name
    pio.load_model(d / "model")
    assert pio.load_decoder(d / "decoder").w0.shape == (8, 64)
    assert len(pio.load_cameras(d / "cameras.json")) == 4


def test_pipeline_equals_manual_chaining(small_fixtures, tmp_path):
    d = small_fixtures
    auto = tmp_path / "auto"
    assert main(["pipeline", "--config", str(d / "pipeline.json"), "--out", str(auto), "--samples-per-ray", "16",
                 "--pncc-resolution", "32", "--max-iterations", "20"]) == 0
    manifest = json.loads((auto / "manifest.json").read_text())
    assert set(manifest["stage_seconds"]) == {"fit", "pncc", "render", "inpaint", "composite"}
    assert len(frames_bytes(auto / "frames")) == 4

    man = tmp_path / "manual"
    man.mkdir()
    assert main(["fit", "--model", str(d / "model"), "--landmarks", str(d / "landmarks.json"),
                 "--camera", str(d / "fit_camera.json"), "--max-iterations", "20",
                 "--out", str(man / "fit.json")]) == 0
    assert main(["pncc", "--model", str(d / "model"), "--codes", str(man / "fit.json"), "--pncc-resolution", "32",
                 "--out", str(man / "pncc")]) == 0
    assert main(["render", "--triplane", str(d / "triplane.pft"), "--diffplanes", str(d / "diffplanes"),
                 "--decoder", str(d / "decoder"), "--cameras", str(d / "cameras.json"), "--resolution", "24",
                 "--samples-per-ray", "16", "--out", str(man / "head")]) == 0
    assert main(["inpaint", "--image", str(d / "background.png"), "--mask", str(d / "background_mask.png"),
                 "--out", str(man / "bg.png")]) == 0
    assert main(["composite", "--head", str(man / "head"), "--torso", str(d / "torso"), "--background",
                 str(man / "bg.png"), "--size", "48", "--out", str(man / "frames")]) == 0

    assert (man / "bg.png").read_bytes() == (auto / "background_inpainted.png").read_bytes()
    assert [p.read_bytes() for p in sorted((man / "pncc").glob("pncc_*"))] == \
           [p.read_bytes() for p in sorted((auto / "pncc").glob("pncc_*"))]
    for pattern in ("frame_*.png", "mask_*.png", "rgb_*.pft", "depth_*.pft"):
        assert [p.read_bytes() for p in sorted((man / "head").glob(pattern))] == \
               [p.read_bytes() for p in sorted((auto / "head").glob(pattern))]
    assert frames_bytes(man / "frames") == frames_bytes(auto / "frames")
    assert json.loads((man / "fit.json").read_text()) == json.loads((auto / "fit_result.json").read_text())


def test_jobs_do_not_change_output(small_fixtures, tmp_path):
    d = small_fixtures
    args = ["render", "--config", str(d / "pipeline.json"), "--samples-per-ray", "8"]
    assert main(args + ["--out", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "3"]) == 0
    for pattern in ("frame_*.png", "rgb_*.pft"):
        assert [p.read_bytes() for p in sorted((tmp_path / "a").glob(pattern))] == \
               [p.read_bytes() for p in sorted((tmp_path / "b").glob(pattern))]


def test_missing_decoder_is_config_error(small_fixtures, tmp_path, capsys):
    cfg = json.loads((small_fixtures / "pipeline.json").read_text())
    cfg["decoder"] = "no_such_decoder"
    (small_fixtures / "broken.json").write_text(json.dumps(cfg))
    code = main(["pipeline", "--config", str(small_fixtures / "broken.json"), "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "no_such_decoder" in err and "ConfigError" in err


def test_data_error_exit_code(small_fixtures, tmp_path, capsys):
    bad = tmp_path / "bad.pft"
    bad.write_bytes(b"NOPE" + bytes(20))
    code = main(["render", "--config", str(small_fixtures / "pipeline.json"), "--triplane", str(bad),
                 "--out", str(tmp_path / "o")])
    assert code == 3
    assert "BadMagic" in capsys.readouterr().err


def test_error_names_stage_and_frame(small_fixtures, tmp_path, capsys):
    head, torso = tmp_path / "head", tmp_path / "torso"
    head.mkdir()
    torso.mkdir()
    for t in range(3):
        pio.save_png(head / f"frame_{t:04d}.png", np.zeros((24, 24, 3)))
        pio.save_png(head / f"mask_{t:04d}.png", np.zeros((24, 24)))
        pio.save_png(torso / f"frame_{t:04d}.png", np.zeros((48, 48, 3)))
        # the last torso mask has the wrong size
        pio.save_png(torso / f"mask_{t:04d}.png", np.zeros((12, 12) if t == 2 else (48, 48)))
    code = main(["composite", "--head", str(head), "--torso", str(torso), "--background",
                 str(small_fixtures / "background.png"), "--size", "48", "--out", str(tmp_path / "c")])
    assert code == 3
    assert "stage composite, frame 2" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"k": 3, "samples_per_ray": 12, "inpaint": {"k": 5}, "model": "m"}))
    args = cli.build_parser().parse_args(["inpaint", "--config", str(cfg)])
    opts = cli.Options(args, cli.load_config(args.config))
    assert opts.k == 5 and opts.samples_per_ray == 12 and opts.size == 512
    assert opts.model == str((tmp_path / "m").resolve())
    args = cli.build_parser().parse_args(["inpaint", "--config", str(cfg), "--k", "7"])
    assert cli.Options(args, cli.load_config(args.config)).k == 7
    args = cli.build_parser().parse_args(["inpaint"])
    assert cli.Options(args, {}).k == 1


def test_bad_config_file(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert main(["inpaint", "--config", str(tmp_path / "c.json")]) == 2
    assert main(["inpaint", "--config", str(tmp_path / "none.json")]) == 2


def test_thread_cap(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    assert cli.resolve_jobs(8) == 2 and cli.resolve_jobs(1) == 1
    monkeypatch.delenv(cli.THREADS_ENV)
    assert cli.resolve_jobs(8) == 8
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    with pytest.raises(Exception):
        cli.resolve_jobs(2)


def test_metrics_subcommand(tmp_path, capsys):
    pio.save_codes(tmp_path / "a.json", [0.0], [[0.0], [1.0], [0.0]])
    pio.save_codes(tmp_path / "b.json", [0.0], [[0.0], [1.0], [2.0]])
    assert main(["metrics", str(tmp_path / "a.json"), str(tmp_path / "b.json")]) == 0
    assert json.loads(capsys.readouterr().out)["value"] == pytest.approx(4 / 3)
    assert main(["metrics", str(tmp_path / "a.json"), str(tmp_path / "a.json"), "--metric", "laplacian"]) == 0
    assert json.loads(capsys.readouterr().out)["value"] == 1.0
    img = np.zeros((4, 4, 3))
    pio.save_png(tmp_path / "x.png", img)
    assert main(["metrics", str(tmp_path / "x.png"), str(tmp_path / "x.png"), "--metric", "psnr",
                 "--out", str(tmp_path / "m.json")]) == 0
    assert json.loads((tmp_path / "m.json").read_text())["value"] == "inf"


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "portrait_forge", "--help"], capture_output=True, text=True,
                       env={**os.environ})
    assert r.returncode == 0 and "pipeline" in r.stdout
