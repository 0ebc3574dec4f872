"""Command-line driver: ``portrait-forge <subcommand>``.

Every option can also be given in a JSON config file (``--config``); keys are
the option names with dashes replaced by underscores, either at the top level
or under a section named after the subcommand. Precedence is
command-line flag > config file > built-in default. Relative paths in a config
file are resolved against the config file's directory.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numerical failure, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io as pio
from . import testkit
from .camera import Camera
from .compositor import COMPOSITE_SIZE, Layer, fuse
from .errors import ConfigError, DataError, PortraitForgeError
from .fitting import FitConfig, expression_laplacian, fit_sequence
from .inpaint import DEFAULT_K, SegmentedImage, knn_inpaint
from .metrics import MetricReport, expression_recon_error, l1_error, mse, psnr
from .rasterizer import render_pncc
from .triplane import TriPlane, apply_motion, diffplane_laplacian
from .volume import DEFAULT_RENDER_RES, SamplingConfig, render

log = logging.getLogger("portrait_forge")

THREADS_ENV = "PORTRAIT_FORGE_THREADS"
PATH_KEYS = {"model", "landmarks", "camera", "out", "codes", "triplane", "diffplanes", "decoder", "cameras",
             "image", "mask", "head", "torso", "background", "background_mask", "a", "b", "fit_camera"}

DEFAULTS = {
    "jobs": 1,
    "max_iterations": 200,
    "strategy": "joint",
    "lambda_identity": 1e-3,
    "lambda_expression": 1e-3,
    "lambda_laplacian": 1e-2,
    "pncc_resolution": 256,
    "resolution": DEFAULT_RENDER_RES,
    "samples_per_ray": 64,
    "aggregation": "sum",
    "k": DEFAULT_K,
    "size": COMPOSITE_SIZE,
    "or_mode": "soft",
    "metric": "l1",
    "seed": 0,
    "frames": 24,
    "plane_resolution": 64,
    "channels": 32,
}


# -- helpers ------------------------------------------------------------------

@contextmanager
def stage(name, frame=None):
    """Tag any library error raised inside with the stage name and frame index."""
    try:
        yield
    except PortraitForgeError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage, exc.frame = name, frame
        raise


def frame_name(prefix: str, index: int, ext: str) -> str:
    return f"{prefix}_{index:04d}.{ext}"


def resolve_jobs(requested) -> int:
    jobs = max(1, int(requested))
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return jobs


def parallel_map(fn, items, jobs: int) -> list:
    """Ordered map; results come back in input order regardless of ``jobs``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def require_path(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing required option --{what.replace('_', '-')}")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")

    def fix(section):
        out = {}
        for key, value in section.items():
            key = key.replace("-", "_")
            if key in PATH_KEYS and isinstance(value, str):
                value = str((p.parent / value).resolve()) if not os.path.isabs(value) else value
            out[key] = value
        return out

    base = fix({k: v for k, v in cfg.items() if not isinstance(v, dict)})
    sections = {k.replace("-", "_"): fix(v) for k, v in cfg.items() if isinstance(v, dict)}
    return {"base": base, "sections": sections}


class Options:
    """Option lookup with flag > config > default precedence."""

    def __init__(self, args, config: dict):
        self._args = vars(args)
        section = args.command.replace("-", "_")
        self._cfg = dict(config.get("base", {}))
        self._cfg.update(config.get("sections", {}).get(section, {}))

    def __getattr__(self, name):
        value = self._args.get(name)
        if value is not None:
            return value
        if name in self._cfg:
            return self._cfg[name]
        return DEFAULTS.get(name)


def list_frames(directory: Path, prefix: str, ext: str) -> list:
    return sorted(directory.glob(f"{prefix}_[0-9][0-9][0-9][0-9].{ext}"))


def load_layer_frames(directory, what: str) -> list:
    """(image, mask) pairs from ``frame_NNNN`` / ``mask_NNNN`` files.

    Float ``.pft`` tensors take precedence over the 8-bit PNG of the same name.
    """
    d = require_path(directory, what)
    pngs = list_frames(d, "frame", "png")
    if not pngs:
        raise ConfigError(f"{what} directory {d} has no frame_NNNN.png files")
    out = []
    for png in pngs:
        idx = png.stem.split("_")[1]
        rgb_t, mask_t = d / f"rgb_{idx}.pft", d / f"mask_{idx}.pft"
        image = pio.read_tensor(rgb_t, ["row", "col", "channel"]).data if rgb_t.exists() else pio.load_png(png)
        if mask_t.exists():
            mask = pio.read_tensor(mask_t, ["row", "col"]).data
        elif (d / f"mask_{idx}.png").exists():
            mask = pio.load_png(d / f"mask_{idx}.png", channels=1)
        else:
            raise ConfigError(f"{what} frame {png.name} has no mask_{idx}.png")
        out.append((np.asarray(image, np.float64), np.asarray(mask, np.float64)))
    return out


# -- stages -------------------------------------------------------------------------

def run_fit(opts, model, track, camera):
    cfg = FitConfig(lambda_identity=float(opts.lambda_identity), lambda_expression=float(opts.lambda_expression),
                    lambda_laplacian=float(opts.lambda_laplacian), max_iterations=int(opts.max_iterations),
                    strategy=opts.strategy)
    with stage("fit"):
        return fit_sequence(model, camera, track, cfg)


def run_pncc(model, identity, expressions, resolution, out: Path, jobs: int):
    out.mkdir(parents=True, exist_ok=True)

    def one(t):
        with stage("pncc", t):
            img = render_pncc(model, identity, expressions[t], resolution)
            pio.save_png(out / frame_name("pncc", t, "png"), img.pixels)
            pio.save_image_tensor(out / frame_name("pncc", t, "pft"), img.pixels)
            return float(img.coverage.mean())

    return parallel_map(one, range(len(expressions)), jobs)


def run_render(cano: TriPlane, diffs, decoder, cameras, sampling, resolution, out: Path, jobs: int):
    """Render one head frame per camera; writes PNG previews and float tensors."""
    out.mkdir(parents=True, exist_ok=True)
    if diffs is not None and len(diffs) != len(cameras):
        raise DataError(f"{len(diffs)} diff-planes for {len(cameras)} cameras")

    def one(t):
        with stage("render", t):
            plane = cano if diffs is None else apply_motion(cano, diffs[t])
            res = render(plane, decoder, cameras[t], sampling, resolution)
            pio.save_png(out / frame_name("frame", t, "png"), res.rgb)
            pio.save_png(out / frame_name("mask", t, "png"), res.mask)
            pio.save_image_tensor(out / frame_name("rgb", t, "pft"), res.rgb)
            pio.save_image_tensor(out / frame_name("mask", t, "pft"), res.mask)
            pio.save_image_tensor(out / frame_name("depth", t, "pft"), res.depth)
            return float(res.mask.mean())

    return parallel_map(one, range(len(cameras)), jobs)


def run_inpaint(image, mask, k):
    with stage("inpaint"):
        return knn_inpaint(SegmentedImage(image, mask > 0.5), k)


def run_composite(heads, torsos, background, size, or_mode, out: Path, jobs: int):
    out.mkdir(parents=True, exist_ok=True)
    if len(heads) != len(torsos):
        raise DataError(f"{len(heads)} head frames but {len(torsos)} torso frames")
    bg = Layer(background)

    def one(t):
        with stage("composite", t):
            frame = fuse(Layer(*heads[t]), Layer(*torsos[t]), bg, size, or_mode)
            pio.save_png(out / frame_name("frame", t, "png"), frame.image)
            return float(frame.person_mask.mean())

    return parallel_map(one, range(len(heads)), jobs)


def load_diffplanes(directory, cano: TriPlane):
    if directory is None:
        return None
    d = require_path(directory, "diffplanes")
    files = list_frames(d, "diff", "pft")
    if not files:
        raise ConfigError(f"no diff_NNNN.pft files in {d}")
    diffs = [pio.load_triplane(f) for f in files]
    for f, p in zip(files, diffs):
        if p.shape != cano.shape:
            raise DataError(f"diff-plane {f.name} has shape {p.shape}, canonical plane is {cano.shape}")
    return diffs


# -- subcommands ----------------------------------------------------------------------

def cmd_fit(opts) -> dict:
    model = pio.load_model(require_path(opts.model, "model"))
    track = pio.load_landmarks(require_path(opts.landmarks, "landmarks"))
    camera = pio.load_camera(require_path(opts.camera, "camera"))
    if opts.set_name and opts.set_name != track.set_name:
        track = type(track)(track.frames, track.visibility, opts.set_name, track.image_size)
    result = run_fit(opts, model, track, camera)
    out = Path(opts.out or "fit_result.json")
    pio.save_fit_result(out, result)
    log.info("fit: rmse %.4f px after %d iterations -> %s", result.final_rmse_px, result.iterations_used, out)
    return {"final_rmse_px": result.final_rmse_px, "iterations_used": result.iterations_used}


def cmd_pncc(opts) -> dict:
    model = pio.load_model(require_path(opts.model, "model"))
    identity, expressions = pio.load_codes(require_path(opts.codes, "codes"))
    out = Path(opts.out or "pncc")
    cov = run_pncc(model, identity, expressions, int(opts.pncc_resolution), out, resolve_jobs(opts.jobs))
    return {"frames": len(cov)}


def cmd_render(opts) -> dict:
    cano = pio.load_triplane(require_path(opts.triplane, "triplane"))
    decoder = pio.load_decoder(require_path(opts.decoder, "decoder"))
    cameras = pio.load_cameras(require_path(opts.cameras, "cameras"))
    diffs = load_diffplanes(opts.diffplanes, cano)
    sampling = SamplingConfig(samples_per_ray=int(opts.samples_per_ray), aggregation=opts.aggregation)
    res = int(opts.resolution)
    cov = run_render(cano, diffs, decoder, cameras, sampling, res, Path(opts.out or "render"),
                     resolve_jobs(opts.jobs))
    return {"frames": len(cov), "mean_mask": cov}


def cmd_inpaint(opts) -> dict:
    image = pio.load_png(require_path(opts.image, "image"))
    mask = pio.load_png(require_path(opts.mask, "mask"), channels=1)
    if mask.shape != image.shape[:2]:
        raise DataError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    filled = run_inpaint(image, mask, int(opts.k))
    pio.save_png(opts.out or "inpainted.png", filled)
    return {"filled_pixels": int((mask > 0.5).sum())}


def cmd_composite(opts) -> dict:
    heads = load_layer_frames(opts.head, "head")
    torsos = load_layer_frames(opts.torso, "torso")
    background = pio.load_png(require_path(opts.background, "background"))
    cov = run_composite(heads, torsos, background, int(opts.size), opts.or_mode,
                        Path(opts.out or "composite"), resolve_jobs(opts.jobs))
    return {"frames": len(cov)}


def _metric_images(a: Path, b: Path, metric: str) -> MetricReport:
    fn = {"l1": l1_error, "mse": mse, "psnr": psnr}.get(metric)
    if fn is None:
        raise ConfigError(f"metric {metric!r} is not defined for images; use l1, mse or psnr")
    fa = [a] if a.is_file() else list_frames(a, "frame", "png")
    fb = [b] if b.is_file() else list_frames(b, "frame", "png")
    if len(fa) != len(fb) or not fa:
        raise DataError(f"frame counts differ or are zero: {len(fa)} vs {len(fb)}")
    per = [fn(pio.load_png(x), pio.load_png(y)) for x, y in zip(fa, fb)]
    value = float(np.mean(per)) if metric != "psnr" or np.all(np.isfinite(per)) else float("inf")
    return MetricReport(metric, value, per)


def cmd_metrics(opts) -> dict:
    a = require_path(opts.a, "a")
    b = require_path(opts.b, "b")
    if a.suffix == ".json" and b.suffix == ".json":
        ea, eb = pio.load_codes(a)[1], pio.load_codes(b)[1]
        if opts.metric == "laplacian":
            report = MetricReport("expression_laplacian", expression_laplacian(ea))
        else:
            per = [expression_recon_error(x, y) for x, y in zip(ea, eb)] if ea.shape == eb.shape else None
            report = MetricReport("expression_recon_error", expression_recon_error(ea, eb), per)
    else:
        report = _metric_images(a, b, opts.metric)
    payload = report.to_json()
    if opts.out:
        pio.save_json(opts.out, payload)
    print(json.dumps(payload))
    return payload


def cmd_gen_fixtures(opts) -> dict:
    out = Path(opts.out or "fixtures")
    write_fixtures(out, seed=int(opts.seed), frames=int(opts.frames), plane_resolution=int(opts.plane_resolution),
                   channels=int(opts.channels), head_resolution=int(opts.resolution), size=int(opts.size))
    return {"directory": str(out)}


def write_fixtures(out: Path, seed: int = 0, frames: int = 24, plane_resolution: int = 64, channels: int = 32,
                   head_resolution: int = DEFAULT_RENDER_RES, size: int = COMPOSITE_SIZE) -> None:
    """A complete, self-consistent pipeline input directory plus ``pipeline.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    spec = testkit.SyntheticSpec(seed=seed)
    model = testkit.make_model(spec)
    pio.save_model(out / "model", model)
    identity = testkit.make_identity(spec)
    expressions, poses = testkit.make_trajectory(spec, frames)
    pio.save_trajectory(out / "trajectory.json", expressions, poses)
    pio.save_codes(out / "codes.json", identity, expressions)
    fit_cam = testkit.fitting_camera(size)
    pio.save_camera(out / "fit_camera.json", fit_cam)
    pio.save_landmarks(out / "landmarks.json",
                       testkit.synthesize_landmarks(model, identity, (expressions, poses), fit_cam))

    yaw = np.radians(15.0) * np.sin(np.linspace(0, 2 * np.pi, frames, endpoint=False))
    pio.save_cameras(out / "cameras.json", [Camera.orbit(head_resolution, yaw=float(y)) for y in yaw])
    cano, decoder = testkit.make_head_scene(plane_resolution, channels, seed)
    pio.save_triplane(out / "triplane.pft", cano)
    pio.save_decoder(out / "decoder", decoder)
    (out / "diffplanes").mkdir(exist_ok=True)
    for t, d in enumerate(testkit.make_diffplane_sequence(cano, frames, seed)):
        pio.save_triplane(out / "diffplanes" / frame_name("diff", t, "pft"), d)

    torso_dir = out / "torso"
    torso_dir.mkdir(exist_ok=True)
    rr, cc = np.mgrid[:size, :size] / size
    for t in range(frames):
        sway = 0.02 * np.sin(2 * np.pi * t / frames)
        # shoulders: a soft-edged ellipse below the head
        r = ((cc - 0.5 - sway) / 0.42) ** 2 + ((rr - 1.05) / 0.38) ** 2
        mask = np.clip((1.0 - r) * 20.0, 0.0, 1.0)
        img = np.stack([0.25 + 0.3 * rr, 0.3 + 0.1 * np.sin(6 * cc), 0.55 - 0.2 * rr], axis=-1)
        pio.save_png(torso_dir / frame_name("frame", t, "png"), img)
        pio.save_png(torso_dir / frame_name("mask", t, "png"), mask)
    bg = np.stack([0.6 + 0.3 * cc, 0.7 - 0.2 * rr, 0.5 + 0.2 * np.cos(4 * rr)], axis=-1)
    person = (((cc - 0.5) / 0.22) ** 2 + ((rr - 0.42) / 0.3) ** 2 < 1) | (((cc - 0.5) / 0.45) ** 2
                                                                         + ((rr - 1.05) / 0.4) ** 2 < 1)
    bg[person] = (0.9, 0.1, 0.1)                          # the person's pixels, to be inpainted away
    pio.save_png(out / "background.png", bg)
    pio.save_png(out / "background_mask.png", person.astype(float))

    config = {"model": "model", "decoder": "decoder", "triplane": "triplane.pft", "diffplanes": "diffplanes",
              "cameras": "cameras.json", "torso": "torso", "background": "background.png",
              "background_mask": "background_mask.png", "landmarks": "landmarks.json",
              "fit_camera": "fit_camera.json", "resolution": head_resolution, "size": size}
    pio.save_json(out / "pipeline.json", config)


def cmd_pipeline(opts) -> dict:
    out = Path(opts.out or "pipeline_out")
    out.mkdir(parents=True, exist_ok=True)
    jobs = resolve_jobs(opts.jobs)
    timings, metrics = {}, {}
    started = time.time()

    def timed(name, fn):
        t0 = time.perf_counter()
        result = fn()
        timings[name] = round(time.perf_counter() - t0, 4)
        return result

    with stage("load"):
        cano = pio.load_triplane(require_path(opts.triplane, "triplane"))
        decoder = pio.load_decoder(require_path(opts.decoder, "decoder"))
        cameras = pio.load_cameras(require_path(opts.cameras, "cameras"))
        diffs = load_diffplanes(opts.diffplanes, cano)
        torsos = load_layer_frames(opts.torso, "torso")
        background = pio.load_png(require_path(opts.background, "background"))

    if opts.landmarks is not None and opts.model is not None:
        model = pio.load_model(require_path(opts.model, "model"))
        track = pio.load_landmarks(require_path(opts.landmarks, "landmarks"))
        fit_cam = pio.load_camera(require_path(opts.fit_camera, "fit_camera"))
        result = timed("fit", lambda: run_fit(opts, model, track, fit_cam))
        pio.save_fit_result(out / "fit_result.json", result)
        metrics["fit_rmse_px"] = result.final_rmse_px
        metrics["fit_iterations"] = result.iterations_used
        metrics["expression_laplacian"] = expression_laplacian(result.expressions)
        pncc_res = int(opts.pncc_resolution)
        timed("pncc", lambda: run_pncc(model, result.identity, result.expressions, pncc_res, out / "pncc", jobs))

    sampling = SamplingConfig(samples_per_ray=int(opts.samples_per_ray), aggregation=opts.aggregation)
    res = int(opts.resolution)
    head_cov = timed("render", lambda: run_render(cano, diffs, decoder, cameras, sampling, res,
                                                  out / "head", jobs))
    metrics["head_mask_mean"] = head_cov
    if diffs is not None and len(diffs) >= 3:
        lap = [diffplane_laplacian(diffs[t - 1], diffs[t], diffs[t + 1]) for t in range(1, len(diffs) - 1)]
        metrics["diffplane_laplacian_mean"] = float(np.mean(lap))

    if opts.background_mask is not None:
        bg_mask = pio.load_png(require_path(opts.background_mask, "background_mask"), channels=1)
        background = timed("inpaint", lambda: run_inpaint(background, bg_mask, int(opts.k)))
        pio.save_png(out / "background_inpainted.png", background)
        background = pio.load_png(out / "background_inpainted.png")

    heads = load_layer_frames(out / "head", "head")
    timed("composite", lambda: run_composite(heads, torsos, background, int(opts.size), opts.or_mode,
                                             out / "frames", jobs))
    manifest = {"frames": len(cameras), "head_resolution": res, "composite_size": int(opts.size),
                "samples_per_ray": sampling.samples_per_ray, "jobs": jobs, "stage_seconds": timings,
                "metrics": metrics, "started_at": started, "total_seconds": round(time.time() - started, 4),
                "external_metrics": {}}
    pio.save_json(out / "manifest.json", manifest)
    log.info("pipeline: %d frames -> %s", len(cameras), out / "frames")
    return manifest


COMMANDS = {"fit": cmd_fit, "pncc": cmd_pncc, "render": cmd_render, "inpaint": cmd_inpaint,
            "composite": cmd_composite, "metrics": cmd_metrics, "gen-fixtures": cmd_gen_fixtures,
            "pipeline": cmd_pipeline}


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--jobs", type=int, help=f"parallel frames (capped by ${THREADS_ENV}; default 1)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="portrait-forge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def fit_flags(p):
        p.add_argument("--set-name", help="keypoint set (default kp68)")
        p.add_argument("--max-iterations", type=int)
        p.add_argument("--strategy", choices=["joint", "alternating"])
        p.add_argument("--lambda-identity", type=float)
        p.add_argument("--lambda-expression", type=float)
        p.add_argument("--lambda-laplacian", type=float)

    def render_flags(p):
        p.add_argument("--triplane")
        p.add_argument("--diffplanes", help="directory of diff_NNNN.pft files")
        p.add_argument("--decoder")
        p.add_argument("--cameras")
        p.add_argument("--resolution", type=int, help="head render resolution (default 128)")
        p.add_argument("--samples-per-ray", type=int)
        p.add_argument("--aggregation", choices=["sum", "mean"])

    p = sub.add_parser("fit", parents=[common], help="fit model codes and poses to a landmark track")
    p.add_argument("--model")
    p.add_argument("--landmarks")
    p.add_argument("--camera")
    fit_flags(p)

    p = sub.add_parser("pncc", parents=[common], help="rasterize PNCC motion maps")
    p.add_argument("--model")
    p.add_argument("--codes", help="codes file or fit result")
    p.add_argument("--pncc-resolution", type=int)

    p = sub.add_parser("render", parents=[common], help="volume-render head frames")
    render_flags(p)

    p = sub.add_parser("inpaint", parents=[common], help="KNN-inpaint the masked pixels of an image")
    p.add_argument("--image")
    p.add_argument("--mask")
    p.add_argument("--k", type=int)

    p = sub.add_parser("composite", parents=[common], help="fuse head, torso and background layers")
    p.add_argument("--head")
    p.add_argument("--torso")
    p.add_argument("--background")
    p.add_argument("--size", type=int)
    p.add_argument("--or-mode", choices=["soft", "max"])

    p = sub.add_parser("metrics", parents=[common], help="compare image directories or code files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--metric", choices=["l1", "mse", "psnr", "exp", "laplacian"])

    p = sub.add_parser("gen-fixtures", parents=[common], help="write a synthetic fixture directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--plane-resolution", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("pipeline", parents=[common], help="run the full frame pipeline")
    p.add_argument("--model")
    p.add_argument("--landmarks")
    p.add_argument("--fit-camera")
    fit_flags(p)
    p.add_argument("--pncc-resolution", type=int)
    render_flags(p)
    p.add_argument("--torso")
    p.add_argument("--background")
    p.add_argument("--background-mask")
    p.add_argument("--k", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--or-mode", choices=["soft", "max"])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = Options(args, load_config(args.config))
        COMMANDS[args.command](opts)
    except PortraitForgeError as exc:
        where = ""
        if getattr(exc, "stage", None):
            where = f" [stage {exc.stage}" + (f", frame {exc.frame}" if exc.frame is not None else "") + "]"
        print(f"portrait-forge {args.command}: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"portrait-forge {args.command}: ConfigError: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
