# Copyright 2026-present The splatcast authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Image metrics, evaluation reports and the ``splatcast`` command.

Commands::

  splatcast generate   render a synthetic dataset with ground truth
  splatcast train1     fit the deformable scene
  splatcast train2     distill the motion into key points
  splatcast train3     train the trajectory forecaster
  splatcast render     render any checkpoint at chosen times
  splatcast predict    forecast and render future frames
  splatcast eval       score a checkpoint on the test frames

Every command exits 0 on success, 1 with a JSON error record on stderr when
a :class:`~splatcast.errors.SplatcastError` is raised, and 2 on bad
arguments.
"""
import argparse
import asyncio
import dataclasses
import logging
import math
import os
import sys
import time
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np
from bson import json_util
from scipy.ndimage import gaussian_filter

from splatcast._version import version
from splatcast.common import COMPARE_METHODS, Config, validate
from splatcast.deform_stage import (
    HyperCanonicalScene,
    Stage1Trainer,
    build_scene,
    render_scene,
    scene_from_checkpoint,
)
from splatcast.errors import CheckpointError, ConfigurationError, ShapeMismatchError, SplatcastError
from splatcast.executor import effective_threads, run_on_executor
from splatcast.keypoint_distill import (
    Stage2State,
    Stage2Trainer,
    build_stage2,
    export_influence_ply,
    resume_stage2,
    stage2_from_checkpoint,
)
from splatcast.losses import psnr
from splatcast.motion_forecast import (
    Forecaster,
    build_forecaster,
    export_trajectory,
    render_prediction,
    stage3_checkpoint,
    stage3_from_checkpoint,
)
from splatcast.scene_io import (
    Checkpoint,
    DatasetManifest,
    FrameSample,
    RecordLog,
    SyntheticSceneSpec,
    generate_synthetic,
    load_checkpoint,
    load_manifest,
    save_checkpoint,
    write_image,
)
from splatcast.splat_core import Camera, RasterSettings
from splatcast.tensor_nn import make_rng

_log = logging.getLogger(__name__)

_CHECKPOINT_HELP = "checkpoint file (default: latest in the checkpoint directory)"

__all__ = [
    "FrameScore",
    "MethodScores",
    "MetricReport",
    "build_parser",
    "evaluate_frames",
    "luma",
    "main",
    "psnr",
    "score_frames",
    "ssim",
]

LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

STAGES = ("stage1", "stage2", "stage3")


def luma(image: np.ndarray) -> np.ndarray:
    """Rec. 709 luma of an RGB image in [0, 1]."""
    if image.ndim == 2:
        return image.astype(np.float64)
    return image.astype(np.float64) @ LUMA_WEIGHTS


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity of the lumas of `a` and `b`.

    Local statistics use an 11×11 Gaussian window (σ = 1.5); windows that
    would reach past the border are dropped.
    """
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cannot compare images of shapes {a.shape} and {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ShapeMismatchError(
            f"SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {a.shape[:2]}"
        )
    x = luma(a)
    y = luma(b)
    radius = SSIM_WINDOW // 2

    def blur(image: np.ndarray) -> np.ndarray:
        out = gaussian_filter(image, SSIM_SIGMA, truncate=radius / SSIM_SIGMA, mode="reflect")
        return out[radius:-radius, radius:-radius]

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    numerator = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    ssim_map = numerator / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return float(np.mean(ssim_map))


# Reports.


@dataclasses.dataclass
class FrameScore:
    index: int
    t: float
    psnr: float
    ssim: float


@dataclasses.dataclass
class MethodScores:
    """Per-frame scores of one rendering method over the evaluated frames."""

    method: str
    frames: List[FrameScore]

    @property
    def psnr(self) -> float:
        return float(np.mean([f.psnr for f in self.frames])) if self.frames else float("nan")

    @property
    def ssim(self) -> float:
        return float(np.mean([f.ssim for f in self.frames])) if self.frames else float("nan")


@dataclasses.dataclass
class MetricReport:
    """Scores for the primary method of a checkpoint and any baselines."""

    stage: str
    methods: List[MethodScores]
    wall_clock: float = 0.0
    iterations: Dict[str, int] = dataclasses.field(default_factory=dict)

    def method(self, name: str) -> MethodScores:
        for scores in self.methods:
            if scores.method == name:
                return scores
        raise KeyError(name)

    def as_records(self) -> Iterator[Dict[str, Any]]:
        """One ``frame`` record per method and frame, then one ``aggregate``
        record per method.
        """
        for scores in self.methods:
            for frame in scores.frames:
                yield {
                    "kind": "frame",
                    "stage": self.stage,
                    "method": scores.method,
                    "frame": frame.index,
                    "t": frame.t,
                    "psnr": frame.psnr,
                    "ssim": frame.ssim,
                }
        for scores in self.methods:
            yield {
                "kind": "aggregate",
                "stage": self.stage,
                "method": scores.method,
                "frames": len(scores.frames),
                "psnr": scores.psnr,
                "ssim": scores.ssim,
                "wall_clock": self.wall_clock,
                "iterations": dict(self.iterations),
            }

    def as_table(self) -> str:
        lines = [f"{'method':<10} {'frames':>6} {'PSNR':>8} {'SSIM':>7}"]
        for scores in self.methods:
            lines.append(
                f"{scores.method:<10} {len(scores.frames):>6} "
                f"{scores.psnr:>8.2f} {scores.ssim:>7.4f}"
            )
        lines.append(f"wall clock {self.wall_clock:.1f}s")
        return "\n".join(lines)


RenderFn = Callable[[Camera, float], np.ndarray]


def _score_frame(render_fn: RenderFn, index: int, frame: FrameSample) -> FrameScore:
    image = render_fn(frame.camera, frame.t)
    return FrameScore(index, frame.t, psnr(image, frame.image), ssim(image, frame.image))


async def evaluate_frames(
    render_fn: RenderFn, frames: Sequence[FrameSample], threads: Optional[int] = None
) -> List[FrameScore]:
    """Render and score every frame on the shared pool, at most `threads`
    at a time. Scores come back in frame order.
    """
    loop = asyncio.get_running_loop()
    limit = asyncio.Semaphore(effective_threads(threads))

    async def one(index: int, frame: FrameSample) -> FrameScore:
        async with limit:
            return await run_on_executor(loop, _score_frame, render_fn, index, frame)

    return list(await asyncio.gather(*(one(i, f) for i, f in enumerate(frames))))


def score_frames(
    render_fn: RenderFn, frames: Sequence[FrameSample], threads: Optional[int] = None
) -> List[FrameScore]:
    if effective_threads(threads) <= 1:
        return [_score_frame(render_fn, i, f) for i, f in enumerate(frames)]
    return asyncio.run(evaluate_frames(render_fn, frames, threads))


# Loaded models.


@dataclasses.dataclass
class LoadedModel:
    """Whatever a checkpoint holds, ready to render."""

    stage: str
    scene: HyperCanonicalScene
    state: Optional[Stage2State] = None
    forecaster: Optional[Forecaster] = None
    iterations: Dict[str, int] = dataclasses.field(default_factory=dict)

    def renderers(
        self,
        t_last: float,
        background: Sequence[float],
        settings: RasterSettings,
    ) -> Dict[str, RenderFn]:
        """Render functions keyed by method name.

        ``stage1`` queries the per-Gaussian field at `t`, ``mlp`` drives the
        key points with that field, ``gcn`` uses the forecaster, and
        ``freeze`` holds the scene at `t_last`.
        """
        scene, state, forecaster = self.scene, self.state, self.forecaster
        methods: Dict[str, RenderFn] = {
            "stage1": lambda camera, t: render_scene(scene, camera, t, background, settings).image,
        }
        if state is None:
            methods["freeze"] = lambda camera, t: render_scene(
                scene, camera, min(t, t_last), background, settings
            ).image
            return methods
        methods["mlp"] = lambda camera, t: state.render(camera, t, background, settings).image
        methods["freeze"] = lambda camera, t: state.render(
            camera, min(t, t_last), background, settings
        ).image
        if forecaster is not None:

            def gcn(camera: Camera, t: float) -> np.ndarray:
                return render_prediction(state, forecaster, camera, t, background, settings)

            methods["gcn"] = gcn
        return methods

    @property
    def primary(self) -> str:
        return {"stage1": "stage1", "stage2": "mlp", "stage3": "gcn"}[self.stage]


def load_model(checkpoint: Checkpoint, config: Config) -> LoadedModel:
    iterations = {k: int(v) for k, v in checkpoint.counters.items()}
    if checkpoint.stage == "stage1":
        scene = scene_from_checkpoint(checkpoint, config)
        return LoadedModel("stage1", scene, iterations=iterations)
    if checkpoint.stage == "stage2":
        state = stage2_from_checkpoint(checkpoint, config)
        return LoadedModel("stage2", state.scene, state, iterations=iterations)
    if checkpoint.stage == "stage3":
        state, forecaster = stage3_from_checkpoint(checkpoint, config)
        return LoadedModel("stage3", state.scene, state, forecaster, iterations=iterations)
    raise CheckpointError(f"unknown checkpoint stage {checkpoint.stage!r}")


# Command helpers.


def _checkpoint_path(config: Config, stage: str) -> str:
    return os.path.join(config.paths.checkpoint_dir, f"{stage}.bson")


def _require_checkpoint(config: Config, stage: str, explicit: Optional[str] = None) -> Checkpoint:
    path = explicit or _checkpoint_path(config, stage)
    if not os.path.exists(path):
        raise CheckpointError(f"missing {stage} checkpoint {path}; run the earlier stage first")
    return load_checkpoint(path)


def _latest_checkpoint(config: Config, explicit: Optional[str]) -> Checkpoint:
    if explicit:
        return _require_checkpoint(config, "requested", explicit)
    for stage in reversed(STAGES):
        path = _checkpoint_path(config, stage)
        if os.path.exists(path):
            return load_checkpoint(path)
    raise CheckpointError(f"no checkpoint found in {config.paths.checkpoint_dir}")


def _manifest(config: Config, which: str) -> DatasetManifest:
    name = config.paths.train_manifest if which == "train" else config.paths.test_manifest
    return load_manifest(os.path.join(config.paths.data_dir, name))


def _train_frames(config: Config, manifest: DatasetManifest) -> List[FrameSample]:
    split = config.eval.split_time
    time_range = (0.0, split) if split is not None else None
    frames = manifest.frame_samples(config.render.near, config.render.far, time_range)
    _log.info("loaded %d training frames", len(frames))
    return frames


def _test_frames(config: Config) -> List[FrameSample]:
    manifest = _manifest(config, "test")
    split = config.eval.split_time
    time_range = (split, math.inf) if split is not None else None
    return manifest.frame_samples(config.render.near, config.render.far, time_range)


def _settings(config: Config, threads: Optional[int] = None) -> RasterSettings:
    threads = config.worker_threads if threads is None else threads
    return RasterSettings(tile_size=config.render.tile_size, threads=threads)


def _t_last(config: Config, model: LoadedModel) -> float:
    if model.forecaster is not None:
        return model.forecaster.t_last
    if config.eval.split_time is not None:
        return float(config.eval.split_time)
    return max(frame.time for frame in _manifest(config, "train").frames)


def _orbit_cameras(config: Config, count: int) -> List[Camera]:
    opts = config.synthetic
    elevation = math.radians(opts.orbit_elevation_deg)
    cameras = []
    for i in range(count):
        azimuth = 2 * math.pi * i / count
        eye = opts.orbit_radius * np.array(
            [
                math.cos(elevation) * math.cos(azimuth),
                math.cos(elevation) * math.sin(azimuth),
                math.sin(elevation),
            ]
        )
        cameras.append(
            Camera.look_at(
                eye,
                (0.0, 0.0, 0.0),
                math.radians(opts.fov_deg),
                tuple(opts.resolution),
                near=config.render.near,
                far=config.render.far,
            )
        )
    return cameras


def _cameras(config: Config, args: argparse.Namespace, count: int) -> List[Camera]:
    if args.orbit:
        return _orbit_cameras(config, count)
    manifest = _manifest(config, "test")
    if not 0 <= args.view < len(manifest):
        raise ConfigurationError(f"view {args.view} is outside the {len(manifest)} test cameras")
    return [manifest.camera(args.view, config.render.near, config.render.far)] * count


# Commands.


def cmd_generate(args: argparse.Namespace, config: Config) -> None:
    spec = SyntheticSceneSpec.from_options(config.synthetic, config.seed)
    generate_synthetic(spec, config.paths.data_dir)


def cmd_train1(args: argparse.Namespace, config: Config) -> None:
    manifest = _manifest(config, "train")
    frames = _train_frames(config, manifest)
    records = RecordLog(config.paths.records)
    path = _checkpoint_path(config, "stage1")
    if args.resume and os.path.exists(path):
        trainer = Stage1Trainer.from_checkpoint(load_checkpoint(path), frames, config)
        trainer.records = records
        _log.info("resuming stage1 at iteration %d", trainer.scene.iteration)
    else:
        scene, rng = build_scene(config, manifest.bbox)
        trainer = Stage1Trainer(scene, frames, config, rng, records)
    trainer.run(progress=args.progress)
    save_checkpoint(trainer.checkpoint(), path)
    _log.info("wrote %s", path)


def cmd_train2(args: argparse.Namespace, config: Config) -> None:
    frames = _train_frames(config, _manifest(config, "train"))
    records = RecordLog(config.paths.records)
    path = _checkpoint_path(config, "stage2")
    if args.resume and os.path.exists(path):
        trainer = resume_stage2(load_checkpoint(path), frames, config)
        trainer.records = records
        _log.info("resuming stage2 at iteration %d", trainer.state.iteration)
    else:
        scene = scene_from_checkpoint(_require_checkpoint(config, "stage1"), config)
        rng = make_rng(config.seed + 1)
        trainer = Stage2Trainer(build_stage2(scene, config, rng), frames, config, rng, records)
    state = trainer.run(progress=args.progress)
    save_checkpoint(trainer.checkpoint(), path)
    _log.info("wrote %s with %d key points", path, len(state.keypoints))
    if args.influence:
        export_influence_ply(state, args.influence)


def cmd_train3(args: argparse.Namespace, config: Config) -> None:
    state = stage2_from_checkpoint(_require_checkpoint(config, "stage2"), config)
    frames = _train_frames(config, _manifest(config, "train"))
    times = [frame.t for frame in frames]
    forecaster = build_forecaster(
        state,
        config,
        min(times),
        max(times),
        frames if not args.no_joint else None,
        make_rng(config.seed + 2),
        progress=args.progress,
    )
    path = _checkpoint_path(config, "stage3")
    save_checkpoint(stage3_checkpoint(state, forecaster, config), path)
    _log.info("wrote %s", path)
    if args.trajectory:
        export_trajectory(args.trajectory, forecaster.positions)


def cmd_render(args: argparse.Namespace, config: Config) -> None:
    model = load_model(_latest_checkpoint(config, args.checkpoint), config)
    times = args.times or [0.0]
    cameras = _cameras(config, args, len(times))
    render = model.renderers(_t_last(config, model), config.render.background, _settings(config))[
        args.method or model.primary
    ]
    out_dir = os.path.join(config.paths.output_dir, "render")
    for i, (camera, t) in enumerate(zip(cameras, times)):
        write_image(os.path.join(out_dir, f"frame_{i:03d}.png"), render(camera, t))
    _log.info("rendered %d frames into %s", len(times), out_dir)


def cmd_predict(args: argparse.Namespace, config: Config) -> None:
    checkpoint = _require_checkpoint(config, "stage3", args.checkpoint)
    state, forecaster = stage3_from_checkpoint(checkpoint, config)
    opts = config.eval
    start = forecaster.t_last if opts.predict_start is None else opts.predict_start
    if opts.predict_frames:
        times = np.linspace(start, opts.predict_end, opts.predict_frames)
    else:
        times = np.empty(0)
    cameras = _cameras(config, args, len(times))
    settings = _settings(config)
    out_dir = os.path.join(config.paths.output_dir, "predict")
    track = []
    for i, (camera, t) in enumerate(zip(cameras, times)):
        positions = forecaster.predict_positions_at(float(t))
        image = render_prediction(
            state, forecaster, camera, float(t), config.render.background, settings
        )
        write_image(os.path.join(out_dir, f"frame_{i:03d}.png"), image)
        track.append(positions)
    if track:
        export_trajectory(os.path.join(out_dir, "trajectory.txt"), np.stack(track))
    _log.info("predicted %d frames from t=%.3f to t=%.3f", len(times), start, opts.predict_end)


def run_eval(config: Config, checkpoint: Checkpoint, frames: Sequence[FrameSample]) -> MetricReport:
    """Score the checkpoint's own method and every requested baseline on
    the same `frames`.
    """
    model = load_model(checkpoint, config)
    threads = config.worker_threads
    # Frames render concurrently, so each render stays on its own thread.
    settings = _settings(config, threads=1 if effective_threads(threads) > 1 else None)
    renderers = model.renderers(_t_last(config, model), config.render.background, settings)
    names = [model.primary] + [m for m in config.eval.compare if m != model.primary]
    report = MetricReport(model.stage, [], iterations=model.iterations)
    started = time.perf_counter()
    for name in names:
        if name not in renderers:
            raise ConfigurationError(
                f"a {model.stage} checkpoint cannot render the {name!r} baseline"
            )
        report.methods.append(MethodScores(name, score_frames(renderers[name], frames, threads)))
    report.wall_clock = time.perf_counter() - started
    return report


def cmd_eval(args: argparse.Namespace, config: Config) -> None:
    frames = _test_frames(config)
    if not frames:
        raise ConfigurationError("no test frames to evaluate")
    report = run_eval(config, _latest_checkpoint(config, args.checkpoint), frames)
    print(report.as_table())
    path = args.output or os.path.join(config.paths.output_dir, "metrics.jsonl")
    if os.path.exists(path):
        os.remove(path)
    log = RecordLog(path)
    for record in report.as_records():
        log.write(record)


COMMANDS: Dict[str, Callable[[argparse.Namespace, Config], None]] = {
    "generate": cmd_generate,
    "train1": cmd_train1,
    "train2": cmd_train2,
    "train3": cmd_train3,
    "render": cmd_render,
    "predict": cmd_predict,
    "eval": cmd_eval,
}


def _compare_list(value: str) -> List[str]:
    methods = [m for m in value.split(",") if m]
    unknown = [m for m in methods if m not in COMPARE_METHODS]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown comparison {unknown[0]!r}; choose from {', '.join(COMPARE_METHODS)}"
        )
    return methods


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--threads", type=int, help="maximum worker threads")
    common.add_argument(
        "--deterministic", action="store_true", help="single-threaded, fixed-order execution"
    )
    common.add_argument("--seed", type=int)
    common.add_argument("--data-dir", help="dataset directory (overrides paths.data_dir)")
    common.add_argument("--checkpoint-dir", help="overrides paths.checkpoint_dir")
    common.add_argument("--output-dir", help="overrides paths.output_dir")
    common.add_argument(
        "--split-time", type=float, help="train on t < split, evaluate on t >= split"
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="logging level",
    )
    common.add_argument("--progress", action="store_true", help="show progress bars")

    parser = argparse.ArgumentParser(
        prog="splatcast", description="Dynamic Gaussian scenes and motion forecasting."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {version}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="render a synthetic dataset")
    p = sub.add_parser("train1", parents=[common], help="train the deformable scene")
    p.add_argument(
        "--resume", action="store_true", help="continue from the stage1 checkpoint if present"
    )
    p = sub.add_parser("train2", parents=[common], help="distill key points")
    p.add_argument(
        "--resume", action="store_true", help="continue from the stage2 checkpoint if present"
    )
    p.add_argument("--influence", help="write a key-point influence PLY file")
    p = sub.add_parser("train3", parents=[common], help="train the forecaster")
    p.add_argument(
        "--no-joint", action="store_true", help="skip the joint fine-tuning against images"
    )
    p.add_argument("--trajectory", help="write the sampled key-point trajectories")

    for name, help_text in (
        ("render", "render a checkpoint"),
        ("predict", "forecast future frames"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--checkpoint", help=_CHECKPOINT_HELP)
        p.add_argument("--view", type=int, default=0, help="test camera index")
        p.add_argument("--orbit", action="store_true", help="use an orbit camera path instead")
    render_parser = sub.choices["render"]
    render_parser.add_argument("--times", type=float, nargs="+", help="times to render")
    render_parser.add_argument("--method", choices=COMPARE_METHODS, help="rendering method")
    predict_parser = sub.choices["predict"]
    predict_parser.add_argument(
        "--start", type=float, help="first predicted time (default: last observed)"
    )
    predict_parser.add_argument("--end", type=float, help="last predicted time")
    predict_parser.add_argument("--frames", type=int, help="number of predicted frames")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    p.add_argument("--checkpoint", help=_CHECKPOINT_HELP)
    p.add_argument(
        "--compare", type=_compare_list, help="comma-separated baselines: freeze,stage1,mlp,gcn"
    )
    p.add_argument("--output", help="metric records file (default: <output_dir>/metrics.jsonl)")
    return parser


def _flag(args: argparse.Namespace, name: str) -> Any:
    return getattr(args, name, None)


def config_from_args(args: argparse.Namespace) -> Config:
    """Load the config file and apply command-line overrides."""
    config = Config.from_file(args.config) if args.config else Config()
    document = config.as_document()
    if args.threads is not None:
        document["threads"] = validate("threads", args.threads)
    if args.deterministic:
        document["deterministic"] = True
    if args.seed is not None:
        document["seed"] = args.seed
    paths = {
        "data_dir": args.data_dir,
        "checkpoint_dir": args.checkpoint_dir,
        "output_dir": args.output_dir,
    }
    document["paths"].update({k: v for k, v in paths.items() if v is not None})
    evaluation = {
        "split_time": args.split_time,
        "compare": _flag(args, "compare"),
        "predict_start": _flag(args, "start"),
        "predict_end": _flag(args, "end"),
        "predict_frames": _flag(args, "frames"),
    }
    document["eval"].update({k: v for k, v in evaluation.items() if v is not None})
    return Config(document)


def _configure_logging(level: str) -> None:
    root = logging.getLogger("splatcast")
    if not any(getattr(h, "_splatcast", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        handler._splatcast = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        config = config_from_args(args)
        COMMANDS[args.command](args, config)
    except SplatcastError as exc:
        _log.debug("command %s failed", args.command, exc_info=True)
        record = exc.as_record()
        record["command"] = args.command
        line = json_util.dumps(record, json_options=json_util.RELAXED_JSON_OPTIONS)
        sys.stderr.write(line + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
