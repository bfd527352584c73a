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

"""Datasets, synthetic scenes with ground truth, and checkpoints.

Manifests follow the Blender ``transforms_*.json`` layout with an extra
per-frame ``time``. Checkpoints and ground-truth bundles are single BSON
documents whose tensors are raw little-endian buffers; see
``doc/formats.rst`` for the layouts.
"""
import dataclasses
import json
import logging
import math
import os
from typing import Any, Dict, Iterator, List, Optional, Sequence, Set, Tuple

import bson
import imageio.v3 as iio
import numpy as np
from bson import json_util
from bson.binary import Binary
from bson.errors import BSONError

from splatcast.errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigurationError,
    ManifestError,
    ShapeMismatchError,
)
from splatcast.splat_core import Camera, GaussianSet, RasterSettings, rasterize
from splatcast.tensor_nn import make_rng

_log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "splatcast-checkpoint"
CHECKPOINT_VERSION = 1
GROUND_TRUTH_FORMAT = "splatcast-ground-truth"
GROUND_TRUTH_VERSION = 1

DEFAULT_BBOX = ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))

# Blender cameras look down -z with y up; OpenCV looks down +z with y down.
_FLIP_YZ = np.diag([1.0, -1.0, -1.0, 1.0])


def blender_to_opencv(cam_to_world: np.ndarray) -> np.ndarray:
    return np.asarray(cam_to_world, dtype=np.float64) @ _FLIP_YZ


def opencv_to_blender(cam_to_world: np.ndarray) -> np.ndarray:
    return np.asarray(cam_to_world, dtype=np.float64) @ _FLIP_YZ


# Images.


def read_image(path: str, background: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """Read an 8-bit image as float32 RGB in [0, 1], compositing any alpha
    channel over `background`.
    """
    data = iio.imread(path)
    if data.ndim == 2:
        data = np.stack([data] * 3, axis=-1)
    image = data.astype(np.float32) / 255.0
    if image.shape[2] == 4:
        alpha = image[..., 3:]
        image = image[..., :3] * alpha + np.asarray(background, np.float32) * (1 - alpha)
    return image[..., :3]


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path: str, image: np.ndarray) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    iio.imwrite(path, to_uint8(image))


# Frames and manifests.


@dataclasses.dataclass
class FrameSample:
    """One training or test observation."""

    image: np.ndarray
    camera: Camera
    t: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.t <= 1.0:
            raise ConfigurationError(f"frame time {self.t} is outside [0, 1]")
        width, height = self.camera.resolution
        if self.image.shape != (height, width, 3):
            raise ShapeMismatchError(
                f"image shape {self.image.shape} does not match camera resolution {(width, height)}"
            )


@dataclasses.dataclass
class ManifestFrame:
    file_path: str
    cam_to_world: np.ndarray
    time: float


@dataclasses.dataclass
class DatasetManifest:
    """A parsed ``transforms_*.json`` file.

    `cam_to_world` matrices are kept in the Blender convention they are
    stored in; :meth:`camera` converts them.
    """

    root: str
    fov_x: float
    resolution: Tuple[int, int]
    frames: List[ManifestFrame]
    bbox: np.ndarray
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __len__(self) -> int:
        return len(self.frames)

    def image_path(self, index: int) -> str:
        return _resolve_image(self.root, self.frames[index].file_path) or os.path.join(
            self.root, self.frames[index].file_path
        )

    def camera(self, index: int, near: float = 0.01, far: float = 100.0) -> Camera:
        cam_to_world = blender_to_opencv(self.frames[index].cam_to_world)
        return Camera.from_fov(self.fov_x, self.resolution, cam_to_world, near, far)

    def frame_samples(
        self,
        near: float = 0.01,
        far: float = 100.0,
        time_range: Optional[Tuple[float, float]] = None,
    ) -> List[FrameSample]:
        """Load every frame whose time lies in the half-open `time_range`."""
        samples = []
        for index, frame in enumerate(self.frames):
            if time_range is not None and not time_range[0] <= frame.time < time_range[1]:
                continue
            image = read_image(self.image_path(index), self.background)
            samples.append(FrameSample(image, self.camera(index, near, far), frame.time))
        return samples

    def as_document(self) -> Dict[str, Any]:
        return {
            "camera_angle_x": self.fov_x,
            "scene_bbox": self.bbox.tolist(),
            "background": list(self.background),
            "frames": [
                {
                    "file_path": frame.file_path,
                    "time": frame.time,
                    "transform_matrix": np.asarray(frame.cam_to_world).tolist(),
                }
                for frame in self.frames
            ],
        }


def _resolve_image(root: str, file_path: str) -> Optional[str]:
    path = os.path.normpath(os.path.join(root, file_path))
    for candidate in (path, path + ".png"):
        if os.path.isfile(candidate):
            return candidate
    return None


def load_manifest(path: str, check_images: bool = True) -> DatasetManifest:
    """Parse and validate a manifest.

    :Parameters:
      - `path`: the JSON file
      - `check_images` (optional): verify that every image exists and that
        all share one resolution (default True)

    Raises :class:`~splatcast.errors.ManifestError` naming the offending
    frame on any problem.
    """
    try:
        with open(path, encoding="utf-8") as stream:
            document = json.load(stream)
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None
    if not isinstance(document, dict):
        raise ManifestError(f"manifest {path} must hold a JSON object")

    try:
        fov_x = float(document["camera_angle_x"])
    except (KeyError, TypeError, ValueError):
        raise ManifestError("camera_angle_x is missing or not a number") from None
    if not 0 < fov_x < math.pi:
        raise ManifestError(f"camera_angle_x {fov_x} is not a valid field of view")

    raw_frames = document.get("frames")
    if not isinstance(raw_frames, list) or not raw_frames:
        raise ManifestError("frames must be a non-empty list")

    root = os.path.dirname(os.path.abspath(path))
    frames = []
    resolution: Optional[Tuple[int, int]] = None
    for index, raw in enumerate(raw_frames):
        if not isinstance(raw, dict):
            raise ManifestError("frame entry must be an object", index)
        file_path = raw.get("file_path")
        if not isinstance(file_path, str) or not file_path:
            raise ManifestError("file_path is missing", index)
        try:
            time = float(raw["time"])
        except (KeyError, TypeError, ValueError):
            raise ManifestError("time is missing or not a number", index) from None
        if not 0.0 <= time <= 1.0:
            raise ManifestError(f"time {time} is outside [0, 1]", index)
        try:
            matrix = np.asarray(raw["transform_matrix"], dtype=np.float64)
        except (KeyError, TypeError, ValueError):
            raise ManifestError("transform_matrix is missing or not numeric", index) from None
        if matrix.shape != (4, 4) or not np.all(np.isfinite(matrix)):
            raise ManifestError("transform_matrix must be a finite 4x4 matrix", index)
        if abs(np.linalg.det(matrix)) < 1e-9:
            raise ManifestError("transform_matrix is singular", index)
        if check_images:
            image_path = _resolve_image(root, file_path)
            if image_path is None:
                raise ManifestError(f"image {file_path} does not exist", index)
            shape = iio.improps(image_path).shape
            frame_resolution = (int(shape[1]), int(shape[0]))
            if resolution is None:
                resolution = frame_resolution
            elif frame_resolution != resolution:
                raise ManifestError(
                    f"image resolution {frame_resolution} differs from {resolution}", index
                )
        frames.append(ManifestFrame(file_path, matrix, time))

    if resolution is None:
        raw_resolution = document.get("resolution")
        if raw_resolution is None:
            raise ManifestError(
                "resolution is unknown: images were not checked and none is declared"
            )
        resolution = (int(raw_resolution[0]), int(raw_resolution[1]))

    bbox = np.asarray(document.get("scene_bbox", DEFAULT_BBOX), dtype=np.float64)
    if bbox.shape != (2, 3) or np.any(bbox[1] <= bbox[0]):
        raise ManifestError("scene_bbox must be [[min xyz], [max xyz]] with max > min")
    background = document.get("background", [0.0, 0.0, 0.0])
    if not isinstance(background, list) or len(background) != 3:
        raise ManifestError("background must be a list of three numbers")
    return DatasetManifest(
        root=root,
        fov_x=fov_x,
        resolution=resolution,
        frames=frames,
        bbox=bbox,
        background=(float(background[0]), float(background[1]), float(background[2])),
    )


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    document = manifest.as_document()
    document["resolution"] = list(manifest.resolution)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as stream:
        json.dump(document, stream, indent=2)
        stream.write("\n")


# Tensor packing shared by checkpoints and ground-truth bundles.


def pack_tensor(array: np.ndarray, float32: bool = True) -> Dict[str, Any]:
    array = np.asarray(array)
    if array.dtype.kind == "f":
        array = array.astype("<f4" if float32 else "<f8")
    elif array.dtype.kind in "iub":
        array = array.astype("<i8")
    else:
        raise CheckpointError(f"cannot store tensors of dtype {array.dtype}")
    return {
        "dtype": array.dtype.str,
        "shape": list(array.shape),
        "data": Binary(np.ascontiguousarray(array).tobytes()),
    }


def unpack_tensor(doc: Dict[str, Any], name: str = "tensor") -> np.ndarray:
    if not isinstance(doc, dict):
        raise CheckpointError(f"{name}: tensor entry is not a document")
    try:
        dtype = np.dtype(doc["dtype"])
        shape = tuple(int(s) for s in doc["shape"])
        data = bytes(doc["data"])
    except (KeyError, TypeError, ValueError):
        raise CheckpointError(f"{name}: malformed tensor entry") from None
    if dtype.kind not in "fiub" or dtype.itemsize == 0:
        raise CheckpointError(f"{name}: unsupported dtype {dtype.str}")
    if any(s < 0 for s in shape):
        raise CheckpointError(f"{name}: negative dimension in shape {shape}")
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) != expected:
        raise CheckpointError(
            f"{name}: expected {expected} bytes for shape {shape}, found {len(data)}"
        )
    return np.frombuffer(data, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def _read_document(path: str, kind: str) -> Dict[str, Any]:
    try:
        with open(path, "rb") as stream:
            raw = stream.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {kind} {path}: {exc}") from None
    try:
        return bson.decode(raw)
    except (BSONError, ValueError, IndexError) as exc:
        raise CheckpointError(f"{kind} {path} is truncated or malformed: {exc}") from None


def _write_document(path: str, document: Dict[str, Any]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as stream:
        stream.write(bson.encode(document))
    os.replace(tmp, path)


# Checkpoints.


@dataclasses.dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run.

    Tensors live in one flat table keyed by slash-separated names such as
    ``gaussians/mu`` or ``adam/deform/w0/m``; :meth:`section` and :meth:`put`
    read and write one prefix at a time. Floating-point tensors are saved as
    float32 unless their name is in `full_precision`.
    """

    stage: str
    tensors: Dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    counters: Dict[str, int] = dataclasses.field(default_factory=dict)
    rng_state: Optional[Dict[str, Any]] = None
    config: Dict[str, Any] = dataclasses.field(default_factory=dict)
    version: int = CHECKPOINT_VERSION
    full_precision: Set[str] = dataclasses.field(default_factory=set)

    def put(
        self, prefix: str, tensors: Dict[str, np.ndarray], float32: bool = True
    ) -> None:
        for name, value in tensors.items():
            key = f"{prefix}/{name}"
            self.tensors[key] = np.asarray(value)
            if float32:
                self.full_precision.discard(key)
            else:
                self.full_precision.add(key)

    def section(self, prefix: str) -> Dict[str, np.ndarray]:
        head = prefix + "/"
        return {
            name[len(head) :]: value
            for name, value in self.tensors.items()
            if name.startswith(head)
        }

    def has_section(self, prefix: str) -> bool:
        head = prefix + "/"
        return any(name.startswith(head) for name in self.tensors)

    def require(self, prefix: str) -> Dict[str, np.ndarray]:
        section = self.section(prefix)
        if not section:
            raise CheckpointError(f"checkpoint (stage {self.stage}) has no {prefix} section")
        return section


def save_checkpoint(checkpoint: Checkpoint, path: str) -> None:
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": checkpoint.version,
        "stage": checkpoint.stage,
        "tensors": [
            {"name": name, **pack_tensor(value, name not in checkpoint.full_precision)}
            for name, value in checkpoint.tensors.items()
        ],
        "counters": {name: int(value) for name, value in checkpoint.counters.items()},
        "rng": json_util.dumps(checkpoint.rng_state) if checkpoint.rng_state is not None else None,
        "config": checkpoint.config,
    }
    _write_document(path, document)
    _log.info("wrote %s checkpoint to %s", checkpoint.stage, path)


def load_checkpoint(path: str) -> Checkpoint:
    document = _read_document(path, "checkpoint")
    if document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a splatcast checkpoint")
    version = document.get("version")
    if not isinstance(version, int):
        raise CheckpointError(f"{path} has no format version")
    if version > CHECKPOINT_VERSION:
        raise CheckpointVersionError(version, CHECKPOINT_VERSION)
    entries = document.get("tensors", [])
    if not isinstance(entries, list):
        raise CheckpointError(f"{path}: tensors must be a list")
    tensors = {}
    full_precision: Set[str] = set()
    for entry in entries:
        name = entry.get("name") if isinstance(entry, dict) else None
        if not isinstance(name, str):
            raise CheckpointError(f"{path}: tensor entry without a name")
        tensors[name] = unpack_tensor(entry, name)
        if tensors[name].dtype == np.float64:
            full_precision.add(name)
    counters = document.get("counters", {})
    if not isinstance(counters, dict) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in counters.values()
    ):
        raise CheckpointError(f"{path}: counters must map names to integers")
    config = document.get("config", {})
    if not isinstance(config, dict):
        raise CheckpointError(f"{path}: config must be a document")
    rng = document.get("rng")
    rng_state = None
    if rng is not None:
        try:
            rng_state = json_util.loads(rng)
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: unreadable generator state: {exc}") from None
        if not isinstance(rng_state, dict):
            raise CheckpointError(f"{path}: generator state must be a document")
    return Checkpoint(
        stage=str(document.get("stage")),
        tensors=tensors,
        counters=dict(counters),
        rng_state=rng_state,
        config=dict(config),
        version=version,
        full_precision=full_precision,
    )


def gaussians_state(gaussians: GaussianSet) -> Dict[str, np.ndarray]:
    return dict(gaussians.parameters())


def gaussians_from_state(state: Dict[str, np.ndarray]) -> GaussianSet:
    try:
        return GaussianSet(**{name: state[name].astype(np.float32) for name in GaussianSet.FIELDS})
    except KeyError as exc:
        raise CheckpointError(f"gaussian section lacks {exc}") from None


# Progress records.


class RecordLog:
    """Appends line-delimited JSON records to a file; a None path discards
    them.
    """

    def __init__(self, path: Optional[str]) -> None:
        self.path = path
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

    def write(self, record: Dict[str, Any]) -> None:
        if not self.path:
            return
        line = json_util.dumps(record, json_options=json_util.RELAXED_JSON_OPTIONS)
        with open(self.path, "a", encoding="utf-8") as stream:
            stream.write(line + "\n")


def read_records(path: str) -> Iterator[Dict[str, Any]]:
    with open(path, encoding="utf-8") as stream:
        for line in stream:
            if line.strip():
                yield json_util.loads(line)


# Synthetic scenes.


@dataclasses.dataclass
class SyntheticSceneSpec:
    """Parameters of a generated scene. Identical specs produce identical
    files.
    """

    generator: str = "oscillator"
    n_gaussians: int = 600
    amplitude: float = 0.3
    period: float = 1.0
    frame_count: int = 40
    test_count: int = 8
    resolution: Tuple[int, int] = (64, 64)
    orbit_radius: float = 4.0
    orbit_elevation_deg: float = 20.0
    fov_deg: float = 40.0
    vanish_time: Optional[float] = 0.6
    seed: int = 0

    @classmethod
    def from_options(cls, options: Any, seed: int) -> "SyntheticSceneSpec":
        values = dict(options)
        if values.get("seed") is None:
            values["seed"] = seed
        values["resolution"] = tuple(values["resolution"])
        return cls(**values)


_CLUSTER_COLORS = np.array(
    [[0.9, 0.3, 0.2], [0.2, 0.7, 0.3], [0.2, 0.4, 0.9], [0.9, 0.8, 0.2]], dtype=np.float64
)


@dataclasses.dataclass
class GroundTruth:
    """The animated scene behind a synthetic dataset.

    ``positions[i]`` and ``alpha_mult[i]`` are the exact float32 centers and
    opacity multipliers rendered into frame ``i``; frames are ordered train
    first, then test.
    """

    generator: str
    gaussians: GaussianSet
    labels: np.ndarray
    directions: np.ndarray
    phases: np.ndarray
    amplitude: float
    period: float
    vanish_time: Optional[float]
    vanish_cluster: Optional[int]
    times: np.ndarray
    splits: List[str]
    cam_to_world: np.ndarray
    fov_x: float
    resolution: Tuple[int, int]
    positions: np.ndarray
    alpha_mult: np.ndarray

    def displacement(self, t: float) -> np.ndarray:
        """Analytic per-Gaussian offset from the canonical centers at `t`."""
        omega = 2 * math.pi / self.period
        if self.generator == "rigid-orbit":
            offset = self.amplitude * np.array([math.cos(omega * t) - 1, math.sin(omega * t), 0.0])
            return np.broadcast_to(offset, self.gaussians.mu.shape).copy()
        wave = np.sin(omega * t + self.phases[self.labels])
        return self.amplitude * wave[:, None] * self.directions[self.labels]

    def opacity_at(self, t: float) -> np.ndarray:
        mult = np.ones(len(self.labels), dtype=np.float32)
        if self.vanish_cluster is None or self.vanish_time is None:
            return mult
        if t >= self.vanish_time:
            mult[self.labels == self.vanish_cluster] = 0
        return mult

    def gaussians_at(self, index: int) -> GaussianSet:
        return self.gaussians.replace(mu=self.positions[index].copy())

    def camera(self, index: int, near: float = 0.01, far: float = 100.0) -> Camera:
        return Camera.from_fov(self.fov_x, self.resolution, self.cam_to_world[index], near, far)

    def render_frame(self, index: int, background: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
        output = rasterize(
            self.gaussians_at(index),
            self.camera(index),
            background,
            alpha_mult=self.alpha_mult[index],
            settings=RasterSettings(threads=1),
        )
        return output.image


def _base_scene(
    spec: SyntheticSceneSpec, rng: np.random.Generator
) -> Tuple[GaussianSet, np.ndarray, np.ndarray, np.ndarray]:
    n = spec.n_gaussians
    if spec.generator == "rigid-orbit":
        n_clusters = 1
        labels = np.zeros(n, dtype=np.int64)
        mu = rng.normal(0.0, 0.35, (n, 3))
    elif spec.generator == "split-cluster":
        n_clusters = 2
        labels = np.arange(n, dtype=np.int64) % 2
        mu = rng.uniform(-0.5, 0.5, (n, 3))
    else:
        n_clusters = 4
        labels = np.arange(n, dtype=np.int64) % n_clusters
        centers = rng.uniform(-0.6, 0.6, (n_clusters, 3))
        mu = centers[labels] + rng.normal(0.0, 0.18, (n, 3))

    if spec.generator == "split-cluster":
        directions = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        phases = np.zeros(2)
    else:
        directions = rng.normal(size=(n_clusters, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        phases = rng.uniform(0.0, 2 * math.pi, n_clusters)

    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    color = 0.7 * _CLUSTER_COLORS[labels % len(_CLUSTER_COLORS)] + rng.uniform(0.0, 0.3, (n, 3))
    gaussians = GaussianSet(
        mu=mu.astype(np.float32),
        rot=rot.astype(np.float32),
        log_scale=np.log(rng.uniform(0.03, 0.08, (n, 3))).astype(np.float32),
        color=np.clip(color, 0.0, 1.0).astype(np.float32),
        opacity_logit=np.full(n, 2.0, dtype=np.float32),
        motion_feat=np.zeros((n, 0), dtype=np.float32),
    )
    return gaussians, labels, directions, phases


def _orbit_pose(spec: SyntheticSceneSpec, azimuth: float, elevation_deg: float) -> np.ndarray:
    elevation = math.radians(elevation_deg)
    eye = spec.orbit_radius * np.array(
        [
            math.cos(elevation) * math.cos(azimuth),
            math.cos(elevation) * math.sin(azimuth),
            math.sin(elevation),
        ]
    )
    camera = Camera.look_at(eye, (0.0, 0.0, 0.0), math.radians(spec.fov_deg), spec.resolution)
    return camera.cam_to_world


def synthetic_ground_truth(spec: SyntheticSceneSpec) -> GroundTruth:
    """Build the animated scene and camera path for `spec` without touching
    the disk.
    """
    if spec.generator not in ("oscillator", "rigid-orbit", "split-cluster", "vanish-cluster"):
        raise ConfigurationError(f"unknown synthetic generator {spec.generator!r}")
    if spec.frame_count < 2:
        raise ConfigurationError("a synthetic scene needs at least two training frames")
    rng = make_rng(spec.seed)
    gaussians, labels, directions, phases = _base_scene(spec, rng)

    train_times = np.linspace(0.0, 1.0, spec.frame_count)
    test_times = (np.arange(spec.test_count) + 0.5) / max(spec.test_count, 1)
    times = np.concatenate([train_times, test_times])
    splits = ["train"] * spec.frame_count + ["test"] * spec.test_count
    golden = math.pi * (3 - math.sqrt(5))
    poses = []
    for i in range(spec.frame_count):
        poses.append(_orbit_pose(spec, i * golden, spec.orbit_elevation_deg + 10.0 * ((i % 3) - 1)))
    for i in range(spec.test_count):
        azimuth = 2 * math.pi * (i + 0.5) / spec.test_count + 0.3
        poses.append(_orbit_pose(spec, azimuth, spec.orbit_elevation_deg))

    truth = GroundTruth(
        generator=spec.generator,
        gaussians=gaussians,
        labels=labels,
        directions=directions,
        phases=phases,
        amplitude=spec.amplitude,
        period=spec.period,
        vanish_time=spec.vanish_time if spec.generator == "vanish-cluster" else None,
        vanish_cluster=0 if spec.generator == "vanish-cluster" else None,
        times=times,
        splits=splits,
        cam_to_world=np.stack(poses),
        fov_x=math.radians(spec.fov_deg),
        resolution=spec.resolution,
        positions=np.empty((len(times), spec.n_gaussians, 3), dtype=np.float32),
        alpha_mult=np.empty((len(times), spec.n_gaussians), dtype=np.float32),
    )
    for i, t in enumerate(times):
        centers = gaussians.mu.astype(np.float64) + truth.displacement(float(t))
        truth.positions[i] = centers.astype(np.float32)
        truth.alpha_mult[i] = truth.opacity_at(float(t))
    return truth


def generate_synthetic(spec: SyntheticSceneSpec, out_dir: str) -> GroundTruth:
    """Render a synthetic dataset into `out_dir`.

    Writes ``transforms_train.json``, ``transforms_test.json``, the PNG
    frames under ``train/`` and ``test/``, and ``ground_truth.bson``.
    """
    truth = synthetic_ground_truth(spec)
    extent = np.abs(truth.positions).max() + 0.5
    bbox = np.array([[-extent] * 3, [extent] * 3])
    manifests: Dict[str, DatasetManifest] = {}
    counters = {"train": 0, "test": 0}
    for index, split in enumerate(truth.splits):
        number = counters[split]
        counters[split] += 1
        rel = f"./{split}/r_{number:03d}.png"
        write_image(os.path.join(out_dir, rel), truth.render_frame(index))
        manifest = manifests.setdefault(
            split, DatasetManifest(os.path.abspath(out_dir), truth.fov_x, spec.resolution, [], bbox)
        )
        pose = opencv_to_blender(truth.cam_to_world[index])
        manifest.frames.append(ManifestFrame(rel, pose, float(truth.times[index])))
    for split in ("train", "test"):
        if split in manifests:
            write_manifest(manifests[split], os.path.join(out_dir, f"transforms_{split}.json"))
    save_ground_truth(truth, os.path.join(out_dir, "ground_truth.bson"))
    _log.info("generated %s scene with %d frames in %s", spec.generator, len(truth.times), out_dir)
    return truth


def save_ground_truth(truth: GroundTruth, path: str) -> None:
    document = {
        "format": GROUND_TRUTH_FORMAT,
        "version": GROUND_TRUTH_VERSION,
        "generator": truth.generator,
        "amplitude": truth.amplitude,
        "period": truth.period,
        "vanish_time": truth.vanish_time,
        "vanish_cluster": truth.vanish_cluster,
        "fov_x": truth.fov_x,
        "resolution": list(truth.resolution),
        "splits": truth.splits,
        "gaussians": {
            name: pack_tensor(value) for name, value in truth.gaussians.parameters().items()
        },
        "labels": pack_tensor(truth.labels),
        "directions": pack_tensor(truth.directions, float32=False),
        "phases": pack_tensor(truth.phases, float32=False),
        "times": pack_tensor(truth.times, float32=False),
        "cam_to_world": pack_tensor(truth.cam_to_world, float32=False),
        "positions": pack_tensor(truth.positions),
        "alpha_mult": pack_tensor(truth.alpha_mult),
    }
    _write_document(path, document)


def load_ground_truth(path: str) -> GroundTruth:
    document = _read_document(path, "ground-truth bundle")
    if document.get("format") != GROUND_TRUTH_FORMAT:
        raise CheckpointError(f"{path} is not a splatcast ground-truth bundle")
    if document.get("version", 0) > GROUND_TRUTH_VERSION:
        raise CheckpointVersionError(document["version"], GROUND_TRUTH_VERSION)
    gaussians = GaussianSet(
        **{name: unpack_tensor(doc, name) for name, doc in document["gaussians"].items()}
    )
    return GroundTruth(
        generator=document["generator"],
        gaussians=gaussians,
        labels=unpack_tensor(document["labels"], "labels"),
        directions=unpack_tensor(document["directions"], "directions"),
        phases=unpack_tensor(document["phases"], "phases"),
        amplitude=float(document["amplitude"]),
        period=float(document["period"]),
        vanish_time=document.get("vanish_time"),
        vanish_cluster=document.get("vanish_cluster"),
        times=unpack_tensor(document["times"], "times"),
        splits=list(document["splits"]),
        cam_to_world=unpack_tensor(document["cam_to_world"], "cam_to_world"),
        fov_x=float(document["fov_x"]),
        resolution=(int(document["resolution"][0]), int(document["resolution"][1])),
        positions=unpack_tensor(document["positions"], "positions"),
        alpha_mult=unpack_tensor(document["alpha_mult"], "alpha_mult"),
    )
