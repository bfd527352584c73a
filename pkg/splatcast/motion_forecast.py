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

"""Stage three: forecast key-point trajectories with a graph network.

The network sees a window of ``W`` consecutive key-point positions, centered
on the centroid of the last frame, and predicts each key point's
displacement from its last observed position. Future frames are produced by
sliding the window over its own predictions.
"""
import dataclasses
import logging
import math
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from splatcast.common import Config
from splatcast.errors import ConfigurationError, ShapeMismatchError
from splatcast.keypoint_distill import (
    KeyPointMotion,
    Stage2State,
    Stage2Trainer,
    keypoint_motion,
    stage2_checkpoint,
    stage2_from_checkpoint,
)
from splatcast.scene_io import Checkpoint, FrameSample, RecordLog
from splatcast.splat_core import Camera, RasterSettings
from splatcast.tensor_nn import Adam, make_rng

_log = logging.getLogger(__name__)

_STEP_TOLERANCE = 1e-9


@dataclasses.dataclass
class TrajectoryWindow:
    """``W`` consecutive key-point frames at a constant time step."""

    positions: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self) -> None:
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ShapeMismatchError(
                f"window positions must be (W, K, 3), got {self.positions.shape}"
            )
        if len(self.timestamps) != self.positions.shape[0]:
            raise ShapeMismatchError("window needs one timestamp per frame")
        steps = np.diff(self.timestamps)
        uneven = len(steps) > 0 and np.max(np.abs(steps - steps[0])) > _STEP_TOLERANCE
        if np.any(steps <= 0) or uneven:
            raise ConfigurationError("window timestamps must increase by a constant step")


def build_graph(mu: np.ndarray, k_graph: int) -> np.ndarray:
    """Row-normalized adjacency of the symmetric ``k_graph``-nearest-neighbor
    graph over canonical key-point positions, self-loops included.

    Asking for at least ``N − 1`` neighbors yields the complete graph.
    """
    mu = np.asarray(mu, dtype=np.float64)
    n = len(mu)
    if n < 2:
        raise ConfigurationError("a key-point graph needs at least two key points")
    if k_graph >= n - 1:
        adjacency = np.ones((n, n))
    else:
        d2 = np.sum((mu[:, None, :] - mu[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k_graph]
        adjacency = np.zeros((n, n))
        adjacency[np.repeat(np.arange(n), k_graph), nearest.ravel()] = 1
        adjacency = np.maximum(adjacency, adjacency.T)
        np.fill_diagonal(adjacency, 1)
    return adjacency / adjacency.sum(axis=1, keepdims=True)


class ForecastNet:
    """Graph convolutions ``ReLU(A·H·Θ + b)``, each followed by a linear
    mixing across the window, and a linear decoder from the flattened window
    features of a node to its 3D displacement.

    Mixing matrices start at the identity and the decoder at zero, so a
    fresh network predicts the last observed frame.
    """

    def __init__(
        self,
        adjacency: np.ndarray,
        window: int = 5,
        layers: int = 3,
        features: int = 64,
        rng: Optional[np.random.Generator] = None,
        dtype: type = np.float64,
    ) -> None:
        adjacency = np.asarray(adjacency, dtype=dtype)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise ShapeMismatchError("adjacency must be square")
        rng = rng if rng is not None else make_rng(0)
        self.adjacency = adjacency
        self.window = window
        self.layers = layers
        self.features = features
        self.params: Dict[str, np.ndarray] = {}
        fan_in = 3
        for layer in range(layers):
            std = math.sqrt(2.0 / fan_in)
            self.params[f"theta{layer}"] = rng.normal(0.0, std, (fan_in, features)).astype(dtype)
            self.params[f"bias{layer}"] = np.zeros(features, dtype=dtype)
            self.params[f"mix{layer}"] = np.eye(window, dtype=dtype)
            fan_in = features
        self.params["decoder/w"] = np.zeros((window * fan_in, 3), dtype=dtype)
        self.params["decoder/b"] = np.zeros(3, dtype=dtype)

    @classmethod
    def from_config(
        cls, config: Config, keypoint_mu: np.ndarray, rng: Optional[np.random.Generator] = None
    ) -> "ForecastNet":
        opts = config.stage3
        adjacency = build_graph(keypoint_mu, opts.k_graph)
        return cls(adjacency, opts.window, opts.graph_layers, opts.features, rng)

    @property
    def n_keypoints(self) -> int:
        return int(self.adjacency.shape[0])

    def _check(self, windows: np.ndarray) -> None:
        if windows.shape[1:] != (self.window, self.n_keypoints, 3):
            raise ShapeMismatchError(
                f"expected windows of shape (B, {self.window}, {self.n_keypoints}, 3), "
                f"got {windows.shape}"
            )

    def forward(self, windows: np.ndarray) -> Tuple[np.ndarray, list]:
        """Predict the next frame for a batch of windows ``(B, W, K, 3)``."""
        self._check(windows)
        windows = windows.astype(self.adjacency.dtype, copy=False)
        last = windows[:, -1]
        center = last.mean(axis=1)
        h = windows - center[:, None, None, :]
        cache = []
        for layer in range(self.layers):
            ah = np.einsum("kj,bwjf->bwkf", self.adjacency, h)
            z = ah @ self.params[f"theta{layer}"] + self.params[f"bias{layer}"]
            g = np.maximum(z, 0)
            cache.append((ah, z, g))
            h = np.einsum("wv,bvkf->bwkf", self.params[f"mix{layer}"], g)
        b, w, k, f = h.shape
        flat = h.transpose(0, 2, 1, 3).reshape(b, k, w * f)
        cache.append(flat)
        return last + flat @ self.params["decoder/w"] + self.params["decoder/b"], cache

    def __call__(self, windows: np.ndarray) -> np.ndarray:
        return self.forward(windows)[0]

    def backward(self, cache: list, dpred: np.ndarray) -> Dict[str, np.ndarray]:
        flat = cache[-1]
        grads = {
            "decoder/w": np.einsum("bkf,bkc->fc", flat, dpred),
            "decoder/b": dpred.sum(axis=(0, 1)),
        }
        b, k, _ = flat.shape
        dh = (dpred @ self.params["decoder/w"].T).reshape(b, k, self.window, -1)
        dh = dh.transpose(0, 2, 1, 3)
        for layer in reversed(range(self.layers)):
            ah, z, g = cache[layer]
            mix = self.params[f"mix{layer}"]
            grads[f"mix{layer}"] = np.einsum("bwkf,bvkf->wv", dh, g)
            dz = np.einsum("wv,bwkf->bvkf", mix, dh) * (z > 0)
            grads[f"theta{layer}"] = np.einsum("bwkf,bwkg->fg", ah, dz)
            grads[f"bias{layer}"] = dz.sum(axis=(0, 1, 2))
            if layer:
                dah = dz @ self.params[f"theta{layer}"].T
                dh = np.einsum("kj,bwkf->bwjf", self.adjacency, dah)
        return grads

    def parameters(self) -> Dict[str, np.ndarray]:
        return self.params

    def load_parameters(self, state: Dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            if name not in self.params or self.params[name].shape != value.shape:
                raise ShapeMismatchError(f"forecast parameter {name} does not fit this network")
            self.params[name][...] = value


def forecast_step(net: ForecastNet, window: np.ndarray) -> np.ndarray:
    """Next-step key-point positions ``(K, 3)`` from one window ``(W, K, 3)``."""
    window = np.asarray(window)
    if window.ndim != 3:
        raise ShapeMismatchError(f"window must be (W, K, 3), got {window.shape}")
    return net(window[None])[0]


def rollout(net: ForecastNet, seed_window: np.ndarray, n_steps: int) -> np.ndarray:
    """Autoregressive prediction of `n_steps` frames ``(n_steps, K, 3)``."""
    if n_steps < 1:
        raise ConfigurationError("rollout needs at least one step")
    window = np.array(seed_window, dtype=net.adjacency.dtype)
    out = []
    for _ in range(n_steps):
        nxt = forecast_step(net, window)
        out.append(nxt)
        window = np.concatenate([window[1:], nxt[None]], axis=0)
    return np.stack(out)


def sliding_windows(positions: np.ndarray, window: int) -> Tuple[np.ndarray, np.ndarray]:
    """All ``(inputs, targets)`` pairs of a trajectory ``(S, K, 3)``."""
    steps = positions.shape[0]
    if steps < window + 1:
        raise ConfigurationError(f"need at least {window + 1} observed steps, got {steps}")
    idx = np.arange(steps - window)[:, None] + np.arange(window)[None, :]
    return positions[idx], positions[window:]


def forecast_loss(net: ForecastNet, positions: np.ndarray) -> float:
    """Mean squared next-step error over every sliding window."""
    inputs, targets = sliding_windows(positions, net.window)
    return float(np.mean((net(inputs) - targets) ** 2))


def sample_trajectories(
    state: Stage2State, t_start: float, t_end: float, steps: int = 60
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Key-point positions ``μᵏ + T(t)`` and rotations at `steps` uniform
    times over ``[t_start, t_end]``. Returns ``(times, positions, rotations)``.
    """
    times = np.linspace(t_start, t_end, steps)
    positions = np.empty((steps, len(state.keypoints), 3))
    rotations = np.empty((steps, len(state.keypoints), 4))
    for i, t in enumerate(times):
        motion = keypoint_motion(state.keypoints, state.scene.field, float(t))
        positions[i] = state.keypoints.mu + motion.T
        rotations[i] = motion.Q
    return times, positions, rotations


def train_stage3(
    net: ForecastNet,
    positions: np.ndarray,
    config: Config,
    rng: Optional[np.random.Generator] = None,
    records: Optional[RecordLog] = None,
    progress: bool = False,
) -> List[float]:
    """Fit `net` to next-step prediction over all sliding windows of
    `positions` ``(S, K, 3)``; returns the per-iteration losses.
    """
    opts = config.stage3
    rng = rng if rng is not None else make_rng(config.seed + 2)
    records = records or RecordLog(config.paths.records)
    inputs, targets = sliding_windows(np.asarray(positions, dtype=net.adjacency.dtype), net.window)
    optimizer = Adam(net.parameters(), {name: opts.lr for name in net.parameters()})
    count = len(inputs)
    batch = count if opts.batch_size is None else min(opts.batch_size, count)
    order = np.arange(count)
    cursor = count
    losses = []
    for iteration in tqdm(range(opts.iterations), desc="stage3", disable=not progress):
        if batch == count:
            idx = order
        else:
            if cursor + batch > count:
                order = rng.permutation(count) if opts.shuffle else np.arange(count)
                cursor = 0
            idx = order[cursor : cursor + batch]
            cursor += batch
        pred, cache = net.forward(inputs[idx])
        diff = pred - targets[idx]
        loss = float(np.mean(diff * diff))
        optimizer.step(net.backward(cache, 2 * diff / diff.size))
        losses.append(loss)
        if (iteration + 1) % opts.log_interval == 0:
            _log.info("stage3 iteration %d loss %.6g", iteration + 1, loss)
            records.write(
                {
                    "stage": "stage3",
                    "iteration": iteration + 1,
                    "loss": loss,
                    "psnr": None,
                    "n_gaussians": None,
                    "n_keypoints": net.n_keypoints,
                }
            )
    return losses


def _interpolate(times: np.ndarray, track: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation of ``track[i]`` sampled at ``times[i]``; clamps
    outside the sampled range.
    """
    if t <= times[0]:
        return track[0].copy()
    if t >= times[-1]:
        return track[-1].copy()
    hi = int(np.searchsorted(times, t, side="right"))
    lo = hi - 1
    frac = (t - times[lo]) / (times[hi] - times[lo])
    return (1 - frac) * track[lo] + frac * track[hi]


@dataclasses.dataclass
class Forecaster:
    """A trained network plus the observed trajectory it extrapolates."""

    net: ForecastNet
    times: np.ndarray
    positions: np.ndarray
    rotations: np.ndarray

    @property
    def t_last(self) -> float:
        return float(self.times[-1])

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def predict_positions_at(self, t: float) -> np.ndarray:
        """Key-point positions at `t`: interpolated inside the observed range,
        rolled out and interpolated beyond it.
        """
        if t <= self.t_last:
            return _interpolate(self.times, self.positions, t)
        n_steps = int(math.ceil((t - self.t_last) / self.step - 1e-9))
        future = rollout(self.net, self.positions[-self.net.window :], n_steps)
        times = self.t_last + self.step * np.arange(n_steps + 1)
        return _interpolate(times, np.concatenate([self.positions[-1:], future]), t)

    def rotations_at(self, t: float) -> np.ndarray:
        """Rotations are held at their last observed value beyond the observed
        range.
        """
        if t >= self.t_last:
            return self.rotations[-1]
        i = int(np.clip(np.searchsorted(self.times, t), 0, len(self.times) - 1))
        return self.rotations[i]


def render_future(
    state: Stage2State,
    predicted_positions: np.ndarray,
    camera: Camera,
    t: float,
    rotations: Optional[np.ndarray] = None,
    background: Sequence[float] = (0.0, 0.0, 0.0),
    settings: Optional[RasterSettings] = None,
) -> np.ndarray:
    """Render the Gaussians driven by key points at `predicted_positions`.

    Each key point translates by ``predicted − μᵏ`` and rotates by
    `rotations` (identity when omitted); the lifecycle is evaluated at `t`.
    """
    n = len(state.keypoints)
    if predicted_positions.shape != (n, 3):
        raise ShapeMismatchError(
            f"expected ({n}, 3) predicted positions, got {predicted_positions.shape}"
        )
    if rotations is None:
        rotations = np.zeros((n, 4))
        rotations[:, 0] = 1
    dtype = state.scene.gaussians.dtype
    translation = (predicted_positions - state.keypoints.mu).astype(dtype)
    motion = KeyPointMotion(translation, rotations.astype(dtype))
    return state.render(camera, t, background, settings, motion).image


def render_prediction(
    state: Stage2State,
    forecaster: Forecaster,
    camera: Camera,
    t: float,
    background: Sequence[float] = (0.0, 0.0, 0.0),
    settings: Optional[RasterSettings] = None,
) -> np.ndarray:
    """Render `t` with the forecaster.

    Up to the last observed time this is the distilled scene itself; past it
    the key points follow the network's rollout.
    """
    if t <= forecaster.t_last:
        return state.render(camera, t, background, settings).image
    positions = forecaster.predict_positions_at(t)
    return render_future(
        state, positions, camera, t, forecaster.rotations_at(t), background, settings
    )


def build_forecaster(
    state: Stage2State,
    config: Config,
    t_start: float,
    t_end: float,
    frames: Optional[Sequence[FrameSample]] = None,
    rng: Optional[np.random.Generator] = None,
    progress: bool = False,
) -> Forecaster:
    """Stage three end to end.

    When `frames` are given, the distilled scene is first fine-tuned against
    them for ``joint_iterations`` with learning rates scaled by
    ``joint_lr_scale``; trajectories are then sampled and the network
    trained on them.
    """
    opts = config.stage3
    rng = rng if rng is not None else make_rng(config.seed + 2)
    if frames and opts.joint_iterations:
        trainer = Stage2Trainer(state, frames, config, rng, lr_scale=opts.joint_lr_scale)
        trainer.run(opts.joint_iterations, progress=progress)
    times, positions, rotations = sample_trajectories(state, t_start, t_end, opts.steps)
    net = ForecastNet.from_config(config, state.keypoints.mu, rng)
    train_stage3(net, positions, config, rng, progress=progress)
    return Forecaster(net, times, positions, rotations)


def stage3_checkpoint(state: Stage2State, forecaster: Forecaster, config: Config) -> Checkpoint:
    ckpt = stage2_checkpoint(state, config, stage="stage3")
    ckpt.put("forecast", forecaster.net.parameters(), float32=False)
    trajectory = {
        "adjacency": forecaster.net.adjacency,
        "times": forecaster.times,
        "positions": forecaster.positions,
        "rotations": forecaster.rotations,
    }
    ckpt.put("trajectory", trajectory, float32=False)
    return ckpt


def stage3_from_checkpoint(
    checkpoint: Checkpoint, config: Config
) -> Tuple[Stage2State, Forecaster]:
    state = stage2_from_checkpoint(checkpoint, config)
    trajectory = checkpoint.require("trajectory")
    opts = config.stage3
    adjacency = trajectory["adjacency"].astype(np.float64)
    net = ForecastNet(adjacency, opts.window, opts.graph_layers, opts.features)
    weights = checkpoint.require("forecast")
    net.load_parameters({k: v.astype(np.float64) for k, v in weights.items()})
    forecaster = Forecaster(
        net,
        trajectory["times"].astype(np.float64),
        trajectory["positions"].astype(np.float64),
        trajectory["rotations"].astype(np.float64),
    )
    return state, forecaster


def export_trajectory(path: str, positions: np.ndarray, first_step: int = 0) -> None:
    """Write a point-track file: a header line, then
    ``step keypoint_id x y z`` per key point per step.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as stream:
        stream.write("step keypoint_id x y z\n")
        for step, frame in enumerate(positions, start=first_step):
            for key, (x, y, z) in enumerate(frame):
                stream.write(f"{step} {key} {x:.9g} {y:.9g} {z:.9g}\n")
