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

"""Utilities for testing splatcast with any framework."""

import copy
import math
import os

import numpy as np

from splatcast.common import Config
from splatcast.scene_io import FrameSample, SyntheticSceneSpec, synthetic_ground_truth
from splatcast.splat_core import Camera, GaussianSet

# mypy: ignore-errors


def get_async_test_timeout(default=5):
    """Get the global timeout setting for async tests.

    Returns a float, the timeout in seconds.
    """
    try:
        timeout = float(os.environ.get("ASYNC_TEST_TIMEOUT"))
        return max(timeout, default)
    except (ValueError, TypeError):
        return default


# Gradient checking.


def numeric_gradient(fn, x, eps=1e-6):
    """Central differences of the scalar `fn()` with respect to every entry
    of the float64 array `x`, which is perturbed in place and restored.
    """
    assert x.dtype == np.float64, "finite differences need float64"
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        plus = fn()
        flat[i] = saved - eps
        minus = fn()
        flat[i] = saved
        out[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    """``‖a − n‖ / max(‖a‖, ‖n‖)``, zero when both vanish."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


class GradientCheckMixin:
    """Adds :meth:`assertGradientClose` to a TestCase."""

    gradient_tolerance = 1e-4

    def assertGradientClose(self, analytic, fn, x, eps=1e-6, msg=None):
        numeric = numeric_gradient(fn, x, eps)
        err = relative_error(analytic, numeric)
        self.assertLess(err, self.gradient_tolerance, msg or f"relative gradient error {err:.3g}")


# Scene builders.


def random_gaussians(rng, n, motion_dim=0, spread=0.5, opacity_max=0.6, dtype=np.float64):
    """Gaussians scattered around the origin with moderate opacity."""
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    opacity = rng.uniform(0.2, opacity_max, n)
    return GaussianSet(
        mu=rng.uniform(-spread, spread, (n, 3)).astype(dtype),
        rot=rot.astype(dtype),
        log_scale=np.log(rng.uniform(0.08, 0.2, (n, 3))).astype(dtype),
        color=rng.uniform(0.0, 1.0, (n, 3)).astype(dtype),
        opacity_logit=np.log(opacity / (1 - opacity)).astype(dtype),
        motion_feat=rng.normal(0.0, 0.1, (n, motion_dim)).astype(dtype),
    )


def front_camera(resolution=(32, 32), distance=3.0, fov_deg=50.0, azimuth_deg=-90.0):
    """A camera on the horizontal circle of radius `distance` looking at the
    origin.
    """
    azimuth = math.radians(azimuth_deg)
    eye = (distance * math.cos(azimuth), distance * math.sin(azimuth), 0.3)
    return Camera.look_at(eye, (0.0, 0.0, 0.0), math.radians(fov_deg), resolution)


TINY_CONFIG = {
    "seed": 0,
    "deterministic": True,
    "stage1": {
        "iterations": 20,
        "warmup": 5,
        "n_gaussians": 60,
        "motion_dim": 4,
        "pos_freqs": 3,
        "time_freqs": 2,
        "deform_depth": 2,
        "deform_width": 16,
        "opacity_depth": 1,
        "opacity_width": 8,
        "prune_interval": 0,
        "log_interval": 10,
    },
    "stage2": {
        "k_init": 4,
        "n_max": 8,
        "n_near": 2,
        "phase1_iterations": 6,
        "phase2_iterations": 4,
        "increase_interval": 3,
        "hash_levels": 2,
        "hash_base_resolution": 4,
        "hash_log2_table": 8,
        "weight_width": 8,
        "log_interval": 5,
    },
    "stage3": {
        "window": 3,
        "graph_layers": 1,
        "features": 8,
        "k_graph": 2,
        "steps": 12,
        "iterations": 40,
        "joint_iterations": 2,
        "log_interval": 20,
    },
    "synthetic": {
        "n_gaussians": 40,
        "frame_count": 6,
        "test_count": 2,
        "resolution": [24, 24],
    },
}


def tiny_config(**sections):
    """A Config with networks and schedules small enough for unit tests.

    Keyword arguments are merged per section, e.g.
    ``tiny_config(stage1={"iterations": 0})``.
    """
    document = copy.deepcopy(TINY_CONFIG)
    for section, values in sections.items():
        if isinstance(values, dict):
            document.setdefault(section, {}).update(values)
        else:
            document[section] = values
    return Config(document)


def synthetic_scene(generator="oscillator", n_gaussians=40, frames=6, test=2, resolution=(24, 24), seed=0, **kwargs):
    """An in-memory synthetic scene: ``(truth, train_frames, test_frames, bbox)``."""
    spec = SyntheticSceneSpec(
        generator=generator,
        n_gaussians=n_gaussians,
        frame_count=frames,
        test_count=test,
        resolution=tuple(resolution),
        seed=seed,
        **kwargs,
    )
    truth = synthetic_ground_truth(spec)
    samples = [
        FrameSample(truth.render_frame(i), truth.camera(i), float(truth.times[i])) for i in range(len(truth.times))
    ]
    train = [s for s, split in zip(samples, truth.splits) if split == "train"]
    held_out = [s for s, split in zip(samples, truth.splits) if split == "test"]
    extent = float(np.abs(truth.positions).max()) + 0.5
    bbox = np.array([[-extent] * 3, [extent] * 3])
    return truth, train, held_out, bbox
