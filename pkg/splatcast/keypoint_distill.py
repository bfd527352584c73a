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

"""Stage two: distill the dense deformation into a few key points.

Key points live in the same hyper-canonical space as the Gaussians. Each
Gaussian follows its ``N_near`` nearest key points with time-independent
translation and rotation weights decoded from a hash-encoded field over the
canonical positions.
"""
import dataclasses
import logging
import math
import os
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from plyfile import PlyData, PlyElement
from tqdm import tqdm

from splatcast.common import Config
from splatcast.deform_stage import (
    GAUSSIAN_PARAMS,
    DeformedGaussians,
    DeformField,
    HyperCanonicalScene,
    diverged,
    scene_from_checkpoint,
)
from splatcast.errors import ConfigurationError, ShapeMismatchError
from splatcast.losses import image_loss, psnr
from splatcast.scene_io import (
    Checkpoint,
    FrameSample,
    RecordLog,
    gaussians_state,
)
from splatcast.splat_core import (
    Camera,
    GaussianGrads,
    RasterSettings,
    RenderOutput,
    quat_multiply,
    quat_multiply_backward,
    quat_normalize,
    quat_normalize_backward,
    rasterize,
    rasterize_backward,
)
from splatcast.tensor_nn import Adam, HashGrid, Mlp, make_rng, restore_rng, rng_state

_log = logging.getLogger(__name__)

_XYZ = [("x", "f4"), ("y", "f4"), ("z", "f4")]
_RGB = [("red", "u1"), ("green", "u1"), ("blue", "u1")]


@dataclasses.dataclass
class KeyPointSet:
    """Key points ``(μᵏ, mᵏ)`` in the hyper-canonical space."""

    mu: np.ndarray
    m: np.ndarray

    def __post_init__(self) -> None:
        if self.mu.ndim != 2 or self.mu.shape[1] != 3 or self.m.shape[0] != self.mu.shape[0]:
            raise ShapeMismatchError(
                f"key point arrays have shapes {self.mu.shape} and {self.m.shape}"
            )

    def __len__(self) -> int:
        return int(self.mu.shape[0])

    def copy(self) -> "KeyPointSet":
        return KeyPointSet(self.mu.copy(), self.m.copy())

    def extended(self, mu: np.ndarray, m: np.ndarray) -> "KeyPointSet":
        return KeyPointSet(
            np.concatenate([self.mu, mu.astype(self.mu.dtype)]),
            np.concatenate([self.m, m.astype(self.m.dtype)]),
        )


@dataclasses.dataclass
class KeyPointMotion:
    """Per-key-point translation ``T`` and unit rotation ``Q`` at one time."""

    T: np.ndarray
    Q: np.ndarray
    cache: Any = None


# Hyper-space geometry.


def motion_rms(m: np.ndarray) -> float:
    """Root mean square of the motion features, or 1 when they are all zero."""
    rms = float(np.sqrt(np.mean(np.asarray(m, dtype=np.float64) ** 2))) if m.size else 0.0
    return rms if rms > 0 else 1.0


def hyper_coordinates(mu: np.ndarray, m: np.ndarray, rms: float, lambda_m: float) -> np.ndarray:
    """Embed ``(μ, m)`` so that squared Euclidean distance equals
    ``‖Δμ‖² + λ_m·‖Δm / rms‖²``.
    """
    scaled = math.sqrt(lambda_m) * np.asarray(m, dtype=np.float64) / rms
    return np.concatenate([np.asarray(mu, dtype=np.float64), scaled], axis=1)


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; returns the chosen point indices.

    When every remaining point coincides with a chosen one, the first
    unchosen index is taken.
    """
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = _squared_distances(points, points[chosen])[:, 0]
    while len(chosen) < k:
        total = float(d2.sum())
        if total <= 0:
            taken = set(chosen)
            nxt = next(i for i in range(n) if i not in taken)
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, _squared_distances(points, points[nxt : nxt + 1])[:, 0])
    return np.asarray(chosen, dtype=np.int64)


def lloyd(
    points: np.ndarray, centers: np.ndarray, max_iter: int = 50, tol: float = 1e-6
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Lloyd iterations from `centers`; returns ``(centers, labels, inertia)``.

    Stops after `max_iter` rounds or when the inertia improves by less than
    `tol` relative. Empty clusters keep their center.
    """
    centers = np.array(centers, dtype=np.float64)
    previous = None
    for _ in range(max_iter):
        d2 = _squared_distances(points, centers)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(len(points)), labels].sum())
        if previous is not None and previous - inertia <= tol * max(previous, 1e-300):
            break
        previous = inertia
        for j in range(len(centers)):
            members = labels == j
            if np.any(members):
                centers[j] = points[members].mean(axis=0)
    d2 = _squared_distances(points, centers)
    labels = np.argmin(d2, axis=1)
    return centers, labels, float(d2[np.arange(len(points)), labels].sum())


def kmeans(
    points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 50, tol: float = 1e-6
) -> Tuple[np.ndarray, np.ndarray, float]:
    points = np.asarray(points, dtype=np.float64)
    if not 1 <= k <= len(points):
        raise ConfigurationError(f"cannot form {k} clusters from {len(points)} points")
    seeds = kmeans_plusplus(points, k, rng)
    return lloyd(points, points[seeds], max_iter, tol)


def init_keypoints(
    scene: HyperCanonicalScene,
    k_init: int,
    rng: np.random.Generator,
    lambda_m: float = 1.0,
    hyper: bool = True,
) -> KeyPointSet:
    """Cluster the Gaussians into `k_init` classes in hyper space; each key
    point takes its class's mean position and mean motion feature.
    """
    g = scene.gaussians
    if k_init > len(g):
        raise ConfigurationError(f"k_init ({k_init}) exceeds the number of Gaussians ({len(g)})")
    rms = motion_rms(g.motion_feat)
    coords = hyper_coordinates(g.mu, g.motion_feat, rms, lambda_m if hyper else 0.0)
    centers, labels, inertia = kmeans(coords, k_init, rng)
    mu = np.empty((k_init, 3))
    m = np.empty((k_init, g.motion_dim))
    for j in range(k_init):
        members = labels == j
        if np.any(members):
            mu[j] = g.mu[members].mean(axis=0)
            m[j] = g.motion_feat[members].mean(axis=0)
        else:
            mu[j] = centers[j, :3]
            m[j] = g.motion_feat[np.argmin(_squared_distances(coords, centers[j : j + 1])[:, 0])]
    _log.info("initialized %d key points (inertia %.5g)", k_init, inertia)
    return KeyPointSet(mu.astype(g.dtype), m.astype(g.dtype))


def assign_neighbors(
    mu: np.ndarray,
    m: np.ndarray,
    keypoints: KeyPointSet,
    n_near: int,
    lambda_m: float = 1.0,
    rms: float = 1.0,
) -> np.ndarray:
    """The `n_near` nearest key points of every point under the hyper metric,
    closest first; equal distances resolve by key-point index.
    """
    if n_near > len(keypoints):
        raise ConfigurationError(
            f"n_near ({n_near}) exceeds the number of key points ({len(keypoints)})"
        )
    points = hyper_coordinates(mu, m, rms, lambda_m)
    keys = hyper_coordinates(keypoints.mu, keypoints.m, rms, lambda_m)
    d2 = _squared_distances(points, keys)
    return np.argsort(d2, axis=1, kind="stable")[:, :n_near]


def fps(points: np.ndarray, count: int, start_rule: str = "first") -> np.ndarray:
    """Greedy farthest-point sampling; returns indices in selection order.

    `start_rule` is ``"first"`` (index 0) or ``"centroid"`` (the point
    farthest from the centroid).
    """
    points = np.asarray(points, dtype=np.float64)
    if count > len(points):
        raise ConfigurationError(f"cannot sample {count} of {len(points)} points")
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    if start_rule == "first":
        start = 0
    elif start_rule == "centroid":
        start = int(np.argmax(np.sum((points - points.mean(axis=0)) ** 2, axis=1)))
    else:
        raise ConfigurationError(f"unknown FPS start rule {start_rule!r}")
    chosen = [start]
    nearest = np.sum((points - points[start]) ** 2, axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, np.sum((points - points[nxt]) ** 2, axis=1))
    return np.asarray(chosen, dtype=np.int64)


def adaptive_increase(
    mu: np.ndarray,
    m: np.ndarray,
    keypoints: KeyPointSet,
    accum_norm: np.ndarray,
    accum_count: np.ndarray,
    threshold: float,
    n_max: int,
    start_rule: str = "first",
) -> KeyPointSet:
    """Add key points where the screen-space gradient stays large.

    Gaussians whose mean accumulated gradient norm exceeds `threshold` are
    down-sampled by FPS by a factor of 100 (at least one), and the survivors
    become key points, up to `n_max` in total.
    """
    mean = accum_norm / np.maximum(accum_count, 1)
    selected = np.nonzero((accum_count > 0) & (mean > threshold))[0]
    room = n_max - len(keypoints)
    if len(selected) == 0 or room <= 0:
        return keypoints
    count = min(max(1, len(selected) // 100), room)
    picks = selected[fps(mu[selected], count, start_rule)]
    _log.info("adding %d key points from %d high-gradient Gaussians", count, len(selected))
    return keypoints.extended(mu[picks], m[picks])


# Weights.


@dataclasses.dataclass
class _WeightCache:
    hash: Any
    mlp: Any
    w_t: np.ndarray
    w_q: np.ndarray


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_backward(w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    return w * (dw - np.sum(dw * w, axis=1, keepdims=True))


class WeightField:
    """Hash grid plus a one-hidden-layer decoder mapping a canonical position
    to ``N_near`` translation logits and ``N_near`` rotation logits.

    The decoder head starts at zero, so every neighbor is weighted equally.
    """

    def __init__(
        self,
        bbox: np.ndarray,
        n_near: int,
        num_levels: int = 8,
        base_resolution: int = 16,
        growth: float = 1.5,
        features: int = 2,
        log2_table: int = 14,
        width: int = 64,
        rng: Optional[np.random.Generator] = None,
        dtype: type = np.float32,
    ) -> None:
        rng = rng if rng is not None else make_rng(0)
        self.n_near = n_near
        self.grid = HashGrid(
            bbox, num_levels, base_resolution, growth, features, log2_table, rng=rng, dtype=dtype
        )
        self.mlp = Mlp(
            self.grid.out_dim,
            2 * n_near,
            width=width,
            depth=1,
            rng=rng,
            dtype=dtype,
            zero_head=True,
        )

    @classmethod
    def from_config(
        cls, config: Config, bbox: np.ndarray, rng: Optional[np.random.Generator] = None
    ) -> "WeightField":
        opts = config.stage2
        return cls(
            bbox,
            opts.n_near,
            opts.hash_levels,
            opts.hash_base_resolution,
            opts.hash_growth,
            opts.hash_features,
            opts.hash_log2_table,
            opts.weight_width,
            rng,
        )

    def forward(self, mu: np.ndarray) -> Tuple[np.ndarray, np.ndarray, _WeightCache]:
        feat, hash_cache = self.grid.forward(mu)
        logits, mlp_cache = self.mlp.forward(feat)
        w_t = _softmax(logits[:, : self.n_near])
        w_q = _softmax(logits[:, self.n_near :])
        return w_t, w_q, _WeightCache(hash_cache, mlp_cache, w_t, w_q)

    def __call__(self, mu: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        w_t, w_q, _ = self.forward(mu)
        return w_t, w_q

    def backward(
        self, cache: _WeightCache, d_wt: np.ndarray, d_wq: np.ndarray
    ) -> Dict[str, np.ndarray]:
        dlogits = np.concatenate(
            [_softmax_backward(cache.w_t, d_wt), _softmax_backward(cache.w_q, d_wq)], axis=1
        ).astype(self.mlp.dtype)
        dfeat, mlp_grads = self.mlp.backward(cache.mlp, dlogits)
        grads = {f"weights/mlp/{name}": value for name, value in mlp_grads.items()}
        grads["weights/hash/tables"] = self.grid.backward(cache.hash, dfeat)["tables"]
        return grads

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {f"weights/mlp/{name}": value for name, value in self.mlp.parameters().items()}
        params["weights/hash/tables"] = self.grid.params["tables"]
        return params

    def load_parameters(self, state: Dict[str, np.ndarray]) -> None:
        self.grid.params["tables"][...] = state["weights/hash/tables"]
        self.mlp.load_state_dict(
            {k[len("weights/mlp/") :]: v for k, v in state.items() if k.startswith("weights/mlp/")}
        )


# Motion and blending.


def keypoint_motion(keypoints: KeyPointSet, field: DeformField, t: float) -> KeyPointMotion:
    """Evaluate the deformation network on the key points: ``T = Δμ`` and
    ``Q = normalize(Δq)``.
    """
    T, dq, _, cache = field.forward(keypoints.mu, keypoints.m, t)
    return KeyPointMotion(T, quat_normalize(dq), (dq, cache))


@dataclasses.dataclass
class _BlendCache:
    neighbors: np.ndarray
    w_t: np.ndarray
    w_q: np.ndarray
    weight_cache: Optional[_WeightCache]
    motion: KeyPointMotion
    signs: np.ndarray
    q_sum: np.ndarray
    dq: np.ndarray
    raw_rot: np.ndarray
    lifecycle_cache: Any


def blend_deform(
    scene: HyperCanonicalScene,
    keypoints: KeyPointSet,
    neighbors: np.ndarray,
    weights: WeightField,
    t: float,
    motion: Optional[KeyPointMotion] = None,
) -> DeformedGaussians:
    """Move every Gaussian by the weighted motion of its neighbors.

    ``Δμᵢ = Σ wᵀ·Tₖ`` and ``Δqᵢ = normalize(Σ w^Q·Qₖ)`` with each ``Qₖ``
    sign-aligned to the first neighbor's; rotations compose as
    ``qᵢ ⊗ Δqᵢ``. The lifecycle still comes from ``D_o``. Pass `motion` to
    drive the key points with externally supplied ``(T, Q)``.
    """
    g = scene.gaussians
    if neighbors.shape[0] != len(g):
        raise ShapeMismatchError("neighbor lists do not match the Gaussian count")
    if motion is None:
        motion = keypoint_motion(keypoints, scene.field, t)
    w_t, w_q, weight_cache = weights.forward(g.mu)
    t_n = motion.T[neighbors]
    q_n = motion.Q[neighbors]
    signs = np.where(np.sum(q_n * q_n[:, :1, :], axis=-1) < 0, -1.0, 1.0).astype(g.dtype)
    q_sum = np.sum(w_q[..., None] * signs[..., None] * q_n, axis=1)
    dq = quat_normalize(q_sum)
    raw_rot = quat_multiply(g.rot, dq)
    psi, lifecycle_cache = scene.field.lifecycle_forward(g.mu, g.motion_feat, t)
    deformed = g.replace(
        mu=(g.mu + np.sum(w_t[..., None] * t_n, axis=1)).astype(g.dtype),
        rot=quat_normalize(raw_rot).astype(g.dtype),
    )
    cache = _BlendCache(
        neighbors, w_t, w_q, weight_cache, motion, signs, q_sum, dq, raw_rot, lifecycle_cache
    )
    return DeformedGaussians(deformed, psi, t, cache)


def blend_backward(
    scene: HyperCanonicalScene,
    keypoints: KeyPointSet,
    weights: WeightField,
    deformed: DeformedGaussians,
    grads: GaussianGrads,
) -> Dict[str, np.ndarray]:
    """Chain rasterizer gradients through :func:`blend_deform`.

    Gradients reach the Gaussians, the key points (``keypoints/mu`` and
    ``keypoints/m``), the deformation and opacity networks and the weight
    field. The hash encoding passes no gradient back to positions.
    """
    cache: _BlendCache = deformed.cache
    g = scene.gaussians
    n_keys = len(keypoints)
    nbr = cache.neighbors
    motion = cache.motion

    d_mu_t = grads.mu
    d_wt = np.einsum("nc,nkc->nk", d_mu_t, motion.T[nbr])
    d_T = np.zeros_like(motion.T)
    np.add.at(d_T, nbr.ravel(), (cache.w_t[..., None] * d_mu_t[:, None, :]).reshape(-1, 3))

    d_raw = quat_normalize_backward(cache.raw_rot, grads.rot)
    d_rot, d_dq = quat_multiply_backward(g.rot, cache.dq, d_raw)
    d_qsum = quat_normalize_backward(cache.q_sum, d_dq)
    aligned = cache.signs[..., None] * motion.Q[nbr]
    d_wq = np.einsum("nc,nkc->nk", d_qsum, aligned)
    d_Q = np.zeros_like(motion.Q)
    per_pair = cache.signs[..., None] * cache.w_q[..., None] * d_qsum[:, None, :]
    np.add.at(d_Q, nbr.ravel(), per_pair.reshape(-1, 4))

    result: Dict[str, np.ndarray] = {
        "mu": d_mu_t.copy(),
        "rot": d_rot,
        "log_scale": grads.log_scale,
        "color": grads.color,
        "opacity_logit": grads.opacity_logit,
        "motion_feat": np.zeros_like(g.motion_feat),
    }
    if cache.weight_cache is not None:
        result.update(weights.backward(cache.weight_cache, d_wt, d_wq))

    if motion.cache is not None:
        dq_raw, field_cache = motion.cache
        d_dq_raw = quat_normalize_backward(dq_raw, d_Q)
        dmu_k, dm_k, net_grads = scene.field.backward(field_cache, d_T, d_dq_raw)
        result["keypoints/mu"] = dmu_k
        result["keypoints/m"] = dm_k
        result.update({k: v for k, v in net_grads.items() if k.startswith("deform/")})
    else:
        result["keypoints/mu"] = np.zeros((n_keys, 3), g.dtype)
        result["keypoints/m"] = np.zeros_like(keypoints.m)

    if cache.lifecycle_cache is not None:
        dmu_l, dm_l, opacity_grads = scene.field.lifecycle_backward(
            cache.lifecycle_cache, grads.alpha_mult
        )
        result["mu"] += dmu_l
        result["motion_feat"] += dm_l
        result.update(opacity_grads)
    return result


# Training.


@dataclasses.dataclass
class Stage2State:
    """A distilled scene: the stage-one scene plus key points, neighbor
    lists and the weight field.
    """

    scene: HyperCanonicalScene
    keypoints: KeyPointSet
    neighbors: np.ndarray
    weights: WeightField
    rms: float
    lambda_m: float
    accum_norm: np.ndarray
    accum_count: np.ndarray
    iteration: int = 0

    def reassign(self, n_near: int) -> None:
        g = self.scene.gaussians
        self.neighbors = assign_neighbors(
            g.mu, g.motion_feat, self.keypoints, n_near, self.lambda_m, self.rms
        )

    def deform_at(self, t: float, motion: Optional[KeyPointMotion] = None) -> DeformedGaussians:
        return blend_deform(self.scene, self.keypoints, self.neighbors, self.weights, t, motion)

    def render(
        self,
        camera: Camera,
        t: float,
        background: Sequence[float] = (0.0, 0.0, 0.0),
        settings: Optional[RasterSettings] = None,
        motion: Optional[KeyPointMotion] = None,
    ) -> RenderOutput:
        deformed = self.deform_at(t, motion)
        return rasterize(
            deformed.gaussians, camera, background, alpha_mult=deformed.lifecycle, settings=settings
        )


def build_stage2(
    scene: HyperCanonicalScene, config: Config, rng: np.random.Generator
) -> Stage2State:
    """Initialize key points, neighbor lists and the weight field."""
    opts = config.stage2
    lambda_m = opts.lambda_m if opts.hyper_knn else 0.0
    keypoints = init_keypoints(scene, opts.k_init, rng, opts.lambda_m, hyper=opts.hyper_init)
    g = scene.gaussians
    rms = float(np.float32(motion_rms(g.motion_feat)))
    state = Stage2State(
        scene=scene,
        keypoints=keypoints,
        neighbors=np.zeros((len(g), opts.n_near), dtype=np.int64),
        weights=WeightField.from_config(config, scene.bbox, rng),
        rms=rms,
        lambda_m=lambda_m,
        accum_norm=np.zeros(len(g), dtype=np.float64),
        accum_count=np.zeros(len(g), dtype=np.int64),
    )
    state.reassign(opts.n_near)
    return state


class Stage2Trainer:
    """Runs stage-two optimization.

    Phase one freezes the Gaussians and trains the weight field, ``D`` and
    the key points, growing the key-point set every ``increase_interval``
    iterations. Phase two trains everything together.
    """

    def __init__(
        self,
        state: Stage2State,
        frames: Sequence[FrameSample],
        config: Config,
        rng: np.random.Generator,
        records: Optional[RecordLog] = None,
        lr_scale: float = 1.0,
    ) -> None:
        if len(frames) < 2:
            raise ConfigurationError("training needs at least two frames")
        self.state = state
        self.frames = list(frames)
        self.config = config
        self.rng = rng
        self.records = records or RecordLog(config.paths.records)
        self.settings = RasterSettings(
            tile_size=config.render.tile_size, threads=config.worker_threads
        )
        self.background = np.asarray(config.render.background)
        s1 = config.stage1
        s2 = config.stage2
        scene = state.scene
        extent = scene.extent
        params = {
            **scene.gaussians.parameters(),
            **scene.field.parameters(),
            **state.weights.parameters(),
            "keypoints/mu": state.keypoints.mu,
            "keypoints/m": state.keypoints.m,
        }
        lrs: Dict[str, float] = {
            "mu": s1.lr_mu * s1.lr_mu_final_factor * extent,
            "rot": s1.lr_rot,
            "log_scale": s1.lr_scale,
            "color": s1.lr_color,
            "opacity_logit": s1.lr_opacity,
            "motion_feat": s1.lr_motion,
            "keypoints/mu": s2.lr_keypoint_mu * extent,
            "keypoints/m": s2.lr_keypoint_m,
        }
        for name in params:
            if name.startswith(("deform/", "opacity/")):
                lrs[name] = s2.lr_network
            elif name == "weights/hash/tables":
                lrs[name] = s2.lr_hash
            elif name.startswith("weights/mlp/"):
                lrs[name] = s2.lr_weight_mlp
        self.optimizer = Adam(params, {k: v * lr_scale for k, v in lrs.items()})

    @property
    def total(self) -> int:
        return self.config.stage2.phase1_iterations + self.config.stage2.phase2_iterations

    def checkpoint(self) -> Checkpoint:
        ckpt = stage2_checkpoint(self.state, self.config)
        ckpt.put("adam2", self.optimizer.state_dict())
        ckpt.rng_state = rng_state(self.rng)
        return ckpt

    def _grow(self) -> None:
        state = self.state
        opts = self.config.stage2
        g = state.scene.gaussians
        before = len(state.keypoints)
        state.keypoints = adaptive_increase(
            g.mu,
            g.motion_feat,
            state.keypoints,
            state.accum_norm,
            state.accum_count,
            opts.grad_threshold,
            opts.n_max,
            opts.fps_start,
        )
        added = len(state.keypoints) - before
        state.accum_norm[:] = 0
        state.accum_count[:] = 0
        if added:
            self.optimizer.rebind("keypoints/mu", state.keypoints.mu, extra=added)
            self.optimizer.rebind("keypoints/m", state.keypoints.m, extra=added)
            state.reassign(opts.n_near)

    def step(self) -> float:
        state = self.state
        opts = self.config.stage2
        i = state.iteration
        phase1 = i < opts.phase1_iterations
        frame = self.frames[int(self.rng.integers(len(self.frames)))]
        deformed = state.deform_at(frame.t)
        output = rasterize(
            deformed.gaussians,
            frame.camera,
            self.background,
            alpha_mult=deformed.lifecycle,
            settings=self.settings,
        )
        loss, dimage = image_loss(output.image, frame.image, self.config.stage1.ssim_weight)
        if not math.isfinite(loss):
            raise diverged("stage2", i, self.checkpoint(), self.config.paths.checkpoint_dir)
        grads = rasterize_backward(output, dimage)
        state.accum_norm += output.screen_grad_norm
        state.accum_count[output.visible] += 1
        table = blend_backward(state.scene, state.keypoints, state.weights, deformed, grads)
        if phase1:
            table = {
                k: v
                for k, v in table.items()
                if k not in GAUSSIAN_PARAMS and k != "motion_feat" and not k.startswith("opacity/")
            }
        self.optimizer.step(table)
        state.scene.gaussians.normalize_rotations()
        state.iteration += 1

        if phase1 and opts.adaptive_increase and state.iteration % opts.increase_interval == 0:
            self._grow()

        if state.iteration % opts.log_interval == 0:
            value = psnr(output.image, frame.image)
            _log.info(
                "stage2 iteration %d loss %.5f psnr %.2f keypoints %d",
                state.iteration,
                loss,
                value,
                len(state.keypoints),
            )
            self.records.write(
                {
                    "stage": "stage2",
                    "iteration": state.iteration,
                    "loss": loss,
                    "psnr": value,
                    "n_gaussians": len(state.scene.gaussians),
                    "n_keypoints": len(state.keypoints),
                }
            )
        return loss

    def run(self, iterations: Optional[int] = None, progress: bool = False) -> Stage2State:
        end = self.total if iterations is None else self.state.iteration + iterations
        for _ in tqdm(range(self.state.iteration, end), desc="stage2", disable=not progress):
            self.step()
        return self.state


def train_stage2(
    scene: HyperCanonicalScene,
    frames: Sequence[FrameSample],
    config: Config,
    rng: Optional[np.random.Generator] = None,
    keypoints: Optional[KeyPointSet] = None,
    records: Optional[RecordLog] = None,
    progress: bool = False,
) -> Stage2State:
    """Distill `scene` into key points and train the blend against `frames`.

    With zero iterations the weight field stays at its initialization and
    every neighbor is weighted equally.
    """
    rng = rng if rng is not None else make_rng(config.seed + 1)
    state = build_stage2(scene, config, rng)
    if keypoints is not None:
        state.keypoints = keypoints
        state.reassign(config.stage2.n_near)
    return Stage2Trainer(state, frames, config, rng, records).run(progress=progress)


def stage2_checkpoint(state: Stage2State, config: Config, stage: str = "stage2") -> Checkpoint:
    scene = state.scene
    ckpt = Checkpoint(stage=stage, config=config.as_document())
    ckpt.put("gaussians", gaussians_state(scene.gaussians))
    ckpt.put("field", scene.field.parameters())
    ckpt.put("scene", {"bbox": scene.bbox, "noise_scale": np.array(scene.noise_scale)})
    ckpt.put("keypoints", {"mu": state.keypoints.mu, "m": state.keypoints.m})
    ckpt.put("distill", {
        "neighbors": state.neighbors,
        "rms": np.array(state.rms),
        "lambda_m": np.array(state.lambda_m),
        "accum_norm": state.accum_norm,
        "accum_count": state.accum_count,
    })
    ckpt.put("weights", state.weights.parameters())
    ckpt.counters["stage1_iteration"] = scene.iteration
    ckpt.counters["stage2_iteration"] = state.iteration
    return ckpt


def stage2_from_checkpoint(checkpoint: Checkpoint, config: Config) -> Stage2State:
    scene = scene_from_checkpoint(checkpoint, config)
    keys = checkpoint.require("keypoints")
    distill = checkpoint.require("distill")
    weights = WeightField.from_config(config, scene.bbox)
    weights.load_parameters(checkpoint.require("weights"))
    return Stage2State(
        scene=scene,
        keypoints=KeyPointSet(keys["mu"].astype(np.float32), keys["m"].astype(np.float32)),
        neighbors=distill["neighbors"].astype(np.int64),
        weights=weights,
        rms=float(distill["rms"]),
        lambda_m=float(distill["lambda_m"]),
        accum_norm=distill["accum_norm"].astype(np.float64),
        accum_count=distill["accum_count"].astype(np.int64),
        iteration=int(checkpoint.counters.get("stage2_iteration", 0)),
    )


def resume_stage2(
    checkpoint: Checkpoint, frames: Sequence[FrameSample], config: Config
) -> Stage2Trainer:
    state = stage2_from_checkpoint(checkpoint, config)
    rng = restore_rng(checkpoint.rng_state) if checkpoint.rng_state else make_rng(config.seed + 1)
    trainer = Stage2Trainer(state, frames, config, rng)
    if checkpoint.has_section("adam2"):
        trainer.optimizer.load_state_dict(checkpoint.section("adam2"))
    return trainer


def _palette(count: int) -> np.ndarray:
    golden = 0.618033988749895
    hue = (np.arange(count) * golden) % 1.0
    sector = hue * 6
    c = np.stack(
        [
            np.clip(np.abs(sector - 3) - 1, 0, 1),
            np.clip(2 - np.abs(sector - 2), 0, 1),
            np.clip(2 - np.abs(sector - 4), 0, 1),
        ],
        axis=1,
    )
    return np.round(c * 255).astype(np.uint8)


def export_influence_ply(state: Stage2State, path: str) -> None:
    """Write every Gaussian with the id and colour of the key point carrying
    its largest translation weight, plus the key points themselves.
    """
    g = state.scene.gaussians
    w_t, _ = state.weights(g.mu)
    owner = state.neighbors[np.arange(len(g)), np.argmax(w_t, axis=1)]
    colors = _palette(len(state.keypoints))
    vertex = np.empty(len(g), dtype=_XYZ + [("keypoint", "i4")] + _RGB)
    vertex["x"], vertex["y"], vertex["z"] = g.mu[:, 0], g.mu[:, 1], g.mu[:, 2]
    vertex["keypoint"] = owner
    vertex["red"], vertex["green"], vertex["blue"] = colors[owner].T
    keys = np.empty(len(state.keypoints), dtype=_XYZ + _RGB)
    keys["x"], keys["y"], keys["z"] = state.keypoints.mu.T
    keys["red"], keys["green"], keys["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    elements = [PlyElement.describe(vertex, "vertex"), PlyElement.describe(keys, "keypoint")]
    PlyData(elements).write(path)
