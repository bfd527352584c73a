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

"""Stage one: a hyper-canonical Gaussian scene with a deformation field.

Each Gaussian carries a canonical center ``μ`` and a motion feature ``m``.
The deformation network ``D`` maps ``(γ(μ), m, γ(t))`` to a center offset
and a rotation offset; the opacity network ``D_o`` maps the same input to a
lifecycle ``ψ = sigmoid(10·Δ_o)`` that multiplies the Gaussian's opacity.
"""
import dataclasses
import logging
import math
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from tqdm import tqdm

from splatcast.common import Config
from splatcast.errors import ConfigurationError, TrainingDivergedError
from splatcast.losses import image_loss, psnr
from splatcast.scene_io import (
    Checkpoint,
    FrameSample,
    RecordLog,
    gaussians_from_state,
    gaussians_state,
    save_checkpoint,
)
from splatcast.splat_core import (
    Camera,
    GaussianGrads,
    GaussianSet,
    RasterSettings,
    RenderOutput,
    quat_multiply,
    quat_multiply_backward,
    quat_normalize,
    quat_normalize_backward,
    rasterize,
    rasterize_backward,
)
from splatcast.tensor_nn import (
    Adam,
    Mlp,
    exponential_lr,
    make_rng,
    positional_encoding,
    positional_encoding_backward,
    restore_rng,
    rng_state,
    sigmoid,
)

__all__ = [
    "DeformField",
    "DeformedGaussians",
    "FrameSample",
    "HyperCanonicalScene",
    "Stage1Trainer",
    "annealing_noise",
    "deform_backward",
    "deform_gaussians",
    "initial_gaussians",
    "lifecycle",
    "noise_std",
    "opacity_prune",
    "render_scene",
    "train_stage1",
]

_log = logging.getLogger(__name__)

NOISE_HORIZON = 10000
LIFECYCLE_GAIN = 10.0
GAUSSIAN_PARAMS = ("mu", "rot", "log_scale", "color", "opacity_logit")


@dataclasses.dataclass
class _FieldCache:
    mu_in: np.ndarray
    deform: Any
    opacity: Any
    psi: Optional[np.ndarray]


class DeformField:
    """The deformation network ``D`` and the opacity network ``D_o``.

    ``D`` has a zero-initialized head, so a fresh field leaves every Gaussian
    where it is. ``D_o`` starts with head bias 0.5, i.e. ``ψ ≈ 0.9933``.
    When the lifecycle is disabled ``D_o`` is absent and ``ψ ≡ 1``.
    """

    def __init__(
        self,
        motion_dim: int = 8,
        pos_freqs: int = 10,
        time_freqs: int = 6,
        deform_depth: int = 8,
        deform_width: int = 128,
        opacity_depth: int = 4,
        opacity_width: int = 64,
        lifecycle: bool = True,
        rng: Optional[np.random.Generator] = None,
        dtype: type = np.float32,
    ) -> None:
        rng = rng if rng is not None else make_rng(0)
        self.motion_dim = motion_dim
        self.pos_freqs = pos_freqs
        self.time_freqs = time_freqs
        self.in_dim = 6 * pos_freqs + motion_dim + 2 * time_freqs
        skip = deform_depth // 2 if deform_depth > 2 else None
        self.deform = Mlp(
            self.in_dim,
            7,
            deform_width,
            deform_depth,
            skip=skip,
            rng=rng,
            dtype=dtype,
            zero_head=True,
        )
        self.opacity: Optional[Mlp] = None
        if lifecycle:
            self.opacity = Mlp(
                self.in_dim,
                1,
                opacity_width,
                opacity_depth,
                rng=rng,
                dtype=dtype,
                zero_head=True,
                head_bias=0.5,
            )

    @classmethod
    def from_config(
        cls, config: Config, rng: Optional[np.random.Generator] = None
    ) -> "DeformField":
        opts = config.stage1
        return cls(
            motion_dim=opts.motion_dim,
            pos_freqs=opts.pos_freqs,
            time_freqs=opts.time_freqs,
            deform_depth=opts.deform_depth,
            deform_width=opts.deform_width,
            opacity_depth=opts.opacity_depth,
            opacity_width=opts.opacity_width,
            lifecycle=opts.lifecycle,
            rng=rng,
        )

    @property
    def lifecycle_enabled(self) -> bool:
        return self.opacity is not None

    def encode(self, mu: np.ndarray, m: np.ndarray, t: float) -> np.ndarray:
        n = mu.shape[0]
        time = np.full((n, 1), t, dtype=mu.dtype)
        return np.concatenate(
            [
                positional_encoding(mu, self.pos_freqs),
                m.astype(mu.dtype),
                positional_encoding(time, self.time_freqs),
            ],
            axis=1,
        )

    def forward(
        self, mu: np.ndarray, m: np.ndarray, t: float
    ) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray], _FieldCache]:
        """Return ``(Δμ, Δq, ψ, cache)``; ``Δq`` already includes the
        identity quaternion and ``ψ`` is None without a lifecycle.
        """
        x = self.encode(mu, m, t)
        out, deform_cache = self.deform.forward(x)
        dmu = out[:, :3]
        dq = out[:, 3:].copy()
        dq[:, 0] += 1
        psi = None
        opacity_cache = None
        if self.opacity is not None:
            delta, opacity_cache = self.opacity.forward(x)
            psi = sigmoid(LIFECYCLE_GAIN * delta[:, 0]).astype(mu.dtype)
        return dmu, dq, psi, _FieldCache(mu, deform_cache, opacity_cache, psi)

    def backward(
        self,
        cache: _FieldCache,
        d_dmu: np.ndarray,
        d_dq: np.ndarray,
        d_psi: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray]]:
        """Return ``(∂/∂μ, ∂/∂m, network gradients)``."""
        dx, deform_grads = self.deform.backward(cache.deform, np.concatenate([d_dmu, d_dq], axis=1))
        grads = {f"deform/{name}": value for name, value in deform_grads.items()}
        if self.opacity is not None and cache.psi is not None:
            if d_psi is None:
                d_psi = np.zeros_like(cache.psi)
            d_delta = d_psi * LIFECYCLE_GAIN * cache.psi * (1 - cache.psi)
            dx_o, opacity_grads = self.opacity.backward(cache.opacity, d_delta[:, None])
            dx = dx + dx_o
            grads.update({f"opacity/{name}": value for name, value in opacity_grads.items()})
        n_pos = 6 * self.pos_freqs
        dmu = positional_encoding_backward(cache.mu_in, self.pos_freqs, dx[:, :n_pos])
        dm = dx[:, n_pos : n_pos + self.motion_dim]
        return dmu, dm, grads

    def lifecycle_forward(
        self, mu: np.ndarray, m: np.ndarray, t: float
    ) -> Tuple[Optional[np.ndarray], Optional[_FieldCache]]:
        """``ψ`` alone, without evaluating ``D``; None without a lifecycle."""
        if self.opacity is None:
            return None, None
        delta, opacity_cache = self.opacity.forward(self.encode(mu, m, t))
        psi = sigmoid(LIFECYCLE_GAIN * delta[:, 0]).astype(mu.dtype)
        return psi, _FieldCache(mu, None, opacity_cache, psi)

    def lifecycle_backward(
        self, cache: _FieldCache, d_psi: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray]]:
        assert self.opacity is not None and cache.psi is not None
        d_delta = d_psi * LIFECYCLE_GAIN * cache.psi * (1 - cache.psi)
        dx, opacity_grads = self.opacity.backward(cache.opacity, d_delta[:, None])
        n_pos = 6 * self.pos_freqs
        dmu = positional_encoding_backward(cache.mu_in, self.pos_freqs, dx[:, :n_pos])
        dm = dx[:, n_pos : n_pos + self.motion_dim]
        return dmu, dm, {f"opacity/{name}": value for name, value in opacity_grads.items()}

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {f"deform/{name}": value for name, value in self.deform.parameters().items()}
        if self.opacity is not None:
            params.update(
                {f"opacity/{name}": value for name, value in self.opacity.parameters().items()}
            )
        return params

    def load_parameters(self, state: Dict[str, np.ndarray]) -> None:
        self.deform.load_state_dict(
            {k[len("deform/") :]: v for k, v in state.items() if k.startswith("deform/")}
        )
        if self.opacity is not None:
            self.opacity.load_state_dict(
                {k[len("opacity/") :]: v for k, v in state.items() if k.startswith("opacity/")}
            )


@dataclasses.dataclass
class HyperCanonicalScene:
    """Gaussians in the hyper-canonical space plus their deformation field.

    :Parameters:
      - `gaussians`: canonical Gaussians; ``(μ, m)`` is each one's
        hyper-canonical coordinate
      - `field`: the :class:`DeformField`
      - `noise_scale`: annealing-noise scale ``N_s`` in world units
      - `bbox`: ``[[min xyz], [max xyz]]`` of the scene
      - `iteration`: completed stage-one iterations
    """

    gaussians: GaussianSet
    field: DeformField
    noise_scale: float
    bbox: np.ndarray
    iteration: int = 0

    @property
    def extent(self) -> float:
        return float(np.linalg.norm(self.bbox[1] - self.bbox[0]))


@dataclasses.dataclass
class DeformedGaussians:
    """A Gaussian snapshot at one time.

    ``lifecycle`` multiplies each Gaussian's sigmoid opacity; None means 1.
    ``cache`` holds what :func:`deform_backward` (or the key-point blend
    backward) needs.
    """

    gaussians: GaussianSet
    lifecycle: Optional[np.ndarray]
    t: float
    cache: Any = None


@dataclasses.dataclass
class _DeformCache:
    rot: np.ndarray
    dq: np.ndarray
    raw_rot: np.ndarray
    field: _FieldCache


def noise_std(iteration: int, noise_scale: float, horizon: int = NOISE_HORIZON) -> float:
    """``N_s · (1 − min(1, i / horizon))``."""
    return noise_scale * (1.0 - min(1.0, iteration / horizon))


def annealing_noise(
    iteration: int,
    noise_scale: float,
    rng: np.random.Generator,
    count: int,
    horizon: int = NOISE_HORIZON,
    dtype: type = np.float32,
) -> np.ndarray:
    """Per-Gaussian center perturbation for joint-phase iteration `iteration`.

    Draws nothing once the scale has annealed to zero.
    """
    if iteration < 0:
        raise ConfigurationError("iteration must be non-negative")
    std = noise_std(iteration, noise_scale, horizon)
    if std == 0:
        return np.zeros((count, 3), dtype=dtype)
    return (rng.standard_normal((count, 3)) * std).astype(dtype)


def deform_gaussians(
    scene: HyperCanonicalScene, t: float, noise: Optional[np.ndarray] = None
) -> DeformedGaussians:
    """The scene at time `t`: centers ``μ + Δμ``, rotations
    ``normalize(q ⊗ Δq)``, opacity multiplied by the lifecycle.
    """
    if not 0.0 <= t <= 1.0:
        _log.debug("deforming at extrapolated time %.4f", t)
    g = scene.gaussians
    mu_in = g.mu if noise is None else g.mu + noise
    dmu, dq, psi, field_cache = scene.field.forward(mu_in, g.motion_feat, t)
    raw_rot = quat_multiply(g.rot, dq)
    deformed = g.replace(
        mu=(mu_in + dmu).astype(g.dtype), rot=quat_normalize(raw_rot).astype(g.dtype)
    )
    return DeformedGaussians(deformed, psi, t, _DeformCache(g.rot, dq, raw_rot, field_cache))


def lifecycle(scene: HyperCanonicalScene, t: float) -> np.ndarray:
    """Per-Gaussian ``ψ ∈ (0, 1)`` at `t`; all ones without a lifecycle."""
    g = scene.gaussians
    psi, _ = scene.field.lifecycle_forward(g.mu, g.motion_feat, t)
    if psi is None:
        return np.ones(len(g), dtype=g.dtype)
    return psi


def deform_backward(
    scene: HyperCanonicalScene, deformed: DeformedGaussians, grads: GaussianGrads
) -> Dict[str, np.ndarray]:
    """Chain rasterizer gradients through the deformation.

    Returns gradients keyed like the optimizer's parameter table: the
    canonical Gaussian fields plus ``deform/...`` and ``opacity/...``.
    """
    cache: _DeformCache = deformed.cache
    d_raw = quat_normalize_backward(cache.raw_rot, grads.rot)
    d_rot, d_dq = quat_multiply_backward(cache.rot, cache.dq, d_raw)
    d_psi = grads.alpha_mult if deformed.lifecycle is not None else None
    dmu_in, dm, net_grads = scene.field.backward(cache.field, grads.mu, d_dq, d_psi)
    result = {
        "mu": grads.mu + dmu_in,
        "rot": d_rot,
        "log_scale": grads.log_scale,
        "color": grads.color,
        "opacity_logit": grads.opacity_logit,
        "motion_feat": dm,
    }
    result.update(net_grads)
    return result


def render_scene(
    scene: HyperCanonicalScene,
    camera: Camera,
    t: Optional[float],
    background: Sequence[float] = (0.0, 0.0, 0.0),
    settings: Optional[RasterSettings] = None,
    deformed: Optional[DeformedGaussians] = None,
) -> RenderOutput:
    """Render the scene at `t`.

    With `t` None the canonical Gaussians are drawn undeformed. A
    precomputed `deformed` snapshot, e.g. from key-point blending, takes
    precedence over `t`.
    """
    if deformed is None and t is not None:
        deformed = deform_gaussians(scene, t)
    if deformed is None:
        return rasterize(scene.gaussians, camera, background, settings=settings)
    return rasterize(
        deformed.gaussians, camera, background, alpha_mult=deformed.lifecycle, settings=settings
    )


def initial_gaussians(
    bbox: np.ndarray,
    count: int,
    motion_dim: int,
    rng: np.random.Generator,
    points: Optional[np.ndarray] = None,
) -> GaussianSet:
    """Seed Gaussians uniformly in `bbox`, or at `points` when given.

    Scales start at the root mean squared distance to the three nearest
    neighbours; motion features are drawn from ``N(0, 0.1²)``.
    """
    bbox = np.asarray(bbox, dtype=np.float64)
    if points is not None:
        points = np.asarray(points, dtype=np.float64)
        mu = points[rng.integers(0, len(points), count)] if len(points) < count else points[:count]
    else:
        mu = rng.uniform(bbox[0], bbox[1], (count, 3))
    k = min(4, count)
    if k > 1:
        distances, _ = cKDTree(mu).query(mu, k=k)
        dist2 = np.mean(distances[:, 1:] ** 2, axis=1)
    else:
        dist2 = np.full(count, (0.01 * np.linalg.norm(bbox[1] - bbox[0])) ** 2)
    log_scale = np.repeat(0.5 * np.log(np.maximum(dist2, 1e-7))[:, None], 3, axis=1)
    rot = np.zeros((count, 4))
    rot[:, 0] = 1
    return GaussianSet(
        mu=mu.astype(np.float32),
        rot=rot.astype(np.float32),
        log_scale=log_scale.astype(np.float32),
        color=rng.uniform(0.3, 0.7, (count, 3)).astype(np.float32),
        opacity_logit=np.full(count, math.log(0.1 / 0.9), dtype=np.float32),
        motion_feat=rng.normal(0.0, 0.1, (count, motion_dim)).astype(np.float32),
    )


def opacity_prune(scene: HyperCanonicalScene, threshold: float, samples: int = 8) -> np.ndarray:
    """Drop Gaussians whose rendered opacity ``σ·ψ`` stays below `threshold`
    at every sampled time. Returns the keep mask.
    """
    g = scene.gaussians
    peak = g.opacity.copy()
    if scene.field.lifecycle_enabled:
        times = np.linspace(0.0, 1.0, samples)
        peak = np.max(np.stack([g.opacity * lifecycle(scene, float(t)) for t in times]), axis=0)
    keep = peak >= threshold
    if not np.any(keep):
        _log.warning("opacity prune would remove every Gaussian; skipping")
        return np.ones(len(g), dtype=bool)
    if not np.all(keep):
        scene.gaussians = g.subset(keep)
        _log.info("pruned %d of %d Gaussians", int(np.sum(~keep)), len(keep))
    return keep


def default_noise_scale(bbox: np.ndarray) -> float:
    bbox = np.asarray(bbox, dtype=np.float64)
    return 0.1 * float(np.linalg.norm(bbox[1] - bbox[0]))


def noise_horizon(config: Config) -> int:
    opts = config.stage1
    if opts.noise_horizon is not None:
        return int(opts.noise_horizon)
    joint = opts.iterations - opts.warmup
    return max(1, min(NOISE_HORIZON, joint // 2))


def build_scene(
    config: Config, bbox: np.ndarray, points: Optional[np.ndarray] = None
) -> Tuple[HyperCanonicalScene, np.random.Generator]:
    """A fresh scene and the generator that continues to drive training."""
    rng = make_rng(config.seed)
    opts = config.stage1
    gaussians = initial_gaussians(bbox, opts.n_gaussians, opts.motion_dim, rng, points)
    field = DeformField.from_config(config, rng)
    noise = opts.noise_scale if opts.noise_scale is not None else default_noise_scale(bbox)
    # Checkpoints hold float32; a resumed scene must see the same values.
    noise = float(np.float32(noise))
    bbox = np.asarray(bbox, dtype=np.float32).astype(np.float64)
    return HyperCanonicalScene(gaussians, field, noise, bbox), rng


def _check_frames(frames: Sequence[FrameSample]) -> None:
    if len(frames) < 2:
        raise ConfigurationError("training needs at least two frames")
    if len({frame.t for frame in frames}) == 1:
        _log.info("all training frames share t=%.3f; training a static scene", frames[0].t)


def diverged(
    stage: str, iteration: int, checkpoint: Checkpoint, checkpoint_dir: Optional[str]
) -> TrainingDivergedError:
    """Write a diagnostic checkpoint (when a directory is configured) and
    return the error to raise.
    """
    path = None
    if checkpoint_dir:
        path = os.path.join(checkpoint_dir, f"{stage}-diverged.bson")
        save_checkpoint(checkpoint, path)
    _log.error("%s loss is not finite at iteration %d", stage, iteration)
    return TrainingDivergedError(stage, iteration, path)


class Stage1Trainer:
    """Runs stage-one optimization and owns its optimizer and RNG.

    Iterations ``[0, warmup)`` train the canonical Gaussians alone; the rest
    train Gaussians, motion features and both networks with annealing noise
    on the shared centers.
    """

    def __init__(
        self,
        scene: HyperCanonicalScene,
        frames: Sequence[FrameSample],
        config: Config,
        rng: np.random.Generator,
        records: Optional[RecordLog] = None,
    ) -> None:
        self.scene = scene
        self.frames = list(frames)
        self.config = config
        self.rng = rng
        self.records = records or RecordLog(config.paths.records)
        opts = config.stage1
        self.settings = RasterSettings(
            tile_size=config.render.tile_size, threads=config.worker_threads
        )
        self.background = np.asarray(config.render.background)
        self.horizon = noise_horizon(config)
        lrs: Dict[str, Any] = {
            "mu": exponential_lr(
                opts.lr_mu * scene.extent, opts.lr_mu_final_factor, opts.iterations
            ),
            "rot": opts.lr_rot,
            "log_scale": opts.lr_scale,
            "color": opts.lr_color,
            "opacity_logit": opts.lr_opacity,
            "motion_feat": opts.lr_motion,
        }
        network = scene.field.parameters()
        lrs.update({name: opts.lr_network for name in network})
        self.optimizer = Adam({**scene.gaussians.parameters(), **network}, lrs)
        self.last_loss = float("nan")

    def checkpoint(self) -> Checkpoint:
        ckpt = Checkpoint(stage="stage1", config=self.config.as_document())
        ckpt.put("gaussians", gaussians_state(self.scene.gaussians))
        ckpt.put("field", self.scene.field.parameters())
        ckpt.put("adam1", self.optimizer.state_dict())
        ckpt.put(
            "scene", {"bbox": self.scene.bbox, "noise_scale": np.array(self.scene.noise_scale)}
        )
        ckpt.counters["stage1_iteration"] = self.scene.iteration
        ckpt.rng_state = rng_state(self.rng)
        return ckpt

    @classmethod
    def from_checkpoint(
        cls, checkpoint: Checkpoint, frames: Sequence[FrameSample], config: Config
    ) -> "Stage1Trainer":
        scene = scene_from_checkpoint(checkpoint, config)
        rng = restore_rng(checkpoint.rng_state) if checkpoint.rng_state else make_rng(config.seed)
        trainer = cls(scene, frames, config, rng)
        if checkpoint.has_section("adam1"):
            trainer.optimizer.load_state_dict(checkpoint.section("adam1"))
        return trainer

    def _rebind_gaussians(self, keep: np.ndarray) -> None:
        for name, value in self.scene.gaussians.parameters().items():
            self.optimizer.rebind(name, value, keep=keep)

    def step(self) -> float:
        scene = self.scene
        opts = self.config.stage1
        i = scene.iteration
        frame = self.frames[int(self.rng.integers(len(self.frames)))]
        if i < opts.warmup:
            output = rasterize(
                scene.gaussians, frame.camera, self.background, settings=self.settings
            )
            deformed = None
        else:
            noise = None
            if opts.annealing_noise:
                noise = annealing_noise(
                    i - opts.warmup, scene.noise_scale, self.rng, len(scene.gaussians), self.horizon
                )
            deformed = deform_gaussians(scene, frame.t, noise)
            output = render_scene(
                scene, frame.camera, frame.t, self.background, self.settings, deformed
            )

        loss, dimage = image_loss(output.image, frame.image, opts.ssim_weight)
        if not math.isfinite(loss):
            raise diverged("stage1", i, self.checkpoint(), self.config.paths.checkpoint_dir)
        grads = rasterize_backward(output, dimage)
        if deformed is None:
            table = {name: getattr(grads, name) for name in GAUSSIAN_PARAMS}
        else:
            table = deform_backward(scene, deformed, grads)
        self.optimizer.step(table)
        scene.gaussians.normalize_rotations()
        scene.iteration += 1

        if opts.prune_interval and scene.iteration % opts.prune_interval == 0:
            keep = opacity_prune(scene, opts.prune_threshold, opts.prune_samples)
            if not np.all(keep):
                self._rebind_gaussians(keep)

        if scene.iteration % opts.log_interval == 0:
            value = psnr(output.image, frame.image)
            _log.info("stage1 iteration %d loss %.5f psnr %.2f", scene.iteration, loss, value)
            self.records.write(
                {
                    "stage": "stage1",
                    "iteration": scene.iteration,
                    "loss": loss,
                    "psnr": value,
                    "n_gaussians": len(scene.gaussians),
                    "n_keypoints": None,
                }
            )
        self.last_loss = loss
        return loss

    def run(self, until: Optional[int] = None, progress: bool = False) -> HyperCanonicalScene:
        iterations = self.config.stage1.iterations
        total = iterations if until is None else min(until, iterations)
        interval = self.config.stage1.checkpoint_interval
        ckpt_dir = self.config.paths.checkpoint_dir
        for _ in tqdm(range(self.scene.iteration, total), desc="stage1", disable=not progress):
            self.step()
            if interval and self.scene.iteration % interval == 0:
                save_checkpoint(self.checkpoint(), os.path.join(ckpt_dir, "stage1.bson"))
        return self.scene


def scene_from_checkpoint(checkpoint: Checkpoint, config: Config) -> HyperCanonicalScene:
    """Rebuild the stage-one scene stored in `checkpoint`."""
    field = DeformField.from_config(config)
    field.load_parameters(checkpoint.require("field"))
    scene_info = checkpoint.require("scene")
    return HyperCanonicalScene(
        gaussians=gaussians_from_state(checkpoint.require("gaussians")),
        field=field,
        noise_scale=float(scene_info["noise_scale"]),
        bbox=scene_info["bbox"].astype(np.float64),
        iteration=int(checkpoint.counters.get("stage1_iteration", 0)),
    )


def train_stage1(
    scene: HyperCanonicalScene,
    frames: Sequence[FrameSample],
    config: Config,
    rng: Optional[np.random.Generator] = None,
    records: Optional[RecordLog] = None,
    progress: bool = False,
) -> HyperCanonicalScene:
    """Optimize `scene` against `frames` for ``config.stage1.iterations``.

    A schedule of zero iterations returns the scene unchanged. A non-finite
    loss writes ``stage1-diverged.bson`` into the checkpoint directory and
    raises :class:`~splatcast.errors.TrainingDivergedError`.
    """
    _check_frames(frames)
    rng = rng if rng is not None else make_rng(config.seed)
    trainer = Stage1Trainer(scene, frames, config, rng, records)
    return trainer.run(progress=progress)


def evaluate_scene(
    scene: HyperCanonicalScene,
    frames: List[FrameSample],
    background: Sequence[float] = (0.0, 0.0, 0.0),
    settings: Optional[RasterSettings] = None,
) -> float:
    """Mean PSNR of the deformed scene over `frames`."""
    values = [
        psnr(render_scene(scene, f.camera, f.t, background, settings).image, f.image)
        for f in frames
    ]
    return float(np.mean(values)) if values else float("nan")
