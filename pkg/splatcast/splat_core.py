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

"""Differentiable 3D Gaussian rasterization.

The forward pass composes each Gaussian's covariance from its rotation and
scale, projects it through a pinhole camera with the local affine
approximation of the perspective map, sorts the resulting splats front to
back, and alpha-blends them per pixel. The backward pass is the exact adjoint
of that pipeline and yields gradients for every Gaussian parameter.

Quaternions are stored w-first. Camera space follows the OpenCV convention:
x right, y down, z forward. Pixel ``(i, j)`` has its center at
``(j + 0.5, i + 0.5)``.
"""
import dataclasses
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from splatcast import executor
from splatcast.errors import ConfigurationError, InternalConsistencyError, ShapeMismatchError

_log = logging.getLogger(__name__)

# Footprint used for culling, in standard deviations.
CULL_SIGMA = 3.0


# Quaternions.


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product ``p ⊗ q`` of w-first quaternions, broadcast over
    leading axes.
    """
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_multiply_backward(
    p: np.ndarray, q: np.ndarray, dr: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of ``r = p ⊗ q`` with respect to ``p`` and ``q``."""
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    gw, gx, gy, gz = np.moveaxis(dr, -1, 0)
    dp = np.stack(
        [
            gw * qw + gx * qx + gy * qy + gz * qz,
            -gw * qx + gx * qw - gy * qz + gz * qy,
            -gw * qy + gx * qz + gy * qw - gz * qx,
            -gw * qz - gx * qy + gy * qx + gz * qw,
        ],
        axis=-1,
    )
    dq = np.stack(
        [
            gw * pw + gx * px + gy * py + gz * pz,
            -gw * px + gx * pw + gy * pz - gz * py,
            -gw * py - gx * pz + gy * pw + gz * px,
            -gw * pz + gx * py - gy * px + gz * pw,
        ],
        axis=-1,
    )
    return dp, dq


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_normalize_backward(q: np.ndarray, dqn: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    return (dqn - qn * np.sum(qn * dqn, axis=-1, keepdims=True)) / norm


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions, shape ``(..., 3, 3)``."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def quat_to_rotmat_backward(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(q, -1, 0)
    g = dR
    g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
    g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
    g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
    dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2 * (
        y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22
    )
    dy = 2 * (
        -2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22
    )
    dz = 2 * (
        -2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21
    )
    return np.stack([dw, dx, dy, dz], axis=-1)


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis_arr = np.asarray(axis, dtype=np.float64)
    axis_arr = axis_arr / np.linalg.norm(axis_arr)
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis_arr])


# Scene containers.


@dataclasses.dataclass
class GaussianSet:
    """A set of 3D Gaussians in structure-of-arrays layout.

    ``rot`` is a ``(N, 4)`` w-first quaternion, ``log_scale`` the per-axis
    log standard deviation, ``opacity_logit`` the pre-sigmoid opacity and
    ``motion_feat`` the per-Gaussian motion feature of width ``d``.
    """

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    color: np.ndarray
    opacity_logit: np.ndarray
    motion_feat: np.ndarray

    FIELDS = ("mu", "rot", "log_scale", "color", "opacity_logit", "motion_feat")

    def __post_init__(self) -> None:
        n = self.mu.shape[0]
        expected = {
            "mu": (n, 3),
            "rot": (n, 4),
            "log_scale": (n, 3),
            "color": (n, 3),
            "opacity_logit": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatchError(
                    f"GaussianSet.{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
        if self.motion_feat.ndim != 2 or self.motion_feat.shape[0] != n:
            raise ShapeMismatchError(
                f"GaussianSet.motion_feat has shape {self.motion_feat.shape}, expected ({n}, d)"
            )

    @classmethod
    def empty(cls, n: int, motion_dim: int = 8, dtype: type = np.float32) -> "GaussianSet":
        rot = np.zeros((n, 4), dtype=dtype)
        rot[:, 0] = 1
        return cls(
            mu=np.zeros((n, 3), dtype=dtype),
            rot=rot,
            log_scale=np.zeros((n, 3), dtype=dtype),
            color=np.zeros((n, 3), dtype=dtype),
            opacity_logit=np.zeros(n, dtype=dtype),
            motion_feat=np.zeros((n, motion_dim), dtype=dtype),
        )

    def __len__(self) -> int:
        return int(self.mu.shape[0])

    @property
    def dtype(self) -> np.dtype:
        return self.mu.dtype

    @property
    def motion_dim(self) -> int:
        return int(self.motion_feat.shape[1])

    @property
    def opacity(self) -> np.ndarray:
        return expit(self.opacity_logit)

    def copy(self) -> "GaussianSet":
        return GaussianSet(**{name: getattr(self, name).copy() for name in self.FIELDS})

    def astype(self, dtype: type) -> "GaussianSet":
        return GaussianSet(**{name: getattr(self, name).astype(dtype) for name in self.FIELDS})

    def subset(self, keep: np.ndarray) -> "GaussianSet":
        return GaussianSet(**{name: getattr(self, name)[keep].copy() for name in self.FIELDS})

    def replace(self, **changes: np.ndarray) -> "GaussianSet":
        return dataclasses.replace(self, **changes)

    def normalize_rotations(self) -> None:
        self.rot[...] = quat_normalize(self.rot)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.FIELDS}


@dataclasses.dataclass
class Camera:
    """A pinhole camera.

    :Parameters:
      - `world_to_cam`: 4×4 rigid transform into OpenCV camera space
      - `focal`: ``(fx, fy)`` in pixels
      - `principal`: ``(cx, cy)`` in pixels
      - `resolution`: ``(width, height)`` in pixels
      - `near`, `far`: clip depths
    """

    world_to_cam: np.ndarray
    focal: Tuple[float, float]
    principal: Tuple[float, float]
    resolution: Tuple[int, int]
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self) -> None:
        self.world_to_cam = np.asarray(self.world_to_cam, dtype=np.float64)
        if self.world_to_cam.shape != (4, 4):
            raise ShapeMismatchError("world_to_cam must be 4x4")
        rotation = self.world_to_cam[:3, :3]
        if np.max(np.abs(rotation @ rotation.T - np.eye(3))) >= 1e-6:
            raise ConfigurationError("world_to_cam rotation block is not orthonormal")
        if not self.near < self.far:
            raise ConfigurationError(f"near ({self.near}) must be less than far ({self.far})")
        if min(self.focal) <= 0:
            raise ConfigurationError("focal lengths must be positive")
        self.focal = (float(self.focal[0]), float(self.focal[1]))
        self.principal = (float(self.principal[0]), float(self.principal[1]))
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))

    @classmethod
    def from_fov(
        cls,
        fov_x: float,
        resolution: Tuple[int, int],
        cam_to_world: np.ndarray,
        near: float = 0.01,
        far: float = 100.0,
    ) -> "Camera":
        """A camera with square pixels from a horizontal field of view in
        radians and an OpenCV-convention camera-to-world matrix.
        """
        width, height = resolution
        focal = 0.5 * width / math.tan(0.5 * fov_x)
        cam_to_world = np.asarray(cam_to_world, dtype=np.float64)
        world_to_cam = np.eye(4)
        world_to_cam[:3, :3] = cam_to_world[:3, :3].T
        world_to_cam[:3, 3] = -cam_to_world[:3, :3].T @ cam_to_world[:3, 3]
        return cls(world_to_cam, (focal, focal), (0.5 * width, 0.5 * height), resolution, near, far)

    @classmethod
    def look_at(
        cls,
        eye: Sequence[float],
        target: Sequence[float],
        fov_x: float,
        resolution: Tuple[int, int],
        up: Sequence[float] = (0.0, 0.0, 1.0),
        near: float = 0.01,
        far: float = 100.0,
    ) -> "Camera":
        eye_arr = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye_arr
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        cam_to_world = np.eye(4)
        cam_to_world[:3, 0] = right
        cam_to_world[:3, 1] = down
        cam_to_world[:3, 2] = forward
        cam_to_world[:3, 3] = eye_arr
        return cls.from_fov(fov_x, resolution, cam_to_world, near, far)

    @property
    def cam_to_world(self) -> np.ndarray:
        return np.linalg.inv(self.world_to_cam)

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]


@dataclasses.dataclass
class Splat2D:
    """Projected splats, one row per visible Gaussian.

    ``index`` maps each row back to its Gaussian. ``cov2d`` is the projected
    covariance before dilation.
    """

    index: np.ndarray
    mu2d: np.ndarray
    cov2d: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    alpha_base: np.ndarray

    def __len__(self) -> int:
        return int(self.index.shape[0])

    @classmethod
    def concatenate(cls, splats: Sequence["Splat2D"]) -> "Splat2D":
        fields = [f.name for f in dataclasses.fields(cls)]
        return cls(**{name: np.concatenate([getattr(s, name) for s in splats]) for name in fields})


@dataclasses.dataclass
class RasterSettings:
    """Rasterizer knobs.

    ``cutoff_sigma`` bounds each splat's support: beyond it alpha is zero, so
    every tile sees the same footprint.
    """

    tile_size: int = 16
    dilation: float = 0.3
    alpha_max: float = 0.999
    min_transmittance: float = 1e-4
    cutoff_sigma: float = 3.0
    threads: Optional[int] = None


@dataclasses.dataclass
class GaussianGrads:
    """Per-Gaussian gradients produced by :func:`rasterize_backward`.

    ``alpha_mult`` is the gradient with respect to the per-Gaussian opacity
    multiplier passed to :func:`rasterize` (the lifecycle).
    """

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    color: np.ndarray
    opacity_logit: np.ndarray
    alpha_mult: np.ndarray
    mu2d: np.ndarray

    @classmethod
    def zeros(cls, n: int, dtype: type) -> "GaussianGrads":
        return cls(
            mu=np.zeros((n, 3), dtype),
            rot=np.zeros((n, 4), dtype),
            log_scale=np.zeros((n, 3), dtype),
            color=np.zeros((n, 3), dtype),
            opacity_logit=np.zeros(n, dtype),
            alpha_mult=np.zeros(n, dtype),
            mu2d=np.zeros((n, 2), dtype),
        )


@dataclasses.dataclass
class RenderOutput:
    """Result of :func:`rasterize`: the image plus state for the backward
    pass. ``grads`` and ``screen_grad_norm`` are zeroed when the pass starts
    and filled by :func:`rasterize_backward`.
    """

    image: np.ndarray
    grads: GaussianGrads
    screen_grad_norm: np.ndarray
    visible: np.ndarray
    state: "_RasterState"


@dataclasses.dataclass
class _Projection:
    splats: Splat2D
    p_cam: np.ndarray
    jac: np.ndarray
    cov_cam: np.ndarray
    rotation: np.ndarray


@dataclasses.dataclass
class _RenderState:
    splats: Splat2D
    order: np.ndarray
    conic: np.ndarray
    tiles: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]
    background: np.ndarray
    resolution: Tuple[int, int]
    settings: RasterSettings


@dataclasses.dataclass
class _RasterState:
    gaussians: GaussianSet
    n_gaussians: int
    camera: Camera
    alpha_mult: Optional[np.ndarray]
    projection: _Projection
    render: _RenderState


# Covariance.


def compose_covariance(rot: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """Return ``Σ = R S Sᵀ Rᵀ`` with ``S = diag(exp(log_scale))``.

    Accepts a single quaternion and scale or batches of them. The quaternion
    is normalized first, so the result is always symmetric positive definite.
    """
    rotmat = quat_to_rotmat(quat_normalize(np.asarray(rot)))
    m = rotmat * np.exp(np.asarray(log_scale))[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def compose_covariance_backward(
    rot: np.ndarray, log_scale: np.ndarray, dcov: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`compose_covariance` for ``rot`` and ``log_scale``."""
    qn = quat_normalize(rot)
    rotmat = quat_to_rotmat(qn)
    scale = np.exp(log_scale)
    m = rotmat * scale[..., None, :]
    dm = (dcov + np.swapaxes(dcov, -1, -2)) @ m
    drotmat = dm * scale[..., None, :]
    dscale = np.sum(dm * rotmat, axis=-2)
    drot = quat_normalize_backward(rot, quat_to_rotmat_backward(qn, drotmat))
    return drot, dscale * scale


# Projection.


def _dilated(cov2d: np.ndarray, dilation: float) -> np.ndarray:
    out = cov2d.copy()
    out[..., 0, 0] += dilation
    out[..., 1, 1] += dilation
    return out


def _footprint_radius(cov2d: np.ndarray, sigma: float) -> np.ndarray:
    a = cov2d[..., 0, 0]
    b = cov2d[..., 0, 1]
    c = cov2d[..., 1, 1]
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    return sigma * np.sqrt(np.maximum(lam, 0.0))


def _project_batch(
    gaussians: GaussianSet,
    camera: Camera,
    alpha_mult: Optional[np.ndarray],
    dilation: float,
) -> _Projection:
    dtype = gaussians.dtype
    rotation = camera.world_to_cam[:3, :3].astype(dtype)
    translation = camera.world_to_cam[:3, 3].astype(dtype)
    fx, fy = camera.focal
    cx, cy = camera.principal
    width, height = camera.resolution

    p_cam = gaussians.mu @ rotation.T + translation
    z = p_cam[:, 2]
    in_depth = (z > camera.near) & (z < camera.far)

    idx = np.nonzero(in_depth)[0]
    p = p_cam[idx]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    jac = np.zeros((len(idx), 2, 3), dtype=dtype)
    jac[:, 0, 0] = fx / z
    jac[:, 0, 2] = -fx * x / (z * z)
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * y / (z * z)
    cov3 = compose_covariance(gaussians.rot[idx], gaussians.log_scale[idx])
    cov_cam = rotation @ cov3 @ rotation.T
    cov2d = jac @ cov_cam @ np.swapaxes(jac, -1, -2)
    mu2d = np.stack([fx * x / z + cx, fy * y / z + cy], axis=-1)

    radius = _footprint_radius(_dilated(cov2d, dilation), CULL_SIGMA)
    on_screen = (
        (mu2d[:, 0] + radius >= 0)
        & (mu2d[:, 0] - radius <= width)
        & (mu2d[:, 1] + radius >= 0)
        & (mu2d[:, 1] - radius <= height)
    )
    keep = np.nonzero(on_screen)[0]
    idx = idx[keep]

    alpha_base = expit(gaussians.opacity_logit[idx])
    if alpha_mult is not None:
        alpha_base = alpha_base * alpha_mult[idx]
    splats = Splat2D(
        index=idx,
        mu2d=mu2d[keep],
        cov2d=cov2d[keep],
        depth=p[keep, 2],
        color=gaussians.color[idx],
        alpha_base=alpha_base.astype(dtype),
    )
    return _Projection(splats, p[keep], jac[keep], cov_cam[keep], rotation)


def project(gaussian: GaussianSet, camera: Camera) -> Optional[Splat2D]:
    """Project a single Gaussian; returns None when it is culled.

    Culling is a normal outcome: the camera-space depth is outside
    ``(near, far)`` or the 3σ screen footprint misses the image.
    """
    if len(gaussian) != 1:
        raise ShapeMismatchError("project() takes a GaussianSet holding exactly one Gaussian")
    splats = project_gaussians(gaussian, camera)
    return splats if len(splats) else None


def project_gaussians(
    gaussians: GaussianSet, camera: Camera, alpha_mult: Optional[np.ndarray] = None
) -> Splat2D:
    """Project every Gaussian, dropping culled ones."""
    return _project_batch(gaussians, camera, alpha_mult, RasterSettings.dilation).splats


def _project_backward(
    gaussians: GaussianSet,
    camera: Camera,
    alpha_mult: Optional[np.ndarray],
    proj: _Projection,
    dmu2d: np.ndarray,
    dcov2d: np.ndarray,
    dcolor: np.ndarray,
    dalpha_base: np.ndarray,
    grads: GaussianGrads,
) -> None:
    idx = proj.splats.index
    fx, fy = camera.focal
    jac, cov_cam, rotation = proj.jac, proj.cov_cam, proj.rotation
    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]

    djac = (dcov2d + np.swapaxes(dcov2d, -1, -2)) @ jac @ cov_cam
    dcov_cam = np.swapaxes(jac, -1, -2) @ dcov2d @ jac
    dcov3 = rotation.T @ dcov_cam @ rotation

    z2 = z * z
    z3 = z2 * z
    dx = djac[:, 0, 2] * (-fx / z2) + dmu2d[:, 0] * fx / z
    dy = djac[:, 1, 2] * (-fy / z2) + dmu2d[:, 1] * fy / z
    dz = (
        djac[:, 0, 0] * (-fx / z2)
        + djac[:, 0, 2] * (2 * fx * x / z3)
        + djac[:, 1, 1] * (-fy / z2)
        + djac[:, 1, 2] * (2 * fy * y / z3)
        - dmu2d[:, 0] * fx * x / z2
        - dmu2d[:, 1] * fy * y / z2
    )
    dp_cam = np.stack([dx, dy, dz], axis=-1)
    grads.mu[idx] = dp_cam @ rotation

    drot, dlog_scale = compose_covariance_backward(
        gaussians.rot[idx], gaussians.log_scale[idx], dcov3
    )
    grads.rot[idx] = drot
    grads.log_scale[idx] = dlog_scale
    grads.color[idx] = dcolor
    grads.mu2d[idx] = dmu2d

    sigma = expit(gaussians.opacity_logit[idx])
    mult = alpha_mult[idx] if alpha_mult is not None else np.ones_like(sigma)
    grads.opacity_logit[idx] = dalpha_base * mult * sigma * (1 - sigma)
    grads.alpha_mult[idx] = dalpha_base * sigma


# Blending.


def _conics(cov2d: np.ndarray, dilation: float) -> np.ndarray:
    dil = _dilated(cov2d, dilation)
    a = dil[:, 0, 0]
    b = dil[:, 0, 1]
    c = dil[:, 1, 1]
    det = a * c - b * b
    conic = np.empty_like(dil)
    conic[:, 0, 0] = c / det
    conic[:, 0, 1] = -b / det
    conic[:, 1, 0] = -b / det
    conic[:, 1, 1] = a / det
    return conic


def _build_tiles(
    splats: Splat2D,
    order: np.ndarray,
    resolution: Tuple[int, int],
    settings: RasterSettings,
) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    width, height = resolution
    ts = settings.tile_size
    dtype = splats.mu2d.dtype
    radius = _footprint_radius(_dilated(splats.cov2d, settings.dilation), settings.cutoff_sigma)
    mu = splats.mu2d[order]
    rad = radius[order]
    tiles = []
    for ty in range(0, height, ts):
        for tx in range(0, width, ts):
            xs = np.arange(tx, min(tx + ts, width), dtype=dtype) + 0.5
            ys = np.arange(ty, min(ty + ts, height), dtype=dtype) + 0.5
            hit = (
                (mu[:, 0] + rad >= xs[0])
                & (mu[:, 0] - rad <= xs[-1])
                & (mu[:, 1] + rad >= ys[0])
                & (mu[:, 1] - rad <= ys[-1])
            )
            px, py = np.meshgrid(xs, ys)
            tiles.append((order[hit], px.ravel(), py.ravel()))
    return tiles


def _tile_alpha(
    state: _RenderState, ids: np.ndarray, px: np.ndarray, py: np.ndarray
) -> Tuple[np.ndarray, ...]:
    settings = state.settings
    splats = state.splats
    conic = state.conic[ids]
    dx = px[None, :] - splats.mu2d[ids, 0][:, None]
    dy = py[None, :] - splats.mu2d[ids, 1][:, None]
    a = conic[:, 0, 0][:, None]
    b = conic[:, 0, 1][:, None]
    c = conic[:, 1, 1][:, None]
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    gauss = np.exp(power)
    gauss[power < -0.5 * settings.cutoff_sigma**2] = 0
    raw = splats.alpha_base[ids][:, None] * gauss
    alpha = np.minimum(raw, settings.alpha_max)

    one = np.ones((1, alpha.shape[1]), dtype=alpha.dtype)
    trans = np.concatenate([one, np.cumprod(1 - alpha, axis=0)[:-1]], axis=0)
    active = trans >= settings.min_transmittance
    alpha = np.where(active, alpha, 0)
    t_final = np.prod(1 - alpha, axis=0)
    return dx, dy, gauss, raw, alpha, trans, active, t_final


def _render_tile(
    state: _RenderState, tile: Tuple[np.ndarray, np.ndarray, np.ndarray]
) -> np.ndarray:
    ids, px, py = tile
    bg = state.background
    if len(ids) == 0:
        return np.broadcast_to(bg, (len(px), 3)).copy()
    _, _, _, _, alpha, trans, _, t_final = _tile_alpha(state, ids, px, py)
    weight = trans * alpha
    return weight.T @ state.splats.color[ids] + t_final[:, None] * bg[None, :]


def _render(
    splats: Splat2D,
    background: np.ndarray,
    resolution: Tuple[int, int],
    settings: RasterSettings,
) -> Tuple[np.ndarray, _RenderState]:
    dtype = splats.mu2d.dtype
    width, height = resolution
    background = np.asarray(background, dtype=dtype)
    for name in ("mu2d", "depth"):
        if not np.all(np.isfinite(getattr(splats, name))):
            raise ConfigurationError(f"splat {name} must be finite")
    # Ties in depth resolve by Gaussian index.
    order = np.lexsort((splats.index, splats.depth))
    state = _RenderState(
        splats=splats,
        order=order,
        conic=_conics(splats.cov2d, settings.dilation),
        tiles=[],
        background=background,
        resolution=(width, height),
        settings=settings,
    )
    state.tiles = _build_tiles(splats, order, (width, height), settings)
    pieces = executor.map_ordered(
        lambda tile: _render_tile(state, tile), state.tiles, settings.threads
    )
    image = np.empty((height, width, 3), dtype=dtype)
    ts = settings.tile_size
    i = 0
    for ty in range(0, height, ts):
        for tx in range(0, width, ts):
            h = min(ts, height - ty)
            w = min(ts, width - tx)
            image[ty : ty + h, tx : tx + w] = pieces[i].reshape(h, w, 3)
            i += 1
    return image, state


def render(
    splats: Union[Splat2D, Sequence[Splat2D]],
    background: Sequence[float],
    resolution: Tuple[int, int],
    settings: Optional[RasterSettings] = None,
) -> np.ndarray:
    """Alpha-blend splats front to back into an ``(H, W, 3)`` image.

    Per pixel ``C = Σᵢ Tᵢ αᵢ cᵢ + T_final · background`` with
    ``αᵢ = min(0.999, alpha_baseᵢ · exp(−½ dᵀ Σ′⁻¹ d))``. A pixel stops
    accepting splats once its transmittance falls below 1e-4. A list of
    splats is blended as one set.
    """
    bg = np.asarray(background)
    if not isinstance(splats, Splat2D):
        if not splats:
            width, height = resolution
            return np.broadcast_to(bg, (height, width, 3)).astype(np.float32)
        splats = Splat2D.concatenate(splats)
    image, _ = _render(splats, bg, resolution, settings or RasterSettings())
    return image


def _tile_backward(
    state: _RenderState, tile: Tuple[np.ndarray, np.ndarray, np.ndarray], dpix: np.ndarray
) -> Optional[Tuple[np.ndarray, ...]]:
    ids, px, py = tile
    if len(ids) == 0:
        return None
    settings = state.settings
    splats = state.splats
    dx, dy, gauss, raw, alpha, trans, active, t_final = _tile_alpha(state, ids, px, py)
    colors = splats.color[ids]
    weight = trans * alpha

    dcolor = weight @ dpix
    cdot = colors @ dpix.T
    contrib = weight * cdot
    bg_dot = dpix @ state.background
    after = np.cumsum(contrib[::-1], axis=0)[::-1] - contrib + (t_final * bg_dot)[None, :]
    dalpha = trans * cdot - after / (1 - alpha)
    dalpha = np.where(active & (raw < settings.alpha_max), dalpha, 0)

    alpha_base = splats.alpha_base[ids][:, None]
    dalpha_base = np.sum(dalpha * gauss, axis=1)
    dpower = dalpha * alpha_base * gauss

    conic = state.conic[ids]
    a = conic[:, 0, 0][:, None]
    b = conic[:, 0, 1][:, None]
    c = conic[:, 1, 1][:, None]
    dconic = np.empty((len(ids), 2, 2), dtype=dpix.dtype)
    dconic[:, 0, 0] = -0.5 * np.sum(dpower * dx * dx, axis=1)
    dconic[:, 0, 1] = -0.5 * np.sum(dpower * dx * dy, axis=1)
    dconic[:, 1, 0] = dconic[:, 0, 1]
    dconic[:, 1, 1] = -0.5 * np.sum(dpower * dy * dy, axis=1)
    dmu2d = np.stack(
        [np.sum(dpower * (a * dx + b * dy), axis=1), np.sum(dpower * (b * dx + c * dy), axis=1)],
        axis=-1,
    )
    return ids, dmu2d, dconic, dcolor, dalpha_base


def render_backward(
    state: _RenderState, dimage: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Adjoint of :func:`render`.

    Returns gradients per splat row for ``mu2d``, ``cov2d`` (undilated),
    ``color`` and ``alpha_base``. Tile contributions are reduced in tile
    order, so the result does not depend on the thread count.
    """
    width, height = state.resolution
    if dimage.shape != (height, width, 3):
        raise InternalConsistencyError(
            f"image gradient has shape {dimage.shape}, forward image was {(height, width, 3)}"
        )
    splats = state.splats
    n = len(splats)
    dtype = splats.mu2d.dtype
    dimage = dimage.astype(dtype, copy=False)
    ts = state.settings.tile_size

    tile_grads = []
    i = 0
    for ty in range(0, height, ts):
        for tx in range(0, width, ts):
            tile_grads.append(dimage[ty : ty + ts, tx : tx + ts].reshape(-1, 3))
            i += 1
    pieces = executor.map_ordered(
        lambda pair: _tile_backward(state, pair[0], pair[1]),
        list(zip(state.tiles, tile_grads)),
        state.settings.threads,
    )

    dmu2d = np.zeros((n, 2), dtype)
    dconic = np.zeros((n, 2, 2), dtype)
    dcolor = np.zeros((n, 3), dtype)
    dalpha_base = np.zeros(n, dtype)
    for piece in pieces:
        if piece is None:
            continue
        ids, g_mu, g_conic, g_color, g_alpha = piece
        # ids are unique within a tile.
        dmu2d[ids] += g_mu
        dconic[ids] += g_conic
        dcolor[ids] += g_color
        dalpha_base[ids] += g_alpha

    conic = state.conic
    dcov2d = -conic @ dconic @ conic
    return dmu2d, dcov2d, dcolor, dalpha_base


# Full pipeline.


def rasterize(
    gaussians: GaussianSet,
    camera: Camera,
    background: Sequence[float] = (0.0, 0.0, 0.0),
    alpha_mult: Optional[np.ndarray] = None,
    settings: Optional[RasterSettings] = None,
) -> RenderOutput:
    """Project, sort and blend a Gaussian set as seen by `camera`.

    :Parameters:
      - `gaussians`: the (already deformed) Gaussians
      - `camera`: a :class:`Camera`
      - `background`: RGB composited behind the residual transmittance
      - `alpha_mult` (optional): per-Gaussian multiplier on the sigmoid
        opacity, e.g. the lifecycle
      - `settings` (optional): :class:`RasterSettings`
    """
    settings = settings or RasterSettings()
    if alpha_mult is not None and alpha_mult.shape != (len(gaussians),):
        raise ShapeMismatchError(
            f"alpha_mult has shape {alpha_mult.shape}, expected ({len(gaussians)},)"
        )
    proj = _project_batch(gaussians, camera, alpha_mult, settings.dilation)
    image, render_state = _render(
        proj.splats, np.asarray(background), camera.resolution, settings
    )
    n = len(gaussians)
    state = _RasterState(
        gaussians=gaussians,
        n_gaussians=n,
        camera=camera,
        alpha_mult=alpha_mult,
        projection=proj,
        render=render_state,
    )
    return RenderOutput(
        image=image,
        grads=GaussianGrads.zeros(n, gaussians.dtype),
        screen_grad_norm=np.zeros(n, gaussians.dtype),
        visible=proj.splats.index,
        state=state,
    )


def rasterize_backward(output: RenderOutput, dimage: np.ndarray) -> GaussianGrads:
    """Fill ``output.grads`` with ``∂loss/∂parameter`` for every Gaussian and
    add ``‖∂loss/∂μ′‖`` to ``output.screen_grad_norm``.
    """
    state = output.state
    if len(state.gaussians) != state.n_gaussians or len(output.grads.mu) != state.n_gaussians:
        raise InternalConsistencyError(
            f"forward pass saw {state.n_gaussians} Gaussians, backward sees {len(state.gaussians)}"
        )
    if len(state.render.splats) != len(state.projection.splats):
        raise InternalConsistencyError("splat count changed between forward and backward passes")
    dmu2d, dcov2d, dcolor, dalpha_base = render_backward(state.render, dimage)
    grads = GaussianGrads.zeros(state.n_gaussians, state.gaussians.dtype)
    _project_backward(
        state.gaussians,
        state.camera,
        state.alpha_mult,
        state.projection,
        dmu2d,
        dcov2d,
        dcolor,
        dalpha_base,
        grads,
    )
    output.grads = grads
    output.screen_grad_norm[state.projection.splats.index] += np.linalg.norm(dmu2d, axis=-1)
    return grads
