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

"""Photometric training loss ``L1 + λ·(1 − SSIM)`` and its image gradient."""
import math
from typing import Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from splatcast.errors import ShapeMismatchError

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
C1 = 0.01**2
C2 = 0.03**2


def _blur(image: np.ndarray) -> np.ndarray:
    # Zero padding keeps the filter self-adjoint.
    return gaussian_filter(
        image, sigma=(SSIM_SIGMA, SSIM_SIGMA, 0), truncate=SSIM_RADIUS / SSIM_SIGMA, mode="constant"
    )


def l1_loss(image: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = image - target
    return float(np.mean(np.abs(diff))), (np.sign(diff) / diff.size).astype(image.dtype)


def ssim_loss(image: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean per-channel SSIM over an 11×11 Gaussian window and its gradient
    with respect to `image`.
    """
    x = image.astype(np.float64)
    y = target.astype(np.float64)
    mu_x = _blur(x)
    mu_y = _blur(y)
    var_x = _blur(x * x) - mu_x * mu_x
    var_y = _blur(y * y) - mu_y * mu_y
    cov_xy = _blur(x * y) - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + C1
    a2 = 2 * cov_xy + C2
    b1 = mu_x * mu_x + mu_y * mu_y + C1
    b2 = var_x + var_y + C2
    ssim_map = a1 * a2 / (b1 * b2)

    d_map = 1.0 / ssim_map.size
    g_a1 = d_map * a2 / (b1 * b2)
    g_a2 = d_map * a1 / (b1 * b2)
    g_b1 = -d_map * ssim_map / b1
    g_b2 = -d_map * ssim_map / b2
    d_mu_x = 2 * mu_y * g_a1 - 2 * mu_y * g_a2 + 2 * mu_x * g_b1 - 2 * mu_x * g_b2
    grad = _blur(d_mu_x) + 2 * x * _blur(g_b2) + y * _blur(2 * g_a2)
    return float(np.mean(ssim_map)), grad.astype(image.dtype)


def image_loss(
    image: np.ndarray, target: np.ndarray, ssim_weight: float = 0.2
) -> Tuple[float, np.ndarray]:
    """Return the training loss and ``∂loss/∂image``."""
    if image.shape != target.shape or image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(
            f"cannot compare images of shapes {image.shape} and {target.shape}"
        )
    l1, d_l1 = l1_loss(image, target)
    if ssim_weight == 0:
        return l1, d_l1
    ssim, d_ssim = ssim_loss(image, target)
    return l1 + ssim_weight * (1 - ssim), d_l1 - ssim_weight * d_ssim


PSNR_CAP = 100.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """``10·log10(1 / MSE)`` for images in [0, 1], capped at 100 dB."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cannot compare images of shapes {a.shape} and {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)
