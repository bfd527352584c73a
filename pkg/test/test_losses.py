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

"""Test the photometric loss and PSNR."""

import unittest
from test.utils import GradientCheckMixin

import numpy as np

from splatcast.errors import ShapeMismatchError
from splatcast.losses import PSNR_CAP, image_loss, l1_loss, psnr, ssim_loss
from splatcast.tensor_nn import make_rng


def _pair(seed, size=9):
    rng = make_rng(seed)
    image = rng.uniform(0.0, 1.0, (size, size, 3))
    target = rng.uniform(0.0, 1.0, (size, size, 3))
    return image, target


class TestL1(unittest.TestCase, GradientCheckMixin):
    def test_value(self):
        image = np.full((2, 2, 3), 0.5)
        value, _ = l1_loss(image, np.full((2, 2, 3), 0.25))
        self.assertAlmostEqual(value, 0.25)

    def test_gradient(self):
        image, target = _pair(0)
        _, grad = l1_loss(image, target)
        self.assertGradientClose(grad, lambda: l1_loss(image, target)[0], image)


class TestSsim(unittest.TestCase, GradientCheckMixin):
    def test_identical_images(self):
        image, _ = _pair(1)
        value, _ = ssim_loss(image, image)
        self.assertAlmostEqual(value, 1.0, places=6)

    def test_gradient(self):
        for seed in range(5):
            with self.subTest(seed=seed):
                image, target = _pair(seed)
                _, grad = ssim_loss(image, target)
                self.assertGradientClose(grad, lambda: ssim_loss(image, target)[0], image)


class TestImageLoss(unittest.TestCase, GradientCheckMixin):
    def test_zero_for_identical(self):
        image, _ = _pair(2)
        value, _ = image_loss(image, image.copy())
        self.assertAlmostEqual(value, 0.0, places=6)

    def test_gradient(self):
        image, target = _pair(3)
        _, grad = image_loss(image, target, ssim_weight=0.2)
        self.assertGradientClose(grad, lambda: image_loss(image, target, ssim_weight=0.2)[0], image)

    def test_pure_l1(self):
        image, target = _pair(4)
        self.assertEqual(image_loss(image, target, ssim_weight=0)[0], l1_loss(image, target)[0])

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            image_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
        with self.assertRaises(ShapeMismatchError):
            image_loss(np.zeros((4, 4, 4)), np.zeros((4, 4, 4)))


class TestPsnr(unittest.TestCase):
    def test_uniform_difference(self):
        a = np.full((4, 4, 3), 0.5)
        self.assertAlmostEqual(psnr(a, a + 0.1), 20.0, places=6)

    def test_symmetric(self):
        a, b = _pair(5)
        self.assertEqual(psnr(a, b), psnr(b, a))

    def test_identical_is_capped(self):
        a, _ = _pair(6)
        self.assertEqual(psnr(a, a), PSNR_CAP)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


if __name__ == "__main__":
    unittest.main()
