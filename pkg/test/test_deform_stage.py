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

"""Test the deformation field and stage-one training."""

import math
import os
import tempfile
import unittest
from test import env
from test.utils import GradientCheckMixin, random_gaussians, synthetic_scene, tiny_config
from unittest import mock

import numpy as np

from splatcast.common import Config
from splatcast.deform_stage import (
    DeformField,
    HyperCanonicalScene,
    Stage1Trainer,
    annealing_noise,
    build_scene,
    default_noise_scale,
    deform_backward,
    deform_gaussians,
    evaluate_scene,
    initial_gaussians,
    lifecycle,
    noise_horizon,
    noise_std,
    opacity_prune,
    train_stage1,
)
from splatcast.errors import ConfigurationError, TrainingDivergedError
from splatcast.scene_io import load_checkpoint, save_checkpoint
from splatcast.splat_core import GaussianGrads
from splatcast.tensor_nn import make_rng

BOX = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])


def _small_field(rng, lifecycle=True, dtype=np.float64):
    return DeformField(
        motion_dim=2,
        pos_freqs=2,
        time_freqs=1,
        deform_depth=2,
        deform_width=8,
        opacity_depth=1,
        opacity_width=4,
        lifecycle=lifecycle,
        rng=rng,
        dtype=dtype,
    )


def _scene(seed=0, n=5, lifecycle=True, dtype=np.float64):
    rng = make_rng(seed)
    field = _small_field(rng, lifecycle, dtype)
    gaussians = random_gaussians(rng, n, motion_dim=2, dtype=dtype)
    return HyperCanonicalScene(gaussians, field, 0.1, BOX.copy()), rng


class TestNoiseSchedule(unittest.TestCase):
    def test_values(self):
        self.assertEqual(noise_std(0, 0.2), 0.2)
        self.assertAlmostEqual(noise_std(5000, 0.2), 0.1)
        self.assertEqual(noise_std(10000, 0.2), 0.0)
        self.assertEqual(noise_std(20000, 0.2), 0.0)

    def test_non_increasing(self):
        values = [noise_std(i, 1.0) for i in range(0, 12000, 250)]
        self.assertEqual(values, sorted(values, reverse=True))

    def test_custom_horizon(self):
        self.assertAlmostEqual(noise_std(50, 1.0, horizon=100), 0.5)

    def test_annealed_noise_is_zero(self):
        rng = make_rng(0)
        noise = annealing_noise(10000, 0.5, rng, 7)
        np.testing.assert_array_equal(noise, np.zeros((7, 3), dtype=np.float32))

    def test_noise_scale(self):
        noise = annealing_noise(0, 0.5, make_rng(0), 20000)
        self.assertAlmostEqual(float(noise.std()), 0.5, delta=0.01)

    def test_negative_iteration(self):
        with self.assertRaises(ConfigurationError):
            annealing_noise(-1, 0.5, make_rng(0), 3)

    def test_horizon_from_config(self):
        self.assertEqual(noise_horizon(tiny_config()), 7)
        self.assertEqual(noise_horizon(Config()), 1500)
        self.assertEqual(noise_horizon(Config({"stage1": {"iterations": 40000}})), 10000)
        self.assertEqual(noise_horizon(tiny_config(stage1={"noise_horizon": 3})), 3)

    def test_default_noise_scale(self):
        self.assertAlmostEqual(default_noise_scale(BOX), 0.1 * math.sqrt(12))


class TestDeformField(unittest.TestCase, GradientCheckMixin):
    def test_fresh_field_is_identity(self):
        scene, _ = _scene(dtype=np.float32)
        deformed = deform_gaussians(scene, 0.3)
        np.testing.assert_array_equal(deformed.gaussians.mu, scene.gaussians.mu)
        np.testing.assert_allclose(deformed.gaussians.rot, scene.gaussians.rot, atol=1e-6)

    def test_initial_lifecycle(self):
        scene, _ = _scene()
        psi = lifecycle(scene, 0.5)
        np.testing.assert_allclose(psi, 1 / (1 + math.exp(-5.0)), rtol=1e-12)
        self.assertAlmostEqual(float(psi[0]), 0.9933, places=4)

    def test_disabled_lifecycle(self):
        scene, _ = _scene(lifecycle=False)
        np.testing.assert_array_equal(lifecycle(scene, 0.5), np.ones(5))
        self.assertIsNone(deform_gaussians(scene, 0.5).lifecycle)
        self.assertFalse(any(name.startswith("opacity/") for name in scene.field.parameters()))

    def test_input_width(self):
        field = DeformField(motion_dim=8, pos_freqs=10, time_freqs=6)
        self.assertEqual(field.in_dim, 60 + 8 + 12)
        self.assertEqual(field.deform.skip, 4)

    def test_noise_shifts_centers(self):
        scene, _ = _scene()
        noise = np.full((5, 3), 0.01)
        deformed = deform_gaussians(scene, 0.5, noise)
        np.testing.assert_allclose(deformed.gaussians.mu, scene.gaussians.mu + 0.01)

    def test_parameters_round_trip(self):
        a, _ = _scene(seed=1, dtype=np.float32)
        b, _ = _scene(seed=2, dtype=np.float32)
        b.field.load_parameters({k: v.copy() for k, v in a.field.parameters().items()})
        for name, value in a.field.parameters().items():
            np.testing.assert_array_equal(b.field.parameters()[name], value)

    def test_backward(self):
        for seed in range(8):
            with self.subTest(seed=seed):
                scene, rng = _scene(seed)
                for mlp in (scene.field.deform, scene.field.opacity):
                    mlp.params["w_head"][...] = rng.normal(0.0, 0.2, mlp.params["w_head"].shape)
                n = len(scene.gaussians)
                noise = rng.normal(0.0, 0.01, (n, 3))
                w_mu = rng.normal(size=(n, 3))
                w_rot = rng.normal(size=(n, 4))
                w_psi = rng.normal(size=n)
                t = float(rng.uniform())

                def loss():
                    d = deform_gaussians(scene, t, noise)
                    total = np.sum(w_mu * d.gaussians.mu) + np.sum(w_rot * d.gaussians.rot)
                    return float(total + np.sum(w_psi * d.lifecycle))

                deformed = deform_gaussians(scene, t, noise)
                zeros = np.zeros(n)
                grads = GaussianGrads(
                    mu=w_mu,
                    rot=w_rot,
                    log_scale=np.zeros((n, 3)),
                    color=np.zeros((n, 3)),
                    opacity_logit=zeros,
                    alpha_mult=w_psi,
                    mu2d=np.zeros((n, 2)),
                )
                table = deform_backward(scene, deformed, grads)
                g = scene.gaussians
                self.assertGradientClose(table["mu"], loss, g.mu, msg="mu")
                self.assertGradientClose(table["rot"], loss, g.rot, msg="rot")
                self.assertGradientClose(table["motion_feat"], loss, g.motion_feat, msg="motion_feat")
                for name, param in scene.field.parameters().items():
                    self.assertGradientClose(table[name], loss, param, msg=name)


class TestInitialization(unittest.TestCase):
    def test_uniform_in_box(self):
        g = initial_gaussians(BOX, 50, 4, make_rng(0))
        self.assertEqual(len(g), 50)
        self.assertEqual(g.motion_dim, 4)
        self.assertTrue(np.all(g.mu >= -1) and np.all(g.mu <= 1))
        np.testing.assert_array_equal(g.rot, np.tile([1, 0, 0, 0], (50, 1)).astype(np.float32))
        np.testing.assert_allclose(g.opacity, 0.1, rtol=1e-6)
        self.assertEqual(g.dtype, np.float32)

    def test_from_points(self):
        points = make_rng(1).uniform(-0.5, 0.5, (10, 3))
        g = initial_gaussians(BOX, 4, 2, make_rng(0), points)
        np.testing.assert_allclose(g.mu, points[:4], rtol=1e-6)
        g = initial_gaussians(BOX, 30, 2, make_rng(0), points)
        self.assertEqual(len(g), 30)

    def test_single_gaussian(self):
        g = initial_gaussians(BOX, 1, 2, make_rng(0))
        self.assertTrue(np.all(np.isfinite(g.log_scale)))

    def test_build_scene(self):
        scene, _ = build_scene(tiny_config(), BOX)
        self.assertEqual(len(scene.gaussians), 60)
        self.assertAlmostEqual(scene.noise_scale, default_noise_scale(BOX), places=6)
        self.assertEqual(scene.iteration, 0)


class TestOpacityPrune(unittest.TestCase):
    def test_prunes_transparent(self):
        scene, _ = _scene(n=6, lifecycle=False)
        scene.gaussians.opacity_logit[[1, 4]] = -12.0
        keep = opacity_prune(scene, 0.005)
        np.testing.assert_array_equal(keep, [True, False, True, True, False, True])
        self.assertEqual(len(scene.gaussians), 4)

    def test_lifecycle_counts(self):
        scene, _ = _scene(n=4)
        # psi = sigmoid(-5) ~ 0.0067 everywhere; only a near-opaque Gaussian survives.
        scene.field.opacity.params["b_head"][...] = -0.5
        scene.gaussians.opacity_logit[0] = 10.0
        keep = opacity_prune(scene, 0.005)
        np.testing.assert_array_equal(keep, [True, False, False, False])
        self.assertEqual(len(scene.gaussians), 1)

    def test_never_prunes_everything(self):
        scene, _ = _scene(n=3, lifecycle=False)
        scene.gaussians.opacity_logit[...] = -20.0
        with self.assertLogs("splatcast.deform_stage", level="WARNING"):
            keep = opacity_prune(scene, 0.5)
        self.assertTrue(np.all(keep))
        self.assertEqual(len(scene.gaussians), 3)


class TestStage1Training(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        _, cls.train, cls.test, cls.bbox = synthetic_scene()

    def test_tiny_run(self):
        config = tiny_config()
        scene, rng = build_scene(config, self.bbox)
        scene = train_stage1(scene, self.train, config, rng)
        self.assertEqual(scene.iteration, 20)
        self.assertTrue(np.all(np.isfinite(scene.gaussians.mu)))
        self.assertTrue(math.isfinite(evaluate_scene(scene, self.test)))

    def test_zero_iterations(self):
        config = tiny_config(stage1={"iterations": 0, "warmup": 0})
        scene, rng = build_scene(config, self.bbox)
        before = scene.gaussians.copy()
        train_stage1(scene, self.train, config, rng)
        np.testing.assert_array_equal(scene.gaussians.mu, before.mu)

    def test_needs_two_frames(self):
        config = tiny_config()
        scene, rng = build_scene(config, self.bbox)
        with self.assertRaises(ConfigurationError):
            train_stage1(scene, self.train[:1], config, rng)

    def test_warmup_trains_canonical_gaussians_only(self):
        config = tiny_config()
        scene, rng = build_scene(config, self.bbox)
        before = scene.gaussians.copy()
        field = {name: value.copy() for name, value in scene.field.parameters().items()}
        Stage1Trainer(scene, self.train, config, rng).run(until=config.stage1.warmup)
        self.assertEqual(scene.iteration, config.stage1.warmup)
        self.assertFalse(np.array_equal(scene.gaussians.mu, before.mu))
        np.testing.assert_array_equal(scene.gaussians.motion_feat, before.motion_feat)
        for name, value in field.items():
            np.testing.assert_array_equal(scene.field.parameters()[name], value, err_msg=name)

    def test_records(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "records.jsonl")
            config = tiny_config(paths={"records": path})
            scene, rng = build_scene(config, self.bbox)
            train_stage1(scene, self.train, config, rng)
            with open(path) as stream:
                lines = stream.read().splitlines()
        self.assertEqual(len(lines), 2)
        self.assertIn('"stage": "stage1"', lines[0])

    def test_seeded_runs_match(self):
        config = tiny_config()
        results = []
        for _ in range(2):
            scene, rng = build_scene(config, self.bbox)
            results.append(train_stage1(scene, self.train, config, rng))
        for name, value in results[0].gaussians.parameters().items():
            np.testing.assert_array_equal(results[1].gaussians.parameters()[name], value)

    def test_resume_matches_uninterrupted(self):
        config = tiny_config()
        scene, rng = build_scene(config, self.bbox)
        full = Stage1Trainer(scene, self.train, config, rng).run()

        scene, rng = build_scene(config, self.bbox)
        trainer = Stage1Trainer(scene, self.train, config, rng)
        trainer.run(until=12)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "stage1.bson")
            save_checkpoint(trainer.checkpoint(), path)
            resumed = Stage1Trainer.from_checkpoint(load_checkpoint(path), self.train, config).run()

        self.assertEqual(resumed.iteration, full.iteration)
        for name, value in full.gaussians.parameters().items():
            np.testing.assert_array_equal(resumed.gaussians.parameters()[name], value, err_msg=name)
        for name, value in full.field.parameters().items():
            np.testing.assert_array_equal(resumed.field.parameters()[name], value, err_msg=name)

    def test_divergence(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = tiny_config(paths={"checkpoint_dir": tmp})
            scene, rng = build_scene(config, self.bbox)
            bad = (float("nan"), np.zeros_like(self.train[0].image))
            with mock.patch("splatcast.deform_stage.image_loss", return_value=bad):
                with self.assertRaises(TrainingDivergedError) as ctx:
                    with self.assertLogs("splatcast.deform_stage", level="ERROR"):
                        train_stage1(scene, self.train, config, rng)
            self.assertEqual(ctx.exception.stage, "stage1")
            self.assertEqual(ctx.exception.iteration, 0)
            self.assertTrue(os.path.exists(os.path.join(tmp, "stage1-diverged.bson")))


class TestStage1Acceptance(unittest.TestCase):
    @env.require_slow
    def test_static_reconstruction(self):
        _, train, test, bbox = synthetic_scene(
            "rigid-orbit", n_gaussians=600, frames=20, test=5, resolution=(64, 64), amplitude=0.0
        )
        config = Config({"deterministic": True, "stage1": {"iterations": 3000, "warmup": 500}})
        scene, rng = build_scene(config, bbox)
        train_stage1(scene, train, config, rng)
        self.assertGreaterEqual(evaluate_scene(scene, test), 35.0)

    @env.require_slow
    def test_lifecycle_helps_vanishing_cluster(self):
        _, train, test, bbox = synthetic_scene("vanish-cluster", n_gaussians=400, frames=30, test=6, resolution=(64, 64))
        scores = {}
        for enabled in (True, False):
            config = Config(
                {"deterministic": True, "stage1": {"iterations": 3000, "warmup": 500, "lifecycle": enabled}}
            )
            scene, rng = build_scene(config, bbox)
            train_stage1(scene, train, config, rng)
            scores[enabled] = evaluate_scene(scene, test)
        self.assertGreaterEqual(scores[True], scores[False])


if __name__ == "__main__":
    unittest.main()
