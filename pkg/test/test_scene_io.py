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

"""Test manifests, images, checkpoints and synthetic scene generation."""

import json
import os
import tempfile
import unittest
from test.utils import front_camera

import bson
import imageio.v3 as iio
import numpy as np
from bson.binary import Binary

from splatcast.errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigurationError,
    ManifestError,
    ShapeMismatchError,
)
from splatcast.scene_io import (
    Checkpoint,
    FrameSample,
    RecordLog,
    SyntheticSceneSpec,
    blender_to_opencv,
    generate_synthetic,
    load_checkpoint,
    load_ground_truth,
    load_manifest,
    opencv_to_blender,
    read_image,
    read_records,
    save_checkpoint,
    synthetic_ground_truth,
    to_uint8,
    write_image,
)
from splatcast.tensor_nn import make_rng, rng_state

SMALL_SCENE = {
    "n_gaussians": 20,
    "frame_count": 3,
    "test_count": 1,
    "resolution": (16, 16),
}


def _manifest_document(times, file_paths=None):
    file_paths = file_paths or [f"./train/r_{i:03d}" for i in range(len(times))]
    return {
        "camera_angle_x": 0.7,
        "resolution": [8, 6],
        "frames": [
            {"file_path": path, "time": t, "transform_matrix": np.eye(4).tolist()}
            for path, t in zip(file_paths, times)
        ],
    }


class TestManifest(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.root = self._tmp.name

    def write(self, document):
        path = os.path.join(self.root, "transforms_train.json")
        with open(path, "w") as stream:
            json.dump(document, stream)
        return path

    def test_parses_frames(self):
        path = self.write(_manifest_document([0.0, 0.5, 1.0]))
        manifest = load_manifest(path, check_images=False)
        self.assertEqual(len(manifest), 3)
        self.assertEqual(manifest.resolution, (8, 6))
        self.assertEqual([f.time for f in manifest.frames], [0.0, 0.5, 1.0])
        self.assertEqual(manifest.background, (0.0, 0.0, 0.0))
        np.testing.assert_array_equal(manifest.bbox, [[-1.5] * 3, [1.5] * 3])

    def test_time_out_of_range_names_frame(self):
        path = self.write(_manifest_document([0.0, 1.2]))
        with self.assertRaises(ManifestError) as ctx:
            load_manifest(path, check_images=False)
        self.assertEqual(ctx.exception.frame_index, 1)
        self.assertIn("frame 1", str(ctx.exception))

    def test_missing_time(self):
        document = _manifest_document([0.0])
        del document["frames"][0]["time"]
        with self.assertRaises(ManifestError):
            load_manifest(self.write(document), check_images=False)

    def test_singular_matrix(self):
        document = _manifest_document([0.0])
        document["frames"][0]["transform_matrix"] = np.zeros((4, 4)).tolist()
        with self.assertRaises(ManifestError):
            load_manifest(self.write(document), check_images=False)

    def test_missing_image(self):
        with self.assertRaises(ManifestError) as ctx:
            load_manifest(self.write(_manifest_document([0.0])))
        self.assertEqual(ctx.exception.frame_index, 0)

    def test_mixed_resolutions(self):
        write_image(os.path.join(self.root, "train", "r_000.png"), np.zeros((6, 8, 3)))
        write_image(os.path.join(self.root, "train", "r_001.png"), np.zeros((8, 8, 3)))
        with self.assertRaises(ManifestError) as ctx:
            load_manifest(self.write(_manifest_document([0.0, 1.0])))
        self.assertEqual(ctx.exception.frame_index, 1)

    def test_image_resolution_wins(self):
        write_image(os.path.join(self.root, "train", "r_000.png"), np.zeros((6, 10, 3)))
        manifest = load_manifest(self.write(_manifest_document([0.0])))
        self.assertEqual(manifest.resolution, (10, 6))
        self.assertTrue(manifest.image_path(0).endswith("r_000.png"))

    def test_not_json(self):
        path = os.path.join(self.root, "broken.json")
        with open(path, "w") as stream:
            stream.write("{frames")
        with self.assertRaises(ManifestError):
            load_manifest(path)

    def test_missing_file(self):
        with self.assertRaises(ManifestError):
            load_manifest(os.path.join(self.root, "absent.json"))

    def test_bad_bbox(self):
        document = _manifest_document([0.0])
        document["scene_bbox"] = [[0, 0, 0], [1, 0, 1]]
        with self.assertRaises(ManifestError):
            load_manifest(self.write(document), check_images=False)


class TestImages(unittest.TestCase):
    def test_alpha_composited_over_background(self):
        with tempfile.TemporaryDirectory() as root:
            path = os.path.join(root, "rgba.png")
            rgba = np.zeros((2, 2, 4), dtype=np.uint8)
            rgba[..., 0] = 255
            rgba[0, 0, 3] = 255
            iio.imwrite(path, rgba)
            image = read_image(path, background=(0.0, 0.0, 1.0))
        np.testing.assert_allclose(image[0, 0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(image[1, 1], [0.0, 0.0, 1.0])

    def test_to_uint8_clips(self):
        np.testing.assert_array_equal(to_uint8(np.array([-0.5, 0.5, 2.0])), [0, 128, 255])


class TestFrameSample(unittest.TestCase):
    def test_time_outside_unit_interval(self):
        camera = front_camera((4, 3))
        with self.assertRaises(ConfigurationError):
            FrameSample(np.zeros((3, 4, 3), np.float32), camera, 1.5)

    def test_image_must_match_camera(self):
        camera = front_camera((4, 3))
        with self.assertRaises(ShapeMismatchError):
            FrameSample(np.zeros((4, 3, 3), np.float32), camera, 0.5)


class TestCameraConventions(unittest.TestCase):
    def test_conversions_are_inverse(self):
        pose = np.eye(4)
        pose[:3, 3] = [1.0, 2.0, 3.0]
        np.testing.assert_array_equal(opencv_to_blender(blender_to_opencv(pose)), pose)
        converted = blender_to_opencv(pose)
        np.testing.assert_array_equal(converted[:3, 3], pose[:3, 3])
        np.testing.assert_array_equal(converted[:3, 2], [0.0, 0.0, -1.0])


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.root = self._tmp.name

    def sample(self):
        rng = make_rng(5)
        rng.normal(size=3)
        checkpoint = Checkpoint(stage="stage1", counters={"iteration": 12}, config={"seed": 5})
        checkpoint.put("gaussians", {"mu": rng.normal(size=(4, 3)), "labels": np.arange(4)})
        checkpoint.rng_state = rng_state(rng)
        return checkpoint

    def test_save_load_save_is_byte_identical(self):
        first = os.path.join(self.root, "a.bson")
        second = os.path.join(self.root, "b.bson")
        save_checkpoint(self.sample(), first)
        save_checkpoint(load_checkpoint(first), second)
        with open(first, "rb") as a, open(second, "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_contents(self):
        path = os.path.join(self.root, "a.bson")
        original = self.sample()
        save_checkpoint(original, path)
        loaded = load_checkpoint(path)
        self.assertEqual(loaded.stage, "stage1")
        self.assertEqual(loaded.counters, {"iteration": 12})
        self.assertEqual(loaded.rng_state, original.rng_state)
        section = loaded.section("gaussians")
        self.assertEqual(section["mu"].dtype, np.float32)
        self.assertEqual(section["labels"].dtype, np.int64)
        np.testing.assert_array_equal(section["mu"], original.tensors["gaussians/mu"].astype(np.float32))
        self.assertTrue(loaded.has_section("gaussians"))
        with self.assertRaises(CheckpointError):
            loaded.require("deform")

    def test_full_precision_sections(self):
        first = os.path.join(self.root, "a.bson")
        second = os.path.join(self.root, "b.bson")
        checkpoint = self.sample()
        weights = make_rng(6).normal(size=(3, 2))
        checkpoint.put("forecast", {"w": weights}, float32=False)
        save_checkpoint(checkpoint, first)
        loaded = load_checkpoint(first)
        self.assertEqual(loaded.tensors["forecast/w"].dtype, np.float64)
        np.testing.assert_array_equal(loaded.tensors["forecast/w"], weights)
        self.assertEqual(loaded.tensors["gaussians/mu"].dtype, np.float32)
        save_checkpoint(loaded, second)
        with open(first, "rb") as a, open(second, "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_newer_version_rejected(self):
        path = os.path.join(self.root, "future.bson")
        checkpoint = self.sample()
        checkpoint.version = 2
        save_checkpoint(checkpoint, path)
        with self.assertRaises(CheckpointVersionError) as ctx:
            load_checkpoint(path)
        self.assertEqual(ctx.exception.version, 2)

    def test_truncated(self):
        path = os.path.join(self.root, "a.bson")
        save_checkpoint(self.sample(), path)
        with open(path, "rb") as stream:
            raw = stream.read()
        with open(path, "wb") as stream:
            stream.write(raw[: len(raw) // 2])
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)

    def test_missing(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(os.path.join(self.root, "absent.bson"))

    def test_malformed_documents_raise_checkpoint_error(self):
        good = {"name": "a/x", "dtype": "<f4", "shape": [2, 2], "data": Binary(bytes(16))}
        cases = {
            "entry not a document": {"tensors": [5]},
            "tensors not a list": {"tensors": {"a/x": good}},
            "object dtype": {"tensors": [dict(good, dtype="|O", shape=[2], data=Binary(bytes(16)))]},
            "void dtype": {"tensors": [dict(good, dtype="|V0", shape=[0], data=Binary(b""))]},
            "negative dimension": {"tensors": [dict(good, shape=[2, -2])]},
            "wrong byte count": {"tensors": [dict(good, shape=[3, 2])]},
            "shape not a list": {"tensors": [dict(good, shape="2x2")]},
            "rng not json": {"rng": "{not json"},
            "rng not a document": {"rng": "[1, 2]"},
            "counters list": {"counters": [1, 2]},
            "counter not integer": {"counters": {"stage1_iteration": "7"}},
            "config list": {"config": [1]},
        }
        for label, overrides in cases.items():
            with self.subTest(label):
                document = {"format": "splatcast-checkpoint", "version": 1, "stage": "stage1"}
                document.update(overrides)
                path = os.path.join(self.root, "bad.bson")
                with open(path, "wb") as stream:
                    stream.write(bson.encode(document))
                with self.assertRaises(CheckpointError):
                    load_checkpoint(path)


class TestRecordLog(unittest.TestCase):
    def test_appends_lines(self):
        with tempfile.TemporaryDirectory() as root:
            path = os.path.join(root, "logs", "records.jsonl")
            log = RecordLog(path)
            log.write({"iteration": 1, "loss": 0.5})
            log.write({"iteration": 2, "loss": 0.25})
            self.assertEqual([r["iteration"] for r in read_records(path)], [1, 2])

    def test_none_path_discards(self):
        RecordLog(None).write({"iteration": 1})


class TestSyntheticScenes(unittest.TestCase):
    def test_unknown_generator(self):
        with self.assertRaises(ConfigurationError):
            synthetic_ground_truth(SyntheticSceneSpec(generator="spiral", **SMALL_SCENE))

    def test_needs_two_frames(self):
        with self.assertRaises(ConfigurationError):
            synthetic_ground_truth(SyntheticSceneSpec(**dict(SMALL_SCENE, frame_count=1)))

    def test_frame_times_and_splits(self):
        truth = synthetic_ground_truth(SyntheticSceneSpec(**dict(SMALL_SCENE, test_count=2)))
        np.testing.assert_allclose(truth.times, [0.0, 0.5, 1.0, 0.25, 0.75])
        self.assertEqual(truth.splits, ["train"] * 3 + ["test"] * 2)

    def test_still_orbit(self):
        truth = synthetic_ground_truth(SyntheticSceneSpec(generator="rigid-orbit", amplitude=0.0, **SMALL_SCENE))
        for i in range(1, len(truth.times)):
            np.testing.assert_array_equal(truth.positions[i], truth.positions[0])

    def test_rigid_orbit_moves_together(self):
        truth = synthetic_ground_truth(SyntheticSceneSpec(generator="rigid-orbit", period=2.0, **SMALL_SCENE))
        offsets = truth.positions[2].astype(np.float64) - truth.positions[0]
        np.testing.assert_allclose(offsets, np.broadcast_to(offsets[0], offsets.shape), atol=1e-6)
        self.assertGreater(np.linalg.norm(offsets[0]), 0.1)

    def test_vanish_cluster(self):
        truth = synthetic_ground_truth(SyntheticSceneSpec(generator="vanish-cluster", vanish_time=0.6, **SMALL_SCENE))
        gone = truth.labels == 0
        np.testing.assert_array_equal(truth.opacity_at(0.5), np.ones(len(gone)))
        after = truth.opacity_at(0.7)
        self.assertTrue(np.all(after[gone] == 0))
        self.assertTrue(np.all(after[~gone] == 1))

    def test_generator_writes_dataset(self):
        spec = SyntheticSceneSpec(**SMALL_SCENE)
        with tempfile.TemporaryDirectory() as root:
            truth = generate_synthetic(spec, root)
            train = load_manifest(os.path.join(root, "transforms_train.json"))
            test = load_manifest(os.path.join(root, "transforms_test.json"))
            self.assertEqual((len(train), len(test)), (3, 1))
            self.assertEqual(train.resolution, (16, 16))
            stored = iio.imread(train.image_path(1))
            np.testing.assert_array_equal(stored, to_uint8(truth.render_frame(1)))
            np.testing.assert_allclose(train.camera(1).cam_to_world, truth.cam_to_world[1], atol=1e-9)

            loaded = load_ground_truth(os.path.join(root, "ground_truth.bson"))
            np.testing.assert_array_equal(loaded.positions, truth.positions)
            np.testing.assert_array_equal(loaded.labels, truth.labels)
            self.assertEqual(loaded.splits, truth.splits)

    def test_generator_is_deterministic(self):
        spec = SyntheticSceneSpec(generator="split-cluster", **SMALL_SCENE)
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            generate_synthetic(spec, a)
            generate_synthetic(spec, b)
            for rel in ("train/r_000.png", "train/r_002.png", "test/r_000.png", "ground_truth.bson"):
                with open(os.path.join(a, rel), "rb") as fa, open(os.path.join(b, rel), "rb") as fb:
                    self.assertEqual(fa.read(), fb.read(), msg=rel)

    def test_from_options_fills_seed(self):
        options = dict(SMALL_SCENE, resolution=[16, 16], seed=None)
        spec = SyntheticSceneSpec.from_options(options, seed=9)
        self.assertEqual(spec.seed, 9)
        self.assertEqual(spec.resolution, (16, 16))


if __name__ == "__main__":
    unittest.main()
