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

"""Test configuration defaults and validation."""

import json
import os
import tempfile
import unittest

from splatcast.common import DEFAULTS, VALIDATORS, Config, validate
from splatcast.errors import ConfigurationError


class TestValidate(unittest.TestCase):
    def test_every_default_has_a_validator(self):
        for key, value in DEFAULTS.items():
            if isinstance(value, dict):
                for option, default in value.items():
                    name = f"{key}.{option}"
                    self.assertIn(name, VALIDATORS)
                    self.assertEqual(validate(name, default), default, msg=name)
            else:
                self.assertIn(key, VALIDATORS)

    def test_unknown_option(self):
        with self.assertRaisesRegex(ConfigurationError, "Unknown option stage1.speed"):
            validate("stage1.speed", 3)

    def test_integers(self):
        self.assertEqual(validate("stage1.iterations", "12"), 12)
        for bad in (-1, True, 1.5, "many"):
            with self.subTest(value=bad), self.assertRaises(ConfigurationError):
                validate("stage1.iterations", bad)
        with self.assertRaises(ConfigurationError):
            validate("stage2.k_init", 0)

    def test_floats(self):
        self.assertEqual(validate("stage1.lr_mu", 1), 1.0)
        for bad in (-0.1, float("nan"), float("inf"), "fast", False):
            with self.subTest(value=bad), self.assertRaises(ConfigurationError):
                validate("stage1.lr_mu", bad)

    def test_unit_interval(self):
        self.assertIsNone(validate("eval.split_time", None))
        self.assertEqual(validate("eval.split_time", 1), 1.0)
        with self.assertRaises(ConfigurationError):
            validate("eval.split_time", 1.5)

    def test_choices(self):
        self.assertEqual(validate("synthetic.generator", "rigid-orbit"), "rigid-orbit")
        with self.assertRaises(ConfigurationError):
            validate("synthetic.generator", "spiral")
        self.assertEqual(validate("eval.compare", "freeze,gcn"), ["freeze", "gcn"])
        with self.assertRaises(ConfigurationError):
            validate("eval.compare", ["oracle"])

    def test_rgb_and_resolution(self):
        self.assertEqual(validate("render.background", (1, 1, 1)), [1.0, 1.0, 1.0])
        with self.assertRaises(ConfigurationError):
            validate("render.background", [0.0, 2.0, 0.0])
        with self.assertRaises(ConfigurationError):
            validate("synthetic.resolution", [64])


class TestConfig(unittest.TestCase):
    def test_defaults(self):
        config = Config()
        self.assertEqual(config.stage1.iterations, 4000)
        self.assertEqual(config.stage2.k_init, 50)
        self.assertEqual(config.stage3["window"], 5)
        self.assertIsNone(config.threads)
        self.assertIsNone(config.worker_threads)

    def test_overrides_are_validated(self):
        config = Config({"stage1": {"iterations": "10", "warmup": 2}, "threads": 3})
        self.assertEqual(config.stage1.iterations, 10)
        self.assertEqual(config.worker_threads, 3)
        with self.assertRaises(ConfigurationError):
            Config({"stage1": {"lifecycle": "yes"}})

    def test_unknown_keys(self):
        with self.assertRaises(ConfigurationError):
            Config({"stage4": {}})
        with self.assertRaises(ConfigurationError):
            Config({"stage1": {"speed": 2}})
        with self.assertRaises(ConfigurationError):
            Config({"stage1": 5})

    def test_cross_option_checks(self):
        with self.assertRaises(ConfigurationError):
            Config({"stage1": {"iterations": 10, "warmup": 20}})
        with self.assertRaises(ConfigurationError):
            Config({"stage2": {"k_init": 4, "n_near": 5}})
        with self.assertRaises(ConfigurationError):
            Config({"stage2": {"k_init": 60, "n_max": 50}})
        with self.assertRaises(ConfigurationError):
            Config({"render": {"near": 2.0, "far": 1.0}})

    def test_deterministic_means_one_thread(self):
        self.assertEqual(Config({"deterministic": True, "threads": 8}).worker_threads, 1)

    def test_override_in_place(self):
        config = Config()
        config.override("stage3", iterations=7)
        self.assertEqual(config.stage3.iterations, 7)
        self.assertEqual(config.as_document()["stage3"]["iterations"], 7)
        with self.assertRaises(ConfigurationError):
            config.override("stage3", iterations=-1)
        with self.assertRaises(AttributeError):
            _ = config.stage3.speed

    def test_document_round_trip(self):
        config = Config({"seed": 4, "eval": {"compare": ["freeze"]}})
        again = Config(config.as_document())
        self.assertEqual(again.as_document(), config.as_document())

    def test_from_file(self):
        with tempfile.TemporaryDirectory() as root:
            path = os.path.join(root, "config.json")
            with open(path, "w") as stream:
                json.dump({"stage3": {"k_graph": 3}}, stream)
            self.assertEqual(Config.from_file(path).stage3.k_graph, 3)
            with open(path, "w") as stream:
                stream.write("[1, 2]")
            with self.assertRaises(ConfigurationError):
                Config.from_file(path)
            with self.assertRaises(ConfigurationError):
                Config.from_file(os.path.join(root, "absent.json"))


if __name__ == "__main__":
    unittest.main()
