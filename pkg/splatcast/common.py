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

"""Configuration defaults and validation.

Every option lives in a section; the validator table maps each
``section.option`` to a function ``validator(option, value) -> value`` that
either returns the normalized value or raises
:class:`~splatcast.errors.ConfigurationError`.
"""
import copy
import json
import math
from collections.abc import Mapping
from typing import Any, Callable, Dict, Iterator, Optional

from splatcast.errors import ConfigurationError

SYNTHETIC_GENERATORS = ("oscillator", "rigid-orbit", "split-cluster", "vanish-cluster")
COMPARE_METHODS = ("freeze", "stage1", "mlp", "gcn")
FPS_START_RULES = ("first", "centroid")


def raise_config_error(key: str, dummy: Any) -> Any:
    """Raise ConfigurationError with the given key name."""
    raise ConfigurationError(f"Unknown option {key}")


def validate_boolean(option: str, value: Any) -> bool:
    if isinstance(value, bool):
        return value
    raise TypeError(f"{option} must be True or False, was: {option}={value!r}")


def validate_integer(option: str, value: Any) -> int:
    if isinstance(value, bool):
        raise TypeError(f"{option} must be an integer, was: {option}={value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            raise ValueError(f"The value of {option} must be an integer") from None
    raise TypeError(f"Wrong type for {option}, value must be an integer")


def validate_positive_integer(option: str, value: Any) -> int:
    val = validate_integer(option, value)
    if val <= 0:
        raise ValueError(f"The value of {option} must be positive")
    return val


def validate_non_negative_integer(option: str, value: Any) -> int:
    val = validate_integer(option, value)
    if val < 0:
        raise ValueError(f"The value of {option} must be non-negative")
    return val


def validate_non_negative_integer_or_none(option: str, value: Any) -> Optional[int]:
    if value is None:
        return value
    return validate_non_negative_integer(option, value)


def validate_positive_integer_or_none(option: str, value: Any) -> Optional[int]:
    if value is None:
        return value
    return validate_positive_integer(option, value)


def validate_float(option: str, value: Any) -> float:
    if isinstance(value, bool):
        raise TypeError(f"{option} must be a number, was: {option}={value!r}")
    try:
        val = float(value)
    except (ValueError, TypeError):
        raise TypeError(f"{option} must be a number, was: {option}={value!r}") from None
    if not math.isfinite(val):
        raise ValueError(f"{option} must be finite")
    return val


def validate_positive_float(option: str, value: Any) -> float:
    val = validate_float(option, value)
    if val <= 0:
        raise ValueError(f"{option} must be greater than 0")
    return val


def validate_non_negative_float(option: str, value: Any) -> float:
    val = validate_float(option, value)
    if val < 0:
        raise ValueError(f"{option} must be greater than or equal to 0")
    return val


def validate_non_negative_float_or_none(option: str, value: Any) -> Optional[float]:
    if value is None:
        return value
    return validate_non_negative_float(option, value)


def validate_positive_float_or_none(option: str, value: Any) -> Optional[float]:
    if value is None:
        return value
    return validate_positive_float(option, value)


def validate_unit_interval_or_none(option: str, value: Any) -> Optional[float]:
    if value is None:
        return value
    val = validate_float(option, value)
    if not 0.0 <= val <= 1.0:
        raise ValueError(f"{option} must be in [0, 1]")
    return val


def validate_string(option: str, value: Any) -> str:
    if isinstance(value, str):
        return value
    raise TypeError(f"Wrong type for {option}, value must be an instance of str")


def validate_string_or_none(option: str, value: Any) -> Optional[str]:
    if value is None:
        return value
    return validate_string(option, value)


def validate_resolution(option: str, value: Any) -> list:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise TypeError(f"{option} must be a [width, height] pair")
    return [validate_positive_integer(option, v) for v in value]


def validate_rgb(option: str, value: Any) -> list:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise TypeError(f"{option} must be an [r, g, b] triple")
    rgb = [validate_float(option, v) for v in value]
    if any(not 0.0 <= v <= 1.0 for v in rgb):
        raise ValueError(f"{option} components must be in [0, 1]")
    return rgb


def _validate_choice(*choices: str) -> Callable[[str, Any], str]:
    def validator(option: str, value: Any) -> str:
        value = validate_string(option, value)
        if value not in choices:
            raise ValueError(f"{option} must be one of {', '.join(choices)}, not {value!r}")
        return value

    return validator


def validate_compare_list(option: str, value: Any) -> list:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v]
    if not isinstance(value, (list, tuple)):
        raise TypeError(f"{option} must be a list of baseline names")
    chooser = _validate_choice(*COMPARE_METHODS)
    return [chooser(option, v) for v in value]


# Default values, grouped by section. None means "derive from data".
DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "threads": None,
    "deterministic": False,
    "paths": {
        "data_dir": "data",
        "train_manifest": "transforms_train.json",
        "test_manifest": "transforms_test.json",
        "checkpoint_dir": "checkpoints",
        "output_dir": "outputs",
        "records": None,
    },
    "synthetic": {
        "generator": "oscillator",
        "n_gaussians": 600,
        "amplitude": 0.3,
        "period": 1.0,
        "frame_count": 40,
        "test_count": 8,
        "resolution": [64, 64],
        "orbit_radius": 4.0,
        "orbit_elevation_deg": 20.0,
        "fov_deg": 40.0,
        "vanish_time": 0.6,
        "seed": None,
    },
    "stage1": {
        "iterations": 4000,
        "warmup": 1000,
        "n_gaussians": 2000,
        "motion_dim": 8,
        "pos_freqs": 10,
        "time_freqs": 6,
        "deform_depth": 8,
        "deform_width": 128,
        "opacity_depth": 4,
        "opacity_width": 64,
        "noise_scale": None,
        "noise_horizon": None,
        "annealing_noise": True,
        "lifecycle": True,
        "lr_mu": 1.6e-4,
        "lr_mu_final_factor": 0.01,
        "lr_rot": 1e-3,
        "lr_scale": 5e-3,
        "lr_color": 2.5e-3,
        "lr_opacity": 5e-2,
        "lr_network": 1e-3,
        "lr_motion": 2.5e-3,
        "ssim_weight": 0.2,
        "prune_interval": 500,
        "prune_threshold": 0.005,
        "prune_samples": 8,
        "log_interval": 100,
        "checkpoint_interval": 0,
    },
    "stage2": {
        "k_init": 50,
        "n_max": 100,
        "n_near": 4,
        "grad_threshold": 2e-4,
        "phase1_iterations": 2000,
        "phase2_iterations": 2000,
        "increase_interval": 500,
        "lambda_m": 1.0,
        "hyper_init": True,
        "adaptive_increase": True,
        "hyper_knn": True,
        "fps_start": "first",
        "hash_levels": 8,
        "hash_base_resolution": 16,
        "hash_growth": 1.5,
        "hash_features": 2,
        "hash_log2_table": 14,
        "weight_width": 64,
        "lr_hash": 1e-2,
        "lr_weight_mlp": 1e-3,
        "lr_network": 1e-4,
        "lr_keypoint_mu": 1.6e-4,
        "lr_keypoint_m": 2.5e-3,
        "log_interval": 100,
    },
    "stage3": {
        "window": 5,
        "graph_layers": 3,
        "features": 64,
        "k_graph": 8,
        "steps": 60,
        "iterations": 3000,
        "lr": 1e-3,
        "batch_size": None,
        "shuffle": True,
        "joint_iterations": 500,
        "joint_lr_scale": 0.1,
        "log_interval": 500,
    },
    "render": {
        "background": [0.0, 0.0, 0.0],
        "tile_size": 16,
        "near": 0.01,
        "far": 100.0,
    },
    "eval": {
        "split_time": None,
        "compare": [],
        "predict_start": None,
        "predict_end": 1.0,
        "predict_frames": 10,
    },
}

VALIDATORS: Dict[str, Callable[[str, Any], Any]] = {
    "seed": validate_non_negative_integer,
    "threads": validate_positive_integer_or_none,
    "deterministic": validate_boolean,
    "paths.data_dir": validate_string,
    "paths.train_manifest": validate_string,
    "paths.test_manifest": validate_string,
    "paths.checkpoint_dir": validate_string,
    "paths.output_dir": validate_string,
    "paths.records": validate_string_or_none,
    "synthetic.generator": _validate_choice(*SYNTHETIC_GENERATORS),
    "synthetic.n_gaussians": validate_positive_integer,
    "synthetic.amplitude": validate_non_negative_float,
    "synthetic.period": validate_positive_float,
    "synthetic.frame_count": validate_positive_integer,
    "synthetic.test_count": validate_non_negative_integer,
    "synthetic.resolution": validate_resolution,
    "synthetic.orbit_radius": validate_positive_float,
    "synthetic.orbit_elevation_deg": validate_float,
    "synthetic.fov_deg": validate_positive_float,
    "synthetic.vanish_time": validate_unit_interval_or_none,
    "synthetic.seed": validate_non_negative_integer_or_none,
    "stage1.iterations": validate_non_negative_integer,
    "stage1.warmup": validate_non_negative_integer,
    "stage1.n_gaussians": validate_positive_integer,
    "stage1.motion_dim": validate_positive_integer,
    "stage1.pos_freqs": validate_positive_integer,
    "stage1.time_freqs": validate_positive_integer,
    "stage1.deform_depth": validate_positive_integer,
    "stage1.deform_width": validate_positive_integer,
    "stage1.opacity_depth": validate_positive_integer,
    "stage1.opacity_width": validate_positive_integer,
    "stage1.noise_scale": validate_non_negative_float_or_none,
    "stage1.noise_horizon": validate_positive_integer_or_none,
    "stage1.annealing_noise": validate_boolean,
    "stage1.lifecycle": validate_boolean,
    "stage1.lr_mu": validate_non_negative_float,
    "stage1.lr_mu_final_factor": validate_positive_float,
    "stage1.lr_rot": validate_non_negative_float,
    "stage1.lr_scale": validate_non_negative_float,
    "stage1.lr_color": validate_non_negative_float,
    "stage1.lr_opacity": validate_non_negative_float,
    "stage1.lr_network": validate_non_negative_float,
    "stage1.lr_motion": validate_non_negative_float,
    "stage1.ssim_weight": validate_non_negative_float,
    "stage1.prune_interval": validate_non_negative_integer,
    "stage1.prune_threshold": validate_non_negative_float,
    "stage1.prune_samples": validate_positive_integer,
    "stage1.log_interval": validate_positive_integer,
    "stage1.checkpoint_interval": validate_non_negative_integer,
    "stage2.k_init": validate_positive_integer,
    "stage2.n_max": validate_positive_integer,
    "stage2.n_near": validate_positive_integer,
    "stage2.grad_threshold": validate_non_negative_float,
    "stage2.phase1_iterations": validate_non_negative_integer,
    "stage2.phase2_iterations": validate_non_negative_integer,
    "stage2.increase_interval": validate_positive_integer,
    "stage2.lambda_m": validate_non_negative_float,
    "stage2.hyper_init": validate_boolean,
    "stage2.adaptive_increase": validate_boolean,
    "stage2.hyper_knn": validate_boolean,
    "stage2.fps_start": _validate_choice(*FPS_START_RULES),
    "stage2.hash_levels": validate_positive_integer,
    "stage2.hash_base_resolution": validate_positive_integer,
    "stage2.hash_growth": validate_positive_float,
    "stage2.hash_features": validate_positive_integer,
    "stage2.hash_log2_table": validate_positive_integer,
    "stage2.weight_width": validate_positive_integer,
    "stage2.lr_hash": validate_non_negative_float,
    "stage2.lr_weight_mlp": validate_non_negative_float,
    "stage2.lr_network": validate_non_negative_float,
    "stage2.lr_keypoint_mu": validate_non_negative_float,
    "stage2.lr_keypoint_m": validate_non_negative_float,
    "stage2.log_interval": validate_positive_integer,
    "stage3.window": validate_positive_integer,
    "stage3.graph_layers": validate_positive_integer,
    "stage3.features": validate_positive_integer,
    "stage3.k_graph": validate_positive_integer,
    "stage3.steps": validate_positive_integer,
    "stage3.iterations": validate_non_negative_integer,
    "stage3.lr": validate_non_negative_float,
    "stage3.batch_size": validate_positive_integer_or_none,
    "stage3.shuffle": validate_boolean,
    "stage3.joint_iterations": validate_non_negative_integer,
    "stage3.joint_lr_scale": validate_non_negative_float,
    "stage3.log_interval": validate_positive_integer,
    "render.background": validate_rgb,
    "render.tile_size": validate_positive_integer,
    "render.near": validate_positive_float,
    "render.far": validate_positive_float,
    "eval.split_time": validate_unit_interval_or_none,
    "eval.compare": validate_compare_list,
    "eval.predict_start": validate_unit_interval_or_none,
    "eval.predict_end": validate_unit_interval_or_none,
    "eval.predict_frames": validate_non_negative_integer,
}


def validate(option: str, value: Any) -> Any:
    """Generic validation function."""
    validator = VALIDATORS.get(option, raise_config_error)
    try:
        return validator(option, value)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from None


class Options(Mapping):
    """Read-only view of one validated configuration section.

    Options are reachable both as ``section["name"]`` and ``section.name``.
    """

    def __init__(self, name: str, values: Dict[str, Any]) -> None:
        self._name = name
        self._values = dict(values)

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __getattr__(self, key: str) -> Any:
        if key.startswith("_"):
            raise AttributeError(key)
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(f"{self._name} has no option {key!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        return f"Options({self._name!r}, {self._values!r})"

    def replace(self, **kwargs: Any) -> "Options":
        """Return a copy with some options changed (validated)."""
        values = dict(self._values)
        for key, value in kwargs.items():
            values[key] = validate(f"{self._name}.{key}", value)
        return Options(self._name, values)


class Config:
    """A complete, validated splatcast configuration."""

    def __init__(self, document: Optional[Dict[str, Any]] = None) -> None:
        merged = copy.deepcopy(DEFAULTS)
        for key, value in (document or {}).items():
            if isinstance(merged.get(key), dict):
                if not isinstance(value, dict):
                    raise ConfigurationError(f"Section {key} must be an object")
                for option, option_value in value.items():
                    merged[key][option] = validate(f"{key}.{option}", option_value)
            else:
                merged[key] = validate(key, value)
        self._document = merged
        self.seed: int = merged["seed"]
        self.threads: Optional[int] = merged["threads"]
        self.deterministic: bool = merged["deterministic"]
        for section in ("paths", "synthetic", "stage1", "stage2", "stage3", "render", "eval"):
            setattr(self, section, Options(section, merged[section]))
        if self.stage1.warmup > self.stage1.iterations:
            raise ConfigurationError("stage1.warmup must not exceed stage1.iterations")
        if self.stage2.n_near > self.stage2.k_init:
            raise ConfigurationError("stage2.n_near must not exceed stage2.k_init")
        if self.stage2.k_init > self.stage2.n_max:
            raise ConfigurationError("stage2.k_init must not exceed stage2.n_max")
        if self.render.near >= self.render.far:
            raise ConfigurationError("render.near must be less than render.far")

    @classmethod
    def from_file(cls, path: str) -> "Config":
        try:
            with open(path, encoding="utf-8") as stream:
                document = json.load(stream)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(document, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        return cls(document)

    @property
    def worker_threads(self) -> Optional[int]:
        """Thread count for parallel work: 1 in deterministic mode, None for
        the whole pool.
        """
        if self.deterministic:
            return 1
        return self.threads

    def override(self, section: str, **kwargs: Any) -> None:
        """Change options of one section in place, validating each value."""
        current = getattr(self, section)
        updated = current.replace(**kwargs)
        setattr(self, section, updated)
        self._document[section] = dict(updated)

    def as_document(self) -> Dict[str, Any]:
        document = copy.deepcopy(self._document)
        for section in ("paths", "synthetic", "stage1", "stage2", "stage3", "render", "eval"):
            document[section] = dict(getattr(self, section))
        return document
