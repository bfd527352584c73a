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

"""splatcast, dynamic Gaussian scenes distilled into key points whose
trajectories are forecast by a graph network.
"""
from ._version import get_version_string, version, version_tuple  # noqa: F401
from .common import Config  # noqa: F401
from .deform_stage import DeformField, HyperCanonicalScene, train_stage1  # noqa: F401
from .errors import (  # noqa: F401
    CheckpointError,
    CheckpointVersionError,
    ConfigurationError,
    InternalConsistencyError,
    ManifestError,
    ShapeMismatchError,
    SplatcastError,
    TrainingDivergedError,
)
from .keypoint_distill import KeyPointSet, Stage2State, train_stage2  # noqa: F401
from .motion_forecast import ForecastNet, Forecaster, rollout, train_stage3  # noqa: F401
from .scene_io import load_checkpoint, load_manifest, save_checkpoint  # noqa: F401
from .splat_core import Camera, GaussianSet, rasterize  # noqa: F401
