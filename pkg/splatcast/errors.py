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

"""Exceptions raised by splatcast."""
from typing import Optional


class SplatcastError(Exception):
    """Base class for all splatcast exceptions."""

    def as_record(self) -> dict:
        """The structured form written by the command-line tool."""
        return {"error": self.__class__.__name__, "message": str(self)}


class ConfigurationError(SplatcastError, ValueError):
    """Raised when something is incorrectly configured: an unknown option,
    an out-of-range value, or sizes that cannot work together.
    """


class ShapeMismatchError(ConfigurationError):
    """Raised when arrays handed to an operation have incompatible shapes."""


class ManifestError(SplatcastError):
    """Raised when a dataset manifest cannot be parsed or validated.

    :Parameters:
      - `message`: description of the problem
      - `frame_index` (optional): index of the offending frame
    """

    def __init__(self, message: str, frame_index: Optional[int] = None) -> None:
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        super().__init__(message)
        self.frame_index = frame_index

    def as_record(self) -> dict:
        record = super().as_record()
        record["frame_index"] = self.frame_index
        return record


class CheckpointError(SplatcastError):
    """Raised when a checkpoint is truncated, malformed, or does not fit the
    model it is loaded into.
    """


class CheckpointVersionError(CheckpointError):
    """Raised when a checkpoint was written by a newer format version."""

    def __init__(self, version: int, supported: int) -> None:
        super().__init__(
            f"checkpoint format version {version} is newer than the supported version {supported}"
        )
        self.version = version
        self.supported = supported


class TrainingDivergedError(SplatcastError):
    """Raised when a training loss becomes non-finite.

    A diagnostic checkpoint is written first when a path is configured; its
    location is available as :attr:`checkpoint_path`.
    """

    def __init__(self, stage: str, iteration: int, checkpoint_path: Optional[str] = None) -> None:
        message = f"{stage} diverged at iteration {iteration}"
        if checkpoint_path:
            message += f"; diagnostic checkpoint written to {checkpoint_path}"
        super().__init__(message)
        self.stage = stage
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path


class InternalConsistencyError(SplatcastError):
    """Raised when cached forward state does not match a backward request."""
