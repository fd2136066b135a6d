# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""
Define optforge exceptions.
The names chosen for exception classes should end in 'Error' except where
there is a good reason not to, and provide that reason in those cases.
"""

from typing import Optional

# pylint: disable=unused-import
from securesystemslib.exceptions import StorageError

#### Map errors ####


class MapError(ValueError):
    """An ASCII map could not be turned into a gridworld."""


class RaggedRowsError(MapError):
    """Map rows have unequal lengths."""


class UnknownCharError(MapError):
    """Map contains a character other than '#', '.' and newlines."""


class TooFewFreeCellsError(MapError):
    """Map has fewer than two free cells."""


#### Planning errors ####


class PlanningError(Exception):
    """An expert policy could not be computed."""


class NoConvergenceError(PlanningError):
    """Value iteration exhausted its sweep budget above tolerance.

    Args:
        message: The error message
        residual: Bellman residual after the last sweep
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class UnreachableRegionError(PlanningError):
    """Some free cells cannot reach an option's subgoal."""


#### Inference errors ####


class InferenceError(Exception):
    """An error while inferring options from trajectories."""


class DegenerateLikelihoodError(InferenceError):
    """A forward normalizer underflowed to zero: the trajectory is impossible
    under every option."""


class TooLargeError(InferenceError):
    """Latent enumeration would exceed the brute-force guard."""


class BadAlphaError(InferenceError, ValueError):
    """Termination scale outside (0, 1]."""


#### Metric errors ####


class MetricError(Exception):
    """An evaluation metric cannot be computed from its inputs."""


class UndefinedStateError(MetricError):
    """An agent distribution is missing on a state that carries weight."""


class MismatchedDomainsError(MetricError):
    """Two value functions are not defined on the same states."""


class EmptyInputError(MetricError):
    """A statistic was requested over an empty collection."""


class DisconnectedError(MetricError):
    """Some ordered pair of states is not mutually reachable."""


#### Artifact errors ####


class ArtifactError(Exception):
    """An error with a persisted artifact."""


class SerializationError(ArtifactError):
    """Error during serialization."""


class DeserializationError(ArtifactError):
    """Error during deserialization."""


class VersionMismatchError(DeserializationError):
    """An artifact was written with an unsupported format version."""


class CorruptArtifactError(DeserializationError):
    """An artifact is truncated or does not follow its document schema."""


class ManifestMismatchError(ArtifactError):
    """A stored file does not match the length or hashes its stage manifest
    recorded."""


#### Orchestration errors ####


class ConfigError(Exception):
    """An experiment configuration is invalid."""


class StageError(Exception):
    """A pipeline stage failed. Artifacts of earlier stages are kept.

    Args:
        stage: Name of the failing stage
        cause: The underlying exception, if any
    """

    def __init__(self, stage: str, cause: Optional[BaseException] = None):
        message = f"stage '{stage}' failed"
        if cause is not None:
            message += f": {type(cause).__name__}: {cause}"
        super().__init__(message)
        self.stage = stage
        self.cause = cause
