# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""``optforge.api.serialization`` provides abstract base classes and concrete
implementations to serialize and deserialize optforge artifacts.

Any custom de/serialization implementations should inherit from the abstract
base classes defined in this module. The implementations can use the
``to_dict()``/``from_dict()`` implementations available on the artifact and
record classes.

- Artifact de/serializers convert single versioned documents (DDO parameters,
  SMDP Q-tables, value tables, metric reports) to and from a wireline format.
- Dataset de/serializers convert sequences of records (trajectories,
  segmented rollouts), one record per line.
"""

import abc
from typing import (
    TYPE_CHECKING,
    Any,
    Callable,
    Dict,
    List,
    Sequence,
    Type,
    TypeVar,
)

# pylint: disable=unused-import
from optforge.api.exceptions import (
    CorruptArtifactError,
    DeserializationError,
    SerializationError,
    VersionMismatchError,
)

if TYPE_CHECKING:
    # pylint: disable=cyclic-import
    from optforge.api.artifact import Artifact

A = TypeVar("A", bound="Artifact")
R = TypeVar("R")


class ArtifactDeserializer(metaclass=abc.ABCMeta):
    """Abstract base class for deserialization of Artifact objects."""

    @abc.abstractmethod
    def deserialize(self, raw_data: bytes, artifact_type: Type[A]) -> A:
        """Deserialize bytes to an ``artifact_type`` object."""
        raise NotImplementedError


class ArtifactSerializer(metaclass=abc.ABCMeta):
    """Abstract base class for serialization of Artifact objects."""

    @abc.abstractmethod
    def serialize(self, artifact_obj: "Artifact") -> bytes:
        """Serialize Artifact object to bytes."""
        raise NotImplementedError


class DatasetDeserializer(metaclass=abc.ABCMeta):
    """Abstract base class for deserialization of record sequences."""

    @abc.abstractmethod
    def deserialize(
        self, raw_data: bytes, from_dict: Callable[[Dict[str, Any]], R]
    ) -> List[R]:
        """Deserialize bytes to a list of records built by ``from_dict``."""
        raise NotImplementedError


class DatasetSerializer(metaclass=abc.ABCMeta):
    """Abstract base class for serialization of record sequences."""

    @abc.abstractmethod
    def serialize(self, records: Sequence[Any]) -> bytes:
        """Serialize records (objects with ``to_dict()``) to bytes."""
        raise NotImplementedError
