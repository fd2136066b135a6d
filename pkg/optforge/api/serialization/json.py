# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""``optforge.api.serialization.json`` provides concrete implementations to
serialize and deserialize artifacts to and from JSON documents, and record
datasets to and from JSON Lines.

Floats are written with Python's shortest round-trip representation, so a
deserialized document reproduces every float bitwise.
"""

import json
from typing import Any, Callable, Dict, List, Optional, Sequence, Type

# pylint: disable=cyclic-import
from optforge.api.artifact import Artifact
from optforge.api.serialization import (
    A,
    ArtifactDeserializer,
    ArtifactSerializer,
    CorruptArtifactError,
    DatasetDeserializer,
    DatasetSerializer,
    R,
    SerializationError,
    VersionMismatchError,
)


class JSONDeserializer(ArtifactDeserializer):
    """Provides JSON to Artifact deserialize method."""

    def deserialize(self, raw_data: bytes, artifact_type: Type[A]) -> A:
        """Deserialize utf-8 encoded JSON bytes into an artifact object.

        Raises:
            VersionMismatchError: Document version is not supported.
            CorruptArtifactError: Bytes are not a valid document.
        """
        try:
            json_dict = json.loads(raw_data.decode("utf-8"))
            artifact_obj = artifact_type.from_dict(json_dict)

        except VersionMismatchError:
            raise
        except Exception as e:
            raise CorruptArtifactError(
                f"Failed to deserialize {artifact_type.type} JSON"
            ) from e

        return artifact_obj


class JSONSerializer(ArtifactSerializer):
    """Provides Artifact to JSON serialize method.

    Args:
        compact: A boolean indicating if the JSON bytes generated in
            'serialize' should be compact by excluding whitespace.
        validate: Check that the artifact can be deserialized again
            without change of contents.
    """

    def __init__(self, compact: bool = False, validate: Optional[bool] = False):
        self.compact = compact
        self.validate = validate

    def serialize(self, artifact_obj: Artifact) -> bytes:
        """Serialize Artifact object into utf-8 encoded JSON bytes."""

        try:
            indent = None if self.compact else 1
            separators = (",", ":") if self.compact else (",", ": ")
            json_bytes = json.dumps(
                artifact_obj.to_dict(),
                indent=indent,
                separators=separators,
                sort_keys=True,
                allow_nan=False,
            ).encode("utf-8")

            if self.validate:
                try:
                    new_obj = JSONDeserializer().deserialize(
                        json_bytes, type(artifact_obj)
                    )
                    if artifact_obj != new_obj:
                        raise ValueError(
                            "Artifact changes if you serialize and deserialize."
                        )
                except Exception as e:
                    raise ValueError("Artifact cannot be validated!") from e

        except Exception as e:
            raise SerializationError("Failed to serialize JSON") from e

        return json_bytes


class JSONLinesDeserializer(DatasetDeserializer):
    """Provides JSON Lines to record list deserialize method."""

    def deserialize(
        self, raw_data: bytes, from_dict: Callable[[Dict[str, Any]], R]
    ) -> List[R]:
        """Deserialize utf-8 encoded JSON Lines, one record per line. Blank
        lines are skipped.

        Raises:
            CorruptArtifactError: A line is not a valid record.
        """
        records = []
        for lineno, line in enumerate(raw_data.decode("utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                records.append(from_dict(json.loads(line)))
            except Exception as e:
                raise CorruptArtifactError(
                    f"Failed to deserialize record on line {lineno}"
                ) from e

        return records


class JSONLinesSerializer(DatasetSerializer):
    """Provides record list to JSON Lines serialize method."""

    def serialize(self, records: Sequence[Any]) -> bytes:
        try:
            lines = [
                json.dumps(
                    record.to_dict(),
                    separators=(",", ":"),
                    sort_keys=True,
                    allow_nan=False,
                )
                for record in records
            ]
        except Exception as e:
            raise SerializationError("Failed to serialize JSON Lines") from e

        return "".join(line + "\n" for line in lines).encode("utf-8")
