# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Versioned artifact documents.

Every persisted result of an experiment stage (DDO parameters, SMDP Q-tables,
expert value tables, metric reports) is an ``Artifact``: it knows how to turn
itself into a plain dict and back, and inherits reading and writing through a
``securesystemslib`` storage backend from this base class::

    params = DdoParams.from_file("out/ddo_params.json")
    params.to_file("copy.json")

Each document carries two common fields, ``_type`` (the artifact kind) and
``version`` (the optforge document format). A document with a different
``version`` raises ``VersionMismatchError``; anything else that is wrong with
the bytes raises ``CorruptArtifactError``.
"""

import abc
import tempfile
from typing import Any, ClassVar, Dict, Optional, Type, TypeVar

from securesystemslib.storage import FilesystemBackend, StorageBackendInterface
from securesystemslib.util import persist_temp_file

from optforge import ARTIFACT_FORMAT_VERSION
from optforge.api.exceptions import VersionMismatchError
from optforge.api.serialization import ArtifactDeserializer, ArtifactSerializer

T = TypeVar("T", bound="Artifact")


class Artifact(metaclass=abc.ABCMeta):
    """A base class for versioned optforge documents."""

    # type is required for static reference without changing the API
    type: ClassVar[str] = "artifact"

    @abc.abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """Serialization helper that returns dict representation of self"""
        raise NotImplementedError

    @classmethod
    @abc.abstractmethod
    def from_dict(cls: Type[T], artifact_dict: Dict[str, Any]) -> T:
        """Deserialization helper, creates object from dict representation"""
        raise NotImplementedError

    def _common_fields_to_dict(self) -> Dict[str, Any]:
        return {"_type": self.type, "version": ARTIFACT_FORMAT_VERSION}

    @classmethod
    def _check_common_fields(cls, artifact_dict: Dict[str, Any]) -> None:
        """Pops and checks the common fields of ``artifact_dict``.

        Raises:
            VersionMismatchError: Unsupported document version.
            ValueError, KeyError: Missing fields or wrong artifact type.
        """
        _type = artifact_dict.pop("_type")
        version = artifact_dict.pop("version")
        if version != ARTIFACT_FORMAT_VERSION:
            raise VersionMismatchError(
                f"{cls.type} version {version} is not supported, expected "
                f"{ARTIFACT_FORMAT_VERSION}"
            )
        if _type != cls.type:
            raise ValueError(f"Expected type {cls.type}, got {_type}")

    @classmethod
    def from_bytes(
        cls: Type[T],
        data: bytes,
        deserializer: Optional[ArtifactDeserializer] = None,
    ) -> T:
        """Loads an artifact from raw data.

        Args:
            data: Artifact content.
            deserializer: ``ArtifactDeserializer`` implementation to use.
                Default is ``JSONDeserializer``.

        Raises:
            optforge.api.exceptions.DeserializationError:
                The data cannot be deserialized.
        """
        if deserializer is None:
            # Use local scope import to avoid circular import errors
            # pylint: disable=import-outside-toplevel
            from optforge.api.serialization.json import JSONDeserializer

            deserializer = JSONDeserializer()

        return deserializer.deserialize(data, cls)

    @classmethod
    def from_file(
        cls: Type[T],
        filename: str,
        deserializer: Optional[ArtifactDeserializer] = None,
        storage_backend: Optional[StorageBackendInterface] = None,
    ) -> T:
        """Loads an artifact from file storage.

        Raises:
            optforge.api.exceptions.StorageError: The file cannot be read.
            optforge.api.exceptions.DeserializationError:
                The file cannot be deserialized.
        """
        if storage_backend is None:
            storage_backend = FilesystemBackend()

        with storage_backend.get(filename) as file_obj:
            return cls.from_bytes(file_obj.read(), deserializer)

    def to_bytes(
        self, serializer: Optional[ArtifactSerializer] = None
    ) -> bytes:
        """Return the serialized document as bytes.

        Args:
            serializer: ``ArtifactSerializer`` instance. Default is an indented
                ``JSONSerializer`` with sorted keys.

        Raises:
            optforge.api.exceptions.SerializationError:
                The artifact cannot be serialized.
        """
        if serializer is None:
            # pylint: disable=import-outside-toplevel
            from optforge.api.serialization.json import JSONSerializer

            serializer = JSONSerializer()

        return serializer.serialize(self)

    def to_file(
        self,
        filename: str,
        serializer: Optional[ArtifactSerializer] = None,
        storage_backend: Optional[StorageBackendInterface] = None,
    ) -> None:
        """Writes the artifact to file storage. The write is atomic: readers
        see either the old or the new file.

        Raises:
            optforge.api.exceptions.SerializationError:
                The artifact cannot be serialized.
            optforge.api.exceptions.StorageError: The file cannot be written.
        """
        bytes_data = self.to_bytes(serializer)

        with tempfile.TemporaryFile() as temp_file:
            temp_file.write(bytes_data)
            persist_temp_file(temp_file, filename, storage_backend)
