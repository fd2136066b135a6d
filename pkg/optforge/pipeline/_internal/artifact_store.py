# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Stage outputs under an experiment directory, with manifests.

Each stage writes its files into ``<root>/<stage>/`` and finishes by writing
``<root>/<stage>/manifest.json``: canonical JSON naming the stage, a digest of
everything the stage depended on, and the length and hashes of every file it
produced. A later run whose dependency digest matches a manifest that still
verifies against the files on disk loads the outputs instead of recomputing
them.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

from securesystemslib import exceptions as sslib_exceptions
from securesystemslib import formats as sslib_formats
from securesystemslib import hash as sslib_hash
from securesystemslib.storage import FilesystemBackend, StorageBackendInterface
from securesystemslib.util import persist_temp_file

from optforge import ARTIFACT_FORMAT_VERSION, settings
from optforge.api.artifact import Artifact
from optforge.api.exceptions import ManifestMismatchError, StorageError
from optforge.api.serialization.json import (
    JSONLinesDeserializer,
    JSONLinesSerializer,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def digest_bytes(
    data: bytes, algorithm: str = settings.DEFAULT_HASH_ALGORITHM
) -> str:
    digest_object = sslib_hash.digest(algorithm)
    digest_object.update(data)
    return digest_object.hexdigest()


def digest_canonical(obj: Any) -> str:
    """Digest of the canonical JSON encoding of ``obj`` (strings, ints,
    lists and dicts only)."""
    return digest_bytes(sslib_formats.encode_canonical(obj).encode("utf-8"))


@dataclass(frozen=True)
class FileInfo:
    """Length and hashes of one stored file."""

    length: int
    hashes: Dict[str, str]

    @classmethod
    def from_data(
        cls, data: bytes, hash_algorithms: Optional[List[str]] = None
    ) -> "FileInfo":
        if hash_algorithms is None:
            hash_algorithms = [settings.DEFAULT_HASH_ALGORITHM]
        return cls(
            len(data),
            {algo: digest_bytes(data, algo) for algo in hash_algorithms},
        )

    def verify(self, data: bytes) -> None:
        """Raises:
        ManifestMismatchError: Length or a hash differs, or an algorithm is
            unsupported.
        """
        if len(data) != self.length:
            raise ManifestMismatchError(
                f"Observed length {len(data)} does not match expected length "
                f"{self.length}"
            )
        for algo, expected in self.hashes.items():
            try:
                observed = digest_bytes(data, algo)
            except (
                sslib_exceptions.UnsupportedAlgorithmError,
                sslib_exceptions.FormatError,
            ) as e:
                raise ManifestMismatchError(
                    f"Unsupported algorithm '{algo}'"
                ) from e
            if observed != expected:
                raise ManifestMismatchError(
                    f"Observed hash {observed} does not match expected hash "
                    f"{expected}"
                )

    def to_dict(self) -> Dict[str, Any]:
        return {"length": self.length, "hashes": dict(self.hashes)}

    @classmethod
    def from_dict(cls, file_dict: Dict[str, Any]) -> "FileInfo":
        return cls(int(file_dict["length"]), dict(file_dict["hashes"]))


class ArtifactStore:
    """Reads and writes the files of one experiment directory.

    Args:
        root: The experiment output directory.
        storage_backend: ``securesystemslib`` storage backend. Default is
            ``FilesystemBackend``.
    """

    def __init__(
        self,
        root: str,
        storage_backend: Optional[StorageBackendInterface] = None,
    ):
        self.root = root
        self.storage = storage_backend or FilesystemBackend()
        self.storage.create_folder(root)
        # files written per stage since its last manifest
        self._pending: Dict[str, Dict[str, FileInfo]] = {}

    def path(self, stage: str, name: str) -> str:
        return os.path.join(self.root, stage, name)

    def write_bytes(self, stage: str, name: str, data: bytes) -> FileInfo:
        """Atomically writes ``data`` and records it for the stage manifest.

        Raises:
            StorageError: The file cannot be written.
        """
        self.storage.create_folder(os.path.join(self.root, stage))
        with tempfile.TemporaryFile() as temp_file:
            temp_file.write(data)
            persist_temp_file(temp_file, self.path(stage, name), self.storage)

        info = FileInfo.from_data(data)
        self._pending.setdefault(stage, {})[name] = info
        logger.debug("Wrote %s/%s (%d bytes)", stage, name, info.length)
        return info

    def read_bytes(self, stage: str, name: str) -> bytes:
        """Raises:
        StorageError: The file cannot be read.
        """
        with self.storage.get(self.path(stage, name)) as file_obj:
            return file_obj.read()

    def write_artifact(self, stage: str, name: str, artifact: Artifact) -> None:
        self.write_bytes(stage, name, artifact.to_bytes())

    def write_records(
        self, stage: str, name: str, records: Sequence[Any]
    ) -> None:
        self.write_bytes(stage, name, JSONLinesSerializer().serialize(records))

    def read_records(self, stage: str, name: str, from_dict: Any) -> List[Any]:
        return JSONLinesDeserializer().deserialize(
            self.read_bytes(stage, name), from_dict
        )

    def write_text(self, stage: str, name: str, text: str) -> None:
        self.write_bytes(stage, name, text.encode("utf-8"))

    def write_manifest(self, stage: str, dependency_digest: str) -> None:
        """Seals the files written for ``stage`` since the last manifest."""
        files = self._pending.pop(stage, {})
        manifest = {
            "_type": "stage_manifest",
            "version": ARTIFACT_FORMAT_VERSION,
            "stage": stage,
            "dependencies": dependency_digest,
            "files": {name: info.to_dict() for name, info in files.items()},
        }
        data = sslib_formats.encode_canonical(manifest).encode("utf-8")
        self.storage.create_folder(os.path.join(self.root, stage))
        with tempfile.TemporaryFile() as temp_file:
            temp_file.write(data)
            persist_temp_file(
                temp_file, self.path(stage, MANIFEST_NAME), self.storage
            )
        logger.info("Stage %s complete: %d files", stage, len(files))

    def manifest_digest(self, stage: str) -> str:
        """Digest of the stage's manifest bytes, for chaining downstream
        dependency digests."""
        return digest_bytes(self.read_bytes(stage, MANIFEST_NAME))

    def verify_stage(self, stage: str, dependency_digest: str) -> bool:
        """True if ``stage`` has a manifest for ``dependency_digest`` and
        every listed file still matches it."""
        try:
            manifest = json.loads(self.read_bytes(stage, MANIFEST_NAME))
            if (
                manifest.get("version") != ARTIFACT_FORMAT_VERSION
                or manifest.get("dependencies") != dependency_digest
            ):
                logger.debug("Stage %s is stale", stage)
                return False
            for name, file_dict in manifest["files"].items():
                FileInfo.from_dict(file_dict).verify(
                    self.read_bytes(stage, name)
                )
        except (
            StorageError,
            ValueError,
            KeyError,
            TypeError,
            ManifestMismatchError,
        ) as e:
            logger.debug("Stage %s does not verify: %s", stage, e)
            return False

        logger.info("Stage %s verified, loading stored outputs", stage)
        return True

