#!/usr/bin/env python

# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Unit tests for artifact documents, their JSON (de)serializers and the
stage artifact store."""

import json
import logging
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np

from optforge.api.exceptions import (
    ArtifactError,
    CorruptArtifactError,
    ManifestMismatchError,
    SerializationError,
    VersionMismatchError,
)
from optforge.api.serialization.json import (
    JSONDeserializer,
    JSONLinesDeserializer,
    JSONLinesSerializer,
    JSONSerializer,
)
from optforge.ddo import DdoParams, TrainConfig, initialize_params
from optforge.expert import Trajectory
from optforge.gridworld import Task
from optforge.pipeline._internal.artifact_store import (
    MANIFEST_NAME,
    ArtifactStore,
    FileInfo,
    digest_bytes,
    digest_canonical,
)
from tests import utils

logger = logging.getLogger(__name__)


def small_params() -> DdoParams:
    return initialize_params(
        3, TrainConfig(n_options=2, init_scale=1.0), utils.rng(), map_id="m"
    )


def corridor_trajectory(seed: int) -> Trajectory:
    return Trajectory(
        [(1, 1), (1, 2), (1, 3)], [1, 1], Task((1, 1), (1, 3), "test"), seed
    )


class TestJSONSerialization(unittest.TestCase):
    def test_compact_and_indented(self) -> None:
        params = small_params()
        indented = JSONSerializer().serialize(params)
        compact = JSONSerializer(compact=True).serialize(params)
        self.assertLess(len(compact), len(indented))
        self.assertNotIn(b"\n", compact)
        self.assertEqual(json.loads(compact), json.loads(indented))
        for data in (indented, compact):
            self.assertEqual(
                JSONDeserializer().deserialize(data, DdoParams), params
            )

    def test_floats_survive_bitwise(self) -> None:
        params = small_params()
        params.eta_logits[0, 0] = 0.1 + 0.2
        params.pi_logits[1, 2, 3] = -1e-300
        restored = DdoParams.from_bytes(
            JSONSerializer(validate=True).serialize(params)
        )
        np.testing.assert_array_equal(restored.eta_logits, params.eta_logits)
        np.testing.assert_array_equal(restored.pi_logits, params.pi_logits)

    def test_non_finite_values_do_not_serialize(self) -> None:
        params = small_params()
        params.psi_logits[0, 0] = np.inf
        with self.assertRaises(SerializationError):
            params.to_bytes()

    def test_bad_documents(self) -> None:
        data = json.loads(small_params().to_bytes())
        data["version"] = 2
        with self.assertRaises(VersionMismatchError):
            DdoParams.from_bytes(json.dumps(data).encode("utf-8"))

        data["version"] = 1
        data["_type"] = "smdp_q_table"
        with self.assertRaises(CorruptArtifactError):
            DdoParams.from_bytes(json.dumps(data).encode("utf-8"))

        for raw in (b"", b"[]", b"\xff\xfe", b'{"_type": "ddo_params"}'):
            with self.assertRaises(CorruptArtifactError):
                DdoParams.from_bytes(raw)

    def test_json_lines(self) -> None:
        records = [corridor_trajectory(seed) for seed in range(3)]
        data = JSONLinesSerializer().serialize(records)
        self.assertEqual(data.count(b"\n"), 3)
        restored = JSONLinesDeserializer().deserialize(
            data + b"\n\n", Trajectory.from_dict
        )
        self.assertEqual(restored, records)
        self.assertEqual(
            JSONLinesDeserializer().deserialize(b"", Trajectory.from_dict), []
        )

        broken = data.replace(b'"seed":1', b'"seed":', 1)
        with self.assertRaises(CorruptArtifactError) as cm:
            JSONLinesDeserializer().deserialize(broken, Trajectory.from_dict)
        self.assertIn("line 2", str(cm.exception))


class TestFiles(unittest.TestCase):
    def setUp(self) -> None:
        self.temp_dir = tempfile.mkdtemp(dir=os.getcwd())

    def tearDown(self) -> None:
        shutil.rmtree(self.temp_dir)

    def test_artifact_files(self) -> None:
        params = small_params()
        path = os.path.join(self.temp_dir, "params.json")
        params.to_file(path)
        self.assertEqual(DdoParams.from_file(path), params)
        with open(path, "rb") as f:
            self.assertEqual(f.read(), params.to_bytes())

    def test_file_info(self) -> None:
        data = b"optforge"
        info = FileInfo.from_data(data, ["sha256", "sha512"])
        self.assertEqual(info.length, 8)
        self.assertEqual(info.hashes["sha256"], digest_bytes(data))
        info.verify(data)
        self.assertEqual(FileInfo.from_dict(info.to_dict()), info)

        for tampered in (b"optforg", b"optforgE"):
            with self.assertRaises(ManifestMismatchError):
                info.verify(tampered)
        with self.assertRaises(ManifestMismatchError):
            FileInfo(8, {"nohash": "00"}).verify(data)
        self.assertTrue(issubclass(ManifestMismatchError, ArtifactError))

    def test_digests(self) -> None:
        self.assertEqual(
            digest_canonical({"b": "1", "a": ["x", 2]}),
            digest_canonical({"a": ["x", 2], "b": "1"}),
        )
        self.assertNotEqual(
            digest_canonical({"a": "1"}), digest_canonical({"a": "2"})
        )


class TestArtifactStore(unittest.TestCase):
    def setUp(self) -> None:
        self.temp_dir = tempfile.mkdtemp(dir=os.getcwd())
        self.store = ArtifactStore(os.path.join(self.temp_dir, "out"))

    def tearDown(self) -> None:
        shutil.rmtree(self.temp_dir)

    def write_stage(self) -> None:
        self.store.write_artifact("ddo", "params.json", small_params())
        self.store.write_records(
            "ddo", "data.jsonl", [corridor_trajectory(s) for s in range(2)]
        )
        self.store.write_text("ddo", "notes.txt", "three states\n")
        self.store.write_manifest("ddo", "deps")

    def test_manifest(self) -> None:
        self.write_stage()
        manifest = json.loads(self.store.read_bytes("ddo", MANIFEST_NAME))
        self.assertEqual(manifest["_type"], "stage_manifest")
        self.assertEqual(manifest["stage"], "ddo")
        self.assertEqual(manifest["dependencies"], "deps")
        self.assertEqual(
            set(manifest["files"]), {"params.json", "data.jsonl", "notes.txt"}
        )
        self.assertEqual(
            manifest["files"]["notes.txt"]["length"], len(b"three states\n")
        )
        self.assertEqual(
            self.store.manifest_digest("ddo"),
            digest_bytes(self.store.read_bytes("ddo", MANIFEST_NAME)),
        )
        self.assertEqual(
            self.store.read_records("ddo", "data.jsonl", Trajectory.from_dict),
            [corridor_trajectory(s) for s in range(2)],
        )

    def test_verify_stage(self) -> None:
        self.assertFalse(self.store.verify_stage("ddo", "deps"))
        self.write_stage()
        self.assertTrue(self.store.verify_stage("ddo", "deps"))
        self.assertFalse(self.store.verify_stage("ddo", "other deps"))

        notes = self.store.path("ddo", "notes.txt")
        with open(notes, "w", encoding="utf-8") as f:
            f.write("four states\n")
        self.assertFalse(self.store.verify_stage("ddo", "deps"))

        self.write_stage()
        os.remove(self.store.path("ddo", "data.jsonl"))
        self.assertFalse(self.store.verify_stage("ddo", "deps"))

        self.write_stage()
        manifest = self.store.path("ddo", MANIFEST_NAME)
        with open(manifest, "w", encoding="utf-8") as f:
            f.write("{not json")
        self.assertFalse(self.store.verify_stage("ddo", "deps"))

    def test_nested_stages(self) -> None:
        self.store.write_text("iter_1/ddo", "notes.txt", "x")
        self.store.write_manifest("iter_1/ddo", "deps")
        self.assertTrue(self.store.verify_stage("iter_1/ddo", "deps"))
        self.assertTrue(
            os.path.exists(
                os.path.join(self.temp_dir, "out", "iter_1", "ddo", "notes.txt")
            )
        )


# Run unit test.
if __name__ == "__main__":
    utils.configure_test_logging(sys.argv)
    unittest.main()
