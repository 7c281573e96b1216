import hashlib
import json

import numpy as np
import pytest

from cityfold.stores import (
    PipelineManifest,
    StoreError,
    file_digest,
    read_cloud_store,
    read_embedding_store,
    write_cloud_store,
    write_embedding_store,
)


class TestCloudStore:
    def test_round_trip(self, tmp_path):
        clouds = np.random.default_rng(0).normal(size=(5, 64, 3))
        ids = [f"b{i}" for i in range(5)]
        path = tmp_path / "clouds.bpcl"
        write_cloud_store(path, clouds, ids)
        got, got_ids = read_cloud_store(path)
        assert got_ids == ids
        assert np.array_equal(got, clouds.astype(np.float32).astype(np.float64))

    def test_header_layout(self, tmp_path):
        path = tmp_path / "c.bpcl"
        write_cloud_store(path, np.zeros((2, 7, 3)), ["a", "b"])
        raw = path.read_bytes()
        assert raw[:4] == b"BPCL"
        assert np.frombuffer(raw[4:16], dtype="<u4").tolist() == [1, 2, 7]
        assert len(raw) == 16 + 2 * 7 * 3 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.bpcl"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(StoreError, match="magic"):
            read_cloud_store(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "c.bpcl"
        write_cloud_store(path, np.zeros((2, 7, 3)), ["a", "b"])
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(StoreError, match="truncated"):
            read_cloud_store(path)

    def test_id_mismatch(self, tmp_path):
        path = tmp_path / "c.bpcl"
        with pytest.raises(StoreError):
            write_cloud_store(path, np.zeros((2, 7, 3)), ["only-one"])

    def test_sidecar_checked(self, tmp_path):
        path = tmp_path / "c.bpcl"
        write_cloud_store(path, np.zeros((2, 7, 3)), ["a", "b"])
        (tmp_path / "c.bpcl.ids.json").write_text('["a"]')
        with pytest.raises(StoreError, match="sidecar"):
            read_cloud_store(path)


class TestEmbeddingStore:
    def test_round_trip(self, tmp_path):
        rows = np.random.default_rng(1).normal(size=(9, 16))
        ids = [f"b{i}" for i in range(9)]
        path = tmp_path / "e.bemb"
        write_embedding_store(path, rows, ids)
        got, got_ids = read_embedding_store(path)
        assert got_ids == ids
        assert np.array_equal(got, rows.astype(np.float32).astype(np.float64))
        assert path.read_bytes()[:4] == b"BEMB"

    def test_shape_validated(self, tmp_path):
        with pytest.raises(StoreError):
            write_embedding_store(tmp_path / "e.bemb", np.zeros((2, 3, 4)), ["a", "b"])


class TestDigest:
    def test_sha256(self, tmp_path):
        path = tmp_path / "f.bin"
        path.write_bytes(b"hello world")
        assert file_digest(path) == hashlib.sha256(b"hello world").hexdigest()


class TestManifest:
    def test_appends_across_instances(self, tmp_path):
        out = tmp_path / "out.bin"
        out.write_bytes(b"payload")
        path = tmp_path / "manifest.json"
        m1 = PipelineManifest(path, "0.1.0")
        m1.record_stage("first", dict(a=1), [], [out], 7, 0.5, dict(n=1))
        m2 = PipelineManifest(path, "0.1.0")
        m2.record_stage("second", dict(b=2), [out], [out], None, 0.1, dict(n=2))

        data = json.loads(path.read_text())
        assert [s["stage"] for s in data["stages"]] == ["first", "second"]
        assert data["run_id"] == m1.data["run_id"]
        stage = data["stages"][0]
        assert stage["seed"] == 7
        assert stage["outputs"][0]["sha256"] == file_digest(out)
        assert stage["outputs"][0]["size"] == 7

    def test_config_hash_stable_under_key_order(self, tmp_path):
        out = tmp_path / "x"
        out.write_bytes(b"")
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        PipelineManifest(p1, "v").record_stage("s", dict(a=1, b=2), [], [out], 0, 0, {})
        PipelineManifest(p2, "v").record_stage("s", dict(b=2, a=1), [], [out], 0, 0, {})
        h1 = json.loads(p1.read_text())["stages"][0]["config_hash"]
        h2 = json.loads(p2.read_text())["stages"][0]["config_hash"]
        assert h1 == h2
