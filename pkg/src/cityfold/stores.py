"""On-disk stores: point clouds (BPCL), embeddings (BEMB), and the
append-only pipeline manifest."""

from __future__ import annotations

import hashlib
import json
import struct
import time
import uuid
from pathlib import Path

import numpy as np


class StoreError(ValueError):
    pass


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".ids.json")


def write_cloud_store(path, clouds: np.ndarray, ids: list[str]) -> None:
    """BPCL: magic, u32 version=1, u32 cloud count, u32 points per cloud,
    then float32 LE xyz rows per cloud; ids in a JSON sidecar."""
    clouds = np.asarray(clouds, dtype=np.float32)
    if clouds.ndim != 3 or clouds.shape[2] != 3:
        raise StoreError("clouds must be (count, points, 3)")
    if len(ids) != len(clouds):
        raise StoreError("id list length must match cloud count")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(b"BPCL")
        fh.write(struct.pack("<III", 1, clouds.shape[0], clouds.shape[1]))
        fh.write(np.ascontiguousarray(clouds, dtype="<f4").tobytes())
    _sidecar(path).write_text(json.dumps(list(ids)))


def read_cloud_store(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != b"BPCL":
        raise StoreError("not a point-cloud store (bad magic)")
    version, count, points = struct.unpack("<III", raw[4:16])
    if version != 1:
        raise StoreError(f"unsupported BPCL version {version}")
    expected = count * points * 3 * 4
    if len(raw) - 16 != expected:
        raise StoreError("truncated point-cloud store")
    clouds = np.frombuffer(raw[16:], dtype="<f4").reshape(count, points, 3).astype(np.float64)
    ids = json.loads(_sidecar(path).read_text())
    if len(ids) != count:
        raise StoreError("sidecar id count does not match store")
    return clouds, ids


def write_embedding_store(path, embeddings: np.ndarray, ids: list[str]) -> None:
    """BEMB: magic, u32 version=1, u32 count, u32 dim, float32 LE rows;
    ids in a JSON sidecar aligned by row."""
    embeddings = np.asarray(embeddings, dtype=np.float32)
    if embeddings.ndim != 2:
        raise StoreError("embeddings must be (count, dim)")
    if len(ids) != len(embeddings):
        raise StoreError("id list length must match row count")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(b"BEMB")
        fh.write(struct.pack("<III", 1, embeddings.shape[0], embeddings.shape[1]))
        fh.write(np.ascontiguousarray(embeddings, dtype="<f4").tobytes())
    _sidecar(path).write_text(json.dumps(list(ids)))


def read_embedding_store(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != b"BEMB":
        raise StoreError("not an embedding store (bad magic)")
    version, count, dim = struct.unpack("<III", raw[4:16])
    if version != 1:
        raise StoreError(f"unsupported BEMB version {version}")
    if len(raw) - 16 != count * dim * 4:
        raise StoreError("truncated embedding store")
    rows = np.frombuffer(raw[16:], dtype="<f4").reshape(count, dim).astype(np.float64)
    ids = json.loads(_sidecar(path).read_text())
    if len(ids) != count:
        raise StoreError("sidecar id count does not match store")
    return rows, ids


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class PipelineManifest:
    """Append-only record of pipeline stages: config, seeds, outputs with
    digests. The manifest alone suffices to re-run any stage."""

    def __init__(self, path, tool_version: str):
        self.path = Path(path)
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
        else:
            self.data = dict(run_id=uuid.uuid4().hex, tool_version=tool_version, stages=[])

    def record_stage(self, name: str, config: dict, inputs: list, outputs: list,
                     seed, wall_time: float, counts: dict) -> None:
        config_hash = hashlib.sha256(
            json.dumps(config, sort_keys=True, default=str).encode()
        ).hexdigest()[:16]
        self.data["stages"].append(
            dict(
                stage=name,
                time=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                config=config,
                config_hash=config_hash,
                seed=seed,
                wall_time_s=round(wall_time, 3),
                counts=counts,
                inputs=[str(p) for p in inputs],
                outputs=[
                    dict(path=str(p), size=Path(p).stat().st_size, sha256=file_digest(p))
                    for p in outputs
                ],
            )
        )
        self.path.write_text(json.dumps(self.data, indent=2, default=str))
