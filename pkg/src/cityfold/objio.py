"""OBJ text interchange for triangle meshes."""

from __future__ import annotations

import numpy as np

from .meshops import TriangleMesh


class ObjError(ValueError):
    pass


def export_obj(mesh: TriangleMesh) -> str:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    return "\n".join(lines) + ("\n" if lines else "")


def import_obj(text: str) -> TriangleMesh:
    """Parse OBJ text; polygon faces are fan-triangulated. Indices are
    1-based (negative indices count from the end, per the format)."""
    vertices: list[list[float]] = []
    triangles: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise ObjError(f"line {lineno}: vertex needs 3 coordinates")
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for token in parts[1:]:
                head = token.split("/")[0]
                i = int(head)
                if i == 0:
                    raise ObjError(f"line {lineno}: face index 0 (OBJ is 1-based)")
                if i < 0:
                    i = len(vertices) + i
                else:
                    i = i - 1
                if not 0 <= i < len(vertices):
                    raise ObjError(f"line {lineno}: face index out of range")
                idx.append(i)
            if len(idx) < 3:
                raise ObjError(f"line {lineno}: face needs at least 3 vertices")
            for k in range(1, len(idx) - 1):
                triangles.append((idx[0], idx[k], idx[k + 1]))
    return TriangleMesh(
        np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
        np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
    )
