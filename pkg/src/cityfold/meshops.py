"""Mesh validation, surface sampling, and point-cloud normalization.

All randomness goes through numpy's PCG64 generator so that sampled
clouds are bit-reproducible across platforms for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WELD_TOLERANCE = 1e-6  # metres; GML polygons repeat shared vertices with float noise


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh in metres."""

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        if v.size and not np.isfinite(v).all():
            raise MeshError("non-finite vertex coordinate")

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def signed_volume(self) -> float:
        """Sum of signed tetrahedron volumes; positive for outward orientation."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3)
    source_id: str = ""

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", p)
        if p.size and not np.isfinite(p).all():
            raise MeshError("non-finite point coordinate")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class WatertightReport:
    is_watertight: bool
    boundary_edges: list = field(default_factory=list)
    nonmanifold_edges: list = field(default_factory=list)
    inconsistent_edges: list = field(default_factory=list)


@dataclass
class NormalizationManifest:
    """Global scale shared by every kept cloud; see percentile_filter."""

    global_scale: float
    lo_radius: float
    hi_radius: float
    kept_count: int
    dropped_count: int
    percentile_lo: float = 1.0
    percentile_hi: float = 99.0

    def to_dict(self) -> dict:
        return dict(
            global_scale=self.global_scale,
            lo_radius=self.lo_radius,
            hi_radius=self.hi_radius,
            kept_count=self.kept_count,
            dropped_count=self.dropped_count,
            percentile_lo=self.percentile_lo,
            percentile_hi=self.percentile_hi,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationManifest":
        return cls(**d)


def weld_vertices(mesh: TriangleMesh, tolerance: float = WELD_TOLERANCE) -> TriangleMesh:
    """Merge vertices closer than `tolerance` (grid quantization) and drop
    triangles that degenerate in the process."""
    keys = np.round(mesh.vertices / tolerance).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    remapped = inverse[mesh.triangles]
    ok = (
        (remapped[:, 0] != remapped[:, 1])
        & (remapped[:, 1] != remapped[:, 2])
        & (remapped[:, 0] != remapped[:, 2])
    )
    return TriangleMesh(mesh.vertices[first], remapped[ok])


def watertight_check(mesh: TriangleMesh) -> WatertightReport:
    """A mesh is watertight iff every undirected edge is shared by exactly two
    triangles traversing it in opposite directions (after vertex welding)."""
    welded = weld_vertices(mesh)
    tris = welded.triangles
    if len(tris) == 0:
        return WatertightReport(False)

    directed: dict[tuple, int] = {}
    undirected: dict[tuple, int] = {}
    for tri in tris:
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            directed[(a, b)] = directed.get((a, b), 0) + 1
            key = (a, b) if a < b else (b, a)
            undirected[key] = undirected.get(key, 0) + 1

    boundary = [e for e, n in undirected.items() if n == 1]
    nonmanifold = [e for e, n in undirected.items() if n > 2]
    inconsistent = []
    for (a, b), n in undirected.items():
        if n == 2 and directed.get((a, b), 0) != 1:
            # both incident triangles traverse the edge in the same direction
            inconsistent.append((a, b))

    ok = not boundary and not nonmanifold and not inconsistent
    return WatertightReport(ok, boundary, nonmanifold, inconsistent)


def surface_sample(mesh: TriangleMesh, count: int, seed: int) -> PointCloud:
    """Sample `count` points uniformly by area: triangle chosen with
    probability proportional to area, then a uniform barycentric point."""
    if count < 1:
        raise MeshError("sample count must be >= 1")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise MeshError("mesh has zero total area")

    rng = np.random.Generator(np.random.PCG64(seed))
    cumulative = np.cumsum(areas)
    picks = np.searchsorted(cumulative, rng.random(count) * total, side="right")
    picks = np.minimum(picks, len(areas) - 1)

    a = mesh.vertices[mesh.triangles[picks, 0]]
    b = mesh.vertices[mesh.triangles[picks, 1]]
    c = mesh.vertices[mesh.triangles[picks, 2]]
    r1 = np.sqrt(rng.random((count, 1)))
    r2 = rng.random((count, 1))
    points = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c
    return PointCloud(points)


def centroid_radius(cloud: PointCloud) -> tuple[np.ndarray, float]:
    """Arithmetic-mean centroid and max distance from it to any point."""
    if len(cloud) == 0:
        raise MeshError("empty point cloud")
    centroid = cloud.points.mean(axis=0)
    radius = float(np.linalg.norm(cloud.points - centroid, axis=1).max())
    return centroid, radius


def percentile_filter(
    radii, lo_pct: float = 1.0, hi_pct: float = 99.0
) -> tuple[np.ndarray, NormalizationManifest]:
    """Keep radii within the [lo_pct, hi_pct] percentile band (linear
    interpolation between order statistics, inclusive bounds)."""
    radii = np.asarray(radii, dtype=np.float64)
    if radii.ndim != 1 or len(radii) < 2:
        raise MeshError("percentile filter needs at least 2 radii")
    lo, hi = np.percentile(radii, [lo_pct, hi_pct], method="linear")
    keep = (radii >= lo) & (radii <= hi)
    manifest = NormalizationManifest(
        global_scale=float(hi),
        lo_radius=float(lo),
        hi_radius=float(hi),
        kept_count=int(keep.sum()),
        dropped_count=int((~keep).sum()),
        percentile_lo=lo_pct,
        percentile_hi=hi_pct,
    )
    return keep, manifest


def normalize_cloud(cloud: PointCloud, manifest: NormalizationManifest) -> PointCloud:
    """Translate to the cloud's own centroid, divide by the shared global
    scale. Relative building size is preserved across the dataset."""
    if manifest.global_scale <= 0:
        raise MeshError("global scale must be positive")
    centroid = cloud.points.mean(axis=0)
    return PointCloud((cloud.points - centroid) / manifest.global_scale, cloud.source_id)
