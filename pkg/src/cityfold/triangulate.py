"""Planar polygon triangulation by ear clipping, with hole bridging.

Rings are 3D but must be coplanar within PLANE_TOLERANCE of their
least-squares plane; triangulation happens in projected 2D coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PLANE_TOLERANCE = 1e-3  # metres; survey data carries millimetric noise


class TriangulationError(ValueError):
    pass


@dataclass(frozen=True)
class PolygonSurface:
    """One planar face: exterior ring plus optional interior rings (holes).

    Rings are stored open (no repeated closing vertex)."""

    exterior_ring: np.ndarray  # (n, 3)
    interior_rings: tuple = ()

    def __post_init__(self):
        ext = _clean_ring(np.asarray(self.exterior_ring, dtype=np.float64))
        object.__setattr__(self, "exterior_ring", ext)
        object.__setattr__(
            self,
            "interior_rings",
            tuple(_clean_ring(np.asarray(r, dtype=np.float64)) for r in self.interior_rings),
        )


def _clean_ring(ring: np.ndarray) -> np.ndarray:
    ring = ring.reshape(-1, 3)
    if len(ring) >= 2 and np.allclose(ring[0], ring[-1]):
        ring = ring[:-1]
    # drop consecutive duplicates
    if len(ring) > 1:
        keep = np.ones(len(ring), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(ring, axis=0), axis=1) > 1e-12
        ring = ring[keep]
    if len(ring) < 3:
        raise TriangulationError("ring has fewer than 3 distinct vertices")
    return ring


def fit_plane(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane through `points`: returns (origin, normal)."""
    origin = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - origin, full_matrices=False)
    return origin, vt[-1]


def project_to_plane(points: np.ndarray, origin: np.ndarray, normal: np.ndarray):
    """2D coordinates in the plane plus per-point out-of-plane residuals."""
    # pick the most stable in-plane axis
    ref = np.zeros(3)
    ref[np.argmin(np.abs(normal))] = 1.0
    u = np.cross(normal, ref)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    rel = points - origin
    coords = np.stack([rel @ u, rel @ v], axis=1)
    residuals = rel @ normal
    return coords, residuals


def ring_area_2d(ring: np.ndarray) -> float:
    """Signed shoelace area of a 2D ring."""
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _cross2(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _point_in_triangle(p, a, b, c, eps=1e-12) -> bool:
    d1 = _cross2(a, b, p)
    d2 = _cross2(b, c, p)
    d3 = _cross2(c, a, p)
    return d1 >= -eps and d2 >= -eps and d3 >= -eps


def _ear_clip(coords: np.ndarray, indices: list[int]) -> list[tuple[int, int, int]]:
    """Ear-clip a CCW simple polygon given as positions `coords[indices]`.

    Returns triangles as triples of entries of `indices`."""
    idx = list(indices)
    tris: list[tuple[int, int, int]] = []
    guard = 0
    limit = 2 * len(idx) * len(idx) + 16
    while len(idx) > 3:
        n = len(idx)
        clipped = False
        for i in range(n):
            ia, ib, ic = idx[(i - 1) % n], idx[i], idx[(i + 1) % n]
            a, b, c = coords[ia], coords[ib], coords[ic]
            if _cross2(a, b, c) <= 1e-12:
                continue  # reflex or degenerate corner
            contains = False
            for j in idx:
                if j in (ia, ib, ic):
                    continue
                p = coords[j]
                # bridge splices duplicate vertices; coincident corners never block
                if (
                    np.allclose(p, a, atol=1e-12)
                    or np.allclose(p, b, atol=1e-12)
                    or np.allclose(p, c, atol=1e-12)
                ):
                    continue
                if _point_in_triangle(p, a, b, c):
                    contains = True
                    break
            if not contains:
                tris.append((ia, ib, ic))
                del idx[i]
                clipped = True
                break
        guard += 1
        if not clipped or guard > limit:
            raise TriangulationError(
                "ear clipping stalled (degenerate or self-intersecting ring)"
            )
    tris.append((idx[0], idx[1], idx[2]))
    return tris


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _cross2(p3, p4, p1)
    d2 = _cross2(p3, p4, p2)
    d3 = _cross2(p1, p2, p3)
    d4 = _cross2(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _segment_clear(coords, a, b, outer, hole) -> bool:
    """True if segment a-b crosses no edge of the outer loop or the hole."""
    pa, pb = coords[a], coords[b]
    for loop in (outer, hole):
        n = len(loop)
        for i in range(n):
            u, v = loop[i], loop[(i + 1) % n]
            if a in (u, v) or b in (u, v):
                continue
            if _segments_intersect(pa, pb, coords[u], coords[v]):
                return False
    return True


def triangulate_polygon(surface: PolygonSurface):
    """Triangulate a planar polygon (holes supported) into index triples.

    Returns (vertex_table, triangles) where triangles index into
    vertex_table and their winding follows the exterior ring's direction.
    """
    rings = [surface.exterior_ring, *surface.interior_rings]
    all_points = np.concatenate(rings, axis=0)
    origin, normal = fit_plane(all_points)
    coords, residuals = project_to_plane(all_points, origin, normal)
    if np.abs(residuals).max() > PLANE_TOLERANCE:
        raise TriangulationError(
            f"ring not coplanar: max plane deviation {np.abs(residuals).max():.3g} m"
        )

    offsets = np.cumsum([0] + [len(r) for r in rings])
    outer_idx = list(range(offsets[0], offsets[1]))

    area = ring_area_2d(coords[outer_idx])
    if abs(area) < 1e-12:
        raise TriangulationError("exterior ring has zero area")
    flipped = area < 0
    if flipped:
        coords = coords.copy()
        coords[:, 1] = -coords[:, 1]

    loop = outer_idx
    for h in range(len(surface.interior_rings)):
        hole_idx = list(range(offsets[h + 1], offsets[h + 2]))
        if abs(ring_area_2d(coords[hole_idx])) < 1e-12:
            raise TriangulationError(f"interior ring {h} has zero area")
        # holes must wind opposite to the (now CCW) outer loop
        if ring_area_2d(coords[hole_idx]) > 0:
            hole_idx = hole_idx[::-1]
        loop = _splice(loop, hole_idx, coords)

    tris = _ear_clip(coords, loop)
    return all_points, np.array(tris, dtype=np.int64)


def _splice(outer: list[int], hole: list[int], coords: np.ndarray) -> list[int]:
    best = None
    for hpos, hi in enumerate(hole):
        for opos, oi in enumerate(outer):
            if not _segment_clear(coords, hi, oi, outer, hole):
                continue
            d = float(np.sum((coords[hi] - coords[oi]) ** 2))
            if best is None or d < best[0]:
                best = (d, opos, hpos)
    if best is None:
        raise TriangulationError("no visible bridge between hole and outer ring")
    _, opos, hpos = best
    rotated = hole[hpos:] + hole[:hpos]
    # outer[..opos], bridge to hole, walk hole, bridge back, continue outer
    return outer[: opos + 1] + rotated + [rotated[0], outer[opos]] + outer[opos + 1 :]
