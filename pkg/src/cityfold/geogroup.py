"""Geospatial grouping: anchor each boundary at its median center, walk
buildings in nearness order, and grow locked groups by cosine-distance
radius around each seed. The diversity ratio k is members per group."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeoGroupError(ValueError):
    pass


@dataclass(frozen=True)
class GeoEntity:
    building_id: str
    location: tuple  # (x, y) projected metres
    embedding_row: int


@dataclass
class Boundary:
    boundary_id: str
    kind: str  # "administrative" | "tile"
    members: list = field(default_factory=list)


@dataclass
class GroupConfig:
    tau: float = 0.03
    sweep: tuple = (0.01, 0.02, 0.03, 0.04, 0.05)

    def __post_init__(self):
        if not 0 < self.tau <= 2:
            raise GeoGroupError("tau must be in (0, 2]")


@dataclass
class GroupAssignment:
    assignment: dict  # building_id -> 1-based group number
    seeds: list  # building_id per group, in creation order
    k_ratio: float


def median_center(locations, max_iter: int = 1000, tol: float = 1e-9) -> np.ndarray:
    """Geometric median by Weiszfeld iteration from the centroid.

    When the iterate lands on a data point the Vardi-Zhang rule decides
    whether that point is the minimizer or how to step off it."""
    pts = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise GeoGroupError("median center of empty point set")
    if len(pts) == 1:
        return pts[0].copy()

    y = pts.mean(axis=0)
    for _ in range(max_iter):
        d = np.linalg.norm(pts - y, axis=1)
        on_point = d < 1e-12
        if on_point.any():
            # Vardi & Zhang: stay iff the pull of the rest is weak enough
            rest = ~on_point
            if not rest.any():
                return y
            r_vec = ((pts[rest] - y) / d[rest, None]).sum(axis=0)
            r_norm = np.linalg.norm(r_vec)
            if r_norm <= on_point.sum():
                return y
            w = 1.0 / d[rest]
            t_point = (pts[rest] * w[:, None]).sum(axis=0) / w.sum()
            step = 1.0 - on_point.sum() / r_norm
            y_new = y + step * (t_point - y)
        else:
            w = 1.0 / d
            y_new = (pts * w[:, None]).sum(axis=0) / w.sum()
        if np.linalg.norm(y_new - y) < tol:
            return y_new
        y = y_new
    return y


def median_objective(point, locations) -> float:
    pts = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    return float(np.linalg.norm(pts - np.asarray(point), axis=1).sum())


def coordinatewise_median(locations) -> np.ndarray:
    pts = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise GeoGroupError("median of empty point set")
    return np.median(pts, axis=0)


def near_order(members, anchor) -> list[tuple[GeoEntity, float]]:
    """Members sorted by ascending distance to the anchor; ties break by
    building id."""
    if not members:
        raise GeoGroupError("near_order of empty member list")
    anchor = np.asarray(anchor, dtype=np.float64)
    keyed = [
        (float(np.linalg.norm(np.asarray(m.location) - anchor)), m.building_id, m)
        for m in members
    ]
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [(m, d) for d, _, m in keyed]


def cosine_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise GeoGroupError("cosine distance undefined for zero vector")
    return float(1.0 - float(u @ v) / (nu * nv))


def group_buildings(ordered_members, embeddings: np.ndarray, config: GroupConfig) -> GroupAssignment:
    """Iterate over the static nearness order: first unassigned member
    seeds a new group; every unassigned member within tau cosine distance
    of the seed joins and is locked."""
    members = [m for m, _ in ordered_members] if ordered_members and isinstance(
        ordered_members[0], tuple
    ) else list(ordered_members)
    n = len(members)
    rows = np.asarray([m.embedding_row for m in members])
    vecs = np.asarray(embeddings, dtype=np.float64)[rows]
    norms = np.linalg.norm(vecs, axis=1)
    if (norms == 0).any():
        bad = members[int(np.argmax(norms == 0))].building_id
        raise GeoGroupError(f"zero embedding vector for building {bad}")
    unit = vecs / norms[:, None]

    assigned = np.zeros(n, dtype=bool)
    group = np.zeros(n, dtype=np.int64)
    seeds: list[str] = []
    for i in range(n):
        if assigned[i]:
            continue
        g = len(seeds) + 1
        seeds.append(members[i].building_id)
        cos_dist = 1.0 - unit @ unit[i]
        join = (~assigned) & (cos_dist <= config.tau)
        join[i] = True
        group[join] = g
        assigned[join] = True

    return GroupAssignment(
        assignment={m.building_id: int(group[i]) for i, m in enumerate(members)},
        seeds=seeds,
        k_ratio=n / len(seeds),
    )


def make_tiles(entities, tile_size: float = 1000.0, origin=None) -> list[Boundary]:
    """Axis-aligned square tiling anchored at the bounding-box minimum;
    half-open intervals put every entity in exactly one tile. Empty tiles
    are omitted."""
    if not entities:
        return []
    xy = np.asarray([e.location for e in entities], dtype=np.float64)
    x0, y0 = xy.min(axis=0) if origin is None else origin
    ix = np.floor((xy[:, 0] - x0) / tile_size).astype(np.int64)
    iy = np.floor((xy[:, 1] - y0) / tile_size).astype(np.int64)
    tiles: dict[tuple, Boundary] = {}
    for entity, tx, ty in zip(entities, ix, iy):
        key = (int(tx), int(ty))
        if key not in tiles:
            tiles[key] = Boundary(f"tile_{tx}_{ty}", "tile", [])
        tiles[key].members.append(entity)
    return [tiles[k] for k in sorted(tiles)]


def tile_polygon(boundary_id: str, tile_size: float, origin) -> list:
    """Corner ring of a tile boundary, closed, for GeoJSON export."""
    _, tx, ty = boundary_id.split("_")
    x0 = origin[0] + int(tx) * tile_size
    y0 = origin[1] + int(ty) * tile_size
    return [
        [x0, y0],
        [x0 + tile_size, y0],
        [x0 + tile_size, y0 + tile_size],
        [x0, y0 + tile_size],
        [x0, y0],
    ]


def point_in_polygon(point, ring) -> bool:
    """Even-odd rule; points exactly on an edge count as inside."""
    x, y = float(point[0]), float(point[1])
    ring = np.asarray(ring, dtype=np.float64)
    if np.allclose(ring[0], ring[-1]):
        ring = ring[:-1]
    n = len(ring)
    inside = False
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        # on-edge test
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if abs(cross) < 1e-12:
            if min(x1, x2) - 1e-12 <= x <= max(x1, x2) + 1e-12 and \
               min(y1, y2) - 1e-12 <= y <= max(y1, y2) + 1e-12:
                return True
        if (y1 > y) != (y2 > y):
            x_hit = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_hit:
                inside = not inside
    return inside


def run_boundaries(boundaries, embeddings: np.ndarray, config: GroupConfig,
                   use_coordinatewise_median: bool = False):
    """Group every boundary independently, in boundary-id order.

    Returns (per-boundary assignments, summary rows, diagnostics). A
    boundary whose members lack embeddings is skipped, not fatal."""
    results: dict[str, GroupAssignment] = {}
    summary = []
    diagnostics = []
    count = len(np.asarray(embeddings))
    for boundary in sorted(boundaries, key=lambda b: b.boundary_id):
        if not boundary.members:
            diagnostics.append((boundary.boundary_id, "empty boundary"))
            continue
        missing = [m.building_id for m in boundary.members
                   if not 0 <= m.embedding_row < count]
        if missing:
            diagnostics.append(
                (boundary.boundary_id, f"missing embedding for {missing[0]}")
            )
            continue
        locations = [m.location for m in boundary.members]
        anchor = (
            coordinatewise_median(locations)
            if use_coordinatewise_median
            else median_center(locations)
        )
        ordered = near_order(boundary.members, anchor)
        assignment = group_buildings(ordered, embeddings, config)
        results[boundary.boundary_id] = assignment
        summary.append(
            dict(
                boundary_id=boundary.boundary_id,
                count=len(boundary.members),
                groups=len(assignment.seeds),
                k_ratio=assignment.k_ratio,
            )
        )
    return results, summary, diagnostics
