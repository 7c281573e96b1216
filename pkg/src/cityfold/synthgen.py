"""Procedural watertight building meshes: footprint family x roof family
x size. Stands in for real LoD2 stock so the whole pipeline is testable."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .citygml import BuildingRecord
from .meshops import TriangleMesh
from .triangulate import _ear_clip

FOOTPRINTS = ("rect", "L", "U")
ROOFS = ("flat", "gable", "hip", "pent")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    footprint: str = "rect"
    roof: str = "flat"
    width: float = 10.0
    depth: float = 8.0
    eave_height: float = 3.0
    roof_height: float = 0.0
    location: tuple = (0.0, 0.0)
    building_id: str = "synth-0"

    def __post_init__(self):
        if self.footprint not in FOOTPRINTS:
            raise SynthError(f"unknown footprint {self.footprint!r}")
        if self.roof not in ROOFS:
            raise SynthError(f"unknown roof {self.roof!r}")
        if min(self.width, self.depth, self.eave_height) <= 0:
            raise SynthError("dimensions must be positive")
        if (self.roof == "flat") != (self.roof_height == 0):
            raise SynthError("roof_height must be 0 exactly for flat roofs")
        if self.footprint != "rect" and self.roof != "flat":
            raise SynthError("pitched roofs are only generated on rect footprints")


def footprint_ring(spec: SynthSpec) -> np.ndarray:
    """CCW footprint ring in local coordinates, origin at the lower-left."""
    w, d = spec.width, spec.depth
    if spec.footprint == "rect":
        ring = [(0, 0), (w, 0), (w, d), (0, d)]
    elif spec.footprint == "L":
        cw, cd = 0.5 * w, 0.5 * d
        ring = [(0, 0), (w, 0), (w, cd), (cw, cd), (cw, d), (0, d)]
    else:  # U: arms along +y, opening at the top middle
        aw, cd = 0.3 * w, 0.4 * d
        ring = [(0, 0), (w, 0), (w, d), (w - aw, d), (w - aw, cd), (aw, cd), (aw, d), (0, d)]
    return np.asarray(ring, dtype=np.float64)


def footprint_area(spec: SynthSpec) -> float:
    ring = footprint_ring(spec)
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _prism(ring2d: np.ndarray, height: float):
    """Watertight prism over a CCW 2D ring: floor, roof, and side quads."""
    n = len(ring2d)
    bottom = np.column_stack([ring2d, np.zeros(n)])
    top = np.column_stack([ring2d, np.full(n, height)])
    vertices = np.concatenate([bottom, top])
    cap = _ear_clip(ring2d, list(range(n)))
    tris = []
    for a, b, c in cap:
        tris.append((a + n, b + n, c + n))  # roof, CCW from above
        tris.append((a, c, b))  # floor, reversed
    for i in range(n):
        j = (i + 1) % n
        tris.append((i, j, j + n))
        tris.append((i, j + n, i + n))
    return vertices, np.asarray(tris, dtype=np.int64)


def _rect_pitched(spec: SynthSpec):
    """Rect footprint with gable/hip ridge (hip inset 0 degenerates to
    gable) or pent slope."""
    w, d, e, h = spec.width, spec.depth, spec.eave_height, spec.roof_height
    b = [(0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0)]
    if spec.roof == "pent":
        t = [(0, 0, e), (w, 0, e), (w, d, e + h), (0, d, e + h)]
        vertices = np.asarray(b + t, dtype=np.float64)
        tris = [
            (0, 2, 1), (0, 3, 2),  # floor
            (0, 1, 5), (0, 5, 4),  # front
            (1, 2, 6), (1, 6, 5),  # right
            (2, 3, 7), (2, 7, 6),  # back
            (3, 0, 4), (3, 4, 7),  # left
            (4, 5, 6), (4, 6, 7),  # sloped top
        ]
        return vertices, np.asarray(tris, dtype=np.int64)

    inset = 0.0 if spec.roof == "gable" else min(w, d) / 4.0
    t = [(0, 0, e), (w, 0, e), (w, d, e), (0, d, e)]
    ridge = [(inset, d / 2.0, e + h), (w - inset, d / 2.0, e + h)]
    vertices = np.asarray(b + t + ridge, dtype=np.float64)
    r0, r1 = 8, 9
    tris = [
        (0, 2, 1), (0, 3, 2),  # floor
        (0, 1, 5), (0, 5, 4),  # front wall
        (1, 2, 6), (1, 6, 5),  # right wall
        (2, 3, 7), (2, 7, 6),  # back wall
        (3, 0, 4), (3, 4, 7),  # left wall
        (4, 5, r1), (4, r1, r0),  # front slope
        (6, 7, r0), (6, r0, r1),  # back slope
        (7, 4, r0),  # left hip / gable end
        (5, 6, r1),  # right hip / gable end
    ]
    return vertices, np.asarray(tris, dtype=np.int64)


def generate(spec: SynthSpec) -> BuildingRecord:
    """Build one watertight synthetic building record."""
    if spec.footprint == "rect" and spec.roof != "flat":
        vertices, triangles = _rect_pitched(spec)
    else:
        vertices, triangles = _prism(footprint_ring(spec), spec.eave_height)
    # centre the footprint on the requested location
    shift = np.array(
        [spec.location[0] - spec.width / 2.0, spec.location[1] - spec.depth / 2.0, 0.0]
    )
    mesh = TriangleMesh(vertices + shift, triangles)
    return BuildingRecord(
        id=spec.building_id,
        mesh=mesh,
        anchor_point=np.asarray(spec.location, dtype=np.float64),
        roof_type=spec.roof,
        function=spec.footprint,
        measured_height=spec.eave_height + spec.roof_height,
        srs_name="urn:local:metric",
    )


DEFAULT_MIX = {
    "rect-flat": 1.0,
    "rect-gable": 1.0,
    "rect-hip": 1.0,
    "rect-pent": 1.0,
    "L-flat": 1.0,
    "U-flat": 1.0,
}


def generate_dataset(count: int, mix: dict | None = None, bbox=(0.0, 0.0, 1000.0, 1000.0),
                     seed: int = 0):
    """Seeded dataset of labeled building records.

    Returns (records, labels) where each label row is a dict with the
    generating parameters for cluster-purity checks."""
    if count < 1:
        raise SynthError("count must be >= 1")
    mix = dict(DEFAULT_MIX if mix is None else mix)
    families = sorted(mix)
    weights = np.asarray([mix[f] for f in families], dtype=np.float64)
    weights /= weights.sum()

    rng = np.random.Generator(np.random.PCG64(seed))
    x0, y0, x1, y1 = bbox
    records, labels = [], []
    for i in range(count):
        family = families[int(rng.choice(len(families), p=weights))]
        footprint, roof = family.split("-")
        spec = SynthSpec(
            footprint=footprint,
            roof=roof,
            width=float(rng.uniform(6.0, 20.0)),
            depth=float(rng.uniform(5.0, 15.0)),
            eave_height=float(rng.uniform(3.0, 12.0)),
            roof_height=0.0 if roof == "flat" else float(rng.uniform(1.0, 4.0)),
            location=(float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))),
            building_id=f"synth-{i:06d}",
        )
        records.append(generate(spec))
        labels.append(
            dict(
                building_id=spec.building_id,
                footprint=spec.footprint,
                roof=spec.roof,
                width=spec.width,
                depth=spec.depth,
                eave_height=spec.eave_height,
                roof_height=spec.roof_height,
            )
        )
    return records, labels
