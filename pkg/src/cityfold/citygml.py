"""Streaming CityGML LoD2 reader and subset writer.

Element matching is namespace-agnostic (local names only) because real
tiles mix CityGML 1.0/2.0 namespaces. Only building elements carrying
LoD2 solid or multi-surface polygon geometry are supported.
"""

from __future__ import annotations

import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .meshops import TriangleMesh
from .triangulate import PolygonSurface, TriangulationError, triangulate_polygon


class CityGMLError(ValueError):
    pass


@dataclass(frozen=True)
class BuildingRecord:
    """One building: identity, pass-through attribute codes, geolocation
    anchor, and triangulated mesh."""

    id: str
    mesh: TriangleMesh
    anchor_point: np.ndarray  # (2,) projected metres
    roof_type: str | None = None
    function: str | None = None
    measured_height: float | None = None
    srs_name: str | None = None


@dataclass
class ParseReport:
    buildings_parsed: int = 0
    buildings_skipped: list = field(default_factory=list)  # (id, reason)
    non_building_skipped: int = 0
    srs_names: list = field(default_factory=list)

    @property
    def skipped_non_building(self) -> int:
        return self.non_building_skipped

    def to_dict(self) -> dict:
        return dict(
            buildings_parsed=self.buildings_parsed,
            buildings_skipped=[{"id": i, "reason": r} for i, r in self.buildings_skipped],
            non_building_skipped=self.non_building_skipped,
            srs_names=self.srs_names,
        )


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _find_local(elem, name: str):
    for node in elem.iter():
        if _local(node.tag) == name:
            yield node


def _ring_points(ring_elem) -> np.ndarray:
    for pos_list in _find_local(ring_elem, "posList"):
        values = [float(x) for x in pos_list.text.split()]
        return np.asarray(values, dtype=np.float64).reshape(-1, 3)
    points = []
    for pos in _find_local(ring_elem, "pos"):
        points.append([float(x) for x in pos.text.split()])
    if not points:
        raise CityGMLError("ring without posList/pos coordinates")
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def _polygon_surfaces(container) -> list[PolygonSurface]:
    surfaces = []
    for poly in _find_local(container, "Polygon"):
        exterior = None
        interiors = []
        for child in poly:
            name = _local(child.tag)
            if name == "exterior":
                exterior = _ring_points(child)
            elif name == "interior":
                interiors.append(_ring_points(child))
        if exterior is None:
            raise CityGMLError("polygon without exterior ring")
        surfaces.append(PolygonSurface(exterior, tuple(interiors)))
    return surfaces


def footprint_centroid(mesh: TriangleMesh) -> np.ndarray:
    """Approximate footprint anchor: area-weighted centroid of the
    z-projections of downward-facing triangles (falls back to all faces,
    then to the vertex mean)."""
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    normal_z = np.cross(b - a, c - a)[:, 2]
    weights = np.abs(normal_z) / 2.0
    down = normal_z < 0
    if weights[down].sum() > 1e-12:
        weights = np.where(down, weights, 0.0)
    if weights.sum() <= 1e-12:
        return mesh.vertices[:, :2].mean(axis=0)
    centers = (a + b + c)[:, :2] / 3.0
    return (weights[:, None] * centers).sum(axis=0) / weights.sum()


def _build_record(elem) -> BuildingRecord:
    gml_id = None
    for key, value in elem.attrib.items():
        if _local(key) == "id":
            gml_id = value
    if not gml_id:
        raise CityGMLError("building without gml id")

    roof_type = function = None
    height = None
    srs_name = None
    for node in elem.iter():
        name = _local(node.tag)
        if name == "roofType" and node.text:
            roof_type = node.text.strip()
        elif name == "function" and node.text:
            function = node.text.strip()
        elif name == "measuredHeight" and node.text:
            height = float(node.text.strip())
        for key, value in node.attrib.items():
            if _local(key) == "srsName":
                srs_name = value

    surfaces: list[PolygonSurface] = []
    for geom_name in ("lod2Solid", "lod2MultiSurface"):
        for geom in _find_local(elem, geom_name):
            surfaces.extend(_polygon_surfaces(geom))
        if surfaces:
            break
    if not surfaces:
        raise CityGMLError("no LoD2 solid or multi-surface geometry")

    vertices = []
    triangles = []
    offset = 0
    for surface in surfaces:
        points, tris = triangulate_polygon(surface)
        vertices.append(points)
        triangles.append(tris + offset)
        offset += len(points)
    mesh = TriangleMesh(np.concatenate(vertices), np.concatenate(triangles))
    return BuildingRecord(
        id=gml_id,
        mesh=mesh,
        anchor_point=footprint_centroid(mesh),
        roof_type=roof_type,
        function=function,
        measured_height=height,
        srs_name=srs_name,
    )


def parse_citygml(document) -> tuple[list[BuildingRecord], ParseReport]:
    """Parse a CityGML document (bytes, text, or binary stream) into
    building records. A single bad building never aborts the run; it is
    skipped and logged in the report."""
    if isinstance(document, str):
        document = document.encode("utf-8")
    if isinstance(document, bytes):
        raw = document
        stream = io.BytesIO(document)
    else:
        raw = None
        stream = document

    records: list[BuildingRecord] = []
    report = ParseReport()
    seen_ids: set[str] = set()
    srs_seen: list[str] = []

    try:
        member = None
        member_had_building = False
        for event, elem in ET.iterparse(stream, events=("start", "end")):
            name = _local(elem.tag)
            if event == "start":
                if name in ("cityObjectMember", "featureMember"):
                    member = elem
                    member_had_building = False
                for key, value in elem.attrib.items():
                    if _local(key) == "srsName" and value not in srs_seen:
                        srs_seen.append(value)
                continue
            if name == "Building":
                member_had_building = True
                bld_id = next(
                    (v for k, v in elem.attrib.items() if _local(k) == "id"), "<no-id>"
                )
                try:
                    record = _build_record(elem)
                    if record.id in seen_ids:
                        raise CityGMLError("duplicate building id")
                    seen_ids.add(record.id)
                    records.append(record)
                    report.buildings_parsed += 1
                except (CityGMLError, TriangulationError, ValueError) as exc:
                    report.buildings_skipped.append((bld_id, str(exc)))
            elif name in ("cityObjectMember", "featureMember") and member is not None:
                if not member_had_building:
                    report.non_building_skipped += 1
                elem.clear()
                member = None
    except ET.ParseError as exc:
        line, col = exc.position
        offset = _byte_offset(raw, line, col) if raw is not None else None
        where = f"byte offset {offset}" if offset is not None else f"line {line}, column {col}"
        raise CityGMLError(f"malformed XML at {where}: {exc}") from exc

    report.srs_names = srs_seen
    return records, report


def _byte_offset(raw: bytes, line: int, col: int) -> int:
    lines = raw.split(b"\n")
    return sum(len(l) + 1 for l in lines[: line - 1]) + col


_GML_HEADER = (
    '<?xml version="1.0" encoding="UTF-8"?>\n'
    '<core:CityModel xmlns:core="http://www.opengis.net/citygml/2.0"'
    ' xmlns:bldg="http://www.opengis.net/citygml/building/2.0"'
    ' xmlns:gml="http://www.opengis.net/gml">\n'
)


def write_citygml(records, srs_name: str = "urn:local:metric") -> str:
    """Emit the CityGML subset this package parses: one Building per
    record, each mesh triangle as a solid surface polygon."""
    out = [_GML_HEADER]
    for rec in records:
        out.append("  <core:cityObjectMember>\n")
        out.append(f'    <bldg:Building gml:id="{rec.id}">\n')
        if rec.function is not None:
            out.append(f"      <bldg:function>{rec.function}</bldg:function>\n")
        if rec.roof_type is not None:
            out.append(f"      <bldg:roofType>{rec.roof_type}</bldg:roofType>\n")
        if rec.measured_height is not None:
            out.append(
                f'      <bldg:measuredHeight uom="m">{float(rec.measured_height)!r}</bldg:measuredHeight>\n'
            )
        out.append("      <bldg:lod2Solid>\n")
        out.append(f'        <gml:Solid srsName="{srs_name}"><gml:exterior><gml:CompositeSurface>\n')
        verts = rec.mesh.vertices
        for tri in rec.mesh.triangles:
            ring = [verts[tri[0]], verts[tri[1]], verts[tri[2]], verts[tri[0]]]
            text = " ".join(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}" for p in ring)
            out.append(
                "          <gml:surfaceMember><gml:Polygon><gml:exterior>"
                f'<gml:LinearRing><gml:posList srsDimension="3">{text}</gml:posList>'
                "</gml:LinearRing></gml:exterior></gml:Polygon></gml:surfaceMember>\n"
            )
        out.append("        </gml:CompositeSurface></gml:exterior></gml:Solid>\n")
        out.append("      </bldg:lod2Solid>\n")
        out.append("    </bldg:Building>\n")
        out.append("  </core:cityObjectMember>\n")
    out.append("</core:CityModel>\n")
    return "".join(out)
