import numpy as np
import pytest

from cityfold.citygml import (
    CityGMLError,
    footprint_centroid,
    parse_citygml,
    write_citygml,
)
from cityfold.meshops import watertight_check, weld_vertices
from cityfold.objio import export_obj, import_obj
from cityfold.synthgen import SynthSpec, generate, generate_dataset


def welded_vertex_set(mesh):
    welded = weld_vertices(mesh)
    return set(map(tuple, np.round(welded.vertices, 6)))


class TestRoundTrip:
    def test_attributes_and_geometry_survive(self):
        records, _ = generate_dataset(20, seed=3)
        parsed, report = parse_citygml(write_citygml(records))
        assert report.buildings_parsed == 20
        assert not report.buildings_skipped
        by_id = {r.id: r for r in parsed}
        for rec in records:
            got = by_id[rec.id]
            assert got.roof_type == rec.roof_type
            assert got.function == rec.function
            assert got.measured_height == pytest.approx(rec.measured_height, abs=1e-12)
            assert welded_vertex_set(got.mesh) == welded_vertex_set(rec.mesh)
            assert watertight_check(got.mesh).is_watertight

    def test_obj_export_after_parse(self):
        records, _ = generate_dataset(5, seed=9)
        parsed, _ = parse_citygml(write_citygml(records))
        for rec in parsed:
            again = import_obj(export_obj(rec.mesh))
            assert np.array_equal(again.vertices, rec.mesh.vertices)
            assert np.array_equal(again.triangles, rec.mesh.triangles)

    def test_srs_name_collected(self):
        records, _ = generate_dataset(2, seed=0)
        _, report = parse_citygml(write_citygml(records, srs_name="EPSG:25832"))
        assert "EPSG:25832" in report.srs_names


BAD_BUILDING = """<?xml version="1.0"?>
<CityModel xmlns:gml="http://www.opengis.net/gml">
  <cityObjectMember>
    <Building gml:id="ok-1">
      <lod2Solid>
        <gml:Polygon><gml:exterior><gml:LinearRing>
          <gml:posList>0 0 0 1 0 0 1 1 0 0 1 0 0 0 0</gml:posList>
        </gml:LinearRing></gml:exterior></gml:Polygon>
      </lod2Solid>
    </Building>
  </cityObjectMember>
  <cityObjectMember>
    <Building gml:id="bad-1">
      <lod2Solid>
        <gml:Polygon><gml:exterior><gml:LinearRing>
          <gml:posList>0 0 0 1 0 0</gml:posList>
        </gml:LinearRing></gml:exterior></gml:Polygon>
      </lod2Solid>
    </Building>
  </cityObjectMember>
  <cityObjectMember>
    <Road gml:id="road-1"/>
  </cityObjectMember>
</CityModel>
"""


class TestRobustness:
    def test_bad_building_skipped_not_fatal(self):
        records, report = parse_citygml(BAD_BUILDING)
        assert [r.id for r in records] == ["ok-1"]
        assert report.buildings_parsed == 1
        assert len(report.buildings_skipped) == 1
        assert report.buildings_skipped[0][0] == "bad-1"

    def test_non_building_member_counted(self):
        _, report = parse_citygml(BAD_BUILDING)
        assert report.non_building_skipped == 1

    def test_duplicate_id_skipped(self):
        records, _ = generate_dataset(1, seed=0)
        doubled = write_citygml(records + records)
        parsed, report = parse_citygml(doubled)
        assert len(parsed) == 1
        assert any("duplicate" in reason for _, reason in report.buildings_skipped)

    def test_building_without_geometry_skipped(self):
        text = ('<CityModel xmlns:gml="g"><cityObjectMember>'
                '<Building gml:id="x"/></cityObjectMember></CityModel>')
        records, report = parse_citygml(text)
        assert not records
        assert report.buildings_skipped

    def test_malformed_xml_reports_location(self):
        text = "<CityModel><cityObjectMember></CityModel>"
        with pytest.raises(CityGMLError, match="malformed XML at byte offset"):
            parse_citygml(text)

    def test_pos_elements_accepted(self):
        text = """<CityModel xmlns:gml="g"><cityObjectMember>
          <Building gml:id="p1"><lod2MultiSurface>
            <gml:Polygon><gml:exterior><gml:LinearRing>
              <gml:pos>0 0 0</gml:pos><gml:pos>1 0 0</gml:pos><gml:pos>0 1 0</gml:pos>
            </gml:LinearRing></gml:exterior></gml:Polygon>
          </lod2MultiSurface></Building>
        </cityObjectMember></CityModel>"""
        records, report = parse_citygml(text)
        assert report.buildings_parsed == 1
        assert records[0].mesh.triangle_count == 1


class TestFootprintCentroid:
    def test_cube_uses_floor(self):
        spec = SynthSpec(width=4.0, depth=2.0, eave_height=3.0, location=(10.0, 20.0))
        rec = generate(spec)
        assert np.allclose(footprint_centroid(rec.mesh), [10.0, 20.0], atol=1e-9)

    def test_rect_anchor_matches_requested_location(self):
        # only rect footprints have their area centroid at the bbox center
        mix = {"rect-flat": 1.0, "rect-gable": 1.0, "rect-hip": 1.0, "rect-pent": 1.0}
        records, _ = generate_dataset(10, mix=mix, seed=1)
        for rec in records:
            assert np.allclose(footprint_centroid(rec.mesh), rec.anchor_point, atol=1e-6)
