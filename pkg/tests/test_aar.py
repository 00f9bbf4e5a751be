"""Transport benchmark: geodesy, component extent, station significance."""
from __future__ import annotations

import numpy as np
import pytest

from spatial_link.aar import (
    AarComponent,
    GeoPoint,
    build_aar_graph,
    component_extent,
    connected_components,
    elevated_points,
    equirect_distance,
    run_aar,
    snap_to_node,
    station_path_significance,
)
from spatial_link.errors import DimMismatch, EmptySide, StationUnreachable
from spatial_link.grid import ChangeGrid, GridRegistration

DEG = GridRegistration(lat0=0.0, lon0=0.0, dlat=1.0, dlon=1.0, cell_km=111.11)


def grid_of(values, registration=DEG, valid=None) -> ChangeGrid:
    values = np.asarray(values, dtype=float)
    valid = np.ones_like(values, dtype=bool) if valid is None else valid
    return ChangeGrid(values=values, valid_mask=valid, registration=registration)


def point_grids(dims, cells, value=10.0, background=0.1, registration=DEG):
    """Value grid plus a 0/1 mask grid flagging the given cells."""
    vals = np.full(dims, background)
    mask = np.zeros(dims)
    for r, c in cells:
        vals[r, c] = value
        mask[r, c] = 1.0
    return grid_of(vals, registration), grid_of(mask, registration)


class TestGeoPoint:
    def test_latitude_domain(self):
        with pytest.raises(ValueError):
            GeoPoint(lat=91.0, lon=0.0)

    def test_longitude_domain(self):
        with pytest.raises(ValueError):
            GeoPoint(lat=0.0, lon=180.0)

    def test_valid_extremes(self):
        GeoPoint(lat=-90.0, lon=-180.0)
        GeoPoint(lat=90.0, lon=179.999)


class TestEquirectDistance:
    def test_ten_degrees_longitude_at_lat_45(self):
        assert equirect_distance((45.0, 0.0), (45.0, 10.0)) == pytest.approx(785.67, abs=0.01)

    def test_ten_degrees_latitude(self):
        assert equirect_distance((0.0, 0.0), (10.0, 0.0)) == pytest.approx(1111.1, abs=0.01)

    def test_coincident_points(self):
        assert equirect_distance((12.5, -40.0), (12.5, -40.0)) == 0.0

    def test_antimeridian_wrap(self):
        d = equirect_distance((0.0, 179.5), (0.0, -179.5))
        assert d == pytest.approx(111.11, abs=0.01)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = (rng.uniform(-90, 90), rng.uniform(-180, 180))
            b = (rng.uniform(-90, 90), rng.uniform(-180, 180))
            assert equirect_distance(a, b) == pytest.approx(equirect_distance(b, a))

    def test_accepts_geopoints(self):
        a = GeoPoint(lat=45.0, lon=0.0)
        b = GeoPoint(lat=45.0, lon=10.0)
        assert equirect_distance(a, b) == equirect_distance((45.0, 0.0), (45.0, 10.0))

    def test_near_metric_in_bounded_midlatitude_box(self):
        """Within a 10-degree box below 60 deg lat the planar approximation
        respects the triangle inequality to a fraction of a percent."""
        rng = np.random.default_rng(7)
        for _ in range(500):
            lat_c = rng.uniform(-55, 55)
            lon_c = rng.uniform(-170, 170)
            a, b, c = [
                (lat_c + rng.uniform(-5, 5), lon_c + rng.uniform(-5, 5)) for _ in range(3)
            ]
            direct = equirect_distance(a, c)
            via = equirect_distance(a, b) + equirect_distance(b, c)
            assert direct <= via * 1.002

    def test_not_a_metric_at_high_latitude(self):
        """The planar form badly overshoots long high-latitude legs; this
        pins the known failure so nobody assumes metric behavior globally."""
        a, b, c = (0.0, 0.0), (80.0, 0.0), (80.0, 90.0)
        direct = equirect_distance(a, c)
        via = equirect_distance(a, b) + equirect_distance(b, c)
        assert direct > via


class TestElevatedPoints:
    def test_row_major_order_with_cells_and_values(self):
        cells = [(2, 3), (0, 1), (2, 0)]
        values, mask = point_grids((4, 5), cells, value=7.5)
        pts = elevated_points(values, mask)
        assert [p.cell for p in pts] == [(0, 1), (2, 0), (2, 3)]
        assert all(p.value == 7.5 for p in pts)
        assert pts[0].lat == 0.0 and pts[0].lon == 1.0
        assert pts[2].lat == 2.0 and pts[2].lon == 3.0

    def test_invalid_cells_excluded(self):
        values, mask = point_grids((3, 3), [(0, 0), (1, 1), (2, 2)])
        mv = mask.valid_mask.copy()
        mv[1, 1] = False
        mask = ChangeGrid(values=mask.values, valid_mask=mv, registration=mask.registration)
        vv = values.valid_mask.copy()
        vv[2, 2] = False
        vals = values.values.copy()
        vals[2, 2] = np.nan
        values = ChangeGrid(values=vals, valid_mask=vv, registration=values.registration)
        pts = elevated_points(values, mask)
        assert [p.cell for p in pts] == [(0, 0)]

    def test_shape_mismatch(self):
        values, _ = point_grids((3, 3), [(0, 0)])
        _, mask = point_grids((3, 4), [(0, 0)])
        with pytest.raises(DimMismatch):
            elevated_points(values, mask)


class TestBuildAarGraph:
    def test_meridian_chain_keeps_consecutive_edges(self):
        cells = [(i, 0) for i in range(6)]
        values, mask = point_grids((8, 3), cells)
        pts = elevated_points(values, mask)
        g = build_aar_graph(pts, max_edge_km=250.0)
        got = {(e.u, e.v) for e in g.edges}
        assert got == {(i, i + 1) for i in range(5)}
        for e in g.edges:
            assert e.distance == pytest.approx(111.11, abs=0.01)

    def test_long_edges_pruned(self):
        # two pairs 40 degrees of longitude apart at the equator
        cells = [(0, 0), (1, 0), (0, 40), (1, 40)]
        values, mask = point_grids((3, 45), cells)
        pts = elevated_points(values, mask)
        g = build_aar_graph(pts, max_edge_km=250.0)
        for e in g.edges:
            assert {e.u, e.v} in ({0, 2}, {1, 3})

    def test_needs_two_points(self):
        values, mask = point_grids((3, 3), [(1, 1)])
        with pytest.raises(EmptySide):
            build_aar_graph(elevated_points(values, mask))

    def test_params_record_variant(self):
        values, mask = point_grids((3, 3), [(0, 0), (0, 1), (1, 0)])
        g = build_aar_graph(elevated_points(values, mask))
        assert g.params["variant"] == "aar"


class TestComponents:
    def build_two_clusters(self):
        chain = [(i, 5) for i in range(21)]          # 20 deg along a meridian
        blob = [(44 + r, 30 + c) for r in range(3) for c in range(3)]
        values, mask = point_grids((50, 50), chain + blob)
        pts = elevated_points(values, mask)
        g = build_aar_graph(pts, max_edge_km=250.0)
        return g, pts

    def test_two_components_ordered_by_smallest_id(self):
        g, pts = self.build_two_clusters()
        comps = connected_components(g, pts)
        assert len(comps) == 2
        assert comps[0].node_ids == tuple(range(21))
        assert comps[1].node_ids == tuple(range(21, 30))

    def test_extent_and_retention(self):
        g, pts = self.build_two_clusters()
        comps = connected_components(g, pts, min_extent_km=2000.0)
        assert comps[0].extent_km == pytest.approx(2222.2, abs=0.01)
        assert comps[0].retained
        assert comps[1].extent_km < 400
        assert not comps[1].retained

    def test_retention_is_strictly_greater(self):
        g, pts = self.build_two_clusters()
        comps = connected_components(g, pts, min_extent_km=0.0)
        extent = comps[0].extent_km
        again = connected_components(g, pts, min_extent_km=extent)
        assert not again[0].retained

    def test_east_west_span_at_lat_45_rejected(self):
        reg = GridRegistration(lat0=45.0, lon0=0.0, dlat=1.0, dlon=1.0, cell_km=111.11)
        cells = [(0, c) for c in range(11)]          # 10 deg of longitude
        values, mask = point_grids((2, 12), cells, registration=reg)
        pts = elevated_points(values, mask)
        g = build_aar_graph(pts, max_edge_km=250.0)
        (comp,) = connected_components(g, pts, min_extent_km=2000.0)
        assert comp.extent_km == pytest.approx(785.67, abs=0.01)
        assert not comp.retained

    def test_singleton_extent_zero(self):
        pts = [GeoPoint(lat=0.0, lon=0.0), GeoPoint(lat=50.0, lon=50.0)]
        assert component_extent([0], pts) == 0.0

    def test_empty_component_rejected(self):
        with pytest.raises(ValueError):
            component_extent([], [])


class TestSnap:
    PTS = [GeoPoint(lat=0.0, lon=0.0), GeoPoint(lat=1.0, lon=0.0), GeoPoint(lat=0.0, lon=1.0)]

    def test_exact_hit(self):
        assert snap_to_node(self.PTS, 1.0, 0.0) == 1

    def test_nearest_within_radius(self):
        assert snap_to_node(self.PTS, 0.9, 0.05) == 1

    def test_tie_prefers_smallest_id(self):
        pts = [GeoPoint(lat=0.0, lon=-1.0), GeoPoint(lat=0.0, lon=1.0)]
        assert snap_to_node(pts, 0.0, 0.0, snap_km=200.0) == 0

    def test_out_of_range(self):
        with pytest.raises(StationUnreachable, match="nearest is"):
            snap_to_node(self.PTS, 30.0, 30.0, snap_km=150.0)


class TestStationPaths:
    def chain_setup(self, n=6, value=5.0):
        cells = [(i, 0) for i in range(n)]
        values, mask = point_grids((10, 10), cells, value=value, background=0.0)
        pts = elevated_points(values, mask)
        g = build_aar_graph(pts, max_edge_km=250.0)
        return g, pts, values

    def test_single_path_chain_significance(self):
        g, pts, values = self.chain_setup()
        results, sid = station_path_significance(
            g, pts, values, origin_ids=[0], station=(5.0, 0.0), n_replicates=999, seed=3
        )
        assert sid == 5
        (res,) = results
        assert res.path.nodes == (0, 1, 2, 3, 4, 5)
        assert res.observed == 1.0
        # only 6 of 100 grid cells reach the threshold, so the null
        # essentially never rebuilds a fully elevated 6-node path
        assert res.p_value == pytest.approx(1 / 1000)
        assert res.significant

    def test_threshold_override_can_zero_the_score(self):
        g, pts, values = self.chain_setup(value=5.0)
        results, _ = station_path_significance(
            g, pts, values, origin_ids=[0], station=(5.0, 0.0),
            n_replicates=49, threshold=6.0,
        )
        (res,) = results
        assert res.observed == 0.0
        assert res.p_value == 1.0

    def test_station_in_unreached_component_yields_no_paths(self):
        # row-major point order interleaves the two columns, so the
        # column-0 chain is the even ids
        cells = [(i, 0) for i in range(4)] + [(i, 8) for i in range(4)]
        values, mask = point_grids((6, 10), cells, background=0.0)
        pts = elevated_points(values, mask)
        g = build_aar_graph(pts, max_edge_km=250.0)
        assert pts[0].cell == (0, 0) and pts[2].cell == (1, 0)
        results, sid = station_path_significance(
            g, pts, values, origin_ids=[0, 2], station=(3.0, 8.0), n_replicates=9
        )
        assert results == []
        assert pts[sid].cell == (3, 8)

    def test_origin_equal_to_station_is_dropped(self):
        g, pts, values = self.chain_setup()
        results, sid = station_path_significance(
            g, pts, values, origin_ids=[5], station=(5.0, 0.0), n_replicates=9
        )
        assert results == [] and sid == 5

    def test_origins_required(self):
        g, pts, values = self.chain_setup()
        with pytest.raises(ValueError):
            station_path_significance(g, pts, values, origin_ids=[], station=(5.0, 0.0))


class TestRunAar:
    def build_inputs(self):
        chain = [(i, 5) for i in range(21)]
        blob = [(44 + r, 30 + c) for r in range(3) for c in range(3)]
        vals = np.full((50, 50), 0.1)
        mask = np.zeros((50, 50))
        for r, c in chain:
            vals[r, c] = 10.0
            mask[r, c] = 1.0
        for r, c in blob:
            vals[r, c] = 2.0
            mask[r, c] = 1.0
        return grid_of(vals), grid_of(mask)

    def test_end_to_end(self):
        values, mask = self.build_inputs()
        report = run_aar(
            values,
            mask,
            origins=[(12, 5), (14.1, 5.2), (44.5, 30.5), (80.0, -100.0)],
            station=(20.2, 5.3),
            n_replicates=999,
            seed=1,
        )
        assert len(report.points) == 30
        assert [c.retained for c in report.components] == [True, False]
        assert report.threshold == 2.0
        assert report.points[report.station_id].cell == (20, 5)
        # blob origin falls outside the retained component; far origin
        # fails to snap at all
        assert [44.5, 30.5] in report.dropped_origins
        assert [80.0, -100.0] in report.dropped_origins
        assert len(report.results) == 2
        starts = {r.path.nodes[0] for r in report.results}
        assert {report.points[i].cell for i in starts} == {(12, 5), (14, 5)}
        for r in report.results:
            assert r.observed == 1.0
            assert r.path.nodes[-1] == report.station_id
            assert r.p_value == pytest.approx(0.001)
            assert r.significant and r.alpha == 0.005

    def test_all_origins_dropped_is_a_valid_outcome(self):
        values, mask = self.build_inputs()
        report = run_aar(values, mask, origins=[(44.5, 30.5)], station=(20.2, 5.3))
        assert report.results == []
        assert report.dropped_origins == [[44.5, 30.5]]
        assert report.points[report.station_id].cell == (20, 5)

    def test_deterministic_across_threads(self):
        values, mask = self.build_inputs()
        kw = dict(origins=[(12, 5)], station=(20.2, 5.3), n_replicates=199, seed=4)
        a = run_aar(values, mask, threads=1, **kw)
        b = run_aar(values, mask, threads=8, **kw)
        assert [r.p_value for r in a.results] == [r.p_value for r in b.results]
