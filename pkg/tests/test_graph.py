"""Graph ingestion, coordinate projection, bearing math, POI assignment."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadnext import graph as gr
from roadnext.graph import (DEFAULT_CATEGORIES, GraphFormatError, Poi,
                            RoadGraph, assign_pois, bearing, load_graph,
                            load_pois, project_coords, save_graph, save_pois,
                            unproject_coords, wrap_angle)


def square_graph(edge=100.0):
    nodes = {0: (0.0, 0.0), 1: (edge, 0.0), 2: (edge, edge), 3: (0.0, edge)}
    adjacency = {0: [1, 3], 1: [0, 2], 2: [1, 3], 3: [0, 2]}
    return RoadGraph(nodes=nodes, adjacency=adjacency, ref_origin=(40.0, 116.0))


class TestCoordinateProjection:
    def test_round_trip(self):
        origin = (39.9, 116.4)
        lat, lon = 39.95, 116.45
        x, y = project_coords(lat, lon, origin)
        back = unproject_coords(x, y, origin)
        assert back == pytest.approx((lat, lon), abs=1e-12)

    def test_origin_maps_to_zero(self):
        assert project_coords(40.0, 116.0, (40.0, 116.0)) == (0.0, 0.0)

    def test_one_degree_lat_scale(self):
        x, y = project_coords(41.0, 116.0, (40.0, 116.0))
        assert y == pytest.approx(110540.0)
        assert x == 0.0

    @given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
    def test_injective_on_window(self, dlat, dlon):
        origin = (40.0, 116.0)
        x, y = project_coords(40.0 + dlat, 116.0 + dlon, origin)
        lat, lon = unproject_coords(x, y, origin)
        assert (lat, lon) == pytest.approx((40.0 + dlat, 116.0 + dlon), abs=1e-9)


class TestBearing:
    def test_east_is_zero(self):
        assert bearing((0, 0), (5, 0)) == 0.0

    def test_north_is_half_pi(self):
        assert bearing((0, 0), (0, 5)) == pytest.approx(math.pi / 2)

    def test_zero_displacement_raises(self):
        with pytest.raises(ValueError):
            bearing((1.0, 2.0), (1.0, 2.0))

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_range(self, dx, dy):
        if abs(dx) < 1e-9 and abs(dy) < 1e-9:
            return
        theta = bearing((0, 0), (dx, dy))
        assert -math.pi < theta <= math.pi

    @given(st.floats(-20, 20))
    def test_wrap_angle_idempotent_and_in_range(self, t):
        w = wrap_angle(t)
        assert -math.pi < w <= math.pi
        assert wrap_angle(w) == pytest.approx(w)


class TestRoadGraph:
    def test_validate_ok(self):
        square_graph().validate()

    def test_adjacency_symmetry_enforced(self):
        g = square_graph()
        g.adjacency[0] = [1]  # drop 0-3 on one side only
        with pytest.raises(GraphFormatError):
            g.validate()

    def test_unknown_neighbor_rejected(self):
        g = square_graph()
        g.adjacency[0] = [1, 3, 99]
        with pytest.raises(GraphFormatError):
            g.validate()

    def test_self_loop_rejected(self):
        g = square_graph()
        g.adjacency[0] = [0, 1, 3]
        with pytest.raises(GraphFormatError):
            g.validate()

    def test_neighbors_sorted(self):
        g = square_graph()
        for nid in g.nodes:
            nbrs = g.neighbors(nid)
            assert nbrs == sorted(nbrs)

    def test_degree(self):
        g = square_graph()
        assert all(g.degree(n) == 2 for n in g.nodes)


class TestGraphIO:
    def test_round_trip(self, tmp_path):
        g = square_graph()
        path = tmp_path / "g.json"
        save_graph(g, path)
        g2 = load_graph(path)
        assert g2.nodes.keys() == g.nodes.keys()
        for nid in g.nodes:
            assert g2.pos(nid) == pytest.approx(g.pos(nid), abs=1e-6)
            assert g2.neighbors(nid) == g.neighbors(nid)
        assert g2.ref_origin == g.ref_origin

    def test_save_is_deterministic(self, tmp_path):
        g = square_graph()
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_graph(g, p1)
        save_graph(g, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises((GraphFormatError, json.JSONDecodeError, ValueError)):
            load_graph(path)

    def test_missing_fields_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"nodes": []}))
        with pytest.raises(GraphFormatError):
            load_graph(path)


class TestPoiIO:
    def test_round_trip(self, tmp_path):
        g = square_graph()
        pois = [Poi(id=0, category=1, x=10.0, y=20.0),
                Poi(id=1, category=11, x=50.0, y=60.0)]
        path = tmp_path / "pois.csv"
        save_pois(pois, g.ref_origin, path)
        got = load_pois(path, g.ref_origin)
        assert len(got) == 2
        for a, b in zip(got, pois):
            assert a.id == b.id and a.category == b.category
            assert (a.x, a.y) == pytest.approx((b.x, b.y), abs=1e-6)

    def test_unknown_category_rejected(self, tmp_path):
        path = tmp_path / "pois.csv"
        path.write_text("id,category,lat,lon\n0,notacategory,40.0,116.0\n")
        with pytest.raises(ValueError):
            load_pois(path, (40.0, 116.0))

    def test_twelve_default_categories(self):
        assert len(DEFAULT_CATEGORIES) == 12
        assert len(set(DEFAULT_CATEGORIES)) == 12


class TestAssignPois:
    def brute_force(self, graph, pois):
        """Independent oracle: exhaustive nearest-node scan, ties -> min id."""
        out = {}
        for p in pois:
            best = min(graph.nodes,
                       key=lambda n: (float(np.hypot(*(graph.pos(n) - np.array([p.x, p.y])))), n))
            out.setdefault(best, []).append(p.id)
        return out

    def test_matches_bruteforce_random(self):
        rng = np.random.default_rng(42)
        g = square_graph()
        pois = [Poi(id=i, category=int(rng.integers(12)),
                    x=float(rng.uniform(-50, 150)), y=float(rng.uniform(-50, 150)))
                for i in range(200)]
        got = assign_pois(g, pois)
        want = self.brute_force(g, pois)
        got_ids = {n: sorted(p.id for p in ps) for n, ps in got.items() if ps}
        assert got_ids == {n: sorted(ids) for n, ids in want.items()}

    def test_every_poi_assigned_once(self):
        rng = np.random.default_rng(7)
        g = square_graph()
        pois = [Poi(id=i, category=0, x=float(rng.uniform(0, 100)),
                    y=float(rng.uniform(0, 100))) for i in range(50)]
        got = assign_pois(g, pois)
        all_ids = [p.id for ps in got.values() for p in ps]
        assert sorted(all_ids) == list(range(50))

    def test_exact_tie_goes_to_smallest_id(self):
        g = square_graph()
        # midpoint of nodes 0 and 1 -> equidistant, must go to node 0
        got = assign_pois(g, [Poi(id=0, category=0, x=50.0, y=0.0)])
        assert [p.id for p in got.get(0, [])] == [0]
