"""Road-POI graph data model: file ingestion, planar projection, bearings,
and nearest-node POI assignment.

Coordinates are kept in a local equirectangular plane (meters east/north of a
reference origin) so that all downstream geometry agrees bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

# Fixed projection constants (meters per degree); shared by every component.
M_PER_DEG_LAT = 110540.0
M_PER_DEG_LON = 111320.0

DEFAULT_CATEGORIES = (
    "food", "shop", "education", "health", "transport", "leisure",
    "finance", "tourism", "office", "public_service", "residential", "other",
)


class GraphFormatError(ValueError):
    """Raised for malformed graph/POI input files."""


@dataclass(frozen=True)
class Poi:
    id: int
    category: int
    x: float
    y: float


@dataclass
class RoadGraph:
    """Undirected intersection graph in planar meters.

    Adjacency lists are sorted ascending by node id so iteration order is
    deterministic everywhere.
    """

    nodes: dict            # node id -> (x, y)
    adjacency: dict        # node id -> sorted list of neighbor ids
    ref_origin: tuple      # (lat, lon) of the projection center
    edges: set = field(default_factory=set)  # frozenset-free: {(min_id, max_id)}

    def __post_init__(self):
        if not self.edges:
            self.edges = {
                (min(u, v), max(u, v))
                for u, nbrs in self.adjacency.items()
                for v in nbrs
            }
        self._pos_array = None
        self._node_ids = None
        self._kdtree = None

    @property
    def node_ids(self) -> np.ndarray:
        if self._node_ids is None:
            self._node_ids = np.array(sorted(self.nodes), dtype=np.int64)
        return self._node_ids

    @property
    def positions(self) -> np.ndarray:
        """(N, 2) array of planar coordinates in node_ids order."""
        if self._pos_array is None:
            self._pos_array = np.array([self.nodes[i] for i in self.node_ids], dtype=np.float64)
        return self._pos_array

    def kdtree(self) -> cKDTree:
        if self._kdtree is None:
            self._kdtree = cKDTree(self.positions)
        return self._kdtree

    def pos(self, node_id: int) -> np.ndarray:
        return np.asarray(self.nodes[node_id], dtype=np.float64)

    def degree(self, node_id: int) -> int:
        return len(self.adjacency[node_id])

    def neighbors(self, node_id: int) -> list:
        return self.adjacency[node_id]

    def edge_array(self) -> np.ndarray:
        """(E, 2) array of node-id pairs, sorted for determinism."""
        return np.array(sorted(self.edges), dtype=np.int64)

    def nearest_node(self, x: float, y: float):
        """(node_id, distance) of the nearest intersection."""
        dist, idx = self.kdtree().query([x, y])
        return int(self.node_ids[idx]), float(dist)

    def validate(self):
        for u, nbrs in self.adjacency.items():
            if list(nbrs) != sorted(nbrs):
                raise GraphFormatError(f"adjacency of node {u} not sorted")
            for v in nbrs:
                if v == u:
                    raise GraphFormatError(f"self-loop at node {u}")
                if v not in self.adjacency:
                    raise GraphFormatError(f"dangling endpoint {v} in edge ({u},{v})")
                if u not in self.adjacency[v]:
                    raise GraphFormatError(f"asymmetric edge ({u},{v})")


def project_coords(lat: float, lon: float, origin: tuple) -> tuple:
    """Local equirectangular projection to (x east, y north) meters."""
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise ValueError(f"coordinates out of range: ({lat}, {lon})")
    lat0, lon0 = origin
    x = (lon - lon0) * math.cos(math.radians(lat0)) * M_PER_DEG_LON
    y = (lat - lat0) * M_PER_DEG_LAT
    return (x, y)


def unproject_coords(x: float, y: float, origin: tuple) -> tuple:
    """Inverse of project_coords (lat, lon)."""
    lat0, lon0 = origin
    lat = y / M_PER_DEG_LAT + lat0
    lon = x / (math.cos(math.radians(lat0)) * M_PER_DEG_LON) + lon0
    return (lat, lon)


def bearing(p_from, p_to) -> float:
    """Planar bearing, counter-clockwise from east, in (-pi, pi]."""
    dx = p_to[0] - p_from[0]
    dy = p_to[1] - p_from[1]
    if dx == 0.0 and dy == 0.0:
        raise ValueError("undefined bearing: zero displacement")
    theta = math.atan2(dy, dx)
    if theta == -math.pi:
        theta = math.pi
    return theta


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    theta = (theta + math.pi) % (2.0 * math.pi) - math.pi
    if theta == -math.pi:
        theta = math.pi
    return theta


def load_graph(graph_file) -> RoadGraph:
    """Load and validate a Graph JSON file, projecting lat/lon to meters.

    Format: {"origin": [lat, lon], "nodes": [{"id", "lat", "lon"}, ...],
    "edges": [[id, id], ...]}.
    """
    with open(graph_file) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphFormatError(f"{graph_file}: invalid JSON: {exc}") from exc
    for key in ("origin", "nodes", "edges"):
        if key not in doc:
            raise GraphFormatError(f"{graph_file}: missing key {key!r}")
    origin = (float(doc["origin"][0]), float(doc["origin"][1]))
    nodes = {}
    for rec_no, rec in enumerate(doc["nodes"]):
        try:
            nid = int(rec["id"])
            lat, lon = float(rec["lat"]), float(rec["lon"])
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(f"{graph_file}: node record {rec_no}: {exc}") from exc
        if nid in nodes:
            raise GraphFormatError(f"{graph_file}: duplicate node id {nid} (record {rec_no})")
        nodes[nid] = project_coords(lat, lon, origin)
    adjacency = {nid: [] for nid in nodes}
    seen = set()
    for rec_no, pair in enumerate(doc["edges"]):
        u, v = int(pair[0]), int(pair[1])
        if u == v:
            raise GraphFormatError(f"{graph_file}: edge record {rec_no}: self-loop at {u}")
        for end in (u, v):
            if end not in nodes:
                raise GraphFormatError(
                    f"{graph_file}: edge record {rec_no}: dangling endpoint {end}")
        key = (min(u, v), max(u, v))
        if key in seen:
            continue
        seen.add(key)
        adjacency[u].append(v)
        adjacency[v].append(u)
    for nid in adjacency:
        adjacency[nid].sort()
    graph = RoadGraph(nodes=nodes, adjacency=adjacency, ref_origin=origin)
    graph.validate()
    return graph


def save_graph(graph: RoadGraph, path):
    """Write the Graph JSON format (inverse of load_graph)."""
    doc = {
        "origin": list(graph.ref_origin),
        "nodes": [
            {"id": int(nid), "lat": lat, "lon": lon}
            for nid in graph.node_ids
            for lat, lon in [unproject_coords(*graph.nodes[int(nid)], graph.ref_origin)]
        ],
        "edges": [[int(u), int(v)] for u, v in sorted(graph.edges)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_pois(poi_file, origin, categories=DEFAULT_CATEGORIES) -> list:
    """Load the POI CSV (header id,category,lat,lon) into planar Poi records."""
    cat_index = {name: i for i, name in enumerate(categories)}
    pois = []
    with open(poi_file, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["id", "category", "lat", "lon"]
        if reader.fieldnames != expected:
            raise GraphFormatError(
                f"{poi_file}: bad header {reader.fieldnames}, expected {expected}")
        for line_no, row in enumerate(reader, start=2):
            if row["category"] not in cat_index:
                raise GraphFormatError(
                    f"{poi_file}:{line_no}: unknown category {row['category']!r}")
            x, y = project_coords(float(row["lat"]), float(row["lon"]), origin)
            pois.append(Poi(id=int(row["id"]), category=cat_index[row["category"]], x=x, y=y))
    return pois


def save_pois(pois, origin, path, categories=DEFAULT_CATEGORIES):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "category", "lat", "lon"])
        for poi in pois:
            lat, lon = unproject_coords(float(poi.x), float(poi.y), origin)
            writer.writerow([poi.id, categories[poi.category], repr(lat), repr(lon)])


def assign_pois(graph: RoadGraph, pois) -> dict:
    """Assign each POI to its nearest node (ties -> smallest node id).

    Returns {node_id: [Poi, ...]} covering every node (possibly empty lists).
    """
    if not graph.nodes:
        raise ValueError("empty graph")
    assigned = {int(nid): [] for nid in graph.node_ids}
    if not pois:
        return assigned
    pts = np.array([(p.x, p.y) for p in pois], dtype=np.float64)
    k = min(2, len(graph.nodes))
    dists, idxs = graph.kdtree().query(pts, k=k)
    dists = np.atleast_2d(dists.reshape(len(pois), k))
    idxs = np.atleast_2d(idxs.reshape(len(pois), k))
    node_ids = graph.node_ids
    tree = graph.kdtree()
    for poi, d, idx in zip(pois, dists, idxs):
        best_id = int(node_ids[idx[0]])
        # kdtree tie-breaking is unspecified; re-resolve exact ties by smallest id
        if k == 2 and d[1] - d[0] <= 1e-9:
            tied = tree.query_ball_point([poi.x, poi.y], r=d[0] + 1e-9)
            best_id = int(node_ids[tied].min())
        assigned[best_id].append(poi)
    return assigned
