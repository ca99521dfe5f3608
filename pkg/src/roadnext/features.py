"""Sector-wise directional POI aggregation.

Each node gets, per category, a 14-dimensional summary (5 circular statistics,
S=8 sector densities, 1 presence flag) over the POIs inside a circular
neighborhood of radius R, concatenated over the category list into the node
descriptor, plus a small geometric feature vector derived from the incident
edges.  A binary mask marks empty categories/sectors.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .graph import DEFAULT_CATEGORIES, RoadGraph, bearing

CIRC_DIMS = 5  # mu_d, var_d, m_c, m_s, r
GEO_DIM = 4

FEATURE_MAGIC = b"RNFT"
FEATURE_VERSION = 1


def descriptor_dim(n_sectors: int, n_categories: int) -> int:
    return (CIRC_DIMS + n_sectors + 1) * n_categories


def circular_stats(pois_in_radius):
    """Population statistics of (distance, angle) pairs.

    Returns (mu_d, var_d, m_c, m_s, r); all zero for empty input.
    """
    if len(pois_in_radius) == 0:
        return (0.0, 0.0, 0.0, 0.0, 0.0)
    d = np.array([p[0] for p in pois_in_radius], dtype=np.float64)
    th = np.array([p[1] for p in pois_in_radius], dtype=np.float64)
    mu_d = float(d.mean())
    var_d = float(((d - mu_d) ** 2).mean())
    m_c = float(np.cos(th).mean())
    m_s = float(np.sin(th).mean())
    r = math.sqrt(m_c * m_c + m_s * m_s)
    return (mu_d, var_d, m_c, m_s, r)


def sector_index(theta: float, n_sectors: int) -> int:
    """Bin index in [0, S) for theta in (-pi, pi]; bins are left-open,
    right-closed arcs starting at -pi."""
    width = 2.0 * math.pi / n_sectors
    # left-open right-closed: theta in (-pi + k*w, -pi + (k+1)*w]
    k = int(math.ceil((theta + math.pi) / width)) - 1
    return min(max(k, 0), n_sectors - 1)


def sector_densities(pois_in_radius, n_sectors: int, radius: float) -> np.ndarray:
    """POI count per angular sector divided by the sector area pi*R^2/S."""
    area = math.pi * radius * radius / n_sectors
    counts = np.zeros(n_sectors, dtype=np.float64)
    for _, theta in pois_in_radius:
        counts[sector_index(theta, n_sectors)] += 1.0
    return counts / area


@dataclass
class NodeDescriptor:
    node: int
    x: np.ndarray      # length (5+S+1)*|C|
    mask: np.ndarray   # same length, {0,1}
    geo: np.ndarray    # length 4


def node_geometry(graph: RoadGraph, node: int) -> np.ndarray:
    """[degree/8, cos/sin of circular-mean outgoing bearing, mean edge length/1km]."""
    nbrs = graph.neighbors(node)
    if not nbrs:
        return np.zeros(GEO_DIM, dtype=np.float64)
    p = graph.pos(node)
    angles = [bearing(p, graph.pos(v)) for v in nbrs]
    lengths = [float(np.hypot(*(graph.pos(v) - p))) for v in nbrs]
    mc = float(np.mean(np.cos(angles)))
    ms = float(np.mean(np.sin(angles)))
    norm = math.hypot(mc, ms)
    if norm > 1e-12:
        cos_mean, sin_mean = mc / norm, ms / norm
    else:
        cos_mean, sin_mean = 0.0, 0.0
    return np.array(
        [len(nbrs) / 8.0, cos_mean, sin_mean, float(np.mean(lengths)) / 1000.0],
        dtype=np.float64,
    )


def aggregate_node(node, pois, graph, radius=150.0, n_sectors=8,
                   n_categories=len(DEFAULT_CATEGORIES)) -> NodeDescriptor:
    """Build the descriptor for one node from all POIs within `radius`.

    `pois` may be the full POI list; radius filtering by true distance to the
    node happens here, so one POI can contribute to several nodes.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    p = graph.pos(node)
    per_cat = [[] for _ in range(n_categories)]
    for poi in pois:
        if poi.category >= n_categories:
            raise ValueError(f"unknown category index {poi.category}")
        dx, dy = poi.x - p[0], poi.y - p[1]
        d = math.hypot(dx, dy)
        if d <= radius:
            theta = math.atan2(dy, dx) if d > 0 else 0.0
            if theta == -math.pi:
                theta = math.pi
            per_cat[poi.category].append((d, theta))
    block = CIRC_DIMS + n_sectors + 1
    x = np.zeros(block * n_categories, dtype=np.float64)
    mask = np.zeros(block * n_categories, dtype=np.float64)
    for c in range(n_categories):
        entries = per_cat[c]
        base = c * block
        if not entries:
            continue
        x[base:base + CIRC_DIMS] = circular_stats(entries)
        mask[base:base + CIRC_DIMS] = 1.0
        dens = sector_densities(entries, n_sectors, radius)
        x[base + CIRC_DIMS:base + CIRC_DIMS + n_sectors] = dens
        mask[base + CIRC_DIMS:base + CIRC_DIMS + n_sectors] = (dens > 0).astype(np.float64)
        x[base + block - 1] = 1.0
        mask[base + block - 1] = 1.0
    return NodeDescriptor(node=int(node), x=x, mask=mask, geo=node_geometry(graph, node))


def build_descriptors(graph, pois, radius=150.0, n_sectors=8,
                      n_categories=len(DEFAULT_CATEGORIES), workers=1) -> dict:
    """Descriptors for every node, keyed by node id, in deterministic order."""
    ids = [int(n) for n in graph.node_ids]
    # prefilter with a POI kd-tree; aggregate_node re-checks true distance
    if pois:
        from scipy.spatial import cKDTree
        poi_tree = cKDTree(np.array([(p.x, p.y) for p in pois], dtype=np.float64))
        near = poi_tree.query_ball_point(graph.positions, r=radius + 1e-9)
        candidates = [[pois[j] for j in sorted(hits)] for hits in near]
    else:
        candidates = [[] for _ in ids]

    def one(args):
        n, cand = args
        return aggregate_node(n, cand, graph, radius, n_sectors, n_categories)

    work = list(zip(ids, candidates))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            descs = list(pool.map(one, work))
    else:
        descs = [one(w) for w in work]
    return {d.node: d for d in descs}


class Normalizer:
    """Z-score normalizer fitted once on training-node descriptors."""

    def __init__(self, mean, std, epsilon=1e-8):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.epsilon = epsilon

    @classmethod
    def fit(cls, descriptors, epsilon=1e-8):
        rows = np.array([d.x for d in descriptors], dtype=np.float64)
        if rows.shape[0] < 2:
            raise ValueError("normalizer fit requires at least 2 descriptors")
        return cls(rows.mean(axis=0), rows.std(axis=0), epsilon)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / np.maximum(self.std, self.epsilon)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(b"RNNM" + struct.pack("<II", 1, self.mean.size))
            fh.write(struct.pack("<d", self.epsilon))
            fh.write(self.mean.astype("<f8").tobytes())
            fh.write(self.std.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != b"RNNM":
                raise ValueError(f"{path}: bad normalizer magic {magic!r}")
            _, dim = struct.unpack("<II", fh.read(8))
            (eps,) = struct.unpack("<d", fh.read(8))
            mean = np.frombuffer(fh.read(8 * dim), dtype="<f8")
            std = np.frombuffer(fh.read(8 * dim), dtype="<f8")
        return cls(mean, std, eps)


def save_descriptors(descriptors: dict, n_sectors: int, n_categories: int, path):
    """Binary feature cache: header then per-node (id, x, packed mask, geo)."""
    dim = descriptor_dim(n_sectors, n_categories)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIII", FEATURE_VERSION, n_sectors, n_categories,
                             len(descriptors)))
        for nid in sorted(descriptors):
            d = descriptors[nid]
            fh.write(struct.pack("<q", nid))
            fh.write(d.x.astype("<f4").tobytes())
            fh.write(np.packbits(d.mask.astype(np.uint8)).tobytes())
            fh.write(d.geo.astype("<f4").tobytes())
    return dim


def load_descriptors(path):
    """Returns (descriptors dict, n_sectors, n_categories)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: bad feature cache magic {magic!r}")
        version, n_sectors, n_categories, count = struct.unpack("<IIII", fh.read(16))
        if version != FEATURE_VERSION:
            raise ValueError(f"{path}: unsupported feature cache version {version}")
        dim = descriptor_dim(n_sectors, n_categories)
        mask_bytes = (dim + 7) // 8
        out = {}
        for _ in range(count):
            (nid,) = struct.unpack("<q", fh.read(8))
            x = np.frombuffer(fh.read(4 * dim), dtype="<f4").astype(np.float64)
            mask = np.unpackbits(
                np.frombuffer(fh.read(mask_bytes), dtype=np.uint8))[:dim].astype(np.float64)
            geo = np.frombuffer(fh.read(4 * GEO_DIM), dtype="<f4").astype(np.float64)
            out[nid] = NodeDescriptor(node=nid, x=x, mask=mask, geo=geo)
    return out, n_sectors, n_categories


def coverage_report(graph: RoadGraph, pois, radius_grid):
    """Coverage analytics per radius: fraction of POIs near >=1 node, near >=2
    nodes, mean covering-node count, and normalized marginal coverage gain.

    Returns a list of dicts with keys R, coverage, duplicate, avg_nodes,
    marginal_gain.
    """
    if not pois:
        raise ValueError("empty POI set")
    radius_grid = list(radius_grid)
    if radius_grid != sorted(radius_grid):
        raise ValueError("radius grid must be ascending")
    pts = np.array([(p.x, p.y) for p in pois], dtype=np.float64)
    tree = graph.kdtree()
    rows = []
    coverages = []
    for r in radius_grid:
        counts = np.array([len(hits) for hits in tree.query_ball_point(pts, r=r)])
        covered = counts >= 1
        coverage = float(covered.mean())
        duplicate = float((counts >= 2).mean())
        avg_nodes = float(counts[covered].mean()) if covered.any() else 0.0
        coverages.append(coverage)
        rows.append({"R": r, "coverage": coverage, "duplicate": duplicate,
                     "avg_nodes": avg_nodes, "marginal_gain": 0.0})
    cov_max = max(coverages)
    for i in range(1, len(rows)):
        denom = cov_max - coverages[i - 1]
        if denom > 1e-12:
            rows[i]["marginal_gain"] = (coverages[i] - coverages[i - 1]) / denom
    return rows
