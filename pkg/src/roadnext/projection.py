"""Topology-respecting GPS-to-graph projection.

Raw GPS streams become node sequences in four steps: snap each sample to its
nearest road edge, detect intersection visits with a buffered hysteresis rule,
prune out-and-back jitter twigs, and keep consecutive repeats of the same node
as dwell cues.  Node sequences are then cut into fixed-size windows per spatial
scale and turned into one-hop prediction examples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .graph import RoadGraph, bearing

# node-count windows and [min, max] ranges per spatial scale
SCALE_RANGES = {
    "short": (7, 20),
    "mid": (20, 40),
    "long": (40, 100),
    "extended": (100, 256),
}
DEFAULT_WINDOWS = {"short": 14, "mid": 30, "long": 70, "extended": 128}

DEFAULT_SEARCH_RADIUS = 50.0
DEFAULT_BUFFER_CAP = 30.0
DEFAULT_BUFFER_FRAC = 0.4
DEFAULT_MARGIN = 5.0
DEFAULT_VMAX = 50.0
SNAP_TIE_TOL = 2.0


@dataclass
class GpsStream:
    user: str
    stream_id: int
    t: np.ndarray    # seconds, strictly increasing
    xy: np.ndarray   # (n, 2) planar meters

    def __len__(self):
        return len(self.t)


@dataclass
class NodeSequence:
    nodes: list
    source: tuple = ("", 0)  # (user, stream_id)


@dataclass
class Segment:
    nodes: list
    scale: str
    source: tuple = ("", 0)
    offset: int = 0


@dataclass
class Example:
    context: list            # node ids v_1..v_T, repeats preserved
    candidates: list         # sorted N(v_T)
    label: int
    step_geo: np.ndarray     # (T, 5): dx, dy, length, cos, sin; row 0 zeros
    cand_geo: np.ndarray     # (C, 5): dx, dy, dist, cos, sin from v_T
    scale: str = "short"
    source: tuple = field(default_factory=lambda: ("", 0))


def load_trajectories(path, origin) -> list:
    """Read the trajectory CSV (user,t,lat,lon sorted by (user, t)) into
    per-user planar streams.  Unsorted input is rejected."""
    from .graph import project_coords
    streams = []
    cur_user, ts, xys = None, [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["user", "t", "lat", "lon"]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: bad header {reader.fieldnames}, expected {expected}")
        prev_key = None
        for line_no, row in enumerate(reader, start=2):
            user, t = row["user"], float(row["t"])
            key = (user, t)
            if prev_key is not None and key <= prev_key:
                raise ValueError(f"{path}:{line_no}: rows not sorted by (user, t)")
            prev_key = key
            if user != cur_user:
                if cur_user is not None:
                    streams.append(GpsStream(cur_user, len(streams),
                                             np.array(ts), np.array(xys)))
                cur_user, ts, xys = user, [], []
            ts.append(t)
            xys.append(project_coords(float(row["lat"]), float(row["lon"]), origin))
    if cur_user is not None:
        streams.append(GpsStream(cur_user, len(streams), np.array(ts), np.array(xys)))
    return streams


def save_trajectories(streams, origin, path):
    from .graph import unproject_coords
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "t", "lat", "lon"])
        for s in streams:
            for t, (x, y) in zip(s.t, s.xy):
                lat, lon = unproject_coords(float(x), float(y), origin)
                writer.writerow([s.user, repr(float(t)), repr(lat), repr(lon)])


# -- edge snapping -------------------------------------------------------------


class SegmentIndex:
    """Nearest-road-edge queries over all graph edges."""

    def __init__(self, graph: RoadGraph):
        self.graph = graph
        edges = graph.edge_array()
        self.edges = edges
        a = np.array([graph.nodes[int(u)] for u in edges[:, 0]])
        b = np.array([graph.nodes[int(v)] for v in edges[:, 1]])
        self.a, self.b = a, b
        self.ab = b - a
        self.len2 = np.maximum((self.ab ** 2).sum(axis=1), 1e-12)
        self.lengths = np.sqrt(self.len2)
        self.mid = 0.5 * (a + b)
        self.half = 0.5 * self.lengths
        self.max_half = float(self.half.max()) if len(edges) else 0.0
        self.tree = cKDTree(self.mid) if len(edges) else None

    def _candidates(self, point, radius):
        if self.tree is None:
            return np.array([], dtype=int)
        hits = self.tree.query_ball_point(point, r=radius + self.max_half)
        return np.array(sorted(hits), dtype=int)

    def snap(self, point, search_radius, velocity=None):
        """Nearest edge within `search_radius`; ties within 2 m broken by
        heading consistency against `velocity`.

        Returns (edge (u, v), offset along edge, perpendicular distance) or
        None when no edge is close enough.
        """
        cand = self._candidates(point, search_radius)
        if len(cand) == 0:
            return None
        p = np.asarray(point, dtype=np.float64)
        rel = p - self.a[cand]
        t = np.clip((rel * self.ab[cand]).sum(axis=1) / self.len2[cand], 0.0, 1.0)
        closest = self.a[cand] + t[:, None] * self.ab[cand]
        dist = np.sqrt(((p - closest) ** 2).sum(axis=1))
        order = np.argsort(dist, kind="stable")
        best = order[0]
        if dist[best] > search_radius:
            return None
        tied = order[dist[order] <= dist[best] + SNAP_TIE_TOL]
        if len(tied) > 1 and velocity is not None and np.linalg.norm(velocity) > 1e-9:
            vhat = velocity / np.linalg.norm(velocity)
            align = np.abs((self.ab[cand[tied]] / self.lengths[cand[tied], None]) @ vhat)
            best = tied[int(np.argmax(align))]
        i = cand[best]
        edge = (int(self.edges[i, 0]), int(self.edges[i, 1]))
        return edge, float(t[best] * self.lengths[i]), float(dist[best])


def snap_to_edge(point, graph, search_radius=DEFAULT_SEARCH_RADIUS, velocity=None,
                 index: SegmentIndex | None = None):
    if search_radius <= 0:
        raise ValueError("search_radius must be positive")
    index = index or SegmentIndex(graph)
    return index.snap(point, search_radius, velocity)


def snap_stream(stream: GpsStream, graph, search_radius=DEFAULT_SEARCH_RADIUS,
                index: SegmentIndex | None = None):
    """Snap every sample; returns a list of snapped planar points (or None
    where no edge is within range)."""
    index = index or SegmentIndex(graph)
    n = len(stream)
    out = []
    for i in range(n):
        p = stream.xy[i]
        if i + 1 < n:
            vel = stream.xy[i + 1] - p
        elif i > 0:
            vel = p - stream.xy[i - 1]
        else:
            vel = None
        hit = index.snap(p, search_radius, vel)
        if hit is None:
            out.append(None)
            continue
        (u, v), offset, _ = hit
        a = graph.pos(u)
        b = graph.pos(v)
        length = float(np.hypot(*(b - a)))
        out.append(a + (b - a) * (offset / max(length, 1e-12)))
    return out


# -- intersection hit detection ------------------------------------------------


def node_buffers(graph: RoadGraph, cap=DEFAULT_BUFFER_CAP, frac=DEFAULT_BUFFER_FRAC):
    """Per-node detection radius: min(cap, frac * shortest incident edge)."""
    out = {}
    for nid in graph.node_ids:
        nid = int(nid)
        p = graph.pos(nid)
        nbrs = graph.neighbors(nid)
        if nbrs:
            shortest = min(float(np.hypot(*(graph.pos(v) - p))) for v in nbrs)
            out[nid] = min(cap, frac * shortest)
        else:
            out[nid] = cap
    return out


def detect_hits(snapped_points, graph: RoadGraph, buffers=None,
                margin=DEFAULT_MARGIN, source=("", 0)) -> NodeSequence:
    """Register node visits from snapped positions with hysteresis.

    A node is appended when the position enters its buffer and it is the
    nearest node.  Once node v is current, a different node u only takes over
    if dist(u) < dist(v) - margin; v is released (so a later re-entry appends
    a repeat) once dist(v) > buffer(v) + margin.
    """
    if buffers is None:
        buffers = node_buffers(graph)
    seq = []
    current = None
    for pt in snapped_points:
        if pt is None:
            continue
        nearest, dist = graph.nearest_node(pt[0], pt[1])
        if current is None:
            if dist <= buffers[nearest]:
                current = nearest
                seq.append(nearest)
            continue
        d_cur = float(np.hypot(*(graph.pos(current) - pt)))
        if nearest != current and dist <= buffers[nearest] and dist < d_cur - margin:
            current = nearest
            seq.append(nearest)
        elif d_cur > buffers[current] + margin:
            current = None
    return NodeSequence(nodes=seq, source=source)


# -- twig pruning --------------------------------------------------------------


def _runs(nodes):
    runs = []
    for v in nodes:
        if runs and runs[-1][0] == v:
            runs[-1][1] += 1
        else:
            runs.append([v, 1])
    return runs


def prune_twigs(seq: NodeSequence) -> NodeSequence:
    """Remove out-and-back detours: on the distinct-node view, v,a,v -> v and
    v,a,b,v -> v, repeated to fixpoint.  Repeat runs of surviving nodes are
    preserved (the returning occurrence is part of the pruned detour)."""
    runs = _runs(seq.nodes)
    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(runs):
            if i + 2 < len(runs) and runs[i][0] == runs[i + 2][0]:
                del runs[i + 1:i + 3]
                changed = True
                continue
            if i + 3 < len(runs) and runs[i][0] == runs[i + 3][0]:
                del runs[i + 1:i + 4]
                changed = True
                continue
            i += 1
        # merging may create adjacent equal runs; renormalize
        merged = []
        for node, count in runs:
            if merged and merged[-1][0] == node:
                merged[-1][1] += count
                changed = True
            else:
                merged.append([node, count])
        runs = merged
    nodes = []
    for node, count in runs:
        nodes.extend([node] * count)
    return NodeSequence(nodes=nodes, source=seq.source)


# -- quality filtering ---------------------------------------------------------


def quality_filter(stream: GpsStream, v_max=DEFAULT_VMAX) -> list:
    """Drop isolated speed outliers, then split where a gap still implies an
    implausible speed.  Returns a list of streams."""
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    n = len(stream)
    if n == 0:
        return []
    speed = np.zeros(n - 1) if n > 1 else np.zeros(0)
    for i in range(n - 1):
        dt = max(stream.t[i + 1] - stream.t[i], 1e-9)
        speed[i] = np.hypot(*(stream.xy[i + 1] - stream.xy[i])) / dt
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        fast_prev = i > 0 and speed[i - 1] > v_max
        fast_next = i < n - 1 and speed[i] > v_max
        has_prev = i > 0
        has_next = i < n - 1
        # an isolated outlier is implausibly fast w.r.t. every temporal neighbor
        if ((not has_prev or fast_prev) and (not has_next or fast_next)
                and (fast_prev or fast_next)):
            keep[i] = False
    t = stream.t[keep]
    xy = stream.xy[keep]
    # split at remaining implausible gaps
    pieces = []
    start = 0
    for i in range(len(t) - 1):
        dt = max(t[i + 1] - t[i], 1e-9)
        if np.hypot(*(xy[i + 1] - xy[i])) / dt > v_max:
            pieces.append((start, i + 1))
            start = i + 1
    pieces.append((start, len(t)))
    out = []
    for k, (lo, hi) in enumerate(pieces):
        if hi > lo:
            out.append(GpsStream(stream.user, stream.stream_id * 1000 + k,
                                 t[lo:hi].copy(), xy[lo:hi].copy()))
    return out


# -- segmentation and example construction -------------------------------------


def segment_stream(seq: NodeSequence, windows=None) -> list:
    """Cut the sequence into non-overlapping fixed-size windows per scale,
    dropping a trailing remainder shorter than the scale's minimum."""
    windows = windows or DEFAULT_WINDOWS
    segments = []
    for scale in ("short", "mid", "long", "extended"):
        if scale not in windows:
            continue
        size = windows[scale]
        lo, hi = SCALE_RANGES[scale]
        if not (lo <= size <= hi):
            raise ValueError(f"window {size} outside {scale} range [{lo}, {hi}]")
        n = len(seq.nodes)
        for start in range(0, n - lo + 1, size):
            chunk = seq.nodes[start:start + size]
            if len(chunk) < lo:
                break
            segments.append(Segment(nodes=list(chunk), scale=scale,
                                    source=seq.source, offset=start))
    return segments


def build_example(segment: Segment, graph: RoadGraph) -> Example:
    """Final-step prediction example: label is the last node, context is
    everything up to the last distinct transition, candidates are N(v_T)."""
    runs = _runs(segment.nodes)
    if len(runs) < 2:
        raise ValueError("segment has fewer than two distinct nodes")
    label = runs[-1][0]
    context_len = len(segment.nodes) - runs[-1][1]
    context = list(segment.nodes[:context_len])
    v_t = context[-1]
    candidates = sorted(graph.neighbors(v_t))
    if label not in candidates:
        # noisy hit detection can jump between non-adjacent nodes; such a
        # segment has no valid final-step target and is skipped upstream
        raise ValueError(f"label {label} not adjacent to {v_t}")
    step_geo = np.zeros((len(context), 5), dtype=np.float64)
    for t in range(1, len(context)):
        prev, cur = context[t - 1], context[t]
        if prev == cur:
            continue
        d = graph.pos(cur) - graph.pos(prev)
        length = float(np.hypot(*d))
        th = bearing(graph.pos(prev), graph.pos(cur))
        step_geo[t] = (d[0], d[1], length, math.cos(th), math.sin(th))
    cand_geo = np.zeros((len(candidates), 5), dtype=np.float64)
    for j, u in enumerate(candidates):
        d = graph.pos(u) - graph.pos(v_t)
        dist = float(np.hypot(*d))
        th = bearing(graph.pos(v_t), graph.pos(u))
        cand_geo[j] = (d[0], d[1], dist, math.cos(th), math.sin(th))
    return Example(context=context, candidates=candidates, label=int(label),
                   step_geo=step_geo, cand_geo=cand_geo, scale=segment.scale,
                   source=segment.source)


def project_pipeline(streams, graph, search_radius=DEFAULT_SEARCH_RADIUS,
                     buffer_cap=DEFAULT_BUFFER_CAP, buffer_frac=DEFAULT_BUFFER_FRAC,
                     margin=DEFAULT_MARGIN, v_max=DEFAULT_VMAX, windows=None):
    """Full projection: quality filter -> snap -> hit detection -> twig
    pruning.  Returns node sequences ordered by (user, stream)."""
    index = SegmentIndex(graph)
    buffers = node_buffers(graph, cap=buffer_cap, frac=buffer_frac)
    sequences = []
    for stream in streams:
        for piece in quality_filter(stream, v_max=v_max):
            snapped = snap_stream(piece, graph, search_radius, index=index)
            seq = detect_hits(snapped, graph, buffers=buffers, margin=margin,
                              source=(piece.user, piece.stream_id))
            seq = prune_twigs(seq)
            if len(seq.nodes) >= 2:
                sequences.append(seq)
    return sequences


def examples_from_sequences(sequences, graph, windows=None) -> list:
    examples = []
    for seq in sequences:
        for segment in segment_stream(seq, windows):
            try:
                examples.append(build_example(segment, graph))
            except ValueError:
                continue
    return examples


def save_segments(segments, path):
    """Line-oriented segment cache: scale<TAB>id,id,..."""
    with open(path, "w") as fh:
        for seg in segments:
            fh.write(f"{seg.scale}\t{','.join(str(n) for n in seg.nodes)}\n")


def load_segments(path) -> list:
    segments = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                scale, ids = line.split("\t")
                nodes = [int(s) for s in ids.split(",")]
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: bad segment line") from exc
            segments.append(Segment(nodes=nodes, scale=scale))
    return segments
