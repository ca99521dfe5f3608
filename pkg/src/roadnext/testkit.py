"""Synthetic grid city and trajectory simulator with retained ground truth.

The grid keeps every candidate set at degree <= 4, so chance-level accuracy is
known exactly, and the walker policy's transition distribution is available in
closed form, which gives a Bayes-optimal accuracy ceiling for learnability
checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .graph import DEFAULT_CATEGORIES, Poi, RoadGraph, bearing
from .projection import GpsStream

DEFAULT_ORIGIN = (40.0, 116.0)


@dataclass
class CitySpec:
    rows: int = 20
    cols: int = 20
    edge_length: float = 200.0
    pois_per_category: float = 30.0   # Poisson mean per category
    hotspot: tuple | None = None      # (x, y, sigma) Gaussian placement center
    hotspot_fraction: float = 0.0     # fraction of POIs drawn near the hotspot
    seed: int = 0


@dataclass
class WalkerPolicy:
    persistence: float = 0.8          # extra probability mass on going straight
    poi_weight: float = 0.0           # attraction toward POI-dense candidates
    step_period: float = 5.0          # seconds between GPS samples
    speed: float = 5.0                # m/s along edges
    noise: float = 0.0                # GPS noise sigma, meters
    attraction_radius: float = 150.0  # POI count radius for the attraction term
    allow_backtrack: bool = False


def gen_city(spec: CitySpec):
    """Grid road graph (rows x cols nodes, all edges `edge_length` meters)
    plus POIs drawn per spec.  Deterministic given spec.seed."""
    n, m = spec.rows, spec.cols
    if n < 2 or m < 2:
        raise ValueError("grid dims must be >= 2")
    nodes = {}
    adjacency = {}
    for i in range(n):
        for j in range(m):
            nid = i * m + j
            nodes[nid] = (j * spec.edge_length, i * spec.edge_length)
            adjacency[nid] = []
    for i in range(n):
        for j in range(m):
            nid = i * m + j
            if j + 1 < m:
                adjacency[nid].append(nid + 1)
                adjacency[nid + 1].append(nid)
            if i + 1 < n:
                adjacency[nid].append(nid + m)
                adjacency[nid + m].append(nid)
    for nid in adjacency:
        adjacency[nid].sort()
    graph = RoadGraph(nodes=nodes, adjacency=adjacency, ref_origin=DEFAULT_ORIGIN)

    rng = np.random.default_rng(spec.seed)
    width = (m - 1) * spec.edge_length
    height = (n - 1) * spec.edge_length
    pois = []
    pid = 0
    for cat in range(len(DEFAULT_CATEGORIES)):
        count = rng.poisson(spec.pois_per_category)
        for _ in range(count):
            if spec.hotspot is not None and rng.random() < spec.hotspot_fraction:
                hx, hy, hs = spec.hotspot
                x = float(np.clip(rng.normal(hx, hs), 0.0, width))
                y = float(np.clip(rng.normal(hy, hs), 0.0, height))
            else:
                x = float(rng.uniform(0.0, width))
                y = float(rng.uniform(0.0, height))
            pois.append(Poi(id=pid, category=cat, x=x, y=y))
            pid += 1
    return graph, pois


def poi_counts(graph: RoadGraph, pois, radius: float) -> dict:
    """POI count within `radius` of each node (the policy attraction field)."""
    counts = {int(nid): 0 for nid in graph.node_ids}
    if pois:
        tree = cKDTree(np.array([(p.x, p.y) for p in pois]))
        hits = tree.query_ball_point(graph.positions, r=radius)
        for nid, h in zip(graph.node_ids, hits):
            counts[int(nid)] = len(h)
    return counts


def transition_probs(graph, counts, prev, cur, policy: WalkerPolicy) -> dict:
    """Exact next-node distribution of the walker policy at (prev -> cur).

    Candidates exclude an immediate backtrack unless it is the only option;
    `persistence` mass goes to the straightest continuation, the remainder is
    spread according to exp(poi_weight * normalized POI count).
    """
    nbrs = list(graph.neighbors(cur))
    cands = nbrs
    if prev is not None and not policy.allow_backtrack and len(nbrs) > 1:
        cands = [u for u in nbrs if u != prev]
    max_count = max(counts.values()) if counts else 0
    weights = np.array([
        math.exp(policy.poi_weight * (counts.get(u, 0) / max(max_count, 1)))
        for u in cands
    ])
    base = weights / weights.sum()
    probs = dict(zip(cands, base))
    if prev is not None and policy.persistence > 0 and len(cands) > 1:
        incoming = bearing(graph.pos(prev), graph.pos(cur))
        def straightness(u):
            return math.cos(bearing(graph.pos(cur), graph.pos(u)) - incoming)
        straight = max(cands, key=straightness)
        probs = {u: (1.0 - policy.persistence) * probs[u] for u in cands}
        probs[straight] += policy.persistence
    return probs


def _walk(graph, counts, policy, steps, rng):
    start = int(graph.node_ids[rng.integers(len(graph.node_ids))])
    seq = [start]
    prev = None
    for _ in range(steps - 1):
        probs = transition_probs(graph, counts, prev, seq[-1], policy)
        cands = sorted(probs)
        p = np.array([probs[u] for u in cands])
        nxt = cands[rng.choice(len(cands), p=p / p.sum())]
        prev = seq[-1]
        seq.append(nxt)
    return seq


def simulate_walkers(graph, pois, policy: WalkerPolicy, n_walkers=100,
                     steps=50, seed=0):
    """Sample walker node sequences and emit noisy GPS along the edges.

    Returns (streams, truth) where truth[i] is the ground-truth node sequence
    of streams[i].
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    counts = poi_counts(graph, pois, policy.attraction_radius)
    streams = []
    truths = []
    for w in range(n_walkers):
        rng = np.random.default_rng([seed, w])
        seq = _walk(graph, counts, policy, steps, rng)
        ts, xys = [], []
        t = 0.0
        pos = graph.pos(seq[0]).copy()
        ts.append(t)
        xys.append(pos.copy())
        for a, b in zip(seq[:-1], seq[1:]):
            pa, pb = graph.pos(a), graph.pos(b)
            length = float(np.hypot(*(pb - pa)))
            travel = length / policy.speed
            n_samples = max(1, int(math.floor(travel / policy.step_period)))
            for k in range(1, n_samples + 1):
                frac = k / n_samples
                t += travel / n_samples
                ts.append(t)
                xys.append(pa + (pb - pa) * frac)
        xy = np.array(xys)
        if policy.noise > 0:
            xy = xy + rng.normal(0.0, policy.noise, size=xy.shape)
        streams.append(GpsStream(user=f"walker{w:04d}", stream_id=w,
                                 t=np.array(ts), xy=xy))
        truths.append(seq)
    return streams, truths


def sequence_agreement(projected, truth) -> float:
    """Fraction of node visits agreeing between a projected sequence and the
    ground truth (longest-common-subsequence matches over the longer length)."""
    from difflib import SequenceMatcher
    if not truth and not projected:
        return 1.0
    matcher = SequenceMatcher(a=projected, b=truth, autojunk=False)
    matched = sum(block.size for block in matcher.get_matching_blocks())
    return matched / max(len(projected), len(truth))


def bayes_ceiling(examples, graph, counts, policy: WalkerPolicy) -> float:
    """Mean over examples of the maximum policy transition probability, i.e.
    the accuracy of the Bayes-optimal predictor that knows the policy."""
    best = []
    for ex in examples:
        distinct = [v for i, v in enumerate(ex.context)
                    if i == 0 or v != ex.context[i - 1]]
        prev = distinct[-2] if len(distinct) >= 2 else None
        probs = transition_probs(graph, counts, prev, ex.context[-1], policy)
        best.append(max(probs.values()))
    return float(np.mean(best))


def chance_level(examples) -> float:
    """Expected Acc@1 of uniformly random scoring: mean of 1/|candidates|."""
    return float(np.mean([1.0 / len(ex.candidates) for ex in examples]))


def uniform_baseline_ranks(examples, seed=0):
    """Random-score baseline ranks (pessimistic ties never occur a.s.)."""
    rng = np.random.default_rng(seed)
    from .evaluation import rank_of_label
    return [rank_of_label(rng.random(len(ex.candidates)), ex.candidates, ex.label)
            for ex in examples]


def degree_prior_ranks(examples, graph, seed=0):
    """Degree-scored baseline with a small random tie-break."""
    rng = np.random.default_rng(seed)
    from .evaluation import rank_of_label
    ranks = []
    for ex in examples:
        scores = np.array([graph.degree(u) for u in ex.candidates], dtype=np.float64)
        scores += rng.random(len(scores)) * 1e-3
        ranks.append(rank_of_label(scores, ex.candidates, ex.label))
    return ranks
