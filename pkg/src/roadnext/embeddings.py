"""Structural node embeddings: biased second-order random walks plus
skip-gram training with negative sampling.

Walks use per-(node, walk) RNG streams so generation is parallelizable yet
deterministic; SGNS training is single-threaded for reproducibility.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import RoadGraph

EMBED_MAGIC = b"RNEM"
EMBED_VERSION = 1


@dataclass
class StructEmbeddings:
    dim: int
    table: dict                      # node id -> np.ndarray(dim,)
    params: dict = field(default_factory=dict)

    def vector(self, node_id: int) -> np.ndarray:
        try:
            return self.table[int(node_id)]
        except KeyError:
            raise KeyError(f"no structural embedding for node {node_id}") from None

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(EMBED_MAGIC)
            fh.write(struct.pack("<III", EMBED_VERSION, self.dim, len(self.table)))
            for nid in sorted(self.table):
                fh.write(struct.pack("<q", nid))
                fh.write(self.table[nid].astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != EMBED_MAGIC:
                raise ValueError(f"{path}: bad embedding cache magic {magic!r}")
            version, dim, count = struct.unpack("<III", fh.read(12))
            if version != EMBED_VERSION:
                raise ValueError(f"{path}: unsupported embedding cache version {version}")
            table = {}
            for _ in range(count):
                (nid,) = struct.unpack("<q", fh.read(8))
                table[nid] = np.frombuffer(fh.read(4 * dim), dtype="<f4").astype(np.float64)
        return cls(dim=dim, table=table)


def _walk_rng(seed: int, node_rank: int, walk_index: int) -> np.random.Generator:
    # keyed by node rank (position in sorted id order), not raw id, so a
    # relabeling that preserves id order reproduces identical walks
    return np.random.default_rng([seed & 0x7FFFFFFF, node_rank, walk_index])


def _second_order_step(graph, prev, cur, p, q, rng):
    nbrs = graph.neighbors(cur)
    prev_nbrs = set(graph.neighbors(prev))
    weights = np.empty(len(nbrs), dtype=np.float64)
    for i, x in enumerate(nbrs):
        if x == prev:
            weights[i] = 1.0 / p
        elif x in prev_nbrs:
            weights[i] = 1.0
        else:
            weights[i] = 1.0 / q
    weights /= weights.sum()
    return nbrs[rng.choice(len(nbrs), p=weights)]


def generate_walks(graph: RoadGraph, p=1.0, q=1.0, walks_per_node=10,
                   walk_length=40, seed=0, workers=1):
    """Biased random walks from every node (1/p return, 1 to common neighbors,
    1/q to distance-2 nodes).  Isolated nodes emit length-1 walks."""
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    ids = [int(n) for n in graph.node_ids]
    rank = {nid: i for i, nid in enumerate(ids)}

    def walk_from(node, widx):
        rng = _walk_rng(seed, rank[node], widx)
        walk = [node]
        nbrs = graph.neighbors(node)
        if not nbrs:
            return walk
        walk.append(nbrs[rng.integers(len(nbrs))])
        while len(walk) < walk_length:
            nxt = _second_order_step(graph, walk[-2], walk[-1], p, q, rng)
            walk.append(nxt)
        return walk

    jobs = [(node, w) for node in ids for w in range(walks_per_node)]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda j: walk_from(*j), jobs))
    return [walk_from(node, w) for node, w in jobs]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


def train_skipgram(walks, graph: RoadGraph, dim=64, window=5, negatives=5,
                   epochs=5, lr=0.025, seed=0):
    """Skip-gram with negative sampling over the walk corpus.

    Negative sampling follows the unigram distribution raised to 0.75.
    Returns a StructEmbeddings with a (random-initialized) row for every
    graph node; never-visited nodes keep their initialization.
    """
    if not walks:
        raise ValueError("empty walk corpus")
    ids = [int(n) for n in graph.node_ids]
    index = {nid: i for i, nid in enumerate(ids)}
    n = len(ids)
    rng = np.random.default_rng(seed)
    emb_in = (rng.random((n, dim)) - 0.5) / dim
    emb_out = np.zeros((n, dim))

    counts = np.zeros(n, dtype=np.float64)
    corpus = [[index[v] for v in walk] for walk in walks]
    for walk in corpus:
        for v in walk:
            counts[v] += 1
    visited = counts > 0
    if not visited.all():
        warnings.warn(f"{int((~visited).sum())} nodes never visited by any walk; "
                      "their embeddings keep random initialization")
    noise = np.where(visited, counts, 0.0) ** 0.75
    if noise.sum() == 0:
        noise = np.ones(n)
    noise /= noise.sum()

    pairs = sum(len(w) for w in corpus)
    total_steps = max(1, epochs * pairs)
    step = 0
    epoch_losses = []
    for _ in range(epochs):
        loss_sum = 0.0
        loss_n = 0
        for walk in corpus:
            for i, center in enumerate(walk):
                cur_lr = lr * max(1e-4, 1.0 - step / total_steps)
                step += 1
                lo = max(0, i - window)
                hi = min(len(walk), i + window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    ctx = walk[j]
                    negs = rng.choice(n, size=negatives, p=noise)
                    targets = np.concatenate(([ctx], negs))
                    labels = np.zeros(len(targets))
                    labels[0] = 1.0
                    vecs = emb_out[targets]
                    scores = _sigmoid(vecs @ emb_in[center])
                    err = scores - labels
                    loss_sum += -np.log(np.clip(np.where(labels > 0, scores, 1 - scores),
                                                1e-12, None)).sum()
                    loss_n += len(targets)
                    grad_in = err @ vecs
                    emb_out[targets] -= cur_lr * np.outer(err, emb_in[center])
                    emb_in[center] -= cur_lr * grad_in
        epoch_losses.append(loss_sum / max(1, loss_n))

    table = {nid: emb_in[index[nid]].copy() for nid in ids}
    result = StructEmbeddings(dim=dim, table=table,
                              params={"window": window, "negatives": negatives,
                                      "epochs": epochs, "lr": lr, "seed": seed})
    result.params["epoch_losses"] = epoch_losses
    return result


def build_embeddings(graph, dim=64, p=1.0, q=1.0, walk_length=40, walks_per_node=10,
                     window=5, negatives=5, epochs=5, lr=0.025, seed=0, workers=1):
    walks = generate_walks(graph, p=p, q=q, walks_per_node=walks_per_node,
                           walk_length=walk_length, seed=seed, workers=workers)
    emb = train_skipgram(walks, graph, dim=dim, window=window, negatives=negatives,
                         epochs=epochs, lr=lr, seed=seed)
    emb.params.update({"p": p, "q": q, "walk_length": walk_length,
                       "walks_per_node": walks_per_node})
    return emb
