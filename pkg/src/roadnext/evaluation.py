"""Ranking metrics, cohort reports, paired bootstrap, perturbation harness,
ablation runner, and the depth/heads sensitivity sweep."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .features import CIRC_DIMS
from .model import ModelConfig, assemble_batch, forward, forward_batch
from .projection import GpsStream

COORD_LEVELS = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)
POI_LEVELS = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25)
SCALES = ("short", "mid", "long", "extended")


# -- rank-based metrics --------------------------------------------------------


def rank_of_label(scores, candidates, label) -> int:
    """1-based rank of the label's score, pessimistic on ties (tied scores
    count as ranked above the label)."""
    candidates = list(candidates)
    if label not in candidates:
        raise ValueError(f"label {label} not among candidates")
    idx = candidates.index(label)
    s = np.asarray(scores, dtype=np.float64)
    return int(1 + (s > s[idx]).sum() + (np.delete(s, idx) == s[idx]).sum())


def acc_at_k(ranks, k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("empty rank list")
    return float((ranks <= k).mean())


def mrr(ranks) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("empty rank list")
    return float((1.0 / ranks).mean())


def example_auc(scores, candidates, label) -> float:
    """Mann-Whitney one-vs-rest AUC for one example (ties count 0.5)."""
    candidates = list(candidates)
    idx = candidates.index(label)
    s = np.asarray(scores, dtype=np.float64)
    neg = np.delete(s, idx)
    return float(((neg < s[idx]).sum() + 0.5 * (neg == s[idx]).sum()) / len(neg))


def mean_roc_auc(score_tables) -> float:
    """Mean per-example AUC over (scores, candidates, label) triples; examples
    with a single candidate are skipped."""
    aucs = [example_auc(s, c, l) for s, c, l in score_tables if len(c) >= 2]
    if not aucs:
        raise ValueError("AUC undefined: no example has >= 2 candidates")
    return float(np.mean(aucs))


def paired_bootstrap(ranks_a, ranks_b, resamples=10_000, seed=0):
    """Paired bootstrap over examples for the Acc@1 difference (A - B).

    Returns (mean delta, (ci_lo, ci_hi), two-sided p-value).
    """
    a = np.asarray(ranks_a)
    b = np.asarray(ranks_b)
    if a.shape != b.shape:
        raise ValueError("paired rank lists must have equal length")
    hits_a = (a == 1).astype(np.float64)
    hits_b = (b == 1).astype(np.float64)
    rng = np.random.default_rng(seed)
    n = len(a)
    deltas = np.empty(resamples)
    for i in range(resamples):
        idx = rng.integers(0, n, size=n)
        deltas[i] = hits_a[idx].mean() - hits_b[idx].mean()
    ci = (float(np.percentile(deltas, 2.5)), float(np.percentile(deltas, 97.5)))
    p = 2.0 * min((deltas <= 0).mean(), (deltas >= 0).mean())
    return float(deltas.mean()), ci, float(min(1.0, p))


# -- reports -------------------------------------------------------------------


@dataclass
class MetricsReport:
    acc1: float
    acc3: float
    acc5: float
    mrr: float
    mean_auc: float
    n: int
    cohorts: dict = field(default_factory=dict)

    def to_dict(self):
        doc = {"acc1": self.acc1, "acc3": self.acc3, "acc5": self.acc5,
               "mrr": self.mrr, "mean_auc": self.mean_auc, "n": self.n}
        if self.cohorts:
            doc["cohorts"] = self.cohorts
        return doc


def score_examples(examples, params, config, store, graph, batch_size=64):
    """(scores, candidates, label, scale) per example, deterministic order."""
    tables = []
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        res = forward_batch(assemble_batch(chunk, store, config, graph),
                            params, config, with_loss=False)
        for i, ex in enumerate(chunk):
            tables.append((res.scores[i, :len(ex.candidates)],
                           ex.candidates, ex.label, ex.scale))
    return tables


def report_from_tables(tables) -> MetricsReport:
    ranks = np.array([rank_of_label(s, c, l) for s, c, l, _ in tables])
    auc_inputs = [(s, c, l) for s, c, l, _ in tables]
    try:
        auc = mean_roc_auc(auc_inputs)
    except ValueError:
        auc = float("nan")
    cohorts = {}
    for scale in SCALES:
        sub = [i for i, t in enumerate(tables) if t[3] == scale]
        if sub:
            r = ranks[sub]
            cohorts[scale] = {"acc1": acc_at_k(r, 1), "acc3": acc_at_k(r, 3),
                              "acc5": acc_at_k(r, 5), "mrr": mrr(r), "n": len(sub)}
    return MetricsReport(acc1=acc_at_k(ranks, 1), acc3=acc_at_k(ranks, 3),
                         acc5=acc_at_k(ranks, 5), mrr=mrr(ranks), mean_auc=auc,
                         n=len(tables), cohorts=cohorts)


def evaluate(examples, params, config, store, graph) -> MetricsReport:
    return report_from_tables(score_examples(examples, params, config, store, graph))


# -- perturbations -------------------------------------------------------------


def perturb_coordinates(streams, sigma: float, seed=0) -> list:
    """Independent 2-D Gaussian offsets (std sigma meters) per GPS sample."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for s in streams:
        noise = rng.normal(0.0, sigma, size=s.xy.shape) if sigma >= 0 else 0.0
        out.append(GpsStream(s.user, s.stream_id, s.t.copy(), s.xy + noise))
    return out


def perturb_poi(descriptors: dict, sigma: float, n_sectors: int,
                n_categories: int, seed=0) -> dict:
    """Multiplicative Gaussian noise on the sector bin densities, clipped at
    zero and rescaled per (node, category) to preserve total mass.  Circular
    statistics, presence flags, and masks are untouched."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    block = CIRC_DIMS + n_sectors + 1
    out = {}
    for nid in sorted(descriptors):
        d = descriptors[nid]
        x = d.x.copy()
        for c in range(n_categories):
            lo = c * block + CIRC_DIMS
            hi = lo + n_sectors
            h = x[lo:hi]
            total = h.sum()
            eps = rng.normal(0.0, sigma, size=n_sectors)
            h_new = np.clip(h * (1.0 + eps), 0.0, None)
            new_total = h_new.sum()
            if total > 0 and new_total > 0:
                h_new *= total / new_total
            elif total > 0:
                h_new = h.copy()
            x[lo:hi] = h_new
        out[nid] = type(d)(node=d.node, x=x, mask=d.mask.copy(), geo=d.geo.copy())
    return out


# -- robustness harness --------------------------------------------------------


def robustness_poi(examples, params, config, store, graph, levels=POI_LEVELS,
                   trials=10, n_sectors=8, n_categories=12, seed=0):
    """Rows (kind, level, trial, acc1, acc3, acc5, mrr) for multiplicative
    sector-noise at each level.  The clean-fit normalizer is re-applied to the
    perturbed descriptors, so level 0 reproduces clean metrics exactly."""
    from .model import FeatureStore
    rows = []
    for li, level in enumerate(levels):
        for trial in range(trials):
            trial_seed = int(np.random.default_rng([seed, li, trial]).integers(2**31))
            perturbed = perturb_poi(store.descriptors, level, n_sectors,
                                    n_categories, seed=trial_seed)
            pstore = FeatureStore(perturbed, store.normalizer, store.embeddings)
            rep = evaluate(examples, params, config, pstore, graph)
            rows.append(("poi", level, trial, rep.acc1, rep.acc3, rep.acc5, rep.mrr))
    return rows


def robustness_coordinate(streams, params, config, store, graph, project_fn,
                          split_fn, levels=COORD_LEVELS, trials=10, seed=0):
    """Coordinate-noise rows: perturb raw GPS, re-project with `project_fn`
    (streams -> examples), take the evaluation subset with `split_fn`
    (examples -> examples), and score.  Level 0 reproduces the clean run."""
    rows = []
    for li, level in enumerate(levels):
        for trial in range(trials):
            noisy = perturb_coordinates(
                streams, level,
                seed=int(np.random.default_rng([seed, li, trial]).integers(2**31)))
            subset = split_fn(project_fn(noisy))
            rep = evaluate(subset, params, config, store, graph)
            rows.append(("coordinate", level, trial,
                         rep.acc1, rep.acc3, rep.acc5, rep.mrr))
    return rows


# -- ablation & sweep ----------------------------------------------------------

LAYER_SPLIT_GRID = ((4, 0), (3, 1), (2, 2), (1, 3), (0, 4))
SECTOR_GRID = (2, 4, 8, 16)
SWEEP_L_GRID = (1, 2, 4, 6, 8)
SWEEP_H_GRID = (2, 4, 8, 16)

ABLATION_FLAGS = ("no_poi", "no_geo", "no_node2vec", "no_poi_diff")


def config_with_flags(config: ModelConfig, flags) -> ModelConfig:
    flags = set(flags)
    unknown = flags - set(ABLATION_FLAGS)
    if unknown:
        raise ValueError(f"unknown ablation flags {sorted(unknown)}")
    if "no_poi" in flags and "no_poi_diff" in flags:
        raise ValueError("contradictory flags: no_poi and no_poi_diff")
    cfg = copy.deepcopy(config)
    cfg.use_poi = "no_poi" not in flags
    cfg.use_geo = "no_geo" not in flags
    cfg.use_struct = "no_node2vec" not in flags
    cfg.poi_diff = "no_poi_diff" not in flags
    return cfg


def run_ablation(base_config: ModelConfig, flag_rows, train_fn, eval_fn):
    """Train/evaluate one configuration per flag set.

    `train_fn(config)` returns params; `eval_fn(params, config)` returns a
    MetricsReport.  Returns [(flags tuple, MetricsReport), ...].
    """
    rows = []
    for flags in flag_rows:
        cfg = config_with_flags(base_config, flags)
        params = train_fn(cfg)
        rows.append((tuple(sorted(flags)), eval_fn(params, cfg)))
    return rows


def layer_split_configs(base_config: ModelConfig, grid=LAYER_SPLIT_GRID):
    """One config per (standard, relation-aware) split of the 4-layer stack."""
    out = []
    for n_std, n_rel in grid:
        cfg = copy.deepcopy(base_config)
        cfg.layers_std = n_std
        cfg.layers_rel = n_rel
        out.append(cfg)
    return out


def sweep_lh(base_config: ModelConfig, train_eval_fn,
             l_grid=SWEEP_L_GRID, h_grid=SWEEP_H_GRID):
    """Validation Acc@1 per (L, H) cell; the relation-aware layer count is
    min(1, L) with the relation-aware layer last."""
    rows = []
    for L in l_grid:
        for H in h_grid:
            if base_config.d % H:
                raise ValueError(f"model dim {base_config.d} not divisible by H={H}")
            cfg = copy.deepcopy(base_config)
            cfg.heads = H
            cfg.layers_rel = min(1, L)
            cfg.layers_std = L - cfg.layers_rel
            acc1 = train_eval_fn(cfg)
            rows.append({"L": L, "H": H, "val_acc1": acc1})
    return rows
