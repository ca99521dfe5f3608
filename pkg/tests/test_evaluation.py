"""Ranking metric oracles, bootstrap, perturbations, ablation plumbing."""

import copy
import math

import numpy as np
import pytest

from roadnext.evaluation import (ABLATION_FLAGS, COORD_LEVELS,
                                 LAYER_SPLIT_GRID, POI_LEVELS, acc_at_k,
                                 config_with_flags, example_auc,
                                 layer_split_configs, mean_roc_auc, mrr,
                                 paired_bootstrap, perturb_coordinates,
                                 perturb_poi, rank_of_label, run_ablation,
                                 sweep_lh)
from roadnext.features import CIRC_DIMS, NodeDescriptor
from roadnext.model import ModelConfig
from roadnext.projection import GpsStream


def sort_rank_oracle(scores, candidates, label):
    """Full-sort oracle with the pessimistic tie rule: sort descending by
    (score, is_not_label) so tied competitors precede the label."""
    idx = list(candidates).index(label)
    order = sorted(range(len(scores)),
                   key=lambda i: (-scores[i], 0 if i != idx else 1, i))
    return order.index(idx) + 1


def trapezoid_auc_oracle(scores, candidates, label):
    """ROC curve by explicit threshold sweep + trapezoidal integration."""
    idx = list(candidates).index(label)
    pos = [scores[idx]]
    neg = [s for i, s in enumerate(scores) if i != idx]
    thresholds = sorted(set(scores), reverse=True)
    pts = [(0.0, 0.0)]
    for th in thresholds:
        tpr = sum(p >= th for p in pos) / len(pos)
        fpr = sum(n >= th for n in neg) / len(neg)
        pts.append((fpr, tpr))
    pts.append((1.0, 1.0))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return auc


class TestRankOracle:
    def test_unique_max_is_rank_one(self):
        assert rank_of_label([5, 1, 2, 3, 4], [10, 11, 12, 13, 14], 10) == 1

    def test_tie_is_pessimistic(self):
        assert rank_of_label([5, 5, 1], [1, 2, 3], 1) == 2

    def test_missing_label_rejected(self):
        with pytest.raises(ValueError):
            rank_of_label([1, 2], [10, 11], 99)

    def test_matches_sort_oracle_on_random_tables(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            n = int(rng.integers(2, 8))
            # quantized scores to exercise ties
            scores = rng.integers(0, 4, size=n).astype(float)
            cands = list(range(n))
            label = int(rng.integers(n))
            assert rank_of_label(scores, cands, label) == \
                sort_rank_oracle(list(scores), cands, label)


class TestAccMrr:
    def test_arithmetic_example(self):
        ranks = [1, 2, 4]
        assert acc_at_k(ranks, 1) == pytest.approx(1 / 3)
        assert acc_at_k(ranks, 3) == pytest.approx(2 / 3)
        assert mrr(ranks) == pytest.approx((1 + 0.5 + 0.25) / 3)

    def test_all_rank_one(self):
        assert acc_at_k([1, 1, 1], 1) == 1.0
        assert mrr([1, 1, 1]) == 1.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(1)
        ranks = rng.integers(1, 6, size=200)
        accs = [acc_at_k(ranks, k) for k in (1, 2, 3, 4, 5)]
        assert accs == sorted(accs)
        assert accs[0] <= mrr(ranks) <= 1.0

    def test_small_candidate_sets_saturate_acc5(self):
        # rank can never exceed the candidate count
        assert acc_at_k([2, 3, 4, 5], 5) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            acc_at_k([], 1)
        with pytest.raises(ValueError):
            mrr([])


class TestAuc:
    def test_label_top(self):
        assert example_auc([9, 1, 2, 3], [0, 1, 2, 3], 0) == 1.0

    def test_label_bottom(self):
        assert example_auc([0, 5, 6, 7], [0, 1, 2, 3], 0) == 0.0

    def test_matches_trapezoid_oracle_random(self):
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            n = int(rng.integers(2, 7))
            scores = list(rng.integers(0, 5, size=n).astype(float))
            label = int(rng.integers(n))
            got = example_auc(scores, list(range(n)), label)
            want = trapezoid_auc_oracle(scores, list(range(n)), label)
            assert abs(got - want) < 1e-12

    def test_mean_over_examples_skips_singletons(self):
        tables = [([1.0], [0], 0), ([2.0, 1.0], [0, 1], 0)]
        assert mean_roc_auc(tables) == 1.0

    def test_all_singletons_rejected(self):
        with pytest.raises(ValueError):
            mean_roc_auc([([1.0], [0], 0)])

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(3)
        tables = []
        for _ in range(10_000):
            n = int(rng.integers(2, 6))
            tables.append((rng.random(n), list(range(n)), int(rng.integers(n))))
        assert mean_roc_auc(tables) == pytest.approx(0.5, abs=0.01)


class TestPairedBootstrap:
    def test_identical_inputs(self):
        ranks = [1, 2, 1, 3, 1, 2]
        delta, ci, p = paired_bootstrap(ranks, ranks, resamples=500, seed=0)
        assert delta == 0.0
        assert p == 1.0

    def test_dominant_difference(self):
        a = [1] * 40
        b = [2] * 40
        delta, ci, p = paired_bootstrap(a, b, resamples=2000, seed=0)
        assert delta == pytest.approx(1.0)
        assert p == 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            paired_bootstrap([1, 2], [1], resamples=10)

    def test_ci_coverage_monte_carlo(self):
        # synthetic paired Bernoulli outcomes with a known Acc@1 gap; the 95%
        # interval should cover the true gap in roughly 95% of simulations
        rng = np.random.default_rng(4)
        pa, pb, n = 0.6, 0.5, 300
        true_delta = pa - pb
        covered = 0
        sims = 500
        for s in range(sims):
            hits_a = rng.random(n) < pa
            hits_b = rng.random(n) < pb
            ranks_a = np.where(hits_a, 1, 2)
            ranks_b = np.where(hits_b, 1, 2)
            _, (lo, hi), _ = paired_bootstrap(ranks_a, ranks_b,
                                              resamples=400, seed=s)
            covered += lo <= true_delta <= hi
        assert covered / sims == pytest.approx(0.95, abs=0.02)


class TestPerturbCoordinates:
    def streams(self):
        rng = np.random.default_rng(5)
        return [GpsStream("u", 0, np.arange(10.0), rng.random((10, 2)) * 100)]

    def test_sigma_zero_identity(self):
        s = self.streams()
        out = perturb_coordinates(s, 0.0, seed=1)
        np.testing.assert_array_equal(out[0].xy, s[0].xy)
        np.testing.assert_array_equal(out[0].t, s[0].t)

    def test_rayleigh_mean_displacement(self):
        sigma = 7.0
        rng = np.random.default_rng(6)
        base = [GpsStream("u", 0, np.arange(100_000.0),
                          np.zeros((100_000, 2)))]
        out = perturb_coordinates(base, sigma, seed=3)
        mags = np.hypot(out[0].xy[:, 0], out[0].xy[:, 1])
        assert mags.mean() == pytest.approx(sigma * math.sqrt(math.pi / 2), rel=0.01)

    def test_seeds_differ(self):
        s = self.streams()
        a = perturb_coordinates(s, 5.0, seed=1)
        b = perturb_coordinates(s, 5.0, seed=2)
        assert not np.array_equal(a[0].xy, b[0].xy)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            perturb_coordinates(self.streams(), -1.0)


class TestPerturbPoi:
    def descs(self, S=4, C=3, n=6):
        rng = np.random.default_rng(7)
        dim = (CIRC_DIMS + S + 1) * C
        out = {}
        for i in range(n):
            x = rng.random(dim)
            out[i] = NodeDescriptor(node=i, x=x, mask=np.ones(dim),
                                    geo=rng.random(4))
        return out

    def test_sigma_zero_identity(self):
        d = self.descs()
        out = perturb_poi(d, 0.0, 4, 3, seed=0)
        for n in d:
            np.testing.assert_array_equal(out[n].x, d[n].x)

    def test_mass_conserved_per_category(self):
        S, C = 4, 3
        d = self.descs(S, C)
        out = perturb_poi(d, 0.2, S, C, seed=1)
        block = CIRC_DIMS + S + 1
        for n in d:
            for c in range(C):
                lo = c * block + CIRC_DIMS
                before = d[n].x[lo:lo + S].sum()
                after = out[n].x[lo:lo + S].sum()
                assert after == pytest.approx(before, abs=1e-9)

    def test_stats_and_mask_untouched(self):
        S, C = 4, 3
        d = self.descs(S, C)
        out = perturb_poi(d, 0.3, S, C, seed=2)
        block = CIRC_DIMS + S + 1
        for n in d:
            for c in range(C):
                base = c * block
                np.testing.assert_array_equal(out[n].x[base:base + CIRC_DIMS],
                                              d[n].x[base:base + CIRC_DIMS])
                assert out[n].x[base + block - 1] == d[n].x[base + block - 1]
            np.testing.assert_array_equal(out[n].mask, d[n].mask)

    def test_all_zero_bins_unchanged(self):
        S, C = 4, 1
        dim = (CIRC_DIMS + S + 1) * C
        d = {0: NodeDescriptor(node=0, x=np.zeros(dim), mask=np.zeros(dim),
                               geo=np.zeros(4))}
        out = perturb_poi(d, 0.5, S, C, seed=3)
        np.testing.assert_array_equal(out[0].x, np.zeros(dim))

    def test_no_negative_bins(self):
        S, C = 4, 3
        out = perturb_poi(self.descs(S, C), 1.5, S, C, seed=4)
        block = CIRC_DIMS + S + 1
        for n in out:
            for c in range(C):
                lo = c * block + CIRC_DIMS
                assert np.all(out[n].x[lo:lo + S] >= 0)


class TestAblationConfig:
    def test_flags_toggle_branches(self):
        cfg = config_with_flags(ModelConfig(), ["no_poi", "no_geo"])
        assert not cfg.use_poi and not cfg.use_geo
        assert cfg.use_struct and cfg.poi_diff

    def test_contradictory_flags_rejected(self):
        with pytest.raises(ValueError):
            config_with_flags(ModelConfig(), ["no_poi", "no_poi_diff"])

    def test_unknown_flag_rejected(self):
        with pytest.raises(ValueError):
            config_with_flags(ModelConfig(), ["no_magic"])

    def test_base_config_not_mutated(self):
        base = ModelConfig()
        config_with_flags(base, ["no_poi"])
        assert base.use_poi

    def test_layer_split_grid_shape(self):
        cfgs = layer_split_configs(ModelConfig())
        assert [(c.layers_std, c.layers_rel) for c in cfgs] == list(LAYER_SPLIT_GRID)
        assert all(c.layers == 4 for c in cfgs)


class TestRunners:
    def test_run_ablation_structure(self):
        calls = []

        def train_fn(cfg):
            calls.append((cfg.use_poi, cfg.use_geo, cfg.use_struct, cfg.poi_diff))
            return {"stub": None}

        def eval_fn(params, cfg):
            return f"report-{len(calls)}"

        rows = run_ablation(ModelConfig(), [(), ("no_poi",), ("no_geo",)],
                            train_fn, eval_fn)
        assert [r[0] for r in rows] == [(), ("no_poi",), ("no_geo",)]
        assert calls[0] == (True, True, True, True)
        assert calls[1][0] is False

    def test_sweep_grid_shape_and_rel_layer_rule(self):
        seen = []

        def train_eval(cfg):
            seen.append((cfg.layers_std + cfg.layers_rel, cfg.heads,
                         cfg.layers_rel))
            return 0.5

        rows = sweep_lh(ModelConfig(d=16), train_eval)
        assert len(rows) == 20
        for (L, H, rel) in seen:
            assert rel == min(1, L)
        assert {(r["L"], r["H"]) for r in rows} == \
            {(L, H) for L in (1, 2, 4, 6, 8) for H in (2, 4, 8, 16)}

    def test_sweep_indivisible_heads_rejected(self):
        with pytest.raises(ValueError):
            sweep_lh(ModelConfig(d=24), lambda cfg: 0.5, h_grid=(16,))
