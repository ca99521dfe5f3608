"""Synthetic grid city, walker policy law, and baseline sanity checks."""

import numpy as np
import pytest

from roadnext.projection import Segment, build_example
from roadnext.testkit import (CitySpec, WalkerPolicy, bayes_ceiling,
                              chance_level, degree_prior_ranks, gen_city,
                              poi_counts, sequence_agreement, simulate_walkers,
                              transition_probs, uniform_baseline_ranks)


class TestGenCity:
    def test_grid_edge_count_formula(self):
        # an n x m grid has 2nm - n - m edges
        for n, m in [(2, 2), (3, 5), (20, 20)]:
            graph, _ = gen_city(CitySpec(rows=n, cols=m, pois_per_category=0))
            assert len(graph.nodes) == n * m
            assert len(graph.edges) == 2 * n * m - n - m
        g20, _ = gen_city(CitySpec(rows=20, cols=20, pois_per_category=0))
        assert len(g20.nodes) == 400 and len(g20.edges) == 760

    def test_graph_validates(self):
        graph, _ = gen_city(CitySpec(rows=4, cols=4))
        graph.validate()

    def test_corner_edge_interior_degrees(self):
        graph, _ = gen_city(CitySpec(rows=3, cols=3))
        degs = sorted(graph.degree(n) for n in graph.nodes)
        assert degs == [2, 2, 2, 2, 3, 3, 3, 3, 4]

    def test_edge_lengths(self):
        graph, _ = gen_city(CitySpec(rows=3, cols=4, edge_length=150.0))
        for u, v in graph.edges:
            assert np.hypot(*(graph.pos(u) - graph.pos(v))) == pytest.approx(150.0)

    def test_zero_intensity_no_pois(self):
        _, pois = gen_city(CitySpec(rows=3, cols=3, pois_per_category=0))
        assert pois == []

    def test_pois_inside_bounds_and_deterministic(self):
        spec = CitySpec(rows=4, cols=5, pois_per_category=10, seed=9)
        _, a = gen_city(spec)
        _, b = gen_city(spec)
        assert a == b
        for p in a:
            assert 0 <= p.x <= 4 * 200.0 and 0 <= p.y <= 3 * 200.0

    def test_hotspot_concentrates_pois(self):
        spec = CitySpec(rows=10, cols=10, pois_per_category=30, seed=1,
                        hotspot=(300.0, 300.0, 100.0), hotspot_fraction=0.9)
        _, pois = gen_city(spec)
        d = np.hypot(np.array([p.x for p in pois]) - 300.0,
                     np.array([p.y for p in pois]) - 300.0)
        assert np.median(d) < 300.0

    def test_degenerate_grid_rejected(self):
        with pytest.raises(ValueError):
            gen_city(CitySpec(rows=1, cols=5))


class TestTransitionProbs:
    def setup_method(self):
        self.graph, self.pois = gen_city(CitySpec(rows=5, cols=5, seed=0))
        self.counts = poi_counts(self.graph, self.pois, 150.0)

    def test_sums_to_one_and_respects_adjacency(self):
        policy = WalkerPolicy(persistence=0.6, poi_weight=1.0)
        for cur in self.graph.nodes:
            for prev in [None] + list(self.graph.neighbors(cur)):
                probs = transition_probs(self.graph, self.counts, prev, cur, policy)
                assert sum(probs.values()) == pytest.approx(1.0)
                assert set(probs) <= set(self.graph.neighbors(cur))

    def test_no_backtrack_unless_forced(self):
        policy = WalkerPolicy(persistence=0.5)
        # interior node: backtrack candidate excluded
        cur, prev = 12, 11
        probs = transition_probs(self.graph, self.counts, prev, cur, policy)
        assert prev not in probs

    def test_backtrack_forced_on_dead_end(self):
        from roadnext.graph import RoadGraph
        g = RoadGraph(nodes={0: (0.0, 0.0), 1: (100.0, 0.0)},
                      adjacency={0: [1], 1: [0]}, ref_origin=(0.0, 0.0))
        probs = transition_probs(g, {}, 0, 1, WalkerPolicy())
        assert probs == {0: pytest.approx(1.0)}

    def test_full_persistence_corridor_never_turns(self):
        policy = WalkerPolicy(persistence=1.0, poi_weight=0.0)
        # moving east along an interior row: straight continuation wins all mass
        cur, prev = 12, 11
        probs = transition_probs(self.graph, self.counts, prev, cur, policy)
        assert probs[13] == pytest.approx(1.0)
        assert all(p == pytest.approx(0.0) for u, p in probs.items() if u != 13)

    def test_poi_weight_biases_toward_dense_candidates(self):
        counts = {n: 0 for n in self.graph.nodes}
        counts[17] = 50  # node north of 12
        probs = transition_probs(self.graph, counts, 11, 12,
                                 WalkerPolicy(persistence=0.0, poi_weight=3.0))
        assert probs[17] == max(probs.values())

    def test_no_persistence_without_history(self):
        probs = transition_probs(self.graph, self.counts, None, 12,
                                 WalkerPolicy(persistence=0.9, poi_weight=0.0))
        for p in probs.values():
            assert p == pytest.approx(0.25)


class TestSimulateWalkers:
    def test_deterministic_and_truth_aligned(self):
        graph, pois = gen_city(CitySpec(rows=4, cols=4, seed=1))
        policy = WalkerPolicy(noise=2.0)
        s1, t1 = simulate_walkers(graph, pois, policy, n_walkers=3, steps=10, seed=5)
        s2, t2 = simulate_walkers(graph, pois, policy, n_walkers=3, steps=10, seed=5)
        assert t1 == t2
        for a, b in zip(s1, s2):
            np.testing.assert_array_equal(a.xy, b.xy)
        for seq, g in zip(t1, [graph] * 3):
            assert len(seq) == 10
            for u, v in zip(seq[:-1], seq[1:]):
                assert v in g.neighbors(u)

    def test_noiseless_samples_lie_on_edges(self):
        graph, pois = gen_city(CitySpec(rows=3, cols=3, seed=2))
        streams, truths = simulate_walkers(graph, pois, WalkerPolicy(noise=0.0),
                                           n_walkers=2, steps=6, seed=0)
        for s, seq in zip(streams, truths):
            # every endpoint position appears exactly in the sample stream
            for node in seq:
                pos = graph.pos(node)
                assert np.any(np.all(np.isclose(s.xy, pos), axis=1))
            assert np.all(np.diff(s.t) > 0)

    def test_too_few_steps_rejected(self):
        graph, pois = gen_city(CitySpec(rows=3, cols=3))
        with pytest.raises(ValueError):
            simulate_walkers(graph, pois, WalkerPolicy(), n_walkers=1, steps=1)


class TestAgreementAndLevels:
    def test_sequence_agreement_basics(self):
        assert sequence_agreement([1, 2, 3], [1, 2, 3]) == 1.0
        assert sequence_agreement([], []) == 1.0
        assert sequence_agreement([1, 2, 3, 4], [1, 2, 9, 4]) == pytest.approx(0.75)
        assert sequence_agreement([1, 2], [1, 2, 3, 4]) == pytest.approx(0.5)

    def examples(self, graph):
        exs = []
        for cur, prev, label in [(12, 11, 13), (2, 1, 3), (0, None, 1)]:
            nodes = ([prev] if prev is not None else []) + [cur, label]
            exs.append(build_example(Segment(nodes=nodes, scale="short"), graph))
        return exs

    def test_chance_level(self):
        graph, _ = gen_city(CitySpec(rows=5, cols=5))
        exs = self.examples(graph)
        # interior degree 4, edge degree 3, corner degree 2
        assert chance_level(exs) == pytest.approx((0.25 + 1 / 3 + 0.5) / 3)

    def test_bayes_ceiling_closed_form(self):
        graph, pois = gen_city(CitySpec(rows=5, cols=5, pois_per_category=0))
        counts = poi_counts(graph, pois, 150.0)
        policy = WalkerPolicy(persistence=0.8, poi_weight=0.0)
        exs = self.examples(graph)
        # interior after a straight move: 0.8 + 0.2/3; edge: 0.8 + 0.2/2;
        # no history: uniform over 2 neighbors
        want = np.mean([0.8 + 0.2 / 3, 0.8 + 0.2 / 2, 0.5])
        assert bayes_ceiling(exs, graph, counts, policy) == pytest.approx(want)

    def test_bayes_ceiling_at_least_chance(self):
        graph, pois = gen_city(CitySpec(rows=6, cols=6, seed=3))
        counts = poi_counts(graph, pois, 150.0)
        streams, truths = simulate_walkers(graph, pois, WalkerPolicy(),
                                           n_walkers=4, steps=30, seed=1)
        exs = [build_example(Segment(nodes=seq, scale="short"), graph)
               for seq in truths]
        assert bayes_ceiling(exs, graph, counts, WalkerPolicy()) >= chance_level(exs)


class TestBaselines:
    def world(self):
        graph, pois = gen_city(CitySpec(rows=6, cols=6, seed=4))
        streams, truths = simulate_walkers(graph, pois, WalkerPolicy(),
                                           n_walkers=50, steps=40, seed=2)
        exs = [build_example(Segment(nodes=seq[t - 5:t + 1], scale="short"), graph)
               for seq in truths for t in range(5, len(seq))]
        return graph, exs

    def test_uniform_baseline_near_chance(self):
        graph, exs = self.world()
        ranks = uniform_baseline_ranks(exs, seed=0)
        acc1 = float(np.mean(np.asarray(ranks) == 1))
        assert acc1 == pytest.approx(chance_level(exs), abs=0.03)

    def test_degree_prior_no_better_than_double_chance(self):
        graph, exs = self.world()
        ranks = degree_prior_ranks(exs, graph, seed=0)
        acc1 = float(np.mean(np.asarray(ranks) == 1))
        # degree carries little signal on a near-uniform grid
        assert acc1 <= 2.0 * chance_level(exs)
