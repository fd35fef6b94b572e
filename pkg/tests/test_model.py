"""Channel semantics, fusion, interpretability, and full-model gradients."""

import numpy as np
import pytest

import mentor.autodiff as ad
from mentor.autodiff import Tensor
from mentor.config import TrainConfig
from mentor.graph import Team, TeamSet, build_graph
from mentor.model import (
    Model,
    build_entries,
    cross_entropy,
    gini,
    node_importance,
)
from mentor.preprocess import isolate_teams
from mentor.synth import GenParams, gen_topology
from mentor.training import prepare_inputs

CFG = TrainConfig(hidden_dim=8, dropout_topology=0.0, dropout_centrality=0.0,
                  dropout_attention=0.0, anchor_c=1, seed=0)


def forest_for(edges, teams, n, features=None):
    if features is None:
        features = np.ones((n, 1))
    graph = build_graph(n, edges, features)
    ts = TeamSet(
        teams=tuple(Team(i, tuple(m), 0) for i, m in enumerate(teams)),
        num_classes=1,
    )
    return isolate_teams(graph, ts)


def gat_alpha(model, forest, flow="target_to_source"):
    entries = build_entries(forest.num_nodes, forest.src, forest.dst,
                            forest.directed, flow)
    _, alpha = model._gat(Tensor(forest.features), entries)
    return entries, alpha.data.reshape(-1)


class TestGat:
    def test_isolated_node_self_attention_one(self):
        forest = forest_for([], [[0]], 1)
        model = Model(CFG, 1, 2, 0, seed=1)
        entries, alpha = gat_alpha(model, forest)
        assert alpha.shape[0] == 1
        assert alpha[0] == pytest.approx(1.0)

    def test_symmetric_neighbors_equal_attention(self):
        # node 0 aggregates 1 and 2 under source_to_target (edges point at 0)
        forest = forest_for([(1, 0), (2, 0)], [[0, 1, 2]], 3)
        model = Model(CFG, 1, 2, 0, seed=2)
        entries, alpha = gat_alpha(model, forest, "source_to_target")
        group0 = alpha[entries.groups == 0]
        assert group0.shape[0] == 3  # self + two neighbors
        np.testing.assert_allclose(group0, 1 / 3, rtol=1e-5)

    def test_alpha_sums_to_one_per_group(self, rng):
        n = 15
        edges = [tuple(e) for e in rng.integers(0, n, size=(40, 2)) if e[0] != e[1]]
        feats = rng.normal(size=(n, 3))
        forest = forest_for(list(set(edges)), [list(range(n))], n, feats)
        model = Model(TrainConfig(hidden_dim=8, seed=3), 3, 2, 0, seed=3)
        entries, alpha = gat_alpha(model, forest)
        sums = np.zeros(n)
        np.add.at(sums, entries.groups, alpha)
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)

    def test_isolated_node_output_is_value_transform(self, rng):
        feats = rng.normal(size=(1, 4))
        forest = forest_for([], [[0]], 1, feats)
        model = Model(TrainConfig(hidden_dim=8, seed=1), 4, 2, 0, seed=4)
        entries = build_entries(1, forest.src, forest.dst, True,
                                "target_to_source")
        h, _ = model._gat(Tensor(forest.features), entries)
        np.testing.assert_allclose(
            h.data, feats @ model.params["gat.w"].data, rtol=1e-5
        )


class TestAttnGin:
    def test_unit_coeffs_zero_eps_is_plain_gin(self, rng):
        n = 5
        edges = [(0, 1), (2, 1), (3, 4)]
        entries = build_entries(n, np.array([e[0] for e in edges]),
                                np.array([e[1] for e in edges]), True,
                                "source_to_target")
        model = Model(CFG.with_overrides(eps_init_topology=0.0), 1, 2, 0, seed=5)
        h = rng.normal(size=(n, 8))
        coeffs = Tensor(np.ones((entries.groups.shape[0], 1)))
        out = model._attn_gin(Tensor(h), entries, coeffs, "topo.gin0", "sum")

        w1, b1 = model.params["topo.gin0.w1"].data, model.params["topo.gin0.b1"].data
        w2, b2 = model.params["topo.gin0.w2"].data, model.params["topo.gin0.b2"].data
        agg = h.copy()
        agg[1] += h[0] + h[2]
        agg[4] += h[3]
        want = np.maximum(agg @ w1 + b1, 0) @ w2 + b2
        np.testing.assert_allclose(out.data, want, rtol=1e-4, atol=1e-5)

    def test_zero_coeffs_give_theta_of_zero(self):
        entries = build_entries(3, np.array([0]), np.array([1]), True,
                                "source_to_target")
        model = Model(CFG, 1, 2, 0, seed=6)
        coeffs = Tensor(np.zeros((entries.groups.shape[0], 1)))
        out = model._attn_gin(Tensor(np.ones((3, 8))), entries, coeffs,
                              "topo.gin1", "sum")
        b1 = model.params["topo.gin1.b1"].data
        w2, b2 = model.params["topo.gin1.w2"].data, model.params["topo.gin1.b2"].data
        want = np.maximum(b1, 0) @ w2 + b2
        for row in out.data:
            np.testing.assert_allclose(row, want.reshape(-1), rtol=1e-4, atol=1e-6)

    def test_permutation_equivariance(self, rng):
        n = 10
        edges = list({tuple(e) for e in rng.integers(0, n, size=(25, 2))
                      if e[0] != e[1]})
        feats = rng.normal(size=(n, 2))
        perm = rng.permutation(n)

        graph1 = build_graph(n, edges, feats)
        edges2 = [(int(perm[a]), int(perm[b])) for a, b in edges]
        feats2 = np.zeros_like(feats)
        feats2[perm] = feats
        graph2 = build_graph(n, edges2, feats2)

        cfg = TrainConfig(hidden_dim=8, dropout_topology=0.0,
                          dropout_centrality=0.0, dropout_attention=0.0, seed=7)
        model = Model(cfg, 2, 2, 0, seed=7)

        def run(graph):
            entries = build_entries(n, graph.src, graph.dst, True,
                                    "source_to_target")
            h, alpha = model._gat(Tensor(graph.features), entries)
            return model._attn_gin(h, entries, alpha, "topo.gin0", "sum").data

        out1, out2 = run(graph1), run(graph2)
        np.testing.assert_allclose(out2[perm], out1, rtol=1e-4, atol=1e-5)


class TestChannels:
    def test_single_node_team_embedding(self):
        forest = forest_for([], [[0]], 1)
        model = Model(CFG, 1, 2, 0, seed=8)
        entries = build_entries(1, forest.src, forest.dst, True,
                                CFG.flow_topology)
        z, _ = model.topology_channel(Tensor(forest.features), entries,
                                      forest.node_team, 1)
        assert z.data.shape == (1, 8)

    def test_isomorphic_teams_identical_embeddings(self):
        # two disjoint teams with identical internal shape and features
        edges = [(0, 1), (1, 2), (3, 4), (4, 5)]
        forest = forest_for(edges, [[0, 1, 2], [3, 4, 5]], 6)
        model = Model(CFG, 1, 2, 0, seed=9)
        entries = build_entries(forest.num_nodes, forest.src, forest.dst,
                                True, CFG.flow_topology)
        z, _ = model.topology_channel(Tensor(forest.features), entries,
                                      forest.node_team, 2)
        np.testing.assert_allclose(z.data[0], z.data[1], rtol=1e-5, atol=1e-7)

    def test_member_order_does_not_change_embedding(self):
        edges = [(0, 1), (1, 2)]
        f1 = forest_for(edges, [[0, 1, 2]], 3)
        f2 = forest_for(edges, [[2, 0, 1]], 3)
        model = Model(CFG, 1, 2, 0, seed=10)
        out = []
        for forest in (f1, f2):
            entries = build_entries(forest.num_nodes, forest.src, forest.dst,
                                    True, CFG.flow_topology)
            z, _ = model.topology_channel(Tensor(forest.features), entries,
                                          forest.node_team, 1)
            out.append(z.data)
        np.testing.assert_allclose(out[0], out[1], rtol=1e-5, atol=1e-7)

    def test_centrality_without_edges_maps_sizes_through_theta(self):
        model = Model(CFG, 1, 2, 0, seed=11)
        entries = build_entries(3, np.empty(0, int), np.empty(0, int), True,
                                "source_to_target")
        sizes = Tensor(np.array([[3.0], [3.0], [1.0]]))
        z = model.centrality_channel(sizes, entries, 2)
        assert z.data.shape == (2, 8)
        np.testing.assert_allclose(z.data[0], z.data[1], rtol=1e-5)


class TestFusionAndHead:
    def _embeddings(self, rng, n=6, d=8):
        return {c: Tensor(rng.normal(size=(n, d))) for c in ("T", "C", "L")}

    def test_constant_gate_gives_uniform_gamma(self, rng):
        model = Model(CFG, 1, 2, 0, seed=12)
        model.params["gate.w1"].data[:] = 0
        model.params["gate.w2"].data[:] = 0
        _, gamma, active = model.fuse(self._embeddings(rng))
        np.testing.assert_allclose(gamma.data, 1 / 3, atol=1e-6)
        assert active == ["T", "C", "L"]

    def test_gamma_rows_sum_to_one(self, rng):
        model = Model(CFG, 1, 2, 0, seed=13)
        _, gamma, _ = model.fuse(self._embeddings(rng))
        np.testing.assert_allclose(gamma.data.sum(axis=1), 1.0, atol=1e-6)
        assert (gamma.data >= 0).all()

    def test_normalized_embeddings_bounded(self, rng):
        model = Model(CFG, 1, 2, 0, seed=14)
        emb = self._embeddings(rng)
        fused, gamma, _ = model.fuse(emb)
        # convex combination of unit vectors plus their mean: norm <= 2
        assert (np.linalg.norm(fused.data, axis=1) <= 2.0 + 1e-6).all()

    def test_saturated_gate_recovers_single_channel_plus_skip(self, rng):
        model = Model(CFG, 1, 2, 0, seed=15)
        emb = {"T": Tensor(rng.normal(size=(4, 8)))}
        fused, gamma, active = model.fuse(emb)
        np.testing.assert_allclose(gamma.data, 1.0, atol=1e-7)
        zt = ad.l2_norm_clamp(emb["T"], CFG.eps_norm).data
        np.testing.assert_allclose(fused.data, 2 * zt, rtol=1e-5)

    def test_zero_head_uniform_probabilities(self, rng):
        model = Model(CFG, 1, 4, 0, seed=16)
        model.params["head.w"].data[:] = 0
        model.params["head.b"].data[:] = 0
        _, probs = model.classify(Tensor(rng.normal(size=(5, 8))))
        np.testing.assert_allclose(probs.data, 0.25, atol=1e-6)

    def test_probabilities_sum_to_one(self, rng):
        model = Model(CFG, 1, 3, 0, seed=17)
        _, probs = model.classify(Tensor(rng.normal(size=(7, 8))))
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)

    def test_argmax_invariant_to_shared_bias_shift(self, rng):
        model = Model(CFG, 1, 3, 0, seed=18)
        x = Tensor(rng.normal(size=(7, 8)))
        _, p1 = model.classify(x)
        model.params["head.b"].data += 5.0
        _, p2 = model.classify(x)
        np.testing.assert_array_equal(p1.data.argmax(axis=1), p2.data.argmax(axis=1))


class TestChannelIndependence:
    def test_ablation_leaves_other_channels_bit_identical(self):
        graph, teams = gen_topology("t1", GenParams(num_nodes=120, d_min=5,
                                                    mu=2.0, seed=3))
        full_cfg = CFG.with_overrides(channels=("T", "C", "L"), seed=3)
        prep = prepare_inputs(graph, teams, full_cfg,
                              np.arange(len(teams.teams)))
        full = Model(full_cfg, 1, 3, prep.anchors.num_sets, seed=3)

        tc_cfg = full_cfg.with_overrides(channels=("T", "C"))
        partial = Model(tc_cfg, 1, 3, prep.anchors.num_sets, seed=3)
        # identical initialization for the shared channels
        for name, p in partial.params.items():
            p.data = full.params[name].data.copy()

        def run(model):
            art = model.forward(prep.forest, prep.forest_features,
                                prep.entries_t, prep.hyper_sizes,
                                prep.entries_c, prep.anchors,
                                prep.num_teams)
            return art

        a_full, a_partial = run(full), run(partial)
        np.testing.assert_array_equal(
            a_full.channel_embeddings["T"], a_partial.channel_embeddings["T"]
        )
        np.testing.assert_array_equal(
            a_full.channel_embeddings["C"], a_partial.channel_embeddings["C"]
        )
        assert np.all(a_partial.gamma[:, 2] == 0)


class TestNodeImportance:
    def test_isolated_node_zero(self):
        forest = forest_for([], [[0, 1]], 2)
        model = Model(CFG, 1, 2, 0, seed=19)
        entries, alpha = gat_alpha(model, forest)
        imp = node_importance(alpha, entries, forest)
        np.testing.assert_allclose(imp, 0.0)

    def test_star_hand_computed(self):
        # spokes 1,2,3 each point at hub 0; constant features make every
        # 2-element softmax group uniform, so each spoke pays the hub 1/2
        forest = forest_for([(1, 0), (2, 0), (3, 0)], [[0, 1, 2, 3]], 4)
        model = Model(CFG, 1, 2, 0, seed=20)
        entries, alpha = gat_alpha(model, forest, "target_to_source")
        imp = node_importance(alpha, entries, forest)
        hub = forest.copy_of[(0, 0)]
        assert imp[hub] == pytest.approx(1.5, abs=1e-6)
        for v in (1, 2, 3):
            assert imp[forest.copy_of[(0, v)]] == pytest.approx(0.0, abs=1e-7)


class TestGini:
    def test_perfect_equality(self):
        assert gini([1, 1, 1, 1]) == 0.0

    def test_single_holder_exact(self):
        assert gini([0, 0, 0, 1]) == 0.75

    def test_singleton(self):
        assert gini([5]) == 0.0

    def test_all_zero(self):
        assert gini([0.0, 0.0]) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            gini([1.0, -0.5])

    def test_range_property(self, rng):
        for _ in range(50):
            vals = rng.uniform(0, 10, size=rng.integers(1, 30))
            g = gini(vals)
            assert 0.0 <= g < 1.0

    def test_matches_pairwise_oracle(self, rng):
        for _ in range(20):
            vals = rng.uniform(0, 5, size=12)
            n, mean = len(vals), vals.mean()
            oracle = sum(abs(a - b) for a in vals for b in vals) / (
                2 * n * n * mean
            )
            assert gini(vals) == pytest.approx(oracle, rel=1e-9)


class TestFullModelGradient:
    def test_gradcheck_on_toy_instance(self, f64):
        graph, teams = gen_topology(
            "t1", GenParams(num_nodes=30, d_min=5, mu=1.0, seed=12)
        )
        cfg = TrainConfig(hidden_dim=4, dropout_topology=0.0,
                          dropout_centrality=0.0, dropout_attention=0.0,
                          anchor_c=1, seed=12)
        rows = np.arange(len(teams.teams))
        prep = prepare_inputs(graph, teams, cfg, rows)
        model = Model(cfg, 1, 3, prep.anchors.num_sets, seed=12)

        def loss_fn():
            art = model.forward(prep.forest, prep.forest_features,
                                prep.entries_t, prep.hyper_sizes,
                                prep.entries_c, prep.anchors, prep.num_teams)
            return cross_entropy(art.log_probs, prep.labels, rows)

        err = ad.grad_check(loss_fn, model.params, step=1e-5)
        assert err < 1e-4, f"max relative gradient error {err}"


def test_model_init_deterministic():
    m1 = Model(CFG, 2, 3, 5, seed=21)
    m2 = Model(CFG, 2, 3, 5, seed=21)
    assert list(m1.params) == list(m2.params)
    for name in m1.params:
        np.testing.assert_array_equal(m1.params[name].data, m2.params[name].data)
