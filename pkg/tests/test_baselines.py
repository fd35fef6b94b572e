"""Feature extraction and classical model checks."""

import numpy as np
import pytest

from mentor.baselines import (
    FEATURE_NAMES,
    logreg_fit,
    mlp_fit,
    subgraph_features,
    team_feature_matrix,
)
from mentor.graph import Team, TeamSet, build_graph
from mentor.training import Normalizer


def g(n, edges, directed=True, features=None):
    if features is None:
        features = np.zeros((n, 1))
    return build_graph(n, edges, features, directed=directed)


def feat(graph, members, aggr="mean"):
    vec = subgraph_features(graph, Team(0, tuple(members), 0), aggr)
    return dict(zip(FEATURE_NAMES, vec[: len(FEATURE_NAMES)])), vec[len(FEATURE_NAMES):]


class TestSubgraphFeatures:
    def test_directed_clique(self):
        members = (0, 1, 2, 3)
        edges = [(a, b) for a in members for b in members if a != b]
        graph = g(5, edges)
        f, _ = feat(graph, members)
        assert f["internal_edges"] == 12
        assert f["density"] == 1.0
        assert f["avg_clustering"] == 1.0
        assert f["team_size"] == 4

    def test_undirected_clique(self):
        members = (0, 1, 2, 3)
        edges = [(a, b) for i, a in enumerate(members) for b in members[i + 1:]]
        graph = g(4, edges, directed=False)
        f, _ = feat(graph, members)
        assert f["internal_edges"] == 6
        assert f["density"] == 1.0
        assert f["avg_clustering"] == 1.0

    def test_empty_team_interior(self):
        graph = g(6, [(0, 4), (5, 1)])
        f, _ = feat(graph, (0, 1, 2))
        assert f["internal_edges"] == 0
        assert f["density"] == 0.0
        assert f["avg_clustering"] == 0.0
        assert f["assortativity"] == 0.0
        assert f["assortativity_imputed"] == 1.0

    def test_external_counts_against_hand_scan(self):
        # 8-node instance, team {0,1,2}; external ins from 5 (twice via 0,1)
        edges = [(5, 0), (5, 1), (6, 0), (0, 1), (1, 2), (2, 7), (0, 7), (7, 3)]
        graph = g(8, edges)
        f, _ = feat(graph, (0, 1, 2))
        assert f["total_followers_in"] == 3
        assert f["unique_followers_in"] == 2  # {5, 6}
        assert f["total_followings_out"] == 2  # (2,7), (0,7)
        assert f["unique_followings_out"] == 1  # {7}
        assert f["internal_edges"] == 2

    @pytest.mark.parametrize("aggr", ["sum", "mean", "max", "min"])
    def test_attribute_aggregation(self, aggr):
        feats = np.array([[1.0], [2.0], [4.0], [99.0]])
        graph = g(4, [], features=feats)
        _, agg = feat(graph, (0, 1, 2), aggr)
        want = {"sum": 7.0, "mean": 7 / 3, "max": 4.0, "min": 1.0}[aggr]
        assert agg[0] == pytest.approx(want)

    def test_member_order_invariance(self, rng):
        edges = [tuple(e) for e in rng.integers(0, 10, size=(25, 2)) if e[0] != e[1]]
        graph = g(10, list(set(edges)), features=rng.normal(size=(10, 2)))
        a = subgraph_features(graph, Team(0, (1, 3, 5, 7), 0), "mean")
        b = subgraph_features(graph, Team(0, (7, 1, 5, 3), 0), "mean")
        np.testing.assert_allclose(a, b)

    def test_matrix_shape_and_names(self):
        graph = g(6, [(0, 1)], features=np.ones((6, 2)))
        ts = TeamSet(teams=(Team(0, (0, 1), 0), Team(1, (2, 3), 1)), num_classes=2)
        x, names = team_feature_matrix(graph, ts, "mean")
        assert x.shape == (2, len(names))
        assert names[: len(FEATURE_NAMES)] == FEATURE_NAMES


class TestLogreg:
    def test_linearly_separable(self, rng):
        x = np.vstack([rng.normal(-3, 0.3, size=(40, 2)),
                       rng.normal(3, 0.3, size=(40, 2))])
        y = np.array([0] * 40 + [1] * 40)
        model = logreg_fit(x, y, c_reg=100.0)
        acc = (model.predict_proba(x).argmax(axis=1) == y).mean()
        assert acc == 1.0

    def test_identical_features_uniform_probabilities(self):
        x = np.ones((30, 3))
        y = np.array([0, 1, 2] * 10)
        model = logreg_fit(x, y)
        np.testing.assert_allclose(model.predict_proba(x), 1 / 3, atol=1e-3)

    def test_monotone_rescaling_refit_matches_accuracy(self, rng):
        x = rng.normal(size=(120, 4))
        w_true = rng.normal(size=(4, 3))
        y = (x @ w_true).argmax(axis=1)

        def acc_with(xx):
            norm = Normalizer("standard").fit(xx)
            m = logreg_fit(norm.transform(xx), y, c_reg=10.0)
            return (m.predict_proba(norm.transform(xx)).argmax(axis=1) == y).mean()

        base = acc_with(x)
        scaled = x.copy()
        scaled[:, 2] = scaled[:, 2] * 1000.0 - 5.0
        assert abs(acc_with(scaled) - base) <= 0.005


class TestMlp:
    def test_xor_style_toy(self, rng):
        n = 200
        x = rng.uniform(-1, 1, size=(n, 2))
        y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(int)
        model = mlp_fit(x, y, hidden=16, layers=1, dropout=0.0, lr=0.01,
                        epochs=400, seed=0)
        acc = (model.predict_proba(x).argmax(axis=1) == y).mean()
        assert acc > 0.95

    def test_zero_epoch_model_probabilities_sum_to_one(self, rng):
        x = rng.normal(size=(10, 3))
        y = np.array([0, 1, 2] * 3 + [0])
        model = mlp_fit(x, y, epochs=0, seed=1)
        probs = model.predict_proba(x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_layer_count_validated(self):
        from mentor.baselines import MLPBaseline

        with pytest.raises(ValueError):
            MLPBaseline(3, 2, layers=4)
