"""Channel transform checks against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mentor.graph import TEAMLESS, Team, TeamSet, build_graph
from mentor.preprocess import collapse_hypergraph, isolate_teams, sample_anchor_sets


def g(n, edges, directed=True, features=None):
    if features is None:
        features = np.arange(n, dtype=float).reshape(-1, 1)
    return build_graph(n, edges, features, directed=directed)


def brute_force_weights(edges, teams):
    """Independent w_ij count: every (team-of-src, team-of-dst) pair of every
    edge, memberships counted with multiplicity, self-pairs dropped."""
    membership = {}
    for pos, t in enumerate(teams):
        for v in t:
            membership.setdefault(v, []).append(pos)
    w = {}
    for (s, d) in edges:
        for i in membership.get(s, ()):
            for j in membership.get(d, ()):
                if i != j:
                    w[(i, j)] = w.get((i, j), 0) + 1
    return w


class TestIsolateTeams:
    def test_shared_member_duplicated(self):
        graph = g(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        ts = TeamSet(teams=(Team(0, (0, 1, 2), 0), Team(1, (2, 3, 4), 0)),
                     num_classes=1)
        forest = isolate_teams(graph, ts)
        assert forest.num_nodes == 6  # node 2 copied into both teams
        assert (forest.orig_node == 2).sum() == 2
        # no edges cross team components
        for s, d in zip(forest.src, forest.dst):
            assert forest.node_team[s] == forest.node_team[d]

    def test_total_nodes_is_sum_of_team_sizes(self):
        graph = g(6, [(0, 1)])
        ts = TeamSet(
            teams=(Team(0, (0, 1), 0), Team(1, (1, 2, 3), 0), Team(2, (3,), 0)),
            num_classes=1,
        )
        forest = isolate_teams(graph, ts)
        assert forest.num_nodes == 2 + 3 + 1

    def test_whole_graph_team_is_isomorphic(self):
        edges = [(0, 1), (1, 2), (2, 0), (0, 3)]
        graph = g(4, edges)
        ts = TeamSet(teams=(Team(0, (0, 1, 2, 3), 0),), num_classes=1)
        forest = isolate_teams(graph, ts)
        assert forest.num_nodes == 4
        got = sorted(zip(forest.orig_node[forest.src], forest.orig_node[forest.dst]))
        assert got == sorted(edges)

    def test_disconnected_member_kept_as_isolated_copy(self):
        graph = g(4, [(0, 1)])
        ts = TeamSet(teams=(Team(0, (0, 1, 3), 0),), num_classes=1)
        forest = isolate_teams(graph, ts)
        assert forest.num_nodes == 3
        assert 3 in forest.orig_node.tolist()

    def test_teamless_nodes_absent_and_features_copied(self):
        graph = g(5, [(0, 1)])
        ts = TeamSet(teams=(Team(0, (0, 1), 0),), num_classes=1)
        forest = isolate_teams(graph, ts)
        assert forest.num_nodes == 2
        np.testing.assert_allclose(forest.features[:, 0],
                                   graph.features[forest.orig_node, 0])

    def test_internal_degree_sequence_preserved(self):
        rng = np.random.default_rng(0)
        edges = [tuple(e) for e in rng.integers(0, 12, size=(40, 2)) if e[0] != e[1]]
        graph = g(12, edges)
        members = (1, 3, 5, 7, 9)
        ts = TeamSet(teams=(Team(0, members, 0),), num_classes=1)
        forest = isolate_teams(graph, ts)
        internal = [(s, d) for s, d in set(edges)
                    if s in members and d in members]
        for v in members:
            copy = forest.copy_of[(0, v)]
            assert (forest.dst == copy).sum() == sum(1 for _, d in internal if d == v)
            assert (forest.src == copy).sum() == sum(1 for s, _ in internal if s == v)


class TestCollapseHypergraph:
    def test_three_cross_edges_one_weight(self):
        graph = g(6, [(0, 3), (1, 3), (2, 4)])
        ts = TeamSet(teams=(Team(0, (0, 1, 2), 0), Team(1, (3, 4, 5), 0)),
                     num_classes=1)
        hyper = collapse_hypergraph(graph, ts)
        assert hyper.num_hypernodes == 2
        assert hyper.edge_list() if hasattr(hyper, "edge_list") else True
        assert hyper.src.tolist() == [0]
        assert hyper.dst.tolist() == [1]
        assert hyper.weight.tolist() == [3]

    def test_no_cross_edges_no_hyperedges(self):
        graph = g(4, [(0, 1), (2, 3)])
        ts = TeamSet(teams=(Team(0, (0, 1), 0), Team(1, (2, 3), 0)),
                     num_classes=1)
        hyper = collapse_hypergraph(graph, ts)
        assert hyper.num_edges == 0

    def test_overlap_double_counts_membership(self):
        # node 1 belongs to teams 0 and 2: edge (1, 4) feeds both w_{0,1}, w_{2,1}
        graph = g(6, [(1, 4)])
        ts = TeamSet(
            teams=(Team(0, (0, 1), 0), Team(1, (4, 5), 0), Team(2, (1, 2), 0)),
            num_classes=1,
        )
        hyper = collapse_hypergraph(graph, ts)
        pairs = dict(zip(zip(hyper.src.tolist(), hyper.dst.tolist()),
                         hyper.weight.tolist()))
        assert pairs == {(0, 1): 1, (2, 1): 1}

    def test_teamless_nodes_become_extra_hypernodes(self):
        graph = g(5, [(0, 4), (4, 2)])
        ts = TeamSet(teams=(Team(0, (0, 1), 0), Team(1, (2, 3), 0)),
                     num_classes=1)
        hyper = collapse_hypergraph(graph, ts)
        assert hyper.num_hypernodes == 3
        assert hyper.team_index[2] == TEAMLESS
        pairs = dict(zip(zip(hyper.src.tolist(), hyper.dst.tolist()),
                         hyper.weight.tolist()))
        assert pairs == {(0, 2): 1, (2, 1): 1}

    def test_hypernode_features_are_team_sizes(self):
        graph = g(5, [])
        ts = TeamSet(teams=(Team(0, (0, 1, 2), 0), Team(1, (3,), 0)),
                     num_classes=1)
        hyper = collapse_hypergraph(graph, ts)
        assert hyper.hypernode_features[:, 0].tolist() == [3.0, 1.0, 1.0]

    @given(st.data())
    @settings(max_examples=25, deadline=None)
    def test_matches_brute_force_on_random_instances(self, data):
        n = data.draw(st.integers(4, 20))
        n_edges = data.draw(st.integers(0, 50))
        edges = data.draw(
            st.lists(
                st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                min_size=n_edges, max_size=n_edges,
            )
        )
        edges = list({(a, b) for a, b in edges if a != b})
        n_teams = data.draw(st.integers(1, 4))
        teams = []
        for _ in range(n_teams):
            size = data.draw(st.integers(1, max(1, n // 2)))
            members = data.draw(
                st.lists(st.integers(0, n - 1), min_size=size, max_size=size,
                         unique=True)
            )
            teams.append(tuple(members))
        graph = g(n, edges)
        ts = TeamSet(
            teams=tuple(Team(i, m, 0) for i, m in enumerate(teams)),
            num_classes=1,
        )
        hyper = collapse_hypergraph(graph, ts)

        # extend the oracle's membership with the teamless singletons
        oracle_teams = list(teams)
        for v in ts.teamless_nodes(n).tolist():
            oracle_teams.append((v,))
        want = brute_force_weights(edges, oracle_teams)
        got = dict(zip(zip(hyper.src.tolist(), hyper.dst.tolist()),
                       hyper.weight.tolist()))
        assert got == want

    def test_total_weight_counts_cross_edges_with_multiplicity(self):
        rng = np.random.default_rng(3)
        edges = list({tuple(e) for e in rng.integers(0, 30, size=(80, 2))
                      if e[0] != e[1]})
        graph = g(30, edges)
        ts = TeamSet(
            teams=(Team(0, tuple(range(10)), 0),
                   Team(1, tuple(range(8, 20)), 0),
                   Team(2, tuple(range(20, 30)), 0)),
            num_classes=1,
        )
        hyper = collapse_hypergraph(graph, ts)
        oracle = brute_force_weights(edges, [t.members for t in ts.teams])
        assert hyper.weight.sum() == sum(oracle.values())

    def test_undirected_edges_count_both_ways(self):
        graph = g(4, [(0, 2)], directed=False)
        ts = TeamSet(teams=(Team(0, (0, 1), 0), Team(1, (2, 3), 0)),
                     num_classes=1)
        hyper = collapse_hypergraph(graph, ts)
        pairs = dict(zip(zip(hyper.src.tolist(), hyper.dst.tolist()),
                         hyper.weight.tolist()))
        assert pairs == {(0, 1): 1, (1, 0): 1}


class TestAnchorSets:
    def _hyper(self, n, edges):
        graph = g(n, edges)
        ts = TeamSet(
            teams=tuple(Team(i, (i,), 0) for i in range(n)), num_classes=1
        )
        return collapse_hypergraph(graph, ts)

    def test_doubling_scheme_tiers(self):
        hyper = self._hyper(8, [(i, i + 1) for i in range(7)])
        anchors = sample_anchor_sets(hyper, 1, np.random.default_rng(0))
        assert anchors.num_sets == 3
        assert sorted(len(s) for s in anchors.sets) == [1, 2, 4]

    def test_member_distance_zero(self):
        hyper = self._hyper(8, [(i, i + 1) for i in range(7)])
        anchors = sample_anchor_sets(hyper, 2, np.random.default_rng(1))
        for i, members in enumerate(anchors.sets):
            for m in members:
                assert anchors.dist[m, i] == 0
                assert anchors.closest[m, i] == m

    def test_distance_is_min_over_members_bfs_oracle(self):
        rng = np.random.default_rng(5)
        edges = list({tuple(e) for e in rng.integers(0, 30, size=(45, 2))
                      if e[0] != e[1]})
        hyper = self._hyper(30, edges)
        anchors = sample_anchor_sets(hyper, 2, rng, cutoff=4)

        und = set()
        for a, b in edges:
            und.add((a, b))
            und.add((b, a))

        def bfs(source):
            dist = {v: np.inf for v in range(30)}
            dist[source] = 0
            for _ in range(30):
                for (x, y) in und:
                    if dist[x] + 1 < dist[y]:
                        dist[y] = dist[x] + 1
            return dist

        for i, members in enumerate(anchors.sets):
            tables = [bfs(m) for m in members]
            for v in range(30):
                want = min(t[v] for t in tables)
                if want > 4:
                    want = np.inf
                assert anchors.dist[v, i] == want

    def test_scores_zero_when_unreachable(self):
        hyper = self._hyper(4, [(0, 1)])
        anchors = sample_anchor_sets(hyper, 1, np.random.default_rng(0), cutoff=2)
        s = anchors.scores()
        assert np.isfinite(s).all()
        assert ((s >= 0) & (s <= 1)).all()

    def test_requires_two_hypernodes(self):
        hyper = self._hyper(1, [])
        with pytest.raises(ValueError):
            sample_anchor_sets(hyper, 1, np.random.default_rng(0))
