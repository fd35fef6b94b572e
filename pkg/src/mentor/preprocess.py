"""Channel-specific graph transforms.

- isolate_teams: detach every team into its own component, duplicating
  shared members, for the topology channel.
- collapse_hypergraph: one hypernode per team (plus one per teamless node)
  with integer cross-team edge weights, for the centrality and contextual
  channels.
- sample_anchor_sets: random reference node sets with truncated hop
  distances over the hypergraph, for the contextual channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import (
    TEAMLESS,
    Graph,
    TeamSet,
    WeightedHypergraph,
    multi_source_distances,
)

__all__ = [
    "IsolatedForest",
    "AnchorSets",
    "isolate_teams",
    "collapse_hypergraph",
    "sample_anchor_sets",
]


@dataclass(frozen=True)
class IsolatedForest:
    """Union of detached team subgraphs.

    A node belonging to k teams appears as k disconnected copies with
    identical features; nodes outside every team are absent.  ``node_team``
    maps each copy to its team position (TeamSet order) and ``orig_node``
    back to the source graph node.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray
    node_team: np.ndarray
    orig_node: np.ndarray
    num_teams: int
    directed: bool
    copy_of: dict[tuple[int, int], int]


@dataclass(frozen=True)
class AnchorSets:
    """Sampled reference sets over the hypergraph with truncated distances.

    ``dist[v, i]`` is the hop distance from hypernode v to the closest member
    of set i (inf beyond the cutoff); ``closest[v, i]`` is that member (-1 if
    unreachable); ``score = 1 / (dist + 1)`` with unreachable scored 0.
    """

    sets: tuple[tuple[int, ...], ...]
    dist: np.ndarray
    closest: np.ndarray
    cutoff: int

    @property
    def num_sets(self) -> int:
        return len(self.sets)

    def scores(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            s = 1.0 / (self.dist + 1.0)
        s[~np.isfinite(self.dist)] = 0.0
        return s


def isolate_teams(graph: Graph, teams: TeamSet) -> IsolatedForest:
    """Detach each team: keep only edges internal to it, duplicate overlaps."""
    copy_of: dict[tuple[int, int], int] = {}
    orig, node_team = [], []
    for pos, team in enumerate(teams.teams):
        for v in team.members:
            copy_of[(team.team_id, v)] = len(orig)
            orig.append(v)
            node_team.append(pos)
    orig_node = np.array(orig, dtype=np.int64)
    node_team_arr = np.array(node_team, dtype=np.int64)

    membership: dict[int, list[int]] = {}
    for pos, team in enumerate(teams.teams):
        for v in team.members:
            membership.setdefault(v, []).append(pos)

    team_of_copy_lookup = {}
    for pos, team in enumerate(teams.teams):
        for v in team.members:
            team_of_copy_lookup[(pos, v)] = copy_of[(team.team_id, v)]

    src_out, dst_out = [], []
    for s, d in zip(graph.src.tolist(), graph.dst.tolist()):
        for pos in membership.get(s, ()):
            t = team_of_copy_lookup.get((pos, d))
            if t is not None:
                src_out.append(team_of_copy_lookup[(pos, s)])
                dst_out.append(t)

    features = graph.features[orig_node] if orig_node.size else np.zeros(
        (0, graph.feature_dim)
    )
    return IsolatedForest(
        num_nodes=len(orig),
        src=np.array(src_out, dtype=np.int64),
        dst=np.array(dst_out, dtype=np.int64),
        features=features,
        node_team=node_team_arr,
        orig_node=orig_node,
        num_teams=len(teams.teams),
        directed=graph.directed,
        copy_of=copy_of,
    )


def collapse_hypergraph(graph: Graph, teams: TeamSet) -> WeightedHypergraph:
    """Collapse teams to hypernodes; w_ij counts original cross-team edges.

    An edge whose endpoint sits in several overlapping teams contributes to
    every (source team, target team) pair; internal pairs (i == j) are
    dropped.  Every teamless node becomes one extra singleton hypernode.
    For undirected graphs each stored edge counts once per orientation.
    """
    n_teams = len(teams.teams)
    membership: dict[int, list[int]] = {}
    for pos, team in enumerate(teams.teams):
        for v in team.members:
            membership.setdefault(v, []).append(pos)

    teamless = teams.teamless_nodes(graph.num_nodes)
    team_index: list[int] = [t.team_id for t in teams.teams] + [TEAMLESS] * len(teamless)
    sizes = [len(t.members) for t in teams.teams] + [1] * len(teamless)
    for extra, v in enumerate(teamless.tolist()):
        membership[v] = [n_teams + extra]

    weights: dict[tuple[int, int], int] = {}
    pairs = zip(graph.src.tolist(), graph.dst.tolist())
    for s, d in pairs:
        for hi in membership.get(s, ()):
            for hj in membership.get(d, ()):
                if hi != hj:
                    weights[(hi, hj)] = weights.get((hi, hj), 0) + 1
                    if not graph.directed:
                        weights[(hj, hi)] = weights.get((hj, hi), 0) + 1

    items = sorted(weights.items())
    src = np.array([k[0] for k, _ in items], dtype=np.int64)
    dst = np.array([k[1] for k, _ in items], dtype=np.int64)
    w = np.array([v for _, v in items], dtype=np.int64)
    return WeightedHypergraph(
        num_hypernodes=n_teams + len(teamless),
        src=src,
        dst=dst,
        weight=w,
        hypernode_features=np.array(sizes, dtype=np.float64).reshape(-1, 1),
        team_index=tuple(team_index),
        directed=True,
    )


def sample_anchor_sets(
    hyper: WeightedHypergraph,
    c: int,
    rng: np.random.Generator,
    cutoff: int = 4,
) -> AnchorSets:
    """Sample c anchor sets per doubling size tier (1, 2, 4, ...).

    There are ceil(log2 n) tiers, members drawn uniformly without
    replacement; distances are pure hop counts on the undirected hypergraph
    view, truncated at ``cutoff``.
    """
    n = hyper.num_hypernodes
    if n < 2:
        raise ValueError("need at least 2 hypernodes to sample anchors")
    tiers = int(np.ceil(np.log2(n)))
    sets: list[tuple[int, ...]] = []
    for tier in range(tiers):
        size = min(2**tier, n)
        for _ in range(c):
            members = rng.choice(n, size=size, replace=False)
            sets.append(tuple(int(m) for m in members))

    dist = np.zeros((n, len(sets)))
    closest = np.zeros((n, len(sets)), dtype=np.int64)
    for i, members in enumerate(sets):
        d, cl = multi_source_distances(hyper, np.array(members), cutoff)
        dist[:, i] = d
        closest[:, i] = cl
    return AnchorSets(sets=tuple(sets), dist=dist, closest=closest, cutoff=cutoff)
