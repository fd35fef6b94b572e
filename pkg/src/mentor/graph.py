"""Directed graph and team containers shared by every other module.

Graphs are immutable after construction: edges are stored as a flat,
lexicographically sorted edge list with CSR-style offsets for both the
out- and in-direction, so neighbor iteration is cheap either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "Direction",
    "Graph",
    "Team",
    "TeamSet",
    "WeightedHypergraph",
    "build_graph",
    "degree",
    "shortest_paths",
]

TEAMLESS = -1


class Direction(Enum):
    IN = "in"
    OUT = "out"


class GraphError(ValueError):
    """Raised for malformed graph construction inputs."""


@dataclass(frozen=True)
class Graph:
    """A (multi-)graph with dense per-node features.

    ``src``/``dst`` are parallel int64 arrays sorted by (src, dst).  For
    undirected graphs each edge is stored once; adjacency queries expand
    it symmetrically.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    directed: bool
    features: np.ndarray

    # CSR offsets, built once in build_graph
    _out_offsets: np.ndarray = field(repr=False, default=None)
    _out_targets: np.ndarray = field(repr=False, default=None)
    _in_offsets: np.ndarray = field(repr=False, default=None)
    _in_sources: np.ndarray = field(repr=False, default=None)

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def edge_list(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))

    def out_neighbors(self, v: int) -> np.ndarray:
        """Targets of edges leaving v (for undirected graphs: all neighbors)."""
        lo, hi = self._out_offsets[v], self._out_offsets[v + 1]
        out = self._out_targets[lo:hi]
        if not self.directed:
            lo, hi = self._in_offsets[v], self._in_offsets[v + 1]
            out = np.concatenate([out, self._in_sources[lo:hi]])
        return out

    def in_neighbors(self, v: int) -> np.ndarray:
        """Sources of edges entering v (for undirected graphs: all neighbors)."""
        lo, hi = self._in_offsets[v], self._in_offsets[v + 1]
        out = self._in_sources[lo:hi]
        if not self.directed:
            lo, hi = self._out_offsets[v], self._out_offsets[v + 1]
            out = np.concatenate([out, self._out_targets[lo:hi]])
        return out

    def undirected_adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR (offsets, neighbors) of the undirected view, duplicates kept."""
        both_src = np.concatenate([self.src, self.dst])
        both_dst = np.concatenate([self.dst, self.src])
        order = np.argsort(both_src, kind="stable")
        offsets = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.add.at(offsets, both_src + 1, 1)
        np.cumsum(offsets, out=offsets)
        return offsets, both_dst[order]


@dataclass(frozen=True)
class Team:
    team_id: int
    members: tuple[int, ...]
    label: int


@dataclass(frozen=True)
class TeamSet:
    """Possibly overlapping labeled node subsets over one graph."""

    teams: tuple[Team, ...]
    num_classes: int

    def __post_init__(self):
        for t in self.teams:
            if len(set(t.members)) != len(t.members):
                raise GraphError(f"team {t.team_id} has repeated members")
            if not 0 <= t.label < self.num_classes:
                raise GraphError(f"team {t.team_id} label {t.label} out of range")

    def __len__(self) -> int:
        return len(self.teams)

    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.teams], dtype=np.int64)

    def teamless_nodes(self, num_nodes: int) -> np.ndarray:
        assigned = np.zeros(num_nodes, dtype=bool)
        for t in self.teams:
            assigned[list(t.members)] = True
        return np.flatnonzero(~assigned)


@dataclass(frozen=True)
class WeightedHypergraph:
    """Team-collapsed graph: one hypernode per team plus one per teamless node.

    ``team_index[h]`` is the owning team id or TEAMLESS for hypernodes that
    stand in for nodes outside every team.  Edge weights count original
    cross-team edges (with membership multiplicity for overlapping teams).
    """

    num_hypernodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    hypernode_features: np.ndarray  # (n', 1) original team sizes
    team_index: tuple[int, ...]
    directed: bool = True

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])


def build_graph(
    num_nodes: int,
    edges,
    features: np.ndarray,
    *,
    directed: bool = True,
    dedup_edges: bool = True,
) -> Graph:
    """Construct an immutable Graph from an edge list and feature matrix.

    Duplicate edges are collapsed when ``dedup_edges`` is set (generators use
    set semantics); with the flag off a duplicate raises.
    """
    if num_nodes < 0:
        raise GraphError("num_nodes must be non-negative")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise GraphError("features must be a 2-d matrix")
    if features.shape[0] != num_nodes:
        raise GraphError(
            f"feature rows ({features.shape[0]}) != num_nodes ({num_nodes})"
        )

    edges = list(edges)
    if edges:
        arr = np.asarray(edges, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise GraphError("edges must be (src, dst) pairs")
        if arr.min() < 0 or arr.max() >= num_nodes:
            raise GraphError("edge endpoint out of range")
        order = np.lexsort((arr[:, 1], arr[:, 0]))
        arr = arr[order]
        if arr.shape[0] > 1:
            dup = np.all(arr[1:] == arr[:-1], axis=1)
            if dup.any():
                if not dedup_edges:
                    raise GraphError("duplicate edges present and dedup_edges is off")
                arr = np.concatenate([arr[:1], arr[1:][~dup]])
        src, dst = arr[:, 0].copy(), arr[:, 1].copy()
    else:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)

    out_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(out_offsets, src + 1, 1)
    np.cumsum(out_offsets, out=out_offsets)
    out_targets = dst.copy()

    in_order = np.lexsort((src, dst))
    in_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(in_offsets, dst + 1, 1)
    np.cumsum(in_offsets, out=in_offsets)
    in_sources = src[in_order]

    g = Graph(
        num_nodes=num_nodes,
        src=src,
        dst=dst,
        directed=directed,
        features=features,
        _out_offsets=out_offsets,
        _out_targets=out_targets,
        _in_offsets=in_offsets,
        _in_sources=in_sources,
    )
    g.src.setflags(write=False)
    g.dst.setflags(write=False)
    g.features.setflags(write=False)
    return g


def degree(graph: Graph, v: int, direction: Direction) -> int:
    """Count of edges incident to v in the given direction.

    For undirected graphs both directions return the full incident count,
    each stored edge counted once per endpoint.
    """
    if not 0 <= v < graph.num_nodes:
        raise GraphError(f"node id {v} out of range")
    if direction is Direction.IN:
        return int(graph.in_neighbors(v).shape[0])
    return int(graph.out_neighbors(v).shape[0])


def shortest_paths(graph, sources, cutoff: int) -> dict[int, np.ndarray]:
    """Hop distances from each source, truncated at ``cutoff``.

    Distances are computed on the undirected view regardless of edge
    orientation; entries beyond the cutoff (or unreachable) are +inf.
    Accepts a Graph or a WeightedHypergraph (weights ignored: pure hops).
    """
    if cutoff < 1:
        raise GraphError("cutoff must be >= 1")
    offsets, neighbors = _undirected_csr(graph)
    table: dict[int, np.ndarray] = {}
    for s in sources:
        if not 0 <= s < _node_count(graph):
            raise GraphError(f"source {s} out of range")
        table[int(s)] = _bfs(offsets, neighbors, int(s), cutoff)
    return table


def _node_count(graph) -> int:
    if isinstance(graph, WeightedHypergraph):
        return graph.num_hypernodes
    return graph.num_nodes


def _undirected_csr(graph) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(graph, WeightedHypergraph):
        n = graph.num_hypernodes
        both_src = np.concatenate([graph.src, graph.dst])
        both_dst = np.concatenate([graph.dst, graph.src])
        order = np.argsort(both_src, kind="stable")
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.add.at(offsets, both_src + 1, 1)
        np.cumsum(offsets, out=offsets)
        return offsets, both_dst[order]
    return graph.undirected_adjacency()


def _bfs(offsets: np.ndarray, neighbors: np.ndarray, source: int, cutoff: int) -> np.ndarray:
    n = offsets.shape[0] - 1
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    frontier = [source]
    d = 0
    while frontier and d < cutoff:
        d += 1
        nxt = []
        for u in frontier:
            for w in neighbors[offsets[u] : offsets[u + 1]]:
                if dist[w] == np.inf:
                    dist[w] = d
                    nxt.append(int(w))
        frontier = nxt
    return dist


def multi_source_distances(
    graph, members: np.ndarray, cutoff: int
) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the closest member of a node set, with the winning member.

    Returns ``(dist, closest)`` over all nodes; unreachable entries are
    (+inf, -1).  Equidistant ties resolve to the member found first in the
    sorted scan order, a fixed rule that keeps anchor structures deterministic.
    """
    offsets, neighbors = _undirected_csr(graph)
    n = offsets.shape[0] - 1
    dist = np.full(n, np.inf)
    closest = np.full(n, -1, dtype=np.int64)
    frontier = sorted(int(m) for m in members)
    for m in frontier:
        dist[m] = 0.0
        closest[m] = m
    d = 0
    while frontier and d < cutoff:
        d += 1
        nxt = []
        for u in frontier:
            for w in neighbors[offsets[u] : offsets[u + 1]]:
                if closest[w] == -1:
                    dist[w] = d
                    closest[w] = closest[u]
                    nxt.append(int(w))
        frontier = sorted(nxt)
    return dist, closest
