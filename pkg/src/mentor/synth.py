"""Seeded synthetic benchmark generators.

Every generator is a pure function of its parameters and seed: the same
inputs always produce the same graph, and bundles written from them are
byte-identical.  Node features are a constant 1.0 except for the
attribute toy, whose single feature column carries the skill signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .graph import Graph, Team, TeamSet, build_graph
from .metrics import quantile_labels

__all__ = [
    "Motif",
    "GenParams",
    "MOTIF_STAR_IN",
    "MOTIF_STAR_OUT",
    "MOTIF_STAR_MIXED",
    "TOPOLOGY_MOTIFS",
    "directed_erdos_renyi",
    "team_maker",
    "motif_adder",
    "gen_centrality",
    "gen_topology",
    "gen_contextual",
    "gen_contextual_topology",
    "gen_attribute_toy",
    "discrete_power_law",
    "attribute_toy_special_nodes",
]


@dataclass(frozen=True)
class Motif:
    """A fixed directed edge pattern stamped onto sampled team members."""

    arity: int
    pattern: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.pattern:
            raise ValueError("motif pattern must be non-empty")
        for a, b in self.pattern:
            if not (0 <= a < self.arity and 0 <= b < self.arity):
                raise ValueError("motif pattern index out of range")


MOTIF_STAR_IN = Motif(4, ((1, 0), (2, 0), (3, 0)))
MOTIF_STAR_OUT = Motif(4, ((0, 1), (0, 2), (0, 3)))
MOTIF_STAR_MIXED = Motif(4, ((1, 0), (2, 0), (0, 3)))

# The topology-task trio: equal directed edge counts, no triangles, and
# similar sparse tree shapes keep per-team summary statistics silent, while
# the in-degree increments (3+1, 2+2, 4) stay distinguishable through one
# message-passing direction even after repeated overlapping stamps.
MOTIF_HUB_WITH_TAIL = Motif(5, ((1, 0), (2, 0), (3, 0), (3, 4)))
MOTIF_TWIN_COLLECTORS = Motif(5, ((2, 0), (3, 0), (3, 1), (4, 1)))
MOTIF_HUB5 = Motif(5, ((1, 0), (2, 0), (3, 0), (4, 0)))
TOPOLOGY_MOTIFS = (MOTIF_HUB_WITH_TAIL, MOTIF_TWIN_COLLECTORS, MOTIF_HUB5)


@dataclass(frozen=True)
class GenParams:
    num_nodes: int = 10_000
    er_m: int = 1
    d_min: int = 5
    mu: float = 5.0
    motif_ratio: float = 0.8
    num_classes: int = 3
    delta: float = 20.0
    overlap: bool = False
    overlap_fraction: float = 0.15
    teamless_fraction: float = 0.0
    num_teams: int = 1000
    rewire_prob: float = 0.1
    w_topo: float = 1.0
    w_ctx: float = 1.0
    heavy_tail_top: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d_min < 1:
            raise ValueError("d_min must be >= 1")
        if not 0.0 < self.motif_ratio <= 1.0:
            raise ValueError("motif_ratio must be in (0, 1]")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0.0 <= self.teamless_fraction < 1.0:
            raise ValueError("teamless_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _ones_features(n: int) -> np.ndarray:
    return np.ones((n, 1))


def directed_erdos_renyi(n: int, m: int, rng: np.random.Generator) -> Graph:
    """Each node emits m uniform draws over the other nodes; edges form a set."""
    if n < 2:
        raise ValueError("directed_erdos_renyi needs n >= 2")
    if m < 1:
        raise ValueError("directed_erdos_renyi needs m >= 1")
    draws = rng.integers(0, n - 1, size=(n, m))
    targets = draws + (draws >= np.arange(n)[:, None])
    src = np.repeat(np.arange(n), m)
    edges = list(zip(src.tolist(), targets.reshape(-1).tolist()))
    return build_graph(n, edges, _ones_features(n))


def _er_edges(n: int, m: int, rng: np.random.Generator) -> set[tuple[int, int]]:
    draws = rng.integers(0, n - 1, size=(n, m))
    targets = draws + (draws >= np.arange(n)[:, None])
    src = np.repeat(np.arange(n), m)
    return set(zip(src.tolist(), targets.reshape(-1).tolist()))


def _partition_teams(
    n: int,
    d_min: int,
    mu: float,
    rng: np.random.Generator,
    overlap: bool,
    overlap_fraction: float,
    teamless_fraction: float,
) -> tuple[list[list[int]], list[int]]:
    """Shuffle nodes, reserve a teamless slice, chop the rest into teams of
    size d_min + Poisson(mu).  A final remainder smaller than d_min is
    appended to the last team, so every non-teamless node stays assigned."""
    order = rng.permutation(n)
    n_teamless = int(math.floor(teamless_fraction * n))
    teamless = order[:n_teamless].tolist()
    pool = order[n_teamless:]
    if pool.shape[0] < d_min:
        raise ValueError("graph smaller than the minimum team size")

    teams: list[list[int]] = []
    pos = 0
    while pos < pool.shape[0]:
        size = d_min + int(rng.poisson(mu))
        chunk = pool[pos : pos + size]
        pos += size
        if chunk.shape[0] < d_min and teams:
            teams[-1].extend(chunk.tolist())
        else:
            teams.append(chunk.tolist())

    if overlap and len(teams) > 1:
        owner = np.empty(n, dtype=np.int64)
        for ti, members in enumerate(teams):
            owner[members] = ti
        teamed = pool.copy()
        k = int(math.floor(overlap_fraction * teamed.shape[0]))
        twice = rng.permutation(teamed)[:k]
        for v in twice.tolist():
            other = int(rng.integers(0, len(teams) - 1))
            if other >= owner[v]:
                other += 1
            teams[other].append(v)
    return teams, teamless


def team_maker(
    graph: Graph,
    d_min: int,
    mu: float,
    rng: np.random.Generator,
    overlap: bool = False,
    teamless_fraction: float = 0.0,
) -> TeamSet:
    """Group graph nodes into variable-size teams (labels are placeholders)."""
    members, _ = _partition_teams(
        graph.num_nodes, d_min, mu, rng, overlap, 0.15 if overlap else 0.0,
        teamless_fraction,
    )
    return TeamSet(
        teams=tuple(
            Team(team_id=i, members=tuple(m), label=0) for i, m in enumerate(members)
        ),
        num_classes=1,
    )


def _motif_edges(
    members, ratio: float, motif: Motif, rng: np.random.Generator
) -> list[tuple[int, int]]:
    members = list(members)
    if len(members) < motif.arity:
        raise ValueError(
            f"team of {len(members)} smaller than motif arity {motif.arity}"
        )
    reps = int(math.floor(len(members) * ratio))
    out = []
    for _ in range(reps):
        chosen = rng.choice(members, size=motif.arity, replace=False)
        for a, b in motif.pattern:
            out.append((int(chosen[a]), int(chosen[b])))
    return out


def motif_adder(
    graph: Graph, members, ratio: float, motif: Motif, rng: np.random.Generator
) -> Graph:
    """Stamp ``floor(|team| * ratio)`` motif copies over the team, set union."""
    new_edges = _motif_edges(members, ratio, motif, rng)
    edges = set(zip(graph.src.tolist(), graph.dst.tolist()))
    edges.update(new_edges)
    return build_graph(
        graph.num_nodes, sorted(edges), graph.features, directed=graph.directed
    )


def discrete_power_law(
    rng: np.random.Generator, x_min: float, alpha: float = 3.0, size: int = 1
) -> np.ndarray:
    """Inverse-CDF draws of an integer power law P(x) ~ x^-alpha, x >= x_min."""
    u = rng.random(size)
    return np.floor(x_min * u ** (-1.0 / (alpha - 1.0))).astype(np.int64)


def _inject_links(
    edges: set,
    members,
    n_links: int,
    num_nodes: int,
    direction: str,
    rng: np.random.Generator,
) -> None:
    """Attach n_links distinct external endpoints to one random member."""
    member_set = set(members)
    v = int(rng.choice(list(members)))
    n_links = min(n_links, num_nodes - len(member_set))
    if n_links <= 0:
        return
    targets: list[int] = []
    seen = set(member_set)
    while len(targets) < n_links:
        for u in rng.integers(0, num_nodes, size=2 * (n_links - len(targets)) + 8):
            u = int(u)
            if u not in seen:
                seen.add(u)
                targets.append(u)
                if len(targets) == n_links:
                    break
    if direction == "in":
        edges.update((u, v) for u in targets)
    elif direction == "out":
        edges.update((v, u) for u in targets)
    else:
        raise ValueError(f"unknown direction {direction!r}")


def gen_centrality(params: GenParams, direction: str = "in") -> tuple[Graph, TeamSet]:
    """External-connectivity task: one member of each team gains a class-scaled
    number of in- (or out-) edges; internal structure is a shared motif over
    an ER base.

    Class means sit at delta, 2*delta, ..., C*delta with unit spread, one
    class per team drawn uniformly.  With ``heavy_tail_top`` the extra
    power-law class of the generation recipe is drawn alongside and merged
    into the top label; it is off by default, which keeps the classes
    balanced.
    """
    if params.num_classes != 3:
        raise ValueError("gen_centrality is defined for 3 classes")
    if direction not in ("in", "out"):
        raise ValueError(f"unknown direction {direction!r}")
    rng = np.random.default_rng(params.seed)
    n, c = params.num_nodes, params.num_classes
    edges = _er_edges(n, params.er_m, rng)
    teams, _ = _partition_teams(n, params.d_min, params.mu, rng, False, 0.0, 0.0)
    centers = [params.delta * (j + 1) for j in range(c)]

    for members in teams:
        edges.update(_motif_edges(members, params.motif_ratio, MOTIF_STAR_OUT, rng))

    labels = []
    x_min = (centers[-1] + params.delta) * (3.0 - 2.0) / (3.0 - 1.0)
    hi = c + 1 if params.heavy_tail_top else c
    for members in teams:
        j = int(rng.integers(0, hi))
        if j < c:
            n_links = int(round(rng.normal(centers[j], 1.0)))
        else:
            n_links = int(discrete_power_law(rng, x_min)[0])
        _inject_links(edges, members, max(n_links, 0), n, direction, rng)
        labels.append(min(j, c - 1))

    graph = build_graph(n, sorted(edges), _ones_features(n))
    teamset = TeamSet(
        teams=tuple(
            Team(team_id=i, members=tuple(m), label=labels[i])
            for i, m in enumerate(teams)
        ),
        num_classes=c,
    )
    return graph, teamset


def gen_topology(variant: str, params: GenParams) -> tuple[Graph, TeamSet]:
    """Internal-structure task: the team label is the index of the motif used
    to build its internal pattern.

    T1/T3 ride on m=5 ER noise; T2 uses m=1 plus class-independent external
    link injection (the centrality recipe without its class discrimination);
    T3 additionally overlaps teams and leaves a node fraction teamless.
    """
    variant = variant.lower()
    if variant not in ("t1", "t2", "t3"):
        raise ValueError(f"unknown topology variant {variant!r}")
    rng = np.random.default_rng(params.seed)
    n = params.num_nodes

    er_m = 1 if variant == "t2" else 5
    overlap = variant == "t3" or params.overlap
    teamless = params.teamless_fraction if params.teamless_fraction else (
        0.167 if variant == "t3" else 0.0
    )

    edges = _er_edges(n, er_m, rng)
    teams, _ = _partition_teams(
        n, params.d_min, params.mu, rng, overlap, params.overlap_fraction, teamless
    )

    labels = []
    for members in teams:
        j = int(rng.integers(0, 3))
        edges.update(
            _motif_edges(members, params.motif_ratio, TOPOLOGY_MOTIFS[j], rng)
        )
        labels.append(j)

    if variant == "t2":
        for members in teams:
            n_links = int(round(rng.normal(params.delta, 1.0)))
            _inject_links(edges, members, max(n_links, 0), n, "in", rng)

    graph = build_graph(n, sorted(edges), _ones_features(n))
    teamset = TeamSet(
        teams=tuple(
            Team(team_id=i, members=tuple(m), label=labels[i])
            for i, m in enumerate(teams)
        ),
        num_classes=3,
    )
    return graph, teamset


def gen_contextual(n_cliques: int = 200, clique_size: int = 10) -> tuple[Graph, TeamSet]:
    """Caveman ring: fully connected cliques bridged by one rewired edge each;
    the label is the third of the ring a clique sits in.

    Deterministic by construction (no randomness enters the layout), and the
    rewiring preserves the total edge count n_cliques * k * (k-1) / 2.
    """
    if n_cliques < 3:
        raise ValueError("need at least 3 cliques to trisect the ring")
    if clique_size < 2:
        raise ValueError("clique_size must be >= 2")
    k = clique_size
    edges = []
    for i in range(n_cliques):
        base = i * k
        for a in range(k):
            for b in range(a + 1, k):
                if a == 0 and b == 1:
                    continue  # rewired to bridge the next clique
                edges.append((base + a, base + b))
        edges.append((base, ((i + 1) % n_cliques) * k))
    n = n_cliques * k
    graph = build_graph(n, edges, _ones_features(n), directed=False)
    teamset = TeamSet(
        teams=tuple(
            Team(
                team_id=i,
                members=tuple(range(i * k, (i + 1) * k)),
                label=(3 * i) // n_cliques,
            )
            for i in range(n_cliques)
        ),
        num_classes=3,
    )
    return graph, teamset


def _sign_pos(x: float) -> float:
    return 1.0 if x >= 0 else -1.0


def gen_contextual_topology(params: GenParams) -> tuple[Graph, TeamSet]:
    """Mixed task: label is a quantile trisection of the equally weighted
    average of a standardized in-degree Gini (internal ring vs star blueprint,
    randomly rewired) and a standardized latent-plane score rho*sign(cos
    theta); teams connect to their 6 nearest latent neighbors.
    """
    if params.num_classes != 3:
        raise ValueError("gen_contextual_topology is defined for 3 classes")
    rng = np.random.default_rng(params.seed)

    sizes = [params.d_min + int(rng.poisson(params.mu)) for _ in range(params.num_teams)]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    n = int(starts[-1])
    teams = [list(range(starts[i], starts[i + 1])) for i in range(params.num_teams)]

    edges: set[tuple[int, int]] = set()
    topo_scores = np.zeros(params.num_teams)
    for ti, members in enumerate(teams):
        size = len(members)
        if rng.integers(0, 2) == 0:
            internal = [(members[a], members[(a + 1) % size]) for a in range(size)]
        else:
            internal = [(members[a], members[0]) for a in range(1, size)]
        rewired = []
        for (u, v) in internal:
            if rng.random() < params.rewire_prob:
                w = int(rng.choice([m for m in members if m != u]))
                rewired.append((u, w))
            else:
                rewired.append((u, v))
        rewired = set(rewired)
        edges.update(rewired)
        indeg = np.zeros(size)
        for (_, v) in rewired:
            indeg[members.index(v)] += 1
        topo_scores[ti] = _gini_values(indeg)

    theta = rng.uniform(0.0, 2.0 * np.pi, size=params.num_teams)
    rho = np.sqrt(rng.uniform(0.0, 1.0, size=params.num_teams))
    ctx_scores = rho * np.array([_sign_pos(math.cos(t)) for t in theta])
    xy = np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=1)

    def standardize(v):
        sd = v.std()
        return (v - v.mean()) / (sd if sd > 0 else 1.0)

    combined = (
        params.w_topo * standardize(topo_scores) + params.w_ctx * standardize(ctx_scores)
    ) / (params.w_topo + params.w_ctx)
    labels = quantile_labels(combined, 3)

    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    for ti in range(params.num_teams):
        nearest = np.argsort(d2[ti], kind="stable")[:6]
        for tj in nearest:
            u = int(rng.choice(teams[ti]))
            v = int(rng.choice(teams[int(tj)]))
            edges.add((u, v))

    graph = build_graph(n, sorted(edges), _ones_features(n))
    teamset = TeamSet(
        teams=tuple(
            Team(team_id=i, members=tuple(m), label=int(labels[i]))
            for i, m in enumerate(teams)
        ),
        num_classes=3,
    )
    return graph, teamset


_SPECIAL_SKILL = {0: 2.0, 1: 3.0, 2: 4.0}  # mediocre, good, pro


def gen_attribute_toy(params: GenParams) -> tuple[Graph, TeamSet]:
    """Attribute-driven task: clique teams over an ER base, where one special
    member's skill value (mediocre/good/pro) sets the team label and the
    filler members carry sub-1.0 noise skills.

    The special node is recoverable from a bundle as the member with the
    largest feature value (see ``attribute_toy_special_nodes``).
    """
    if params.num_classes != 3:
        raise ValueError("gen_attribute_toy is defined for 3 classes")
    rng = np.random.default_rng(params.seed)
    n = params.num_nodes
    edges = _er_edges(n, params.er_m, rng)
    teams, _ = _partition_teams(n, params.d_min, params.mu, rng, False, 0.0, 0.0)

    skills = rng.uniform(0.0, 1.0, size=n)
    labels = []
    for members in teams:
        for a in members:
            for b in members:
                if a != b:
                    edges.add((a, b))
        j = int(rng.integers(0, 3))
        special = int(rng.choice(members))
        skills[special] = _SPECIAL_SKILL[j]
        labels.append(j)

    graph = build_graph(n, sorted(edges), skills.reshape(-1, 1))
    teamset = TeamSet(
        teams=tuple(
            Team(team_id=i, members=tuple(m), label=labels[i])
            for i, m in enumerate(teams)
        ),
        num_classes=3,
    )
    return graph, teamset


def attribute_toy_special_nodes(graph: Graph, teams: TeamSet) -> dict[int, int]:
    """The designed discriminative member of each attribute-toy team."""
    out = {}
    for t in teams.teams:
        members = np.array(t.members)
        out[t.team_id] = int(members[np.argmax(graph.features[members, 0])])
    return out


def _gini_values(values: np.ndarray) -> float:
    """Mean-absolute-difference Gini; mirrors the model-side definition for
    internal scoring without importing it."""
    v = np.asarray(values, dtype=np.float64)
    total = v.sum()
    if total <= 0:
        return 0.0
    n = v.shape[0]
    diff = np.abs(v[:, None] - v[None, :]).sum()
    return float(diff / (2.0 * n * total))
