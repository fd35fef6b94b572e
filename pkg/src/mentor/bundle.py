"""Dataset bundle directory format.

A bundle is a directory holding:

- ``edges.tsv``   header ``src\\tdst``, two integer columns
- ``nodes.csv``   header ``node_id,f0,...``, one row per node
- ``teams.json``  array of ``{"id": int, "members": [int], "label": int}``
- ``meta.json``   ``{"directed", "num_classes", "generator", "seed", "params"}``

Writing is deterministic (sorted edges, shortest round-trip float repr), so
regenerating with the same seed produces byte-identical bundles.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import Graph, Team, TeamSet, build_graph

__all__ = ["write_bundle", "read_bundle", "BundleError"]


class BundleError(ValueError):
    pass


def write_bundle(
    path,
    graph: Graph,
    teams: TeamSet,
    *,
    generator: str,
    seed: int,
    params: dict,
) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    lines = ["src\tdst"]
    lines += [f"{s}\t{d}" for s, d in zip(graph.src.tolist(), graph.dst.tolist())]
    (path / "edges.tsv").write_text("\n".join(lines) + "\n")

    l = graph.feature_dim
    header = ",".join(["node_id"] + [f"f{j}" for j in range(l)])
    rows = [header]
    for i in range(graph.num_nodes):
        feats = ",".join(repr(float(v)) for v in graph.features[i])
        rows.append(f"{i},{feats}" if l else str(i))
    (path / "nodes.csv").write_text("\n".join(rows) + "\n")

    team_objs = [
        {"id": t.team_id, "members": list(t.members), "label": t.label}
        for t in teams.teams
    ]
    (path / "teams.json").write_text(json.dumps(team_objs, indent=1) + "\n")

    meta = {
        "directed": graph.directed,
        "num_classes": teams.num_classes,
        "generator": generator,
        "seed": seed,
        "params": params,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def read_bundle(path, *, dedup_edges: bool = True) -> tuple[Graph, TeamSet, dict]:
    path = Path(path)
    for name in ("edges.tsv", "nodes.csv", "teams.json", "meta.json"):
        if not (path / name).exists():
            raise BundleError(f"bundle missing {name}: {path}")

    meta = json.loads((path / "meta.json").read_text())

    node_lines = (path / "nodes.csv").read_text().strip().split("\n")
    if not node_lines or not node_lines[0].startswith("node_id"):
        raise BundleError("nodes.csv must start with a node_id header")
    num_nodes = len(node_lines) - 1
    feat_cols = node_lines[0].count(",")
    features = np.zeros((num_nodes, feat_cols))
    for line in node_lines[1:]:
        parts = line.split(",")
        i = int(parts[0])
        features[i] = [float(v) for v in parts[1:]]

    edge_lines = (path / "edges.tsv").read_text().strip().split("\n")
    if edge_lines[0] != "src\tdst":
        raise BundleError("edges.tsv must start with a 'src\\tdst' header")
    edges = []
    for line in edge_lines[1:]:
        if not line:
            continue
        s, d = line.split("\t")
        edges.append((int(s), int(d)))

    graph = build_graph(
        num_nodes,
        edges,
        features,
        directed=bool(meta["directed"]),
        dedup_edges=dedup_edges,
    )

    team_objs = json.loads((path / "teams.json").read_text())
    teams = TeamSet(
        teams=tuple(
            Team(team_id=t["id"], members=tuple(t["members"]), label=t["label"])
            for t in team_objs
        ),
        num_classes=int(meta["num_classes"]),
    )
    return graph, teams, meta
