"""Hand-featured classical baselines: logistic regression and an MLP.

Both consume per-team structural feature vectors (internal connections,
external follower/following counts, assortativity, density, clustering,
size) plus aggregated node attributes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import Graph, Team, TeamSet
from .training import AdamState, adam_step

__all__ = [
    "FEATURE_NAMES",
    "subgraph_features",
    "team_feature_matrix",
    "LogisticRegressionModel",
    "logreg_fit",
    "MLPBaseline",
    "mlp_fit",
]

FEATURE_NAMES = [
    "internal_edges",
    "unique_followers_in",
    "total_followers_in",
    "unique_followings_out",
    "total_followings_out",
    "assortativity",
    "density",
    "avg_clustering",
    "team_size",
    "assortativity_imputed",
]


def subgraph_features(graph: Graph, team: Team, aggr: str = "mean") -> np.ndarray:
    """Structural features of one team plus aggregated member attributes.

    Assortativity and clustering use the undirected internal view; NaN-prone
    statistics on degenerate teams are imputed to 0 and flagged in the
    ``assortativity_imputed`` column.
    """
    members = set(team.members)
    n = len(members)

    internal = []
    total_in = total_out = 0
    uniq_in, uniq_out = set(), set()
    for v in team.members:
        for u in graph.in_neighbors(v).tolist():
            if u in members:
                if graph.directed:
                    internal.append((u, v))
            else:
                total_in += 1
                uniq_in.add(u)
        for u in graph.out_neighbors(v).tolist():
            if u not in members:
                total_out += 1
                uniq_out.add(u)
            elif not graph.directed:
                internal.append((v, u))
    if not graph.directed:
        # each undirected internal edge was seen from both endpoints
        internal = list({tuple(sorted(e)) for e in internal})
    n_internal = len(internal)

    undirected = {tuple(sorted(e)) for e in internal if e[0] != e[1]}
    deg = {v: 0 for v in members}
    neigh = {v: set() for v in members}
    for a, b in undirected:
        deg[a] += 1
        deg[b] += 1
        neigh[a].add(b)
        neigh[b].add(a)

    assort, imputed = _assortativity(undirected, deg)
    clustering = _avg_clustering(members, neigh)

    possible = n * (n - 1) if graph.directed else n * (n - 1) / 2
    density = n_internal / possible if possible else 0.0

    attrs = graph.features[sorted(members)]
    if aggr == "sum":
        agg = attrs.sum(axis=0)
    elif aggr == "mean":
        agg = attrs.mean(axis=0)
    elif aggr == "max":
        agg = attrs.max(axis=0)
    elif aggr == "min":
        agg = attrs.min(axis=0)
    else:
        raise ValueError(f"unknown aggregation {aggr!r}")

    base = np.array(
        [
            n_internal,
            len(uniq_in),
            total_in,
            len(uniq_out),
            total_out,
            assort,
            density,
            clustering,
            n,
            1.0 if imputed else 0.0,
        ]
    )
    return np.concatenate([base, agg])


def _assortativity(undirected_edges: set, deg: dict) -> tuple[float, bool]:
    """Degree Pearson correlation over internal edges (both orientations)."""
    if len(undirected_edges) < 2:
        return 0.0, True
    xs, ys = [], []
    for a, b in undirected_edges:
        xs += [deg[a], deg[b]]
        ys += [deg[b], deg[a]]
    xs, ys = np.array(xs, dtype=np.float64), np.array(ys, dtype=np.float64)
    sx, sy = xs.std(), ys.std()
    if sx == 0 or sy == 0:
        return 0.0, True
    return float(((xs - xs.mean()) * (ys - ys.mean())).mean() / (sx * sy)), False


def _avg_clustering(members: set, neigh: dict) -> float:
    total = 0.0
    for v in members:
        k = len(neigh[v])
        if k < 2:
            continue
        links = 0
        nv = neigh[v]
        for u in nv:
            links += len(nv & neigh[u])
        total += links / (k * (k - 1))
    return total / len(members) if members else 0.0


def team_feature_matrix(graph: Graph, teams: TeamSet, aggr: str = "mean"):
    """Feature rows for every team, with column names."""
    rows = [subgraph_features(graph, t, aggr) for t in teams.teams]
    x = np.stack(rows)
    attr_names = [f"attr_{aggr}_{j}" for j in range(graph.feature_dim)]
    return x, FEATURE_NAMES + attr_names


# ---------------------------------------------------------------------------
# logistic regression

@dataclass
class LogisticRegressionModel:
    weights: np.ndarray  # (features, classes)
    bias: np.ndarray
    converged: bool

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        logits = x @ self.weights + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


def logreg_fit(
    features: np.ndarray,
    labels: np.ndarray,
    c_reg: float = 1.0,
    lr: float = 0.5,
    max_iter: int = 2000,
    tol: float = 1e-6,
) -> LogisticRegressionModel:
    """Multinomial logistic regression by full-batch gradient descent with
    L2 strength 1/c_reg; warns instead of failing on non-convergence."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, f = x.shape
    c = int(y.max()) + 1
    w = np.zeros((f, c))
    b = np.zeros(c)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    lam = 1.0 / c_reg

    converged = False
    for _ in range(max_iter):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        gw = x.T @ (probs - onehot) / n + lam * w / n
        gb = (probs - onehot).mean(axis=0)
        w -= lr * gw
        b -= lr * gb
        if max(np.abs(gw).max(), np.abs(gb).max()) < tol:
            converged = True
            break
    if not converged:
        warnings.warn("logistic regression did not converge within max_iter",
                      stacklevel=2)
    return LogisticRegressionModel(weights=w, bias=b, converged=converged)


# ---------------------------------------------------------------------------
# MLP

class MLPBaseline:
    """1-3 hidden ReLU layers with dropout, trained with Adam."""

    def __init__(self, in_dim: int, num_classes: int, hidden: int = 64,
                 layers: int = 1, dropout: float = 0.2, seed: int = 0):
        if not 1 <= layers <= 3:
            raise ValueError("layers must be between 1 and 3")
        self.dropout = dropout
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        dims = [in_dim] + [hidden] * layers + [num_classes]
        for i in range(len(dims) - 1):
            limit = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
            self.params[f"w{i}"] = ad.parameter(
                rng.uniform(-limit, limit, size=(dims[i], dims[i + 1]))
            )
            self.params[f"b{i}"] = ad.parameter(np.zeros((1, dims[i + 1])))
        self.n_layers = len(dims) - 1

    def _logits(self, x: Tensor, training: bool, rng) -> Tensor:
        h = x
        for i in range(self.n_layers):
            h = ad.add(ad.matmul(h, self.params[f"w{i}"]), self.params[f"b{i}"])
            if i < self.n_layers - 1:
                h = ad.relu(h)
                if training and self.dropout > 0:
                    h = ad.dropout(h, self.dropout, rng)
        return h

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        logits = self._logits(Tensor(x), False, None).data
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


def mlp_fit(
    features: np.ndarray,
    labels: np.ndarray,
    hidden: int = 64,
    layers: int = 1,
    dropout: float = 0.2,
    lr: float = 1e-3,
    epochs: int = 200,
    seed: int = 0,
) -> MLPBaseline:
    """Cross-entropy training of the MLP baseline on fixed feature rows."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    c = int(y.max()) + 1
    mlp = MLPBaseline(x.shape[1], c, hidden=hidden, layers=layers,
                      dropout=dropout, seed=seed)
    names = list(mlp.params)
    adam = AdamState()
    xt = Tensor(x)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    seg = np.repeat(np.arange(n), c)

    for epoch in range(epochs):
        rng = np.random.default_rng([seed, epoch])
        with Tape() as tape:
            logits = mlp._logits(xt, True, rng)
            flat = ad.reshape(logits, (n * c, 1))
            logp = ad.reshape(ad.log_softmax_over_groups(flat, seg, n), (n, c))
            loss = ad.scale(ad.sum_all(ad.mul(logp, Tensor(onehot))), -1.0 / n)
        if not np.isfinite(float(loss.data)):
            warnings.warn("MLP training diverged; returning current weights",
                          stacklevel=2)
            break
        grads = dict(zip(names, tape.gradients(loss, [mlp.params[nm] for nm in names])))
        adam_step(mlp.params, grads, adam, lr)
    return mlp
