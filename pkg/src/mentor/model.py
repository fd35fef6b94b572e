"""The three-channel team classifier.

Topology: one graph-attention layer over each isolated team, then three
attention-weighted GIN layers reusing the first layer's coefficients,
pooled per team.  Centrality: three GIN layers over the weighted
hypergraph with edge weights standing in for the coefficients.
Contextual: two position-aware layers over anchor-set distances.  The
channel embeddings are norm-clamped, fused by a gated softmax with a mean
skip term, and classified by a linear head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .preprocess import AnchorSets, IsolatedForest

__all__ = [
    "Entries",
    "build_entries",
    "Model",
    "ForwardArtifacts",
    "node_importance",
    "gini",
    "cross_entropy",
]


@dataclass(frozen=True)
class Entries:
    """Flattened (aggregator, contributor) pairs for one message-passing view.

    Rows are sorted by aggregating node and always include one self entry
    per node; ``weight`` carries hypergraph edge weights (1.0 on self rows).
    """

    groups: np.ndarray
    sources: np.ndarray
    is_self: np.ndarray
    weight: np.ndarray
    num_nodes: int


def build_entries(
    num_nodes: int,
    src: np.ndarray,
    dst: np.ndarray,
    directed: bool,
    flow: str,
    edge_weight: np.ndarray | None = None,
) -> Entries:
    """Orient edges for the requested flow and prepend self entries.

    ``source_to_target`` pools a node's in-edges; ``target_to_source`` pools
    its out-edges.  Undirected graphs pool every incident edge regardless of
    flow.
    """
    if edge_weight is None:
        edge_weight = np.ones(src.shape[0])
    if not directed:
        agg = np.concatenate([dst, src])
        nbr = np.concatenate([src, dst])
        w = np.concatenate([edge_weight, edge_weight])
    elif flow == "source_to_target":
        agg, nbr, w = dst, src, edge_weight
    elif flow == "target_to_source":
        agg, nbr, w = src, dst, edge_weight
    else:
        raise ValueError(f"unknown flow {flow!r}")

    all_ids = np.arange(num_nodes, dtype=np.int64)
    groups = np.concatenate([all_ids, agg])
    sources = np.concatenate([all_ids, nbr])
    is_self = np.concatenate(
        [np.ones(num_nodes, dtype=bool), np.zeros(agg.shape[0], dtype=bool)]
    )
    weight = np.concatenate([np.ones(num_nodes), w.astype(np.float64)])

    order = np.argsort(groups, kind="stable")
    return Entries(
        groups=groups[order],
        sources=sources[order],
        is_self=is_self[order],
        weight=weight[order],
        num_nodes=num_nodes,
    )


@dataclass
class ForwardArtifacts:
    """Everything one forward pass exposes for loss, metrics, and analysis."""

    log_probs: Tensor
    probs: np.ndarray
    fused: np.ndarray
    gamma: np.ndarray  # (teams, 3) in T, C, L order; ablated channels are 0
    alpha: np.ndarray | None  # per topology entry, aligned with entries
    entries_topology: Entries | None
    channel_embeddings: dict[str, np.ndarray]


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Model:
    """Parameter container plus the forward pass.

    Parameter creation order is fixed, so a seed fully determines the
    initialization; ``params`` maps flat names to Tensors for the optimizer
    and checkpoint writer.
    """

    def __init__(
        self,
        cfg: TrainConfig,
        feature_dim: int,
        num_classes: int,
        num_anchor_sets: int,
        seed: int,
    ):
        self.cfg = cfg
        self.num_classes = num_classes
        self.num_anchor_sets = num_anchor_sets
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        d = cfg.hidden_dim

        def p(name, shape):
            self.params[name] = ad.parameter(_glorot(rng, shape))

        def zeros(name, shape):
            self.params[name] = ad.parameter(np.zeros(shape))

        def spread(name, shape):
            # diverse ReLU thresholds across the O(1)-conditioned message
            # band; zero-init biases leave every unit gating identically and
            # waste most of the epoch budget migrating them
            self.params[name] = ad.parameter(rng.uniform(-1.0, 1.0, size=shape))

        def p_damped(name, shape):
            # GIN block outputs feed the next (1+eps)-amplified aggregation;
            # a smaller second-layer init keeps activation growth in check so
            # the norm clamp does not crush upstream gradients
            self.params[name] = ad.parameter(0.3 * _glorot(rng, shape))

        def eps_at(name, value):
            self.params[name] = ad.parameter(np.array(float(value)))

        if "T" in cfg.channels:
            p("gat.w", (feature_dim, d))
            p("gat.w_target", (feature_dim, d))
            p("gat.a", (d, 1))
            for k in range(3):
                eps_at(f"topo.gin{k}.eps", cfg.eps_init_topology)
                p(f"topo.gin{k}.w1", (d, d))
                spread(f"topo.gin{k}.b1", (1, d))
                p_damped(f"topo.gin{k}.w2", (d, d))
                zeros(f"topo.gin{k}.b2", (1, d))
        if "C" in cfg.channels:
            for k in range(3):
                in_dim = 1 if k == 0 else d
                eps_at(f"cent.gin{k}.eps", cfg.eps_init_centrality)
                p(f"cent.gin{k}.w1", (in_dim, d))
                spread(f"cent.gin{k}.b1", (1, d))
                p_damped(f"cent.gin{k}.w2", (d, d))
                zeros(f"cent.gin{k}.b2", (1, d))
        if "L" in cfg.channels:
            p("ctx.w1", (num_anchor_sets, d))
            spread("ctx.b1", (1, d))
            p("ctx.w2", (d, 1))
            # nonzero so hypernodes beyond every anchor's cutoff still land on
            # a generic (learned) embedding instead of the exact zero vector
            spread("ctx.b2", (1, 1))
            p("ctx.proj", (num_anchor_sets, d))
            zeros("ctx.proj_b", (1, d))
        p("gate.w1", (d, d))
        zeros("gate.b1", (1, d))
        p("gate.w2", (d, 1))
        zeros("gate.b2", (1, 1))
        p("head.w", (d, num_classes))
        zeros("head.b", (1, num_classes))

    # ---- building blocks -------------------------------------------------

    def _mlp2(self, x: Tensor, prefix: str) -> Tensor:
        h = ad.relu(ad.add(ad.matmul(x, self.params[f"{prefix}.w1"]),
                           self.params[f"{prefix}.b1"]))
        return ad.add(ad.matmul(h, self.params[f"{prefix}.w2"]),
                      self.params[f"{prefix}.b2"])

    def _gat(self, x: Tensor, entries: Entries) -> tuple[Tensor, Tensor]:
        """Single-head attention layer; scores follow the corrected ordering
        (nonlinearity before the attention vector)."""
        q = ad.matmul(x, self.params["gat.w"])        # aggregator side + values
        k = ad.matmul(x, self.params["gat.w_target"])  # contributor side
        pre = ad.add(ad.gather_rows(q, entries.groups), ad.gather_rows(k, entries.sources))
        scores = ad.matmul(ad.leaky_relu(pre, self.cfg.negative_slope),
                           self.params["gat.a"])
        alpha = ad.softmax_over_groups(scores, entries.groups, entries.num_nodes)
        msg = ad.mul(ad.gather_rows(q, entries.sources), alpha)
        h = ad.segment_reduce(msg, entries.groups, entries.num_nodes, "sum")
        return h, alpha

    def _attn_gin(
        self,
        h: Tensor,
        entries: Entries,
        coeffs: Tensor,
        prefix: str,
        conv_mode: str,
    ) -> Tensor:
        """GIN update with per-entry coefficients: the self term is scaled by
        (1 + eps) on top of its own coefficient."""
        eps = self.params[f"{prefix}.eps"]
        self_col = Tensor(entries.is_self.astype(np.float64).reshape(-1, 1))
        mult = ad.mul(coeffs, ad.add(1.0, ad.mul(eps, self_col)))
        msg = ad.mul(ad.gather_rows(h, entries.sources), mult)
        agg = ad.segment_reduce(msg, entries.groups, entries.num_nodes, conv_mode)
        return self._mlp2(agg, prefix)

    def _maybe_dropout(self, h: Tensor, p: float, training: bool,
                       rng: np.random.Generator | None) -> Tensor:
        if not training or p == 0.0:
            return h
        return ad.dropout(h, p, rng)

    # ---- channels ---------------------------------------------------------

    def topology_channel(
        self,
        features: Tensor,
        entries: Entries,
        node_team: np.ndarray,
        num_teams: int,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor]:
        h, alpha = self._gat(features, entries)
        for k in range(3):
            h = self._maybe_dropout(h, self.cfg.dropout_topology, training, rng)
            h = self._attn_gin(h, entries, alpha, f"topo.gin{k}",
                               self.cfg.conv_aggr_topology)
        z = ad.segment_reduce(h, node_team, num_teams, self.cfg.team_aggr)
        return z, alpha

    def centrality_channel(
        self,
        sizes: Tensor,
        entries: Entries,
        num_teams: int,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        coeffs = Tensor(entries.weight.reshape(-1, 1))
        h = sizes
        for k in range(3):
            h = self._maybe_dropout(h, self.cfg.dropout_centrality, training, rng)
            h = self._attn_gin(h, entries, coeffs, f"cent.gin{k}",
                               self.cfg.conv_aggr_centrality)
        return ad.gather_rows(h, np.arange(num_teams))

    def contextual_channel(self, anchors: AnchorSets, num_teams: int) -> Tensor:
        """Two anchor-aligned position layers.

        Layer 1 mixes the full per-set message vector (inputs are all-ones,
        so messages reduce to the truncated distance scores) into a hidden
        state; layer 2 rebuilds per-set messages from the closest members'
        hidden states, giving the s-dimensional position code that the final
        linear map projects to width d.
        """
        n = anchors.dist.shape[0]
        s = anchors.num_sets
        scores = anchors.scores().reshape(-1, 1)  # (n*s, 1), row-major by node
        closest = np.where(anchors.closest < 0, 0, anchors.closest).reshape(-1)
        score_t = Tensor(scores)

        h0 = Tensor(np.ones((n, 1)))
        msg1 = ad.reshape(ad.mul(ad.gather_rows(h0, closest), score_t), (n, s))
        h1 = ad.relu(ad.add(ad.matmul(msg1, self.params["ctx.w1"]),
                            self.params["ctx.b1"]))

        pooled = ad.add(ad.matmul(h1, self.params["ctx.w2"]), self.params["ctx.b2"])
        msg2 = ad.mul(ad.gather_rows(pooled, closest), score_t)
        z_pos = ad.reshape(msg2, (n, s))
        z = ad.add(ad.matmul(z_pos, self.params["ctx.proj"]), self.params["ctx.proj_b"])
        return ad.gather_rows(z, np.arange(num_teams))

    # ---- fusion and head ----------------------------------------------------

    def fuse(self, embeddings: dict[str, Tensor]) -> tuple[Tensor, Tensor, list[str]]:
        """Clamp-normalize, gate, and combine the active channel embeddings.

        Returns the fused representation, the per-team attention weights
        (teams x active channels), and the active channel order.
        """
        active = [c for c in ("T", "C", "L") if c in embeddings]
        normed = {c: ad.l2_norm_clamp(embeddings[c], self.cfg.eps_norm) for c in active}
        gates = [self._mlp2(normed[c], "gate") for c in active]
        n_teams = gates[0].data.shape[0]
        k = len(active)
        stacked = ad.concat(gates, axis=1)
        flat = ad.reshape(stacked, (n_teams * k, 1))
        seg = np.repeat(np.arange(n_teams), k)
        gamma = ad.reshape(ad.softmax_over_groups(flat, seg, n_teams), (n_teams, k))

        fused = None
        for i, c in enumerate(active):
            gcol = ad.gather_rows(
                ad.reshape(gamma, (n_teams * k, 1)),
                np.arange(n_teams) * k + i,
            )
            term = ad.mul(normed[c], gcol)
            fused = term if fused is None else ad.add(fused, term)
        skip = None
        for c in active:
            skip = normed[c] if skip is None else ad.add(skip, normed[c])
        fused = ad.add(fused, ad.scale(skip, 1.0 / k))
        return fused, gamma, active

    def classify(
        self,
        fused: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Class log-probabilities and probabilities from the linear head."""
        h = self._maybe_dropout(fused, self.cfg.dropout_attention, training, rng)
        logits = ad.add(ad.matmul(h, self.params["head.w"]), self.params["head.b"])
        n, c = logits.data.shape
        flat = ad.reshape(logits, (n * c, 1))
        seg = np.repeat(np.arange(n), c)
        logp = ad.reshape(ad.log_softmax_over_groups(flat, seg, n), (n, c))
        probs = ad.exp(logp)
        return logp, probs

    # ---- full pass ------------------------------------------------------------

    def forward(
        self,
        forest: IsolatedForest | None,
        forest_features: Tensor | None,
        entries_t: Entries | None,
        hyper_sizes: Tensor | None,
        entries_c: Entries | None,
        anchors: AnchorSets | None,
        num_teams: int,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ForwardArtifacts:
        embeddings: dict[str, Tensor] = {}
        alpha = None
        if "T" in self.cfg.channels:
            zt, alpha = self.topology_channel(
                forest_features, entries_t, forest.node_team, num_teams,
                training, rng,
            )
            embeddings["T"] = zt
        if "C" in self.cfg.channels:
            embeddings["C"] = self.centrality_channel(
                hyper_sizes, entries_c, num_teams, training, rng
            )
        if "L" in self.cfg.channels:
            embeddings["L"] = self.contextual_channel(anchors, num_teams)

        fused, gamma, active = self.fuse(embeddings)
        logp, probs = self.classify(fused, training, rng)

        full_gamma = np.zeros((num_teams, 3))
        for i, c in enumerate(active):
            full_gamma[:, ("T", "C", "L").index(c)] = gamma.data[:, i]
        return ForwardArtifacts(
            log_probs=logp,
            probs=probs.data.copy(),
            fused=fused.data.copy(),
            gamma=full_gamma,
            alpha=None if alpha is None else alpha.data.reshape(-1).copy(),
            entries_topology=entries_t,
            channel_embeddings={c: embeddings[c].data.copy() for c in active},
        )


def cross_entropy(log_probs: Tensor, labels: np.ndarray, rows: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over the selected team rows."""
    rows = np.asarray(rows, dtype=np.int64)
    sel = ad.gather_rows(log_probs, rows)
    onehot = np.zeros((rows.shape[0], log_probs.data.shape[1]))
    onehot[np.arange(rows.shape[0]), labels[rows]] = 1.0
    picked = ad.mul(sel, Tensor(onehot))
    return ad.scale(ad.sum_all(picked), -1.0 / rows.shape[0])


def node_importance(
    alpha: np.ndarray, entries: Entries, forest: IsolatedForest
) -> np.ndarray:
    """Per-copy importance: total attention mass received from other members.

    Sums the coefficients of all non-self entries whose contributor is the
    node, which under either flow equals the attention paid to it across the
    edges pointing at it within the isolated team.
    """
    imp = np.zeros(forest.num_nodes)
    mask = ~entries.is_self
    np.add.at(imp, entries.sources[mask], alpha[mask])
    return imp


def gini(values) -> float:
    """Mean-absolute-difference inequality index in [0, 1).

    Zero for perfectly equal (or all-zero, or singleton) inputs; negative
    inputs are rejected.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("gini needs at least one value")
    if (v < 0).any():
        raise ValueError("gini is defined for non-negative values")
    total = v.sum()
    if total == 0:
        return 0.0
    n = v.shape[0]
    diff = np.abs(v[:, None] - v[None, :]).sum()
    return float(diff / (2.0 * n * total))
