"""Training loop, validation protocol, search, and run artifacts."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor
from .config import TrainConfig
from .graph import Graph, TeamSet, WeightedHypergraph
from .metrics import metrics as compute_metrics
from .model import (
    Entries,
    ForwardArtifacts,
    Model,
    build_entries,
    cross_entropy,
    gini,
    node_importance,
)
from .preprocess import (
    AnchorSets,
    IsolatedForest,
    collapse_hypergraph,
    isolate_teams,
    sample_anchor_sets,
)

logger = logging.getLogger("mentor")

__all__ = [
    "SplitPlan",
    "make_split",
    "Normalizer",
    "adam_step",
    "AdamState",
    "swa_update",
    "SwaState",
    "TrainResult",
    "TrainingDiverged",
    "train_model",
    "hp_search",
    "default_search_space",
    "write_checkpoint",
    "read_checkpoint",
    "write_run_dir",
]


# ---------------------------------------------------------------------------
# split plan

class SplitPlan:
    """Stratified 80/20 test split plus 5 folds over the training pool.

    The test indices sit behind a sealed accessor that logs its first touch,
    so an accidental read before final evaluation leaves a trace.
    """

    def __init__(self, test: np.ndarray, folds: list[np.ndarray], seed: int):
        self._test = test
        self.folds = folds
        self.seed = seed
        self.test_touched = False

    @property
    def test_indices(self) -> np.ndarray:
        if not self.test_touched:
            logger.info("test indices first touched (seed=%d)", self.seed)
            self.test_touched = True
        return self._test

    def train_pool(self) -> np.ndarray:
        return np.sort(np.concatenate(self.folds))

    def fold_split(self, val_fold: int) -> tuple[np.ndarray, np.ndarray]:
        val = self.folds[val_fold]
        train = np.concatenate([f for i, f in enumerate(self.folds) if i != val_fold])
        return np.sort(train), np.sort(val)


def make_split(teams: TeamSet, seed: int, test_fraction: float = 0.2,
               n_folds: int = 5) -> SplitPlan:
    """Deterministic stratified split: per-class shuffle, 20% to test, the
    rest dealt round-robin into folds."""
    labels = teams.labels()
    rng = np.random.default_rng(seed)
    test_parts, fold_parts = [], [[] for _ in range(n_folds)]
    for c in range(teams.num_classes):
        idx = np.flatnonzero(labels == c)
        if idx.shape[0] < n_folds:
            raise ValueError(
                f"class {c} has {idx.shape[0]} teams, too few to stratify"
            )
        idx = rng.permutation(idx)
        n_test = int(round(test_fraction * idx.shape[0]))
        test_parts.append(idx[:n_test])
        # rotate the deal per class so remainders spread across folds
        for i, t in enumerate(idx[n_test:]):
            fold_parts[(i + c) % n_folds].append(t)
    test = np.sort(np.concatenate(test_parts))
    folds = [np.sort(np.array(f, dtype=np.int64)) for f in fold_parts]
    return SplitPlan(test, folds, seed)


# ---------------------------------------------------------------------------
# feature normalization

class Normalizer:
    """Column-wise normalization fitted on training rows only.

    Degenerate columns (zero spread) pass through unchanged rather than
    collapsing to zero, so constant synthetic features keep carrying signal.
    """

    def __init__(self, scheme: str):
        if scheme not in ("minmax", "standard", "robust", "quantile"):
            raise ValueError(f"unknown normalization scheme {scheme!r}")
        self.scheme = scheme
        self._shift = None
        self._scale = None
        self._sorted = None

    def fit(self, x: np.ndarray) -> "Normalizer":
        x = np.asarray(x, dtype=np.float64)
        if self.scheme == "minmax":
            lo, hi = x.min(axis=0), x.max(axis=0)
            spread = hi - lo
            self._shift = np.where(spread > 0, lo, 0.0)
            self._scale = np.where(spread > 0, spread, 1.0)
        elif self.scheme == "standard":
            mean, std = x.mean(axis=0), x.std(axis=0)
            self._shift = np.where(std > 0, mean, 0.0)
            self._scale = np.where(std > 0, std, 1.0)
        elif self.scheme == "robust":
            med = np.median(x, axis=0)
            iqr = np.quantile(x, 0.75, axis=0) - np.quantile(x, 0.25, axis=0)
            self._shift = np.where(iqr > 0, med, 0.0)
            self._scale = np.where(iqr > 0, iqr, 1.0)
        else:  # quantile: empirical CDF of the training rows
            self._sorted = np.sort(x, axis=0)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.scheme == "quantile":
            out = np.empty_like(x)
            n = self._sorted.shape[0]
            for j in range(x.shape[1]):
                col = self._sorted[:, j]
                if col[0] == col[-1]:
                    out[:, j] = x[:, j]
                else:
                    out[:, j] = np.searchsorted(col, x[:, j], side="right") / n
            return out
        return (x - self._shift) / self._scale


# ---------------------------------------------------------------------------
# optimizer and weight averaging

@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update in place; aborts on non-finite gradients."""
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data, dtype=np.float64)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data, dtype=np.float64)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1**state.t)
        v_hat = v / (1 - beta2**state.t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


@dataclass
class SwaState:
    count: int = 0
    average: dict = field(default_factory=dict)


def swa_update(state: SwaState, params: dict[str, Tensor], epoch: int,
               start_epoch: int, freq: int) -> SwaState:
    """Equal-weight running average of snapshots every ``freq`` epochs once
    past the start epoch."""
    if epoch < start_epoch or (epoch - start_epoch) % freq != 0:
        return state
    k = state.count
    for name, p in params.items():
        snap = p.data.astype(np.float64)
        if k == 0:
            state.average[name] = snap.copy()
        else:
            state.average[name] = (state.average[name] * k + snap) / (k + 1)
    state.count = k + 1
    return state


# ---------------------------------------------------------------------------
# prepared inputs

@dataclass
class Prepared:
    forest: IsolatedForest
    forest_features: Tensor
    entries_t: Entries
    hyper: WeightedHypergraph
    hyper_sizes: Tensor
    entries_c: Entries
    anchors: AnchorSets
    num_teams: int
    labels: np.ndarray


def prepare_inputs(graph: Graph, teams: TeamSet, cfg: TrainConfig,
                   train_rows: np.ndarray) -> Prepared:
    """Build the channel views once; normalizers are fitted on data belonging
    to training-pool teams only."""
    forest = isolate_teams(graph, teams)
    entries_t = build_entries(
        forest.num_nodes, forest.src, forest.dst, forest.directed,
        cfg.flow_topology,
    )
    train_mask = np.isin(forest.node_team, train_rows)
    feat_norm = Normalizer(cfg.normalization).fit(
        forest.features[train_mask] if train_mask.any() else forest.features
    )
    forest_features = Tensor(feat_norm.transform(forest.features))

    hyper = collapse_hypergraph(graph, teams)
    # express weights in mean-total-weight-per-hypernode units so the first
    # aggregation lands O(1); a global constant keeps the degree signal linear
    weight_scale = max(float(hyper.weight.sum()) / max(hyper.num_hypernodes, 1), 1.0)
    entries_c = build_entries(
        hyper.num_hypernodes, hyper.src, hyper.dst, hyper.directed,
        cfg.flow_centrality, edge_weight=hyper.weight.astype(np.float64) / weight_scale,
    )
    # scale-only: weighted sums of sizes must stay sign-coherent for the
    # degree signal to survive, so the size feature is never zero-centered
    mean_size = float(hyper.hypernode_features[train_rows].mean())
    hyper_sizes = Tensor(hyper.hypernode_features / max(mean_size, 1.0))

    anchors = sample_anchor_sets(
        hyper, cfg.anchor_c, np.random.default_rng(cfg.seed),
        cutoff=cfg.anchor_cutoff,
    )
    return Prepared(
        forest=forest,
        forest_features=forest_features,
        entries_t=entries_t,
        hyper=hyper,
        hyper_sizes=hyper_sizes,
        entries_c=entries_c,
        anchors=anchors,
        num_teams=len(teams.teams),
        labels=teams.labels(),
    )


# ---------------------------------------------------------------------------
# training

class TrainingDiverged(RuntimeError):
    def __init__(self, message, history=None, checkpoint=None):
        super().__init__(message)
        self.history = history or []
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    model: Model
    history: list[dict]
    metrics: dict
    confusion: np.ndarray
    attention_table: list[dict]
    importance_table: list[dict]
    gini_table: list[dict]
    split: SplitPlan
    swa_used: bool
    test_probs: np.ndarray
    test_rows: np.ndarray


def _forward(model: Model, prep: Prepared, training: bool,
             rng: np.random.Generator | None, anchors=None) -> ForwardArtifacts:
    return model.forward(
        prep.forest,
        prep.forest_features,
        prep.entries_t,
        prep.hyper_sizes,
        prep.entries_c,
        anchors if anchors is not None else prep.anchors,
        prep.num_teams,
        training=training,
        rng=rng,
    )


def train_model(
    graph: Graph,
    teams: TeamSet,
    cfg: TrainConfig,
    split: SplitPlan | None = None,
    train_rows: np.ndarray | None = None,
    val_rows: np.ndarray | None = None,
    final_eval: bool = True,
) -> TrainResult:
    """Full-batch training with Adam, SWA snapshots, and early stopping.

    By default rows come from a seeded stratified split (validation = one
    fold of the training pool) and the final report is computed on the held
    out test teams with the averaged weights.  ``train_rows``/``val_rows``
    override the row selection for cross-validation trials, in which case
    no test evaluation happens unless requested.
    """
    cfg.warn_if_outside_search_space()
    if split is None:
        split = make_split(teams, cfg.seed)
    if train_rows is None or val_rows is None:
        train_rows, val_rows = split.fold_split(cfg.val_fold)

    prep = prepare_inputs(graph, teams, cfg, train_rows)
    model = Model(
        cfg,
        feature_dim=prep.forest_features.data.shape[1],
        num_classes=teams.num_classes,
        num_anchor_sets=prep.anchors.num_sets,
        seed=cfg.seed,
    )
    names = list(model.params)
    adam = AdamState()
    swa = SwaState()
    swa_start = int(cfg.swa_start * cfg.epochs)
    history: list[dict] = []
    best_val = np.inf
    best_params = None
    since_best = 0

    for epoch in range(cfg.epochs):
        epoch_rng = np.random.default_rng([cfg.seed, epoch])
        anchors = prep.anchors
        if cfg.anchor_resample == "epoch" and "L" in cfg.channels:
            anchors = sample_anchor_sets(
                prep.hyper, cfg.anchor_c, epoch_rng, cutoff=cfg.anchor_cutoff
            )
        with Tape() as tape:
            art = _forward(model, prep, True, epoch_rng, anchors)
            loss = cross_entropy(art.log_probs, prep.labels, train_rows)
        train_loss = float(loss.data)
        if not np.isfinite(train_loss):
            raise TrainingDiverged(
                f"training loss became non-finite at epoch {epoch}",
                history=history,
                checkpoint={n: p.data.copy() for n, p in model.params.items()},
            )
        grads = dict(zip(names, tape.gradients(loss, [model.params[n] for n in names])))
        lr = cfg.swa_lr if (cfg.use_swa and epoch >= swa_start) else cfg.lr
        adam_step(model.params, grads, adam, lr)

        eval_art = _forward(model, prep, False, None)
        logp = eval_art.log_probs.data
        val_loss = float(-logp[val_rows, prep.labels[val_rows]].mean())
        val_acc = float(
            (eval_art.probs[val_rows].argmax(axis=1) == prep.labels[val_rows]).mean()
        )
        history.append(
            {"epoch": epoch, "train_loss": train_loss,
             "val_loss": val_loss, "val_acc": val_acc}
        )
        if cfg.use_swa:
            swa_update(swa, model.params, epoch, swa_start, cfg.swa_freq)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_params = {n: p.data.copy() for n, p in model.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break

    swa_used = cfg.use_swa and swa.count > 0
    if swa_used:
        for n, p in model.params.items():
            p.data = swa.average[n].astype(p.data.dtype)
    elif best_params is not None:
        for n, p in model.params.items():
            p.data = best_params[n]

    if not final_eval:
        return TrainResult(
            model=model, history=history, metrics={}, confusion=np.zeros((0, 0)),
            attention_table=[], importance_table=[], gini_table=[],
            split=split, swa_used=swa_used,
            test_probs=np.zeros((0, teams.num_classes)), test_rows=np.empty(0, int),
        )

    art = _forward(model, prep, False, None)
    test_rows = split.test_indices
    test_labels = prep.labels[test_rows]
    m = compute_metrics(test_labels, art.probs[test_rows])
    att, imp, gin = _report_tables(teams, prep, art, test_rows)
    return TrainResult(
        model=model,
        history=history,
        metrics={"accuracy": m["accuracy"], "auroc_macro": m["auroc_macro"],
                 "n_test": int(test_rows.shape[0]), "swa": swa_used},
        confusion=m["confusion"],
        attention_table=att,
        importance_table=imp,
        gini_table=gin,
        split=split,
        swa_used=swa_used,
        test_probs=art.probs[test_rows],
        test_rows=test_rows,
    )


def _report_tables(teams: TeamSet, prep: Prepared, art: ForwardArtifacts,
                   rows: np.ndarray):
    attention, importance, ginis = [], [], []
    team_ids = [t.team_id for t in teams.teams]
    for r in rows:
        attention.append(
            {"team_id": team_ids[r], "gamma_T": float(art.gamma[r, 0]),
             "gamma_C": float(art.gamma[r, 1]), "gamma_L": float(art.gamma[r, 2])}
        )
    if art.alpha is not None:
        imp = node_importance(art.alpha, art.entries_topology, prep.forest)
        for r in rows:
            copies = np.flatnonzero(prep.forest.node_team == r)
            vals = imp[copies]
            for c, v in zip(copies, vals):
                importance.append(
                    {"team_id": team_ids[r],
                     "node_id": int(prep.forest.orig_node[c]),
                     "importance": float(v)}
                )
            ginis.append({"team_id": team_ids[r], "gini": gini(vals)})
    return attention, importance, ginis


# ---------------------------------------------------------------------------
# hyperparameter search

def default_search_space() -> dict:
    """The documented sweep ranges, reproduced as sampling rules."""
    aggr = ("choice", ["sum", "mean", "max", "min"])
    flow = ("choice", ["source_to_target", "target_to_source"])
    return {
        "conv_aggr_topology": aggr,
        "conv_aggr_centrality": aggr,
        "conv_aggr_contextual": aggr,
        "team_aggr": aggr,
        "flow_topology": flow,
        "flow_centrality": flow,
        "dropout_topology": ("grid", 0.2, 0.8, 0.05),
        "dropout_centrality": ("grid", 0.2, 0.8, 0.05),
        "dropout_attention": ("grid", 0.2, 0.8, 0.05),
        "epochs": ("grid_int", 20, 100, 2),
        "lr": ("loguniform", 1e-5, 1e-1),
        "swa_lr": ("loguniform", 1e-5, 1e-1),
        "swa_start": ("grid", 0.6, 0.95, 0.05),
        "swa_freq": ("int", 1, 20),
        "hidden_dim": ("choice", [16, 32, 64, 128]),
        "normalization": ("choice", ["minmax", "standard", "robust", "quantile"]),
    }


def _sample_space(space: dict, rng: np.random.Generator) -> dict:
    out = {}
    for name, rule in space.items():
        kind = rule[0]
        if kind == "choice":
            out[name] = rule[1][int(rng.integers(0, len(rule[1])))]
        elif kind == "grid":
            lo, hi, step = rule[1:]
            k = int(round((hi - lo) / step))
            out[name] = round(lo + step * int(rng.integers(0, k + 1)), 10)
        elif kind == "grid_int":
            lo, hi, step = rule[1:]
            k = (hi - lo) // step
            out[name] = int(lo + step * int(rng.integers(0, k + 1)))
        elif kind == "int":
            out[name] = int(rng.integers(rule[1], rule[2] + 1))
        elif kind == "loguniform":
            lo, hi = np.log(rule[1]), np.log(rule[2])
            out[name] = float(np.exp(rng.uniform(lo, hi)))
        else:
            raise ValueError(f"unknown sampling rule {kind!r}")
    return out


def hp_search(
    graph: Graph,
    teams: TeamSet,
    base_cfg: TrainConfig,
    space: dict | None = None,
    budget: int = 50,
    seed: int = 0,
    objective=None,
) -> tuple[TrainConfig, list[dict]]:
    """Seeded random search minimizing mean validation loss over the 5 folds.

    ``objective(cfg)`` may be injected for testing; the default trains on
    each fold split of the seeded plan and averages the final validation
    losses.  Returns the winning config and the recorded trials.
    """
    if space is None:
        space = default_search_space()
    rng = np.random.default_rng(seed)
    split = make_split(teams, base_cfg.seed)

    def default_objective(cfg: TrainConfig) -> float:
        losses = []
        for fold in range(len(split.folds)):
            tr, va = split.fold_split(fold)
            res = train_model(graph, teams, cfg, split=split, train_rows=tr,
                              val_rows=va, final_eval=False)
            losses.append(min(h["val_loss"] for h in res.history))
        return float(np.mean(losses))

    objective = objective or default_objective
    trials: list[dict] = []
    best_cfg, best_loss = None, np.inf
    for t in range(budget):
        overrides = _sample_space(space, rng)
        cfg = base_cfg.with_overrides(**overrides)
        loss = objective(cfg)
        trials.append({"trial": t, "val_loss": loss, "overrides": overrides})
        if loss < best_loss:
            best_loss, best_cfg = loss, cfg
    return best_cfg, trials


# ---------------------------------------------------------------------------
# checkpoint and run directory

_MAGIC = b"MENTORCK"


def write_checkpoint(path, params: dict[str, Tensor], cfg: TrainConfig) -> None:
    """Flat name -> tensor file: little-endian payload after a JSON header."""
    tensors = []
    payload = bytearray()
    for name, p in params.items():
        arr = np.ascontiguousarray(p.data)
        tensors.append(
            {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        )
        payload.extend(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    header = json.dumps({"config": cfg.to_dict(), "tensors": tensors}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)


def read_checkpoint(path) -> tuple[TrainConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        params = {}
        for t in header["tensors"]:
            dtype = np.dtype(t["dtype"]).newbyteorder("<")
            count = int(np.prod(t["shape"])) if t["shape"] else 1
            arr = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
            params[t["name"]] = arr.reshape(t["shape"]).astype(t["dtype"])
    return TrainConfig.from_dict(header["config"]), params


def write_run_dir(out, result: TrainResult, cfg: TrainConfig, extra: dict) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"config": cfg.to_dict(), **extra}, indent=1, sort_keys=True) + "\n"
    )
    lines = ["epoch,train_loss,val_loss,val_acc"]
    lines += [
        f"{h['epoch']},{h['train_loss']:.6f},{h['val_loss']:.6f},{h['val_acc']:.4f}"
        for h in result.history
    ]
    (out / "history.csv").write_text("\n".join(lines) + "\n")
    (out / "metrics.json").write_text(json.dumps(result.metrics, indent=1) + "\n")

    conf_lines = [",".join(str(v) for v in row) for row in result.confusion]
    (out / "confusion.csv").write_text("\n".join(conf_lines) + "\n")

    att = ["team_id,gamma_T,gamma_C,gamma_L"]
    att += [
        f"{r['team_id']},{r['gamma_T']:.6f},{r['gamma_C']:.6f},{r['gamma_L']:.6f}"
        for r in result.attention_table
    ]
    (out / "channel_attention.csv").write_text("\n".join(att) + "\n")

    imp = ["team_id,node_id,importance"]
    imp += [
        f"{r['team_id']},{r['node_id']},{r['importance']:.6f}"
        for r in result.importance_table
    ]
    (out / "node_importance.csv").write_text("\n".join(imp) + "\n")

    gin = ["team_id,gini"]
    gin += [f"{r['team_id']},{r['gini']:.6f}" for r in result.gini_table]
    (out / "gini.csv").write_text("\n".join(gin) + "\n")

    write_checkpoint(out / "checkpoint.bin", result.model.params, cfg)
    return out
