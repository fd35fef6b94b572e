"""Experiment command line: generate, train, ablate, evaluate, report.

Exit codes: 0 success, 2 validation error, 3 training divergence.  The
MENTOR_PRECISION environment variable (f32/f64) selects arithmetic width;
gradcheck always forces f64.
"""

from __future__ import annotations

import json
import multiprocessing
import sys
from dataclasses import fields
from pathlib import Path

import click
import numpy as np

from . import autodiff as ad
from .bundle import BundleError, read_bundle, write_bundle
from .baselines import logreg_fit, mlp_fit, team_feature_matrix
from .config import TrainConfig
from .graph import GraphError
from .metrics import metrics as compute_metrics
from .model import Model, cross_entropy
from .preprocess import collapse_hypergraph
from .reporting import ReportError, write_report
from .synth import (
    GenParams,
    gen_attribute_toy,
    gen_centrality,
    gen_contextual,
    gen_contextual_topology,
    gen_topology,
)
from .training import (
    Normalizer,
    TrainingDiverged,
    make_split,
    prepare_inputs,
    read_checkpoint,
    train_model,
    write_checkpoint,
    write_run_dir,
)

EXIT_VALIDATION = 2
EXIT_DIVERGED = 3

DATASETS = ("cin", "cout", "t1", "t2", "t3", "l", "lt", "attr-toy")


class CliError(click.ClickException):
    exit_code = EXIT_VALIDATION


def _parse_params(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"--param expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _generate(dataset: str, seed: int, overrides: dict):
    if dataset == "l":
        n_cliques = int(overrides.pop("n_cliques", 200))
        clique_size = int(overrides.pop("clique_size", 10))
        if overrides:
            raise CliError(f"unknown params for dataset l: {sorted(overrides)}")
        graph, teams = gen_contextual(n_cliques, clique_size)
        return graph, teams, {"n_cliques": n_cliques, "clique_size": clique_size}

    valid = {f.name for f in fields(GenParams)}
    unknown = set(overrides) - valid
    if unknown:
        raise CliError(f"unknown generator params: {sorted(unknown)}")
    params = GenParams(seed=seed, **overrides)
    if dataset in ("cin", "cout"):
        graph, teams = gen_centrality(params, "in" if dataset == "cin" else "out")
    elif dataset in ("t1", "t2", "t3"):
        graph, teams = gen_topology(dataset, params)
    elif dataset == "lt":
        graph, teams = gen_contextual_topology(params)
    elif dataset == "attr-toy":
        graph, teams = gen_attribute_toy(params)
    else:
        raise CliError(f"unknown dataset {dataset!r}")
    meta_params = params.to_dict()
    if dataset == "t3":
        meta_params["overlap"] = True
    return graph, teams, meta_params


@click.group()
def main():
    """Team classification experiments."""


@main.command()
@click.option("--dataset", required=True, type=click.Choice(DATASETS))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--param", "params", multiple=True,
              help="Generator override as key=value (repeatable).")
def gen(dataset, seed, out, params):
    """Generate a synthetic dataset bundle."""
    try:
        overrides = _parse_params(params)
        graph, teams, meta_params = _generate(dataset, seed, overrides)
        write_bundle(out, graph, teams, generator=dataset, seed=seed,
                     params=meta_params)
    except (ValueError, GraphError) as exc:
        raise CliError(str(exc))
    click.echo(f"wrote {out}: {graph.num_nodes} nodes, {graph.num_edges} edges, "
               f"{len(teams)} teams")


def _load_config(config_path, seed, channels, no_swa) -> TrainConfig:
    base = {}
    if config_path:
        base = json.loads(Path(config_path).read_text())
        base = base.get("config", base)
    cfg = TrainConfig.from_dict(base) if base else TrainConfig()
    over = {"seed": seed}
    if channels:
        wanted = tuple(c.strip().upper() for c in channels.split(","))
        over["channels"] = wanted
    if no_swa:
        over["use_swa"] = False
    return cfg.with_overrides(**over)


def _train_once(data, cfg: TrainConfig, out, dump_hypergraph=None) -> dict:
    graph, teams, meta = read_bundle(data)
    if dump_hypergraph:
        _dump_hypergraph(graph, teams, dump_hypergraph)
    try:
        result = train_model(graph, teams, cfg)
    except TrainingDiverged as exc:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        if exc.checkpoint is not None:
            params = {n: ad.parameter(v) for n, v in exc.checkpoint.items()}
            write_checkpoint(out / "checkpoint.bin", params, cfg)
        (out / "history.csv").write_text(
            "epoch,train_loss,val_loss,val_acc\n"
            + "\n".join(
                f"{h['epoch']},{h['train_loss']},{h['val_loss']},{h['val_acc']}"
                for h in exc.history
            )
            + "\n"
        )
        click.echo(f"training diverged: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    write_run_dir(out, result, cfg, {
        "data": str(data),
        "dataset": meta.get("generator", "unknown"),
        "command": "train",
    })
    return result.metrics


def _train_seed_job(args):
    data, cfg_dict, out = args
    cfg = TrainConfig.from_dict(cfg_dict)
    return _train_once(data, cfg, out)


def _run_training_command(data, config, seed, channels, out, no_swa, jobs,
                          dump_hypergraph):
    try:
        seeds = [int(s) for s in str(seed).split(",")]
        cfg = _load_config(config, seeds[0], channels, no_swa)
    except (ValueError, KeyError) as exc:
        raise CliError(f"bad configuration: {exc}")
    try:
        if len(seeds) == 1:
            m = _train_once(data, cfg, out, dump_hypergraph)
            click.echo(json.dumps(m))
            return
        tasks = [
            (data, cfg.with_overrides(seed=s).to_dict(), str(Path(out) / f"seed{s}"))
            for s in seeds
        ]
        if jobs > 1:
            with multiprocessing.Pool(jobs) as pool:
                all_metrics = pool.map(_train_seed_job, tasks)
        else:
            all_metrics = [_train_seed_job(t) for t in tasks]
        for s, m in zip(seeds, all_metrics):
            click.echo(json.dumps({"seed": s, **m}))
    except (BundleError, GraphError, ValueError) as exc:
        raise CliError(str(exc))


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True))
@click.option("--seed", default="0", show_default=True,
              help="Seed, or comma list for multi-seed runs.")
@click.option("--channels", default=None, help="Subset like T,C,L.")
@click.option("--out", required=True, type=click.Path())
@click.option("--no-swa", is_flag=True, default=False)
@click.option("--jobs", default=1, show_default=True)
@click.option("--dump-hypergraph", type=click.Path(), default=None,
              help="Debug: write the collapsed hypergraph before training.")
def train(data, config, seed, channels, out, no_swa, jobs, dump_hypergraph):
    """Train the full model (or a channel subset) on a bundle."""
    _run_training_command(data, config, seed, channels, out, no_swa, jobs,
                          dump_hypergraph)


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True))
@click.option("--seed", default="0", show_default=True)
@click.option("--channels", required=True, help="Subset like T or T,C.")
@click.option("--out", required=True, type=click.Path())
@click.option("--no-swa", is_flag=True, default=False)
@click.option("--jobs", default=1, show_default=True)
def ablate(data, config, seed, channels, out, no_swa, jobs):
    """Train with masked channels (single-channel ablations)."""
    _run_training_command(data, config, seed, channels, out, no_swa, jobs, None)


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--model", "model_name", required=True,
              type=click.Choice(["lr", "mlp"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--aggr", default="mean", show_default=True,
              type=click.Choice(["sum", "mean", "max", "min"]))
@click.option("--c-reg", default=10.0, show_default=True)
@click.option("--normalization", default="standard", show_default=True)
@click.option("--out", required=True, type=click.Path())
def baseline(data, model_name, seed, aggr, c_reg, normalization, out):
    """Fit a hand-featured classical baseline on a bundle."""
    try:
        graph, teams, meta = read_bundle(data)
        x, names = team_feature_matrix(graph, teams, aggr)
        labels = teams.labels()
        split = make_split(teams, seed)
        tr = split.train_pool()
        norm = Normalizer(normalization).fit(x[tr])
        xs = norm.transform(x)
        if model_name == "lr":
            fitted = logreg_fit(xs[tr], labels[tr], c_reg=c_reg)
        else:
            fitted = mlp_fit(xs[tr], labels[tr], seed=seed)
        te = split.test_indices
        probs = fitted.predict_proba(xs[te])
        m = compute_metrics(labels[te], probs)
    except (BundleError, GraphError, ValueError) as exc:
        raise CliError(str(exc))

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({
        "command": "baseline", "model": model_name, "data": str(data),
        "dataset": meta.get("generator", "unknown"), "seed": seed,
        "aggr": aggr, "c_reg": c_reg, "normalization": normalization,
        "attribute_aggregation": "aggregate-then-normalize",
    }, indent=1) + "\n")
    (out / "metrics.json").write_text(json.dumps({
        "accuracy": m["accuracy"], "auroc_macro": m["auroc_macro"],
        "n_test": int(te.shape[0]),
    }, indent=1) + "\n")
    conf = "\n".join(",".join(str(v) for v in row) for row in m["confusion"])
    (out / "confusion.csv").write_text(conf + "\n")
    feat_lines = ["team_id,label," + ",".join(names)]
    for t, row in zip(teams.teams, x):
        feat_lines.append(
            f"{t.team_id},{t.label}," + ",".join(f"{v:.6g}" for v in row)
        )
    (out / "features.csv").write_text("\n".join(feat_lines) + "\n")
    click.echo(json.dumps({"accuracy": m["accuracy"],
                           "auroc_macro": m["auroc_macro"]}))


@main.command("eval")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--data", type=click.Path(exists=True), default=None,
              help="Bundle path; defaults to the one recorded in the run.")
def eval_cmd(run_dir, data):
    """Re-evaluate a trained checkpoint on its bundle's test split."""
    run_dir = Path(run_dir)
    try:
        cfg, params = read_checkpoint(run_dir / "checkpoint.bin")
        recorded = json.loads((run_dir / "config.json").read_text())
        data = data or recorded.get("data")
        if not data or not Path(data).exists():
            raise CliError("bundle not found; pass --data")
        graph, teams, _ = read_bundle(data)
        split = make_split(teams, cfg.seed)
        tr, _ = split.fold_split(cfg.val_fold)
        prep = prepare_inputs(graph, teams, cfg, tr)
        model = Model(cfg, prep.forest_features.data.shape[1],
                      teams.num_classes, prep.anchors.num_sets, cfg.seed)
        for name, p in model.params.items():
            if name not in params:
                raise CliError(f"checkpoint missing tensor {name!r}")
            p.data = params[name].astype(p.data.dtype)
        art = model.forward(prep.forest, prep.forest_features, prep.entries_t,
                            prep.hyper_sizes, prep.entries_c, prep.anchors,
                            prep.num_teams)
        te = split.test_indices
        m = compute_metrics(prep.labels[te], art.probs[te])
    except (BundleError, GraphError, ValueError) as exc:
        raise CliError(str(exc))
    click.echo(json.dumps({"accuracy": m["accuracy"],
                           "auroc_macro": m["auroc_macro"],
                           "n_test": int(te.shape[0])}))


@main.command()
@click.option("--runs", multiple=True, required=False, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.argument("extra_runs", nargs=-1, type=click.Path())
def report(runs, out, extra_runs):
    """Aggregate run directories into plot-ready CSVs and figures."""
    all_runs = list(runs) + list(extra_runs)
    try:
        write_report(all_runs, out)
    except ReportError as exc:
        raise CliError(str(exc))
    click.echo(f"report written to {out}")


@main.command()
@click.option("--size", default=30, show_default=True,
              help="Node count of the toy instance.")
@click.option("--seed", default=12, show_default=True)
@click.option("--tolerance", default=1e-4, show_default=True)
def gradcheck(size, seed, tolerance):
    """Finite-difference check of the full model (forces f64, dropout off)."""
    from .synth import GenParams, gen_topology

    ad.set_precision("f64")
    graph, teams = gen_topology(
        "t1", GenParams(num_nodes=size, d_min=5, mu=1.0, seed=seed)
    )
    cfg = TrainConfig(hidden_dim=4, dropout_topology=0.0,
                      dropout_centrality=0.0, dropout_attention=0.0,
                      anchor_c=1, seed=seed)
    rows = np.arange(len(teams.teams))
    prep = prepare_inputs(graph, teams, cfg, rows)
    model = Model(cfg, prep.forest_features.data.shape[1], teams.num_classes,
                  prep.anchors.num_sets, seed)

    def loss_fn():
        art = model.forward(prep.forest, prep.forest_features, prep.entries_t,
                            prep.hyper_sizes, prep.entries_c, prep.anchors,
                            prep.num_teams)
        return cross_entropy(art.log_probs, prep.labels, rows)

    err = ad.grad_check(loss_fn, model.params, step=1e-5)
    ok = err < tolerance
    click.echo(json.dumps({"max_relative_error": err, "tolerance": tolerance,
                           "passed": ok}))
    if not ok:
        sys.exit(1)


def _dump_hypergraph(graph, teams, path) -> None:
    hyper = collapse_hypergraph(graph, teams)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = ["src\tdst\tweight"]
    lines += [
        f"{s}\t{d}\t{w}"
        for s, d, w in zip(hyper.src.tolist(), hyper.dst.tolist(),
                           hyper.weight.tolist())
    ]
    (path / "edges.tsv").write_text("\n".join(lines) + "\n")
    rows = ["node_id,size,team_id"]
    rows += [
        f"{i},{hyper.hypernode_features[i, 0]:g},{hyper.team_index[i]}"
        for i in range(hyper.num_hypernodes)
    ]
    (path / "nodes.csv").write_text("\n".join(rows) + "\n")
    (path / "meta.json").write_text(json.dumps({
        "kind": "hypergraph-dump", "num_hypernodes": hyper.num_hypernodes,
        "num_edges": hyper.num_edges,
    }, indent=1) + "\n")


if __name__ == "__main__":
    main()
