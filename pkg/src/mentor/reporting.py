"""Run reports: plot-ready CSVs plus rendered figures.

Every report emits the delimited tables (ternary coordinates, binned Gini
histogram, confusion counts, a plain-text summary) and renders the matching
matplotlib figures next to them.  Reports never write into the run
directories they read.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["ReportError", "load_run", "write_report"]

GINI_BINS = 20


class ReportError(ValueError):
    pass


def load_run(run_dir) -> dict:
    run_dir = Path(run_dir)
    needed = ("metrics.json", "confusion.csv", "channel_attention.csv", "gini.csv")
    for name in needed:
        if not (run_dir / name).exists():
            raise ReportError(f"run {run_dir} is missing {name}")
    metrics = json.loads((run_dir / "metrics.json").read_text())

    def read_csv(name):
        lines = (run_dir / name).read_text().strip().split("\n")
        header = lines[0].split(",")
        rows = [line.split(",") for line in lines[1:] if line]
        return header, rows

    _, att_rows = read_csv("channel_attention.csv")
    attention = np.array([[float(v) for v in r[1:4]] for r in att_rows])
    _, gini_rows = read_csv("gini.csv")
    ginis = np.array([float(r[1]) for r in gini_rows])
    conf_text = (run_dir / "confusion.csv").read_text().strip()
    confusion = (
        np.array([[int(v) for v in line.split(",")] for line in conf_text.split("\n")])
        if conf_text
        else np.zeros((0, 0), dtype=int)
    )
    config = {}
    if (run_dir / "config.json").exists():
        config = json.loads((run_dir / "config.json").read_text())
    return {
        "name": run_dir.name,
        "metrics": metrics,
        "attention": attention,
        "ginis": ginis,
        "confusion": confusion,
        "config": config,
    }


def _ternary_xy(gammas: np.ndarray) -> np.ndarray:
    """Barycentric (T, C, L) to 2-d: T at origin, C right, L top."""
    x = gammas[:, 1] + 0.5 * gammas[:, 2]
    y = (np.sqrt(3.0) / 2.0) * gammas[:, 2]
    return np.stack([x, y], axis=1)


def _render_ternary(gammas: np.ndarray, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    corners = np.array([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2], [0, 0]])
    ax.plot(corners[:, 0], corners[:, 1], color="0.3", lw=1)
    if gammas.size:
        xy = _ternary_xy(gammas)
        ax.scatter(xy[:, 0], xy[:, 1], s=12, alpha=0.45, edgecolors="none")
    ax.text(-0.03, -0.04, "T", ha="right")
    ax.text(1.03, -0.04, "C", ha="left")
    ax.text(0.5, np.sqrt(3) / 2 + 0.03, "L", ha="center")
    ax.set_xlim(-0.1, 1.1)
    ax.set_ylim(-0.1, 1.0)
    ax.set_aspect("equal")
    ax.axis("off")
    ax.set_title("channel attention")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _render_gini_hist(edges: np.ndarray, counts: np.ndarray, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge",
           edgecolor="white")
    ax.set_xlabel("Gini of node importance")
    ax.set_ylabel("teams")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _render_confusion(confusion: np.ndarray, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(4, 3.6))
    im = ax.imshow(confusion, cmap="Blues")
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax.text(j, i, str(confusion[i, j]), ha="center", va="center",
                    fontsize=9)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(run_dirs, out_dir) -> Path:
    """Aggregate one or more run directories into CSVs, figures, and a
    summary table."""
    if not run_dirs:
        raise ReportError("no runs given, nothing to report")
    runs = [load_run(r) for r in run_dirs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary = [
        f"{'run':30s} {'dataset':12s} {'channels':8s} {'test acc':>8s} {'auroc':>7s} {'n':>5s}"
    ]
    for run in runs:
        sub = out / run["name"]
        sub.mkdir(exist_ok=True)

        lines = ["gamma_T,gamma_C,gamma_L"]
        lines += [f"{g[0]:.6f},{g[1]:.6f},{g[2]:.6f}" for g in run["attention"]]
        (sub / "ternary.csv").write_text("\n".join(lines) + "\n")
        _render_ternary(run["attention"], sub / "ternary.png")

        edges = np.linspace(0.0, 1.0, GINI_BINS + 1)
        counts, _ = (
            np.histogram(run["ginis"], bins=edges)
            if run["ginis"].size
            else (np.zeros(GINI_BINS, dtype=int), edges)
        )
        hist_lines = ["bin_lo,bin_hi,count"]
        hist_lines += [
            f"{edges[i]:.4f},{edges[i+1]:.4f},{int(counts[i])}"
            for i in range(GINI_BINS)
        ]
        (sub / "gini_hist.csv").write_text("\n".join(hist_lines) + "\n")
        _render_gini_hist(edges, counts, sub / "gini_hist.png")

        conf_lines = [",".join(str(v) for v in row) for row in run["confusion"]]
        (sub / "confusion.csv").write_text("\n".join(conf_lines) + "\n")
        if run["confusion"].size:
            _render_confusion(run["confusion"], sub / "confusion.png")

        cfg = run["config"]
        dataset = str(cfg.get("dataset", "?"))
        channels = "".join(cfg.get("config", {}).get("channels", [])) or "?"
        m = run["metrics"]
        summary.append(
            f"{run['name']:30.30s} {dataset:12.12s} {channels:8s} "
            f"{m.get('accuracy', float('nan')):8.3f} "
            f"{m.get('auroc_macro', float('nan')):7.3f} "
            f"{m.get('n_test', 0):5d}"
        )

    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    return out
