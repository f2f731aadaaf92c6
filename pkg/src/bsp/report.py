"""Render figures from the CSV artifacts in a workspace.

Three figure families, written under <workspace>/figures/:
  training_<role>.png   loss curves and the validation metric per trainer
  eval_summary.png      probe AP / boundary recall / sensitivity ratio bars
  scores_video_*.png    boundary-score traces with ground-truth boundaries
"""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

TRACE_FIGURES = 4  # how many per-video score traces to render


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def render_training(csv_path, fig_path, role):
    header, rows = _read_csv(csv_path)
    steps = [int(r[0]) for r in rows]
    loss = [float(r[1]) for r in rows]
    val_loss = [float(r[2]) for r in rows]
    metric = [float(r[3]) for r in rows]

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    finite = [(s, v) for s, v in zip(steps, loss) if v == v]
    if finite:
        ax.plot(*zip(*finite), label="train loss", color="tab:blue")
    ax.plot(steps, val_loss, label="val loss", color="tab:orange")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("%s training" % role)
    ax2 = ax.twinx()
    ax2.plot(steps, metric, label="val metric", color="tab:green", linestyle="--")
    ax2.set_ylabel("metric")
    lines, labels = ax.get_legend_handles_labels()
    l2, lb2 = ax2.get_legend_handles_labels()
    ax.legend(lines + l2, labels + lb2, loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def render_eval_summary(csv_path, fig_path):
    header, rows = _read_csv(csv_path)
    names = [r[0] for r in rows]
    metrics = {"probe AP": [float(r[1]) for r in rows],
               "recall@tol": [float(r[2]) for r in rows],
               "sensitivity ratio": [float(r[3]) for r in rows]}

    fig, axes = plt.subplots(1, 3, figsize=(9.5, 3.2))
    for ax, (title, vals) in zip(axes, metrics.items()):
        ax.bar(range(len(names)), vals, color="tab:blue")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_title(title, fontsize=10)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def render_score_trace(csv_path, fig_path):
    header, rows = _read_csv(csv_path)
    positions = [int(r[0]) for r in rows]
    gt = [int(r[1]) for r in rows]
    extractors = header[2:]

    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    for k, name in enumerate(extractors):
        ax.plot(positions, [float(r[2 + k]) for r in rows], label=name, linewidth=1.2)
    shown = False
    for pos, flag in zip(positions, gt):
        if flag:
            ax.axvline(pos, color="red", alpha=0.35, linestyle=":",
                       label=None if shown else "boundary")
            shown = True
    ax.set_xlabel("frame")
    ax.set_ylabel("consecutive-snippet feature difference")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def render_all(workspace):
    workspace = Path(workspace)
    figures = workspace / "figures"
    made = []

    reports = sorted((workspace / "reports").glob("*.csv")) if (workspace / "reports").is_dir() else []
    if reports:
        figures.mkdir(exist_ok=True)
    for csv_path in reports:
        out = figures / ("training_%s.png" % csv_path.stem)
        render_training(csv_path, out, csv_path.stem)
        made.append(out)

    eval_csv = workspace / "eval.csv"
    if eval_csv.exists():
        figures.mkdir(exist_ok=True)
        out = figures / "eval_summary.png"
        render_eval_summary(eval_csv, out)
        made.append(out)

    traces = sorted((workspace / "scores").glob("*.csv")) if (workspace / "scores").is_dir() else []
    if traces:
        figures.mkdir(exist_ok=True)
    for csv_path in traces[:TRACE_FIGURES]:
        out = figures / ("scores_%s.png" % csv_path.stem)
        render_score_trace(csv_path, out)
        made.append(out)

    return made
