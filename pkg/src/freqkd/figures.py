"""Figure rendering for reports: training curves, mean profiles, ablation grids.

Every CLI report path can drop a PNG next to its JSON/CSV output. Rendering
is best-effort presentation; the delimited files remain the interface of
record. PNG metadata is stripped so reruns produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KWARGS = {"dpi": 120, "bbox_inches": "tight", "metadata": {"Software": None}}


def _finish(fig, path):
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def training_curves(report_dict, path):
    """Loss terms per epoch for one training run."""
    trace = report_dict.get("trace", [])
    fig, ax = plt.subplots(figsize=(6, 4))
    if trace:
        epochs = np.arange(1, len(trace) + 1)
        for term in ("total", "task", "align", "low", "high"):
            values = [t[term] for t in trace]
            if any(v != 0.0 for v in values) or term == "total":
                ax.plot(epochs, values, label=term)
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    title = f"{report_dict.get('kind', 'run')} / modality {report_dict.get('modality')}"
    acc = report_dict.get("final_accuracy")
    if acc is not None:
        title += f" / test acc {acc:.3f}"
    ax.set_title(title)
    if trace:
        ax.legend(loc="best", fontsize="small")
    _finish(fig, path)


def mean_profile_figure(means_by_modality, path):
    """Per-dimension feature means for each modality."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for modality, means in sorted(means_by_modality.items()):
        ax.plot(np.arange(len(means)), means, label=f"modality {modality}",
                linewidth=1.0)
    ax.axhline(0.0, color="gray", linewidth=0.6)
    ax.set_xlabel("feature dimension")
    ax.set_ylabel("mean value")
    ax.set_title("per-dimension feature means")
    ax.legend(loc="best", fontsize="small")
    _finish(fig, path)


def similarity_figure(report_dict, path):
    """Bar chart of mean paired cosine for raw/low/high variants."""
    names = ["raw", "low", "high"]
    values = [report_dict.get(f"mean_{n}") for n in names]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    xs = np.arange(len(names))
    bars = [0.0 if v is None else v for v in values]
    ax.bar(xs, bars, color=["#777777", "#1e64c8", "#c83232"])
    ax.set_xticks(xs, names)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_ylim(-1.05, 1.05)
    ax.set_ylabel("mean paired cosine")
    ax.set_title(f"cross-modal similarity ({report_dict.get('source', '')})")
    for x, v in zip(xs, bars):
        ax.text(x, v + (0.03 if v >= 0 else -0.08), f"{v:.2f}", ha="center",
                fontsize="small")
    _finish(fig, path)


def _row_matrix(grid, modality):
    return [row["mean_accuracy"][modality] for row in grid["rows"]]


def components_figure(grid, path):
    """Grouped bars: mean accuracy per toggle pattern and direction."""
    labels = [row["label"] for row in grid["rows"]]
    xs = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.38
    ax.bar(xs - width / 2, _row_matrix(grid, "a"), width, label="student a")
    ax.bar(xs + width / 2, _row_matrix(grid, "b"), width, label="student b")
    ax.set_xticks(xs, labels, rotation=30, ha="right", fontsize="small")
    ax.set_ylabel("mean test accuracy")
    ax.set_title(f"{grid['suite']} ablation ({len(grid['seeds'])} seed(s))")
    ax.legend(loc="lower right", fontsize="small")
    _finish(fig, path)


def threshold_figure(grid, path):
    thresholds = [row["results"][0]["config"]["threshold"] for row in grid["rows"]]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m, marker in (("a", "o"), ("b", "s")):
        ax.plot(thresholds, _row_matrix(grid, m), marker=marker,
                label=f"student {m}")
    ax.set_xlabel("band threshold")
    ax.set_ylabel("mean test accuracy")
    ax.set_title("frequency threshold sweep")
    ax.legend(loc="best", fontsize="small")
    _finish(fig, path)


def lambda_heatmap(grid, path):
    """One heatmap per direction over the (lambda1, lambda2) grid."""
    l1s = sorted({row["results"][0]["config"]["lambda1"] for row in grid["rows"]})
    l2s = sorted({row["results"][0]["config"]["lambda2"] for row in grid["rows"]})
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    for ax, m in zip(axes, ("a", "b")):
        mat = np.zeros((len(l1s), len(l2s)))
        for row in grid["rows"]:
            cfg = row["results"][0]["config"]
            i = l1s.index(cfg["lambda1"])
            j = l2s.index(cfg["lambda2"])
            mat[i, j] = row["mean_accuracy"][m]
        im = ax.imshow(mat, origin="lower", cmap="viridis")
        ax.set_xticks(range(len(l2s)), [f"{v:g}" for v in l2s])
        ax.set_yticks(range(len(l1s)), [f"{v:g}" for v in l1s])
        ax.set_xlabel("lambda2 (high)")
        ax.set_ylabel("lambda1 (low)")
        ax.set_title(f"student {m}")
        for i in range(len(l1s)):
            for j in range(len(l2s)):
                ax.text(j, i, f"{mat[i, j]:.2f}", ha="center", va="center",
                        color="white", fontsize="x-small")
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.suptitle("band-loss weight sensitivity")
    _finish(fig, path)


def grid_figure(grid, path):
    suite = grid["suite"]
    if suite == "threshold":
        threshold_figure(grid, path)
    elif suite == "lambda":
        lambda_heatmap(grid, path)
    else:
        components_figure(grid, path)
