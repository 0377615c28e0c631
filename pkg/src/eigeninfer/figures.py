"""Figure rendering for harness outputs.

Every function takes already-computed report data, writes one PNG, and
returns its path.  The CSV/JSON files remain the primary outputs; these
are the same pictures, ready for a quick look.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def sse_boxplot_figure(sse_by_method: dict, path) -> str:
    methods = list(sse_by_method.keys())
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.boxplot([sse_by_method[m] for m in methods], tick_labels=methods)
    ax.set_ylabel("sum of squared errors")
    ax.set_title("Accuracy across replicates")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def coverage_figure(per_vertex: dict, nominal: float, path) -> str:
    kinds = list(per_vertex.keys())
    fig, axes = plt.subplots(1, len(kinds), figsize=(4 * len(kinds), 3.2),
                             sharey=True, squeeze=False)
    for ax, kind in zip(axes[0], kinds):
        cov = np.asarray(per_vertex[kind])
        ax.plot(np.arange(1, len(cov) + 1), cov, ".", markersize=3)
        ax.axhline(nominal, color="red", linewidth=1)
        ax.set_ylim(0.0, 1.05)
        ax.set_xlabel("vertex")
        ax.set_title(kind)
    axes[0][0].set_ylabel("interval coverage")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def misclassification_figure(rows: list, v_values: list, methods: list, path) -> str:
    fig, axes = plt.subplots(1, len(v_values), figsize=(3.2 * len(v_values), 3.6),
                             sharey=True, squeeze=False)
    for ax, v in zip(axes[0], v_values):
        data = [
            [r["misclassification"] for r in rows
             if r["v"] == v and r["method"] == m]
            for m in methods
        ]
        ax.boxplot(data, tick_labels=methods)
        ax.set_title(f"v = {v:g}")
        ax.tick_params(axis="x", rotation=45)
    axes[0][0].set_ylabel("misclassification rate")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def fit_figure(Xtilde, zmat, results, criteria, path) -> str:
    from .sampler import entrywise_interval, posterior_mean

    d = Xtilde.shape[1]
    fig, ax = plt.subplots(figsize=(7, 4))
    if d == 1:
        idx = np.arange(Xtilde.shape[0])
        ax.plot(idx, Xtilde[:, 0], ".", color="gray", label="embedding",
                markersize=3)
        kind = criteria[0]
        means, los, his = [], [], []
        for post in results[kind]:
            if post is None:
                means.append(np.nan)
                los.append(np.nan)
                his.append(np.nan)
            else:
                means.append(posterior_mean(post)[0])
                box = entrywise_interval(post, 0.05)
                los.append(box[0, 0])
                his.append(box[0, 1])
        means = np.asarray(means)
        ax.fill_between(idx, los, his, alpha=0.3, label=f"{kind} 95% interval")
        ax.plot(idx, means, "-", linewidth=1, label=f"{kind} posterior mean")
        ax.set_xlabel("row")
        ax.set_ylabel("coordinate 1")
    else:
        ax.plot(Xtilde[:, 0], Xtilde[:, 1], ".", color="gray",
                label="embedding", markersize=4)
        ax.plot(zmat[:, 0], zmat[:, 1], "x", markersize=4, label="refined")
        ax.set_xlabel("coordinate 1")
        ax.set_ylabel("coordinate 2")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def trace_figure(posteriors: list, path, max_panels: int = 6) -> str:
    keys = []
    for p in posteriors:
        if (p.row_index, "x") not in keys:
            keys.append((p.row_index, "x"))
        if len(keys) >= max_panels:
            break
    rows_shown = [k[0] for k in keys]
    fig, axes = plt.subplots(len(rows_shown), 1,
                             figsize=(7, 1.8 * len(rows_shown)),
                             sharex=True, squeeze=False)
    for ax, row in zip(axes[:, 0], rows_shown):
        for p in posteriors:
            if p.row_index == row:
                ax.plot(p.criterion_trace, linewidth=0.6,
                        label=f"chain {p.chain_id}")
        ax.set_ylabel(f"row {row}")
        ax.legend(loc="upper right", fontsize=6, ncol=4)
    axes[-1, 0].set_xlabel("iteration")
    fig.suptitle("criterion traces")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
