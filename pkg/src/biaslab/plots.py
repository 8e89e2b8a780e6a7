"""Matplotlib rendering of run diagnostics to image files.

The run report path saves these next to the delimited summary output; the
same series are available as JSON via the plot-data command for external
tooling.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _group_series(epochs: list[dict], key: str) -> dict[str, tuple[list, list]]:
    """Collect {group: (epoch_x, values)} from per-epoch dict-of-group fields."""
    series: dict[str, tuple[list, list]] = {}
    for entry in epochs:
        block = entry.get(key) or {}
        for grp, val in block.items():
            xs, ys = series.setdefault(grp, ([], []))
            xs.append(entry["epoch"])
            ys.append(val)
    return series


def render_trajectory(epochs: list[dict], group_labels: dict[str, str],
                      path, title: str) -> None:
    """Per-epoch panels: group losses, adversary weights, domain-probe
    accuracy, and validation accuracy (whichever exist in the trajectory)."""
    panels = []
    losses = _group_series(epochs, "train_group_loss")
    if losses:
        panels.append(("train loss per subgroup", losses, None))
    if any("q" in e for e in epochs):
        qs = {}
        for entry in epochs:
            for gi, val in enumerate(entry.get("q_mean", entry.get("q", []))):
                xs, ys = qs.setdefault(str(gi), ([], []))
                xs.append(entry["epoch"])
                ys.append(val)
        panels.append(("adversary weight q per subgroup", qs, (0.0, 1.0)))
    domain = _group_series(epochs, "domain_val_acc_group")
    if domain:
        panels.append(("domain-probe val accuracy per subgroup", domain, (0.0, 1.05)))
    val = _group_series(epochs, "val_acc_group")
    if val:
        panels.append(("val accuracy per subgroup", val, (0.0, 1.05)))

    if not panels:
        return
    fig, axes = plt.subplots(len(panels), 1, figsize=(7, 2.6 * len(panels)),
                             sharex=True, squeeze=False)
    for ax, (name, series, ylim) in zip(axes[:, 0], panels):
        for grp in sorted(series, key=lambda s: int(s)):
            xs, ys = series[grp]
            ax.plot(xs, ys, label=group_labels.get(grp, grp), linewidth=1.2)
        ax.set_ylabel(name, fontsize=8)
        if ylim:
            ax.set_ylim(*ylim)
        ax.legend(fontsize=7, ncol=4, loc="best")
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("epoch")
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_som(som_doc: dict, group_labels: dict[str, str], path, title: str) -> None:
    """Heatmap of each node's majority subgroup, shaded by node purity."""
    height, width = som_doc["height"], som_doc["width"]
    occupancy = np.asarray(som_doc["occupancy"])
    num_groups = occupancy.shape[1]
    majority = np.full((height, width), -1, dtype=int)
    share = np.zeros((height, width))
    for node in range(height * width):
        total = occupancy[node].sum()
        if total == 0:
            continue
        r, c = divmod(node, width)
        majority[r, c] = int(occupancy[node].argmax())
        share[r, c] = occupancy[node].max() / total

    cmap = plt.get_cmap("tab10")
    img = np.ones((height, width, 3))
    for r in range(height):
        for c in range(width):
            if majority[r, c] >= 0:
                base = np.array(cmap(majority[r, c] % 10)[:3])
                img[r, c] = 1.0 - share[r, c] * (1.0 - base)  # purer = stronger

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(img, interpolation="nearest")
    for r in range(height):
        for c in range(width):
            if majority[r, c] >= 0:
                ax.text(c, r, f"{share[r, c]:.2f}", ha="center", va="center", fontsize=6)
    handles = [plt.Line2D([0], [0], marker="s", linestyle="", color=cmap(g % 10),
                          label=group_labels.get(str(g), str(g)))
               for g in range(num_groups)]
    ax.legend(handles=handles, fontsize=7, loc="upper left", bbox_to_anchor=(1.02, 1.0))
    ax.set_xticks([])
    ax.set_yticks([])
    ax.set_title(f"{title}\noverall purity {som_doc['overall_purity']:.3f}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_summary(aggregates: dict, path) -> None:
    """Grouped bars of mean average / worst / conflicting accuracy per method."""
    methods = list(aggregates)
    keys = [("acc_avg", "average"), ("acc_worst", "worst group"),
            ("acc_conflicting", "bias-conflicting")]
    keys = [(k, label) for k, label in keys
            if any(k in aggregates[m] for m in methods)]
    if not methods or not keys:
        return
    x = np.arange(len(methods))
    w = 0.8 / len(keys)
    fig, ax = plt.subplots(figsize=(1.2 * len(methods) + 2, 4))
    for j, (key, label) in enumerate(keys):
        means = [aggregates[m].get(key, {}).get("mean", np.nan) for m in methods]
        stds = [aggregates[m].get(key, {}).get("std", 0.0) for m in methods]
        ax.bar(x + (j - (len(keys) - 1) / 2) * w, means, w, yerr=stds,
               label=label, capsize=2)
    ax.set_xticks(x, methods, rotation=20)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("test accuracy")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
