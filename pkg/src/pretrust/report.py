"""Render run metrics as figures next to the JSON-lines output."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

FIGSIZE = (6.4, 3.6)


def _save(fig, path: str) -> str:
    fig.tight_layout()
    # no timestamp metadata so repeated runs write identical files
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def latency_figure(records: list[dict], path: str) -> str:
    """Guarantee latency per accepted transaction against the on-chain baseline."""
    summary = records[-1]
    txs = [r for r in records[:-1] if r.get("latency_ms") is not None]
    baseline = summary["on_chain_baseline_ms"]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    xs = range(len(txs))
    colors = ["tab:red" if r["tag"] != "background" else "tab:blue" for r in txs]
    ax.bar(xs, [r["latency_ms"] for r in txs], color=colors, width=0.8)
    ax.axhline(baseline, color="k", ls="--", lw=1, label=f"on-chain confirmation ({baseline} ms)")
    ax.set_yscale("log")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("accepted transaction (red: scenario payment)")
    ax.set_ylabel("latency (ms)")
    ax.set_title(f"{summary['scenario']} (seed {summary['seed']})")
    ax.legend(loc="center right", fontsize=8)
    return _save(fig, path)


def roster_figure(records: list[dict], path: str) -> str:
    """Stacked roster sizes per epoch."""
    epochs = records[-1]["epochs"]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    idx = [e["epoch"] for e in epochs]
    n_shards = len(epochs[0]["roster_sizes"]) if epochs else 0
    bottom = [0] * len(epochs)
    for s in range(n_shards):
        sizes = [e["roster_sizes"][s] for e in epochs]
        ax.bar(idx, sizes, bottom=bottom, label=f"shard {s}")
        bottom = [b + v for b, v in zip(bottom, sizes)]
    ax.set_xlabel("epoch")
    ax.set_ylabel("guarantors")
    ax.set_ylim(0, max(bottom, default=0) * 1.25 + 1)
    ax.legend(fontsize=8, ncol=max(n_shards, 1), loc="upper center", frameon=False)
    return _save(fig, path)


def render(records: list[dict], out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    stem = records[-1]["scenario"]
    return [
        latency_figure(records, os.path.join(out_dir, f"{stem}_latency.png")),
        roster_figure(records, os.path.join(out_dir, f"{stem}_rosters.png")),
    ]
