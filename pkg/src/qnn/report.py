"""Report rendering: delimited tables plus matplotlib figures on disk."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_mac_report(report, outdir, kmac: float | None = None) -> list[str]:
    """macs.csv (per-node) and macs.png (MACs by node) under outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "macs.csv"
    with open(csv_path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["node", "kind", "out_dims", "macs", "other_ops"])
        for c in report.per_node:
            wr.writerow([c.node_id, c.kind, "x".join(map(str, c.out_dims)),
                         c.macs, c.other_ops])
        wr.writerow(["total", "", "", report.total_macs, report.total_other_ops])
    fig, ax = plt.subplots(figsize=(7, max(2.0, 0.35 * len(report.per_node))))
    labels = [f"{c.node_id} {c.kind}" for c in report.per_node]
    ax.barh(labels, [c.macs for c in report.per_node], color="#4878d0")
    ax.set_xlabel("MACs")
    title = f"total {report.total_macs:,} MACs"
    if kmac is not None:
        title += f" ({kmac:.1f} kMAC/pixel)"
    ax.set_title(title)
    ax.invert_yaxis()
    fig.tight_layout()
    png_path = outdir / "macs.png"
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
    return [str(csv_path), str(png_path)]


def write_filter_report(decision, outdir) -> list[str]:
    """costs.csv and costs.png for one filter-control decision."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    names = ["off", "param1", "param2", "param3", "per-block"]
    csv_path = outdir / "costs.csv"
    with open(csv_path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["candidate", "cost"])
        for name, cost in zip(names, decision.costs):
            wr.writerow([name, cost])
        wr.writerow(["chosen", decision.mode])
        wr.writerow(["omega", float(decision.omega)])
    finite = [c for c in decision.costs if np.isfinite(c)]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    bars = ax.bar(names, [c if np.isfinite(c) else 0 for c in decision.costs],
                  color="#4878d0")
    chosen = {"off": 0, "uniform": decision.param_index, "per-block": 4}[decision.mode]
    bars[chosen].set_color("#d65f5f")
    ax.set_ylabel("SSE + lambda*bits")
    ax.set_title(f"decision: {decision.mode}, omega={float(decision.omega):.4f}")
    if finite:
        ax.set_ylim(0, max(finite) * 1.1 + 1)
    fig.tight_layout()
    png_path = outdir / "costs.png"
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
    return [str(csv_path), str(png_path)]


def write_intra_report(outputs, outdir) -> list[str]:
    """block.csv and block.png for one predicted block."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "block.csv"
    with open(csv_path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["rep_index", outputs.rep_index])
        wr.writerow(["grp_index1", outputs.grp_index1])
        wr.writerow(["grp_index2", outputs.grp_index2])
        for row in outputs.block:
            wr.writerow(list(row))
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(outputs.block, cmap="gray", interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(
        f"predicted block (rep {outputs.rep_index}, "
        f"grp {outputs.grp_index1}/{outputs.grp_index2})"
    )
    fig.tight_layout()
    png_path = outdir / "block.png"
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
    return [str(csv_path), str(png_path)]
