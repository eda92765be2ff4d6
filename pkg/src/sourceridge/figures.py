"""Report figures rendered from bench results.

Non-interactive only: the Agg backend draws straight to files next to the
CSV. Layout mirrors the benchmark tables: correlations by scenario and
method, shrinkage levels by source, induced sparsity by method.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.dpi": 120,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "font.size": 9,
    }
)

_SCENARIO_ORDER = ("sparse", "medium", "dense")


def _scenarios(rows):
    present = {r["scenario"] for r in rows}
    return [s for s in _SCENARIO_ORDER if s in present] or sorted(present)


def _grouped(rows, scenario, method, field):
    return [
        float(r[field])
        for r in rows
        if r["scenario"] == scenario and r["method"] == method and r.get(field) not in (None, "")
    ]


def correlation_figure(rows, path) -> str:
    """Boxplots of test correlation per method, one panel per scenario."""
    scenarios = _scenarios(rows)
    methods = sorted({r["method"] for r in rows})
    fig, axes = plt.subplots(1, len(scenarios), figsize=(3.2 * len(scenarios), 3.2), sharey=True)
    axes = np.atleast_1d(axes)
    for ax, scen in zip(axes, scenarios):
        data = [_grouped(rows, scen, m, "test_correlation") for m in methods]
        ax.boxplot(data, tick_labels=methods)
        ax.set_title(f"{scen} signal")
        ax.tick_params(axis="x", rotation=45)
    axes[0].set_ylabel("test correlation")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def shrinkage_figure(rows, path, sources=("cl", "rna", "snp")) -> str:
    """Boxplots of -log(lambda_hat) per source for the multi-source fits."""
    scenarios = _scenarios(rows)
    fig, axes = plt.subplots(1, len(scenarios), figsize=(3.2 * len(scenarios), 3.2), sharey=True)
    axes = np.atleast_1d(axes)
    for ax, scen in zip(axes, scenarios):
        data = []
        for src in sources:
            vals = [
                -np.log(float(r[f"lambda_{src}"]))
                for r in rows
                if r["scenario"] == scen and r["method"] == "sbr" and r.get(f"lambda_{src}")
            ]
            data.append(vals)
        ax.boxplot(data, tick_labels=list(sources))
        ax.set_title(f"{scen} signal")
    axes[0].set_ylabel(r"$-\log\ \hat{\lambda}$")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def sparsity_figure(rows, path) -> str:
    """Mean induced sparsity (nonzero fraction) per sparsifier and scenario."""
    scenarios = _scenarios(rows)
    methods = [m for m in ("ssbr", "cssbr") if any(r["method"] == m for r in rows)]
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    xs = np.arange(len(scenarios))
    for i, m in enumerate(methods):
        means = [np.mean(_grouped(rows, s, m, "sparsity_fraction") or [np.nan]) for s in scenarios]
        ax.bar(xs + i * width, means, width, label=m)
    ax.set_xticks(xs + width * (len(methods) - 1) / 2)
    ax.set_xticklabels(scenarios)
    ax.set_ylabel("fraction of nonzero coefficients")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_bench_figures(rows, outdir) -> list[str]:
    """Render the standard report figures; returns the written paths."""
    paths = []
    if not rows:
        return paths
    paths.append(correlation_figure(rows, os.path.join(outdir, "correlations.png")))
    if any(r["method"] == "sbr" and r.get("lambda_cl") for r in rows):
        paths.append(shrinkage_figure(rows, os.path.join(outdir, "shrinkage_levels.png")))
    if any(r["method"] in ("ssbr", "cssbr") for r in rows):
        paths.append(sparsity_figure(rows, os.path.join(outdir, "sparsity.png")))
    return paths
