"""Figure rendering for the report-producing CLI commands.

Figures are written next to the delimited output; the CSV remains the
stable machine contract and these renderings are a convenience view.
"""

from __future__ import annotations


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_mcts_trace(rows, path) -> None:
    """Tree growth and best NMSE over search iterations."""
    plt = _pyplot()
    iters = [r.iteration for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(iters, [r.tree_nodes for r in rows], color="tab:blue")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("search tree nodes")
    ax2.plot(iters, [r.best_nmse for r in rows], color="tab:red")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("best NMSE")
    ax2.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_drl_trace(rows, path) -> None:
    """Mean +/- std of the per-sample estimated objective, and best NMSE."""
    plt = _pyplot()
    iters = [r.iteration for r in rows]
    mean = [r.estimator_mean for r in rows]
    std = [r.estimator_std for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(iters, mean, color="tab:blue", label="mean")
    ax1.fill_between(
        iters,
        [m - s for m, s in zip(mean, std)],
        [m + s for m, s in zip(mean, std)],
        alpha=0.3,
        color="tab:blue",
        label="+/- std",
    )
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("reward * log-prob")
    ax1.legend()
    ax2.plot(iters, [r.best_nmse for r in rows], color="tab:red")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("best NMSE")
    ax2.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_memory_bench(rows, path) -> None:
    """Storage growth: e-graph vs explicit-array bytes, and variant count."""
    plt = _pyplot()
    ns = [r["n"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(ns, [r["egraph_bytes"] for r in rows], "o-", label="e-graph")
    ax1.plot(ns, [r["array_bytes"] for r in rows], "s-", label="explicit array")
    ax1.set_xlabel("n")
    ax1.set_ylabel("bytes")
    ax1.set_yscale("log")
    ax1.legend()
    ax2.plot(ns, [r["egraph_nodes"] for r in rows], "o-", label="e-nodes")
    ax2.plot(ns, [r["variants"] for r in rows], "s-", label="variants")
    ax2.set_xlabel("n")
    ax2.set_yscale("log")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
