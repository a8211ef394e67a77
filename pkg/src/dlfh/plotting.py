"""Matplotlib figures written next to the CSV reports."""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def figsize(width=4.5):
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    return width, width * golden


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-comparable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_objective_trace(traces, path, title="Objective value"):
    """``traces`` maps a legend label to a sequence of ``(iteration, objective)``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=figsize())
        for label, trace in traces.items():
            if not trace:
                continue
            it, val = zip(*trace)
            ax.plot(it, val, marker="o", markersize=2.5, linewidth=1.2, label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("log-likelihood")
        ax.set_title(title)
        if len(traces) > 1:
            ax.legend(frameon=False)
        _save(fig, path)


def plot_bench(rows, path):
    """Log-log wall time against training size, one line per mode.

    ``rows`` are dicts with keys ``mode``, ``n`` and ``seconds``.
    """
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=figsize())
        for mode in sorted({r["mode"] for r in rows}):
            pts = sorted((r["n"], r["seconds"]) for r in rows if r["mode"] == mode)
            ns, secs = zip(*pts)
            ax.loglog(ns, secs, marker="o", linewidth=1.2, label=mode)
        ax.set_xlabel("training points n")
        ax.set_ylabel("training time (s)")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_sweep(param, rows, path):
    """MAP against a swept hyper-parameter; ``rows`` hold ``value``, ``task``, ``map``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=figsize())
        for task in sorted({r["task"] for r in rows}):
            pts = sorted((r["value"], r["map"]) for r in rows if r["task"] == task)
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", linewidth=1.2, label=task)
        if param == "lambda" and min(r["value"] for r in rows) > 0:
            ax.set_xscale("log")
        ax.set_xlabel(param)
        ax.set_ylabel("MAP")
        ax.set_ylim(0.0, 1.02)
        ax.legend(frameon=False)
        _save(fig, path)
