"""Figures for bench sweeps and learning curves, rendered to files with the Agg backend."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _groups(records):
    out = {}
    for r in records:
        out.setdefault((r.encoder, r.b), []).append(r)
    return {k: sorted(v, key=lambda r: r.n) for k, v in sorted(out.items())}


def plot_bench(records, path, fits=()):
    """Two panels: time per sentence and peak activation floats against n (log-log)."""
    fig, (ax_t, ax_m) = plt.subplots(1, 2, figsize=(10, 4))
    alphas = {(f.encoder, f.b): f.alpha for f in fits}
    for (kind, b), group in _groups(records).items():
        ns = [r.n for r in group]
        style = "-o" if kind == "transformer" else "--s"
        label = f"{kind} b={b}"
        if (kind, b) in alphas:
            label += f" (alpha={alphas[kind, b]:.2f})"
        ax_t.plot(ns, [r.ms_per_sentence for r in group], style, label=label, markersize=4)
        ax_m.plot(ns, [r.peak_act_floats for r in group], style, label=f"{kind} b={b}",
                  markersize=4)
    for ax, ylabel in ((ax_t, "ms per sentence"), (ax_m, "peak activation floats")):
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("sentence length n")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
    ax_t.legend(fontsize=7)
    ax_m.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_learning_curve(reports, path):
    """Mean test accuracy against training size, one line per model spec."""
    by_spec = {}
    for r in reports:
        by_spec.setdefault(r.spec, []).append(r)
    fig, ax = plt.subplots(figsize=(6, 4))
    for spec, rows in sorted(by_spec.items()):
        rows.sort(key=lambda r: r.size)
        sizes = [r.size for r in rows]
        err = [np.std(r.accuracies) for r in rows]
        ax.errorbar(sizes, [r.mean for r in rows], yerr=err, marker="o", capsize=3, label=spec)
    ax.set_xscale("log")
    ticks = sorted({r.size for r in reports})
    ax.set_xticks(ticks)
    ax.set_xticklabels([str(t) for t in ticks])
    ax.minorticks_off()
    ax.set_xlabel("training examples")
    ax.set_ylabel("test accuracy")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
