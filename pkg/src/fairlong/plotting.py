"""Figure rendering for the ``report`` subcommand (files only, no display)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import ComparisonTable  # noqa: E402


def plot_per_step(table: ComparisonTable, path) -> str:
    """Accuracy and local unfairness against step, one line per model."""
    fig, (ax_acc, ax_loc) = plt.subplots(1, 2, figsize=(10, 4))
    for name, series in table.series.items():
        ts = [r.t for r in series]
        ax_acc.errorbar(ts, [r.accuracy for r in series], yerr=[r.accuracy_std for r in series], label=name, capsize=2)
        ax_loc.errorbar(
            ts, [r.local_unfairness for r in series], yerr=[r.local_unfairness_std for r in series], label=name, capsize=2
        )
    ax_acc.set_xlabel("step")
    ax_acc.set_ylabel("accuracy")
    ax_loc.set_xlabel("step")
    ax_loc.set_ylabel("local unfairness")
    ax_acc.legend(fontsize="small")
    fig.suptitle(table.setting.label)
    fig.tight_layout()
    return _save(fig, path)


def plot_long_term(table: ComparisonTable, path) -> str:
    fig, ax = plt.subplots(figsize=(5, 4))
    names = [r.model for r in table.rows]
    ax.bar(names, [r.long_term_j1 for r in table.rows])
    ax.set_ylabel(f"long-term unfairness at T={table.setting.target_T}")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp.png"
    fig.savefig(tmp, dpi=100)
    plt.close(fig)
    os.replace(tmp, path)
    return str(path)
