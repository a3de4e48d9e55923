"""Rendering of sweep and CFI reports to PNG files next to the CSV output."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .protocol import GROUP_LABELS

_STYLE = {
    "A1": dict(color="black", marker="s"),
    "A2": dict(color="tab:red", marker="o"),
    "A3": dict(color="tab:blue", marker="^"),
    "A4": dict(color="tab:green", marker="v"),
    "B": dict(color="tab:purple", marker="D"),
}


def render_sweep_figure(table, path, model=None) -> None:
    """Group probabilities (left) and the unclassified stream (right).

    With a model, solid curves are drawn from it on a dense grid; otherwise
    the tabulated model values are connected directly.
    """
    fig, (ax_groups, ax_eve) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    dense = np.linspace(table.phases[0], table.phases[-1], 400)
    for label in GROUP_LABELS:
        style = _STYLE[label]
        ax_groups.plot(table.phases, table.group_p_exp[label], linestyle="none",
                       label=label, **style)
        if model is not None:
            ax_groups.plot(dense, model.probability_grid(label, dense),
                           color=style["color"], linewidth=1.0)
        else:
            ax_groups.plot(table.phases, table.group_p_model[label],
                           color=style["color"], linewidth=1.0)
    ax_groups.set_xlabel(r"$\phi$ (rad)")
    ax_groups.set_ylabel("P(outcome 0)")
    ax_groups.set_ylim(-0.02, 1.02)
    ax_groups.legend(loc="center right", fontsize=8)
    ax_groups.set_title("classified groups")

    style = _STYLE["B"]
    ax_eve.plot(table.phases, table.eve_p_exp, linestyle="none", label="B", **style)
    if model is not None:
        ax_eve.plot(dense, model.eve_probability(dense), color=style["color"],
                    linewidth=1.0)
    else:
        ax_eve.plot(table.phases, table.eve_p_model, color=style["color"], linewidth=1.0)
    ax_eve.set_xlabel(r"$\phi$ (rad)")
    ax_eve.set_ylabel("P(outcome 0)")
    ax_eve.set_ylim(-0.02, 1.02)
    ax_eve.set_title("unclassified stream")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_cfi_figure(cfi_rows, path) -> None:
    """Log-scale Fisher-information bars per centering phase."""
    by_phase = {}
    for phase, series, _p, _slope, f in cfi_rows:
        by_phase.setdefault(round(phase, 9), []).append((series, f))
    centers = sorted(by_phase)
    fig, axes = plt.subplots(1, max(len(centers), 1), figsize=(4.0 * max(len(centers), 1), 3.4),
                             squeeze=False)
    floor = 1e-8
    for ax, center in zip(axes[0], centers):
        entries = by_phase[center]
        labels = [s for s, _ in entries]
        values = [max(f, floor) for _, f in entries]
        colors = [_STYLE.get(s, {}).get("color", "gray") for s in labels]
        ax.bar(labels, values, color=colors)
        ax.set_yscale("log")
        ax.set_ylim(floor, 3.0)
        ax.set_ylabel("Fisher information")
        ax.set_title(rf"$\phi \approx {center:.3f}$")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
