"""Report figures rendered alongside the delimited outputs.

All figures are written to files (Agg backend); nothing opens a window.
"""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 130,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}

_MODE_NAMES = {1: "conventional car", 2: "self-driving car", 3: "public transit"}


def comparison_figure(report: dict, path) -> None:
    """Log-likelihood and BIC bars per model."""
    with plt.rc_context(_STYLE):
        models = report["models"]
        labels = [m["label"] for m in models]
        fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.6))
        axes[0].bar(labels, [m["loglik"] for m in models], color="#4878a8")
        axes[0].set_title("Log-likelihood at convergence")
        axes[1].bar(labels, [m["bic"] for m in models], color="#a85448")
        axes[1].set_title("BIC (lower is better)")
        for ax in axes:
            ax.tick_params(axis="x", rotation=20)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def vot_figure(summaries: list, path) -> None:
    """Normal value-of-time densities per mode, one panel per numeraire."""
    with plt.rc_context(_STYLE):
        panels: dict = {}
        for s in summaries:
            key = (s.numeraire, s.tenure)
            panels.setdefault(key, []).append(s)
        fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.4),
                                 squeeze=False)
        for ax, (key, group) in zip(axes[0], sorted(panels.items(), key=str)):
            numeraire, tenure = key
            for s in group:
                if s.sd > 0:
                    x = np.linspace(s.mean - 3.5 * s.sd, s.mean + 3.5 * s.sd, 400)
                    y = np.exp(-0.5 * ((x - s.mean) / s.sd) ** 2) / (s.sd * np.sqrt(2 * np.pi))
                    ax.plot(x, y, label=_MODE_NAMES[s.mode])
                else:
                    ax.axvline(s.mean, linestyle="--",
                               label=f"{_MODE_NAMES[s.mode]} (point)")
            title = numeraire if tenure is None else f"{numeraire} ({tenure})"
            ax.set_title(title)
            ax.set_xlabel(group[0].unit)
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def mode_share_figure(shares: dict, path) -> None:
    """Chosen-mode shares of a simulated dataset."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        labels = [_MODE_NAMES[m] for m in sorted(shares)]
        ax.bar(labels, [shares[m] for m in sorted(shares)], color="#55885f")
        ax.set_ylabel("share of choices")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def estimate_figure(result, path) -> None:
    """Point estimates with +-1.96 se whiskers (when available)."""
    with plt.rc_context(_STYLE):
        names = list(result.names)
        est = np.asarray(result.theta, dtype=float)
        se = result.std_errors
        y = np.arange(len(names))[::-1]
        fig, ax = plt.subplots(figsize=(7.0, 0.28 * len(names) + 1.2))
        if se is not None:
            ax.errorbar(est, y, xerr=1.959964 * se, fmt="o", markersize=3,
                        capsize=2, linewidth=1)
        else:
            ax.plot(est, y, "o", markersize=3)
        ax.axvline(0.0, color="gray", linewidth=0.8)
        ax.set_yticks(y)
        ax.set_yticklabels(names, fontsize=6)
        ax.set_xlabel("estimate")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
